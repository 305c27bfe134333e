#!/usr/bin/env python3
"""Smoke test for the timepref_py extension module.

Build the module first (no maturin required):

    cargo build -p timepref-py --features extension-module --release

then run this script; it locates the cdylib in target/ and imports it
as `timepref_py`.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / profile / "libtimepref_py.so"
        for profile in ("release", "debug")
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit(
            "libtimepref_py.so not found; run "
            "`cargo build -p timepref-py --features extension-module` first"
        )
    stage = Path(tempfile.mkdtemp(prefix="timepref_py_"))
    shutil.copy(lib, stage / "timepref_py.so")
    sys.path.insert(0, str(stage))
    import timepref_py

    return timepref_py


def main():
    tp = load_module()

    # Language registry: 22 languages, 10 weak-FTR.
    langs = tp.languages()
    assert len(langs) == 22, langs
    assert sum(1 for _, cls in langs if cls == "weak") == 10

    # Grid shape and anchor rewards.
    cross = tp.grid()
    assert len(cross) == 22 * 9 * 7
    same = tp.grid(same_period=True)
    assert len(same) == 22 * 7 * 7
    assert tp.delayed_reward(1000, 0.10, 18) == 1153
    assert tp.delayed_reward(1000, 0.25, 18) == 1397

    # Prompt round trip.
    question = tp.render_question("english", 12, 0.25)
    assert "1000" in question and "1250" in question
    assert tp.parse_choice("(1)", sooner_first=True) == "sooner"
    assert tp.parse_choice("(1)", sooner_first=False) == "later"
    assert tp.parse_choice("I would pick option 2.", sooner_first=True) == "later"
    assert tp.parse_choice("As an AI language model, I cannot decide.") == "refusal"
    assert tp.parse_choice("hmm, both seem fine") == "unparseable"

    # delta is an annual discount rate: lower means more patient, and
    # more patient agents pick the later option more often.
    p_patient = tp.choice_prob_later(0.2, 0.3, 12, 0.5)
    p_impatient = tp.choice_prob_later(0.9, 0.3, 12, 0.5)
    assert p_patient > p_impatient

    # MLE round trip on deterministic pseudo-data from a known agent.
    choices = []
    for cell in tp.grid(languages=["english"]):
        p_later = tp.choice_prob_later(0.25, 0.3, cell["d"], cell["interest"])
        n_later = round(200 * p_later)
        for i in range(200):
            choices.append(
                (cell["t1"], cell["r1"], cell["t2"], cell["r2"], i >= n_later)
            )
    fit = tp.fit_discount(choices)
    assert abs(fit["delta"] - 0.25) < 0.05, fit
    assert abs(fit["mu"] - 0.3) < 0.05, fit

    # Clustered OLS with a known slope.
    y, x, cl = [], [], []
    for g in range(8):
        for i in range(5):
            xv = float(g * 5 + i)
            y.append(2.0 + 3.0 * xv + (0.1 if i % 2 else -0.1))
            x.append([xv])
            cl.append(f"g{g}")
    ols = tp.ols_cluster(y, x, cl)
    assert abs(ols["coef"][0] - 3.0) < 1e-6
    assert ols["n_clusters"] == 8

    # Text pipeline.
    assert tp.porter_stem("uncertainty") == "uncertainti"
    assert tp.porter_stem("immediate") == "immedi"
    tokens = tp.preprocess("The immediate rewards were uncertain!")
    assert "immedi" in tokens and "the" not in tokens
    docs = [
        "risk risk uncertain uncertain danger" if i % 2 == 0
        else "growth growth invest invest compound"
        for i in range(40)
    ]
    tops = tp.lda_top_words(docs, k=2, iters=100, seed=7, top_n=3)
    flat = {w for topic in tops for w in topic}
    assert "risk" in flat and "invest" in flat

    print("smoke test passed")


if __name__ == "__main__":
    main()
