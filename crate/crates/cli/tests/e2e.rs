//! End-to-end dress rehearsal for the `timepref` binary: grid and both
//! simulated protocols through every analysis command, with
//! byte-identical re-runs and resume-after-interrupt equivalence.

use std::path::Path;
use std::process::Command;

const LANGS: &str = "english,german,mandarin,french";

fn timepref(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_timepref"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = timepref(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn assert_same_file(a: &Path, b: &Path) {
    assert_eq!(
        read(a),
        read(b),
        "files differ: {} vs {}",
        a.display(),
        b.display()
    );
}

/// Compare every regular file in two directories, recursively.
fn assert_same_tree(a: &Path, b: &Path) {
    let list = |root: &Path| -> Vec<std::path::PathBuf> {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push(path.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
        files.sort();
        files
    };
    let files_a = list(a);
    assert_eq!(files_a, list(b), "directory listings differ");
    for rel in files_a {
        assert_same_file(&a.join(&rel), &b.join(&rel));
    }
}

fn cot_pipeline(run_dir: &Path) {
    let run = run_dir.to_str().unwrap();
    run_ok(&[
        "run", "--out", run, "--study", "cot-gpt4", "--languages", LANGS,
        "--samples-per-cell", "4", "--seed", "11",
    ]);
    run_ok(&["estimate", "--run", run]);
    run_ok(&["regress", "--run", run]);
    run_ok(&[
        "topics", "--run", run, "--iters", "60", "--lda-seed", "3",
    ]);
    run_ok(&["report", "--run", run]);
}

#[test]
fn criterion_11_dress_rehearsal() {
    let tmp = tempfile::tempdir().unwrap();

    // Grid artifacts for both designs.
    let grid_dir = tmp.path().join("grid");
    run_ok(&["grid", "--out", grid_dir.to_str().unwrap()]);
    assert!(grid_dir.join("grid.csv").exists());
    assert!(grid_dir.join("reward_table.txt").exists());
    run_ok(&[
        "grid", "--same-period", "--out",
        tmp.path().join("grid_same").to_str().unwrap(),
    ]);

    // Chain-of-thought protocol, full analysis chain, twice.
    let run_a = tmp.path().join("run_a");
    let run_b = tmp.path().join("run_b");
    cot_pipeline(&run_a);
    cot_pipeline(&run_b);
    assert_same_file(&run_a.join("samples.jsonl"), &run_b.join("samples.jsonl"));
    assert_same_file(&run_a.join("analysis.csv"), &run_b.join("analysis.csv"));
    assert_same_tree(&run_a.join("report"), &run_b.join("report"));
    for artifact in [
        "estimates_by_language.csv",
        "delta_plot.svg",
        "table_ftr_share.txt",
        "table_proper_test.csv",
        "table_topic_ftr.txt",
        "topic_top_words.txt",
        "share_by_language.csv",
    ] {
        assert!(
            run_a.join("report").join(artifact).exists(),
            "missing report artifact {artifact}"
        );
    }

    // Interrupted-then-resumed run converges to the same artifacts.
    let run_c = tmp.path().join("run_c");
    let run_c_str = run_c.to_str().unwrap();
    run_ok(&[
        "run", "--out", run_c_str, "--study", "cot-gpt4", "--languages", LANGS,
        "--samples-per-cell", "4", "--seed", "11", "--max-samples", "150",
    ]);
    cot_pipeline(&run_c);
    assert_same_file(&run_a.join("analysis.csv"), &run_c.join("analysis.csv"));
    assert_same_tree(&run_a.join("report"), &run_c.join("report"));

    // Standard protocol: estimation and regression without explanations.
    let run_d = tmp.path().join("run_d");
    let run_d_str = run_d.to_str().unwrap();
    run_ok(&[
        "run", "--out", run_d_str, "--study", "standard-gpt4", "--languages", LANGS,
        "--samples-per-cell", "6", "--seed", "12",
    ]);
    run_ok(&["estimate", "--run", run_d_str]);
    run_ok(&["regress", "--run", run_d_str]);
    run_ok(&["report", "--run", run_d_str]);

    // Same-period control: regression battery only.
    let run_e = tmp.path().join("run_e");
    let run_e_str = run_e.to_str().unwrap();
    run_ok(&[
        "run", "--out", run_e_str, "--study", "same-period", "--languages", LANGS,
        "--samples-per-cell", "4", "--seed", "13", "--population",
        "default-lexicographic",
    ]);
    run_ok(&["regress", "--run", run_e_str]);
    assert!(run_e.join("report").join("table_lexico_test.txt").exists());

    // Exit codes: usage errors are 2, success is 0.
    let missing = timepref(&["estimate", "--run", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_flag = timepref(&["run", "--no-such-flag"]);
    assert_eq!(bad_flag.status.code(), Some(2));

    println!("[PASS] criterion 11: dress rehearsal deterministic and resumable");
}
