//! Python bindings for the measurement harness: grid construction,
//! prompt rendering and reply parsing, simulated agents, discount-rate
//! MLE, clustered OLS, and the text/topic pipeline.
//!
//! Built as `timepref_py`; enable the `extension-module` feature when
//! building a wheel so the interpreter provides the Python runtime.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::collections::HashSet;
use timepref::agents::{Agent, RumAgent};
use timepref::design::{
    self, build_cross_period_grid, build_same_period_grid, compute_delayed_reward, find_language,
    language_registry, Cell, PresentationOrder,
};
use timepref::econometrics::{ols_fe_cluster, RegressionSample};
use timepref::estimation::{fit_mle, ChoiceObservation, FitOptions};
use timepref::prompting::{self, ChoiceOutcome, QuestionTemplate};
use timepref::topics;

fn value_err(msg: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(msg.to_string())
}

fn resolve_cells(languages: Option<Vec<String>>, same_period: bool) -> PyResult<Vec<Cell>> {
    let registry = language_registry();
    let selected = match languages {
        None => registry,
        Some(codes) => codes
            .iter()
            .map(|code| {
                find_language(&registry, code).ok_or_else(|| value_err(format!("unknown language: {code}")))
            })
            .collect::<PyResult<Vec<_>>>()?,
    };
    Ok(if same_period {
        build_same_period_grid(&selected)
            .into_iter()
            .map(Cell::SamePeriod)
            .collect()
    } else {
        build_cross_period_grid(&selected)
            .into_iter()
            .map(Cell::CrossPeriod)
            .collect()
    })
}

/// The full experiment grid as a list of dicts.
#[pyfunction]
#[pyo3(signature = (languages=None, same_period=false))]
fn grid(py: Python<'_>, languages: Option<Vec<String>>, same_period: bool) -> PyResult<Vec<Py<PyDict>>> {
    let cells = resolve_cells(languages, same_period)?;
    cells
        .iter()
        .map(|cell| {
            let d = PyDict::new_bound(py);
            d.set_item("key", cell.key())?;
            d.set_item("language", &cell.language().code)?;
            d.set_item("ftr_class", cell.language().ftr_class.as_str())?;
            let sooner = cell.sooner();
            let later = cell.later();
            d.set_item("t1", sooner.delivery_months)?;
            d.set_item("r1", sooner.amount)?;
            d.set_item("t2", later.delivery_months)?;
            d.set_item("r2", later.amount)?;
            if let Cell::CrossPeriod(c) = cell {
                d.set_item("d", c.delay_months)?;
                d.set_item("interest", c.interest)?;
            }
            Ok(d.unbind())
        })
        .collect()
}

/// Later reward for a cross-period cell: floor(r1 * (1+i)^(d/12)).
#[pyfunction]
fn delayed_reward(r1: u64, interest: f64, delay_months: u32) -> PyResult<u64> {
    compute_delayed_reward(r1, interest, delay_months).map_err(value_err)
}

/// Render the conjoint question for a cross-period condition.
#[pyfunction]
#[pyo3(signature = (language, delay_months, interest, sooner_first=true, unit="tokens of your world's currency"))]
fn render_question(
    language: &str,
    delay_months: u32,
    interest: f64,
    sooner_first: bool,
    unit: &str,
) -> PyResult<String> {
    let registry = language_registry();
    let lang = find_language(&registry, language)
        .ok_or_else(|| value_err(format!("unknown language: {language}")))?;
    let cells = build_cross_period_grid(&[lang.clone()]);
    let cell = cells
        .into_iter()
        .find(|c| c.delay_months == delay_months && c.interest == interest)
        .ok_or_else(|| value_err("delay/interest pair is not on the grid"))?;
    let template = QuestionTemplate::english_master(lang);
    let message = prompting::render_question(
        &Cell::CrossPeriod(cell),
        PresentationOrder {
            sooner_listed_first: sooner_first,
        },
        &template,
        unit,
    )
    .map_err(value_err)?;
    Ok(message.content)
}

/// Parse a model reply into "sooner", "later", "refusal", or
/// "unparseable".
#[pyfunction]
#[pyo3(signature = (raw, sooner_first=true))]
fn parse_choice(raw: &str, sooner_first: bool) -> String {
    let outcome = prompting::parse_choice(
        raw,
        PresentationOrder {
            sooner_listed_first: sooner_first,
        },
    );
    match outcome {
        ChoiceOutcome::SoonerChosen => "sooner",
        ChoiceOutcome::LaterChosen => "later",
        ChoiceOutcome::Refusal => "refusal",
        ChoiceOutcome::Unparseable => "unparseable",
    }
    .to_string()
}

/// Probability a discounted-RUM agent picks the later option.
#[pyfunction]
fn choice_prob_later(delta: f64, mu: f64, delay_months: u32, interest: f64) -> PyResult<f64> {
    let registry = language_registry();
    let english = find_language(&registry, "english").expect("registry has english");
    let cells = build_cross_period_grid(&[english]);
    let cell = cells
        .into_iter()
        .find(|c| c.delay_months == delay_months && c.interest == interest)
        .ok_or_else(|| value_err("delay/interest pair is not on the grid"))?;
    Ok(Agent::Rum(RumAgent::exponential(delta, mu)).choice_prob_later(&Cell::CrossPeriod(cell)))
}

/// Maximum-likelihood fit of (delta, mu) from choice tuples
/// (t1, r1, t2, r2, chose_sooner).
#[pyfunction]
fn fit_discount(
    py: Python<'_>,
    choices: Vec<(u32, u64, u32, u64, bool)>,
) -> PyResult<Py<PyDict>> {
    let data: Vec<ChoiceObservation> = choices
        .iter()
        .map(|&(t1, r1, t2, r2, y_sooner)| {
            Ok(ChoiceObservation::new(
                design::RewardOption::new(t1, r1).map_err(value_err)?,
                design::RewardOption::new(t2, r2).map_err(value_err)?,
                y_sooner,
            ))
        })
        .collect::<PyResult<_>>()?;
    let fit = fit_mle(&data, None, &FitOptions::default()).map_err(value_err)?;
    let d = PyDict::new_bound(py);
    d.set_item("delta", fit.delta_hat)?;
    d.set_item("mu", fit.mu_hat)?;
    d.set_item("se_delta", fit.se_delta)?;
    d.set_item("se_mu", fit.se_mu)?;
    d.set_item("ci_delta", fit.ci95_delta)?;
    d.set_item("ci_mu", fit.ci95_mu)?;
    d.set_item("loglik", fit.loglik)?;
    d.set_item("n_obs", fit.n_obs)?;
    Ok(d.unbind())
}

/// Fixed-effects OLS with CR1 cluster-robust standard errors.
#[pyfunction]
#[pyo3(signature = (y, x, cluster, fe=None))]
fn ols_cluster(
    py: Python<'_>,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    cluster: Vec<String>,
    fe: Option<Vec<String>>,
) -> PyResult<Py<PyDict>> {
    if y.len() != x.len() || y.len() != cluster.len() {
        return Err(value_err("y, x, and cluster must have equal length"));
    }
    if let Some(fe) = &fe {
        if fe.len() != y.len() {
            return Err(value_err("fe must match y length"));
        }
    }
    let samples: Vec<RegressionSample> = y
        .iter()
        .zip(&x)
        .zip(&cluster)
        .enumerate()
        .map(|(idx, ((&yv, xv), cl))| RegressionSample {
            y: yv,
            x: xv.clone(),
            fe_key: fe.as_ref().map(|f| f[idx].clone()).unwrap_or_default(),
            cluster_key: cl.clone(),
        })
        .collect();
    let fit = ols_fe_cluster(&samples, fe.is_some()).map_err(value_err)?;
    let d = PyDict::new_bound(py);
    d.set_item("coef", fit.coef)?;
    d.set_item("se", fit.se)?;
    d.set_item("r2", fit.r2)?;
    d.set_item("adj_r2", fit.adj_r2)?;
    d.set_item("n_obs", fit.n_obs)?;
    d.set_item("n_clusters", fit.n_clusters)?;
    d.set_item("df_resid", fit.df_resid)?;
    Ok(d.unbind())
}

/// Classic Porter (1980) stem.
#[pyfunction]
fn porter_stem(word: &str) -> String {
    topics::porter_stem(word)
}

/// Preprocess text into stemmed tokens (stopwords, numerics, and short
/// tokens removed).
#[pyfunction]
#[pyo3(signature = (text, context_stopwords=None))]
fn preprocess(text: &str, context_stopwords: Option<Vec<String>>) -> Vec<String> {
    let context: HashSet<String> = context_stopwords.unwrap_or_default().into_iter().collect();
    topics::preprocess(text, &topics::default_stopwords(), &context)
}

/// Fit LDA by collapsed Gibbs sampling and return per-topic top words.
#[pyfunction]
#[pyo3(signature = (documents, k=4, iters=200, seed=7, top_n=10))]
fn lda_top_words(
    documents: Vec<String>,
    k: usize,
    iters: usize,
    seed: u64,
    top_n: usize,
) -> PyResult<Vec<Vec<String>>> {
    let docs: Vec<topics::Document> = documents
        .into_iter()
        .enumerate()
        .map(|(idx, text)| topics::Document {
            sample_ref: idx.to_string(),
            text,
        })
        .collect();
    let corpus = topics::build_corpus(&docs, &topics::default_stopwords(), &HashSet::new());
    let model = topics::fit_lda(&corpus, k, 50.0 / k as f64, 0.01, iters, seed).map_err(value_err)?;
    Ok(topics::top_words(&model, top_n))
}

/// All supported languages as (code, ftr_class) pairs.
#[pyfunction]
fn languages() -> Vec<(String, String)> {
    language_registry()
        .into_iter()
        .map(|l| (l.code, l.ftr_class.as_str().to_string()))
        .collect()
}

#[pymodule]
fn timepref_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(grid, m)?)?;
    m.add_function(wrap_pyfunction!(delayed_reward, m)?)?;
    m.add_function(wrap_pyfunction!(render_question, m)?)?;
    m.add_function(wrap_pyfunction!(parse_choice, m)?)?;
    m.add_function(wrap_pyfunction!(choice_prob_later, m)?)?;
    m.add_function(wrap_pyfunction!(fit_discount, m)?)?;
    m.add_function(wrap_pyfunction!(ols_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(porter_stem, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(lda_top_words, m)?)?;
    m.add_function(wrap_pyfunction!(languages, m)?)?;
    Ok(())
}
