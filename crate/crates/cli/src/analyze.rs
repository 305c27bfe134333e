//! Analysis subcommands: `estimate`, `regress`, `topics`, and `report`.
//! All are deterministic functions of the run log plus explicit seeds.

use crate::util::{load_run, runtime, usage, write_file, AppError, LoadedRun};
use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use timepref::design::Cell;
use timepref::econometrics::{
    regression_to_csv, render_regression_table, spec_ftr_share, spec_proper_test, OlsFit,
};
use timepref::estimation::{fit_by_group, fits_to_csv, FitOptions, Grouping};
use timepref::report::{
    delta_plot_csv, delta_svg, share_by_interest, share_by_language, shares_svg, shares_to_csv,
};
use timepref::storage::{export_analysis, AnalysisRow, Study};
use timepref::topics::{
    build_corpus, default_stopwords, fit_lda, infer_doc_topics, prevalence_analytics,
    render_top_words_table, theta_csv, topic_ftr_regressions, topic_term_csv, ConditionedTheta,
    Document, PrevalenceAnalytics, TopicLabel, TopicLabeling,
};

fn loaded_rows(run_root: &Path) -> Result<(LoadedRun, Vec<AnalysisRow>), AppError> {
    let run = load_run(run_root)?;
    let log = run.dir.log(&run.manifest);
    let (rows, _) = export_analysis(&run.manifest, &run.cells, &log)
        .map_err(|e| runtime(format!("cannot read samples: {e}")))?;
    if rows.is_empty() {
        return Err(usage(format!(
            "{} contains no parsed samples",
            run_root.display()
        )));
    }
    Ok((run, rows))
}

fn default_out(run_root: &Path, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(|| run_root.join("report"))
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

pub fn cmd_estimate(run_root: &Path, out: Option<&Path>) -> Result<(), AppError> {
    let (run, rows) = loaded_rows(run_root)?;
    if run.manifest.study == Study::SamePeriod {
        return Err(usage(
            "discount estimation needs cross-period choices; this is a same-period run",
        ));
    }
    let out = default_out(run_root, out);
    write_estimates(&rows, &out)?;
    Ok(())
}

fn write_estimates(rows: &[AnalysisRow], out: &Path) -> Result<(), AppError> {
    let options = FitOptions::default();
    let by_language = fit_by_group(rows, Grouping::PerLanguage, &options);
    let pooled = fit_by_group(rows, Grouping::FtrPooled, &options);
    write_file(&out.join("estimates_by_language.csv"), &fits_to_csv(&by_language))?;
    write_file(&out.join("estimates_pooled.csv"), &fits_to_csv(&pooled))?;
    write_file(&out.join("delta_plot.csv"), &delta_plot_csv(&by_language))?;
    write_file(
        &out.join("delta_plot.svg"),
        &delta_svg("Estimated annual discount rate by language", &by_language),
    )?;
    for (group, _, fit) in &pooled {
        match fit {
            Ok(f) => println!(
                "{group}: delta = {:.4} [{:.4}, {:.4}], mu = {:.4}",
                f.delta_hat, f.ci95_delta.0, f.ci95_delta.1, f.mu_hat
            ),
            Err(e) => println!("{group}: estimation failed ({e})"),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// regress
// ---------------------------------------------------------------------------

pub fn cmd_regress(run_root: &Path, out: Option<&Path>) -> Result<(), AppError> {
    let (run, rows) = loaded_rows(run_root)?;
    let out = default_out(run_root, out);
    write_regressions(&run, &rows, &out)?;
    Ok(())
}

fn write_regressions(run: &LoadedRun, rows: &[AnalysisRow], out: &Path) -> Result<(), AppError> {
    let same_period = run.manifest.study == Study::SamePeriod;
    if !same_period {
        let fits = spec_ftr_share(rows).map_err(|e| runtime(format!("ftr-share spec: {e}")))?;
        let columns: Vec<(String, OlsFit)> = fits
            .into_iter()
            .map(|(variant, fit)| (variant.label().to_string(), fit))
            .collect();
        write_file(
            &out.join("table_ftr_share.txt"),
            &render_regression_table(
                "Choice of the delayed reward on strong-FTR language",
                "Strong FTR",
                &columns,
            ),
        )?;
        write_file(
            &out.join("table_ftr_share.csv"),
            &regression_to_csv("strong_ftr", &columns),
        )?;
        println!(
            "strong-FTR share gap: {:+.4}{} (delay-interest FE)",
            columns[2].1.coef[0],
            columns[2].1.stars(0)
        );
    }
    let fits = spec_proper_test(rows).map_err(|e| runtime(format!("proper-test spec: {e}")))?;
    let columns: Vec<(String, OlsFit)> = fits
        .into_iter()
        .map(|(variant, fit)| (variant.label().to_string(), fit))
        .collect();
    let (txt, csv) = if same_period {
        ("table_lexico_test.txt", "table_lexico_test.csv")
    } else {
        ("table_proper_test.txt", "table_proper_test.csv")
    };
    write_file(
        &out.join(txt),
        &render_regression_table(
            "Choice of the larger reward on the reward gap (thousands)",
            "Reward gap",
            &columns,
        ),
    )?;
    write_file(&out.join(csv), &regression_to_csv("reward_gap", &columns))?;
    println!(
        "reward-gap coefficient: {:+.4}{} (language-delay FE)",
        columns[2].1.coef[0],
        columns[2].1.stars(0)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// topics
// ---------------------------------------------------------------------------

pub struct TopicOptions {
    pub k: usize,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iters: usize,
    pub seed: u64,
    pub context_stopwords: Vec<String>,
    pub merge_map: Option<Vec<String>>,
    pub top_n: usize,
}

pub fn parse_merge_map(names: &[String]) -> Result<TopicLabeling, AppError> {
    let merge_map = names
        .iter()
        .map(|name| match name.to_lowercase().as_str() {
            "risk" | "risk-uncertainty" => Ok(TopicLabel::RiskUncertainty),
            "opportunity" | "opportunity-cost" => Ok(TopicLabel::OpportunityCost),
            "urgency" => Ok(TopicLabel::Urgency),
            other => Err(usage(format!(
                "unknown topic label {other}; use risk, opportunity, or urgency"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TopicLabeling { merge_map })
}

pub fn cmd_topics(run_root: &Path, out: Option<&Path>, opts: &TopicOptions) -> Result<(), AppError> {
    let run = load_run(run_root)?;
    if run.manifest.study == Study::SamePeriod {
        return Err(usage("topic analysis needs a cross-period chain-of-thought run"));
    }
    let out = default_out(run_root, out);
    let analytics = run_topic_pipeline(&run, &out, opts)?;
    let fits = topic_ftr_regressions(&analytics)
        .map_err(|e| runtime(format!("topic regression: {e}")))?;
    write_file(
        &out.join("table_topic_ftr.txt"),
        &render_regression_table(
            "Normalized topic prevalence on strong-FTR language",
            "Strong FTR",
            &fits,
        ),
    )?;
    write_file(&out.join("table_topic_ftr.csv"), &regression_to_csv("strong_ftr", &fits))?;
    for (label, fit) in &fits {
        println!("{label}: {:+.4}{} per strong-FTR", fit.coef[0], fit.stars(0));
    }
    Ok(())
}

fn run_topic_pipeline(
    run: &LoadedRun,
    out: &Path,
    opts: &TopicOptions,
) -> Result<PrevalenceAnalytics, AppError> {
    let log = run.dir.log(&run.manifest);
    let records = log
        .read_all()
        .map_err(|e| runtime(format!("cannot read samples: {e}")))?;
    let mut documents = Vec::new();
    let mut meta: Vec<(String, usize)> = Vec::new();
    for (position, record) in records.iter().enumerate() {
        let text = record
            .english_translation
            .as_deref()
            .or(record.cot_explanation.as_deref());
        if let Some(text) = text {
            // Positional suffix keeps refs unique across resumed runs.
            let sample_ref = format!(
                "{}#{}@{}:{position}",
                record.cell_key, record.sample_index, record.attempt
            );
            documents.push(Document {
                sample_ref: sample_ref.clone(),
                text: text.to_string(),
            });
            meta.push((record.cell_key.clone(), record.cell_index));
        }
    }
    if documents.is_empty() {
        return Err(usage("run has no chain-of-thought explanations to analyze"));
    }

    let stopwords = default_stopwords();
    let context: HashSet<String> = opts.context_stopwords.iter().cloned().collect();
    let corpus = build_corpus(&documents, &stopwords, &context);
    if !corpus.excluded_refs.is_empty() {
        println!(
            "excluded {} empty documents after preprocessing",
            corpus.excluded_refs.len()
        );
    }
    let alpha = opts.alpha.unwrap_or(50.0 / opts.k as f64);
    let model = fit_lda(&corpus, opts.k, alpha, opts.beta, opts.iters, opts.seed)
        .map_err(|e| runtime(format!("lda fit: {e}")))?;
    write_file(&out.join("topic_terms.csv"), &topic_term_csv(&model, opts.top_n))?;
    write_file(
        &out.join("topic_top_words.txt"),
        &render_top_words_table(&model, opts.top_n),
    )?;

    // Per-document inference with the model frozen, deterministic per
    // document index.
    let thetas: Vec<Vec<f64>> = corpus
        .doc_tokens
        .iter()
        .enumerate()
        .map(|(idx, doc)| infer_doc_topics(&model, doc, 50, opts.seed ^ (idx as u64)).theta)
        .collect();
    write_file(&out.join("doc_topics.csv"), &theta_csv(&corpus.doc_refs, &thetas))?;

    // Join retained documents back to their cells for the prevalence
    // analytics (documents can be dropped during preprocessing).
    let retained: HashSet<&str> = corpus.doc_refs.iter().map(String::as_str).collect();
    let cell_by_index: HashMap<usize, &Cell> = run.cells.iter().enumerate().collect();
    let mut conditioned = Vec::new();
    let mut theta_iter = thetas.iter();
    for (document, (cell_key, cell_index)) in documents.iter().zip(&meta) {
        if !retained.contains(document.sample_ref.as_str()) {
            continue;
        }
        let theta = theta_iter.next().expect("theta per retained doc").clone();
        let Some(Cell::CrossPeriod(cell)) = cell_by_index.get(cell_index).copied() else {
            continue;
        };
        debug_assert_eq!(cell_key, &cell_by_index[cell_index].key());
        conditioned.push(ConditionedTheta {
            sample_ref: document.sample_ref.clone(),
            language: cell.language.code.clone(),
            ftr_strong: cell.language.ftr_class == timepref::design::FtrClass::Strong,
            delay_months: cell.delay_months,
            interest: cell.interest,
            theta,
        });
    }

    let labeling = match &opts.merge_map {
        Some(names) => parse_merge_map(names)?,
        None if opts.k == 4 => TopicLabeling::default_k4(),
        None => {
            return Err(usage(format!(
                "--merge-map is required when k != 4 (k = {})",
                opts.k
            )))
        }
    };
    let analytics = prevalence_analytics(&conditioned, &labeling)
        .map_err(|e| runtime(format!("prevalence analytics: {e}")))?;
    write_file(
        &out.join("prevalence_by_interest.csv"),
        &timepref::topics::prevalence_csv(&analytics.by_interest, "interest"),
    )?;
    write_file(
        &out.join("prevalence_by_delay.csv"),
        &timepref::topics::prevalence_csv(&analytics.by_delay, "delay"),
    )?;
    write_file(
        &out.join("prevalence_by_language.csv"),
        &timepref::topics::prevalence_csv(&analytics.by_language, "language"),
    )?;
    Ok(analytics)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(run_root: &Path, out: Option<&Path>) -> Result<(), AppError> {
    let (run, rows) = loaded_rows(run_root)?;
    let out = default_out(run_root, out);

    let by_language = share_by_language(&rows);
    write_file(
        &out.join("share_by_language.csv"),
        &shares_to_csv("language", &by_language),
    )?;
    write_file(
        &out.join("share_by_language.svg"),
        &shares_svg("Share of delayed-reward choices by language", &by_language),
    )?;
    let by_interest = share_by_interest(&rows);
    write_file(
        &out.join("share_by_interest.csv"),
        &shares_to_csv("interest", &by_interest),
    )?;
    write_file(
        &out.join("share_by_interest.svg"),
        &shares_svg("Share of delayed-reward choices by interest rate", &by_interest),
    )?;

    if run.manifest.study != Study::SamePeriod {
        write_estimates(&rows, &out)?;
    }
    write_regressions(&run, &rows, &out)?;
    println!("report artifacts written to {}", out.display());
    Ok(())
}
