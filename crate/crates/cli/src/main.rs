//! `timepref`: operator entry point for the measurement harness.
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod analyze;
mod config;
mod run_cmd;
mod translate;
mod util;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::FileConfig;
use std::path::PathBuf;
use timepref::design::{grid_to_csv, render_reward_table};
use timepref::storage::Study;
use util::{build_cells, resolve_languages, usage, write_file, AppError};

#[derive(Parser)]
#[command(
    name = "timepref",
    version,
    about = "Measure intertemporal preferences of chat models via conjoint choice experiments"
)]
struct Cli {
    /// Optional TOML configuration file (flags override file values).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the experiment grid and the rendered reward matrix.
    Grid(GridArgs),
    /// Execute or resume a sample-collection run.
    Run(RunArgs),
    /// Fit discount-rate estimates per language and pooled by FTR class.
    Estimate(RunRefArgs),
    /// Run the fixed-effects regression specifications.
    Regress(RunRefArgs),
    /// LDA topic analysis of chain-of-thought explanations.
    Topics(TopicsArgs),
    /// Emit all report artifacts (shares, estimates, tables, plots).
    Report(RunRefArgs),
    /// Translate the English question template into every language.
    TranslateTemplates(TranslateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyArg {
    StandardGpt35,
    StandardGpt4,
    CotGpt4,
    SamePeriod,
    Simulated,
}

impl From<StudyArg> for Study {
    fn from(value: StudyArg) -> Self {
        match value {
            StudyArg::StandardGpt35 => Study::StandardGpt35,
            StudyArg::StandardGpt4 => Study::StandardGpt4,
            StudyArg::CotGpt4 => Study::CoTGpt4,
            StudyArg::SamePeriod => Study::SamePeriod,
            StudyArg::Simulated => Study::Simulated,
        }
    }
}

#[derive(Args)]
struct GridArgs {
    /// Emit the same-period (lexicographic-control) grid instead.
    #[arg(long)]
    same_period: bool,
    /// Comma-separated language codes (default: all 22).
    #[arg(long, value_delimiter = ',')]
    languages: Option<Vec<String>>,
    /// Reward unit label substituted into prompts.
    #[arg(long)]
    unit: Option<String>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Run directory (created, or resumed when it already exists).
    #[arg(long)]
    out: PathBuf,
    /// Which study design to execute.
    #[arg(long, value_enum, default_value = "simulated")]
    study: StudyArg,
    /// Use the live chat-completions endpoint instead of simulated agents.
    #[arg(long)]
    live: bool,
    #[arg(long, value_delimiter = ',')]
    languages: Option<Vec<String>>,
    #[arg(long)]
    samples_per_cell: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    unit: Option<String>,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Hard token budget for live runs; exceeding it aborts cleanly.
    #[arg(long)]
    budget_tokens: Option<u64>,
    /// Population preset (default-calibrated, default-lexicographic) or
    /// JSON file for simulated runs.
    #[arg(long)]
    population: Option<String>,
    /// Directory with per-language question templates (live runs).
    #[arg(long)]
    template_dir: Option<PathBuf>,
    /// Process at most this many samples, leaving the rest resumable.
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Args)]
struct RunRefArgs {
    /// Run directory to analyze.
    #[arg(long)]
    run: PathBuf,
    /// Output directory (default: <run>/report).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TopicsArgs {
    #[command(flatten)]
    base: RunRefArgs,
    /// Topic count.
    #[arg(long)]
    k: Option<usize>,
    /// Dirichlet document-topic hyperparameter (default 50/K).
    #[arg(long)]
    alpha: Option<f64>,
    /// Dirichlet topic-term hyperparameter.
    #[arg(long)]
    beta: Option<f64>,
    /// Gibbs sweeps.
    #[arg(long)]
    iters: Option<usize>,
    /// LDA sampling seed.
    #[arg(long)]
    lda_seed: Option<u64>,
    /// Extra context-specific stopwords (repeatable).
    #[arg(long = "context-stopword")]
    context_stopwords: Vec<String>,
    /// Label per raw topic, e.g. risk,opportunity,urgency,opportunity.
    #[arg(long, value_delimiter = ',')]
    merge_map: Option<Vec<String>>,
    /// Top words per topic in the emitted table.
    #[arg(long, default_value_t = 20)]
    top_n: usize,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model_id: Option<String>,
    /// Directory to write the templates into.
    #[arg(long, default_value = "templates")]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    let file = config::load(cli.config.as_deref()).map_err(usage)?;
    match cli.command {
        Command::Grid(args) => cmd_grid(args, &file),
        Command::Run(args) => cmd_run(args, &file),
        Command::Estimate(args) => analyze::cmd_estimate(&args.run, args.out.as_deref()),
        Command::Regress(args) => analyze::cmd_regress(&args.run, args.out.as_deref()),
        Command::Topics(args) => {
            let opts = analyze::TopicOptions {
                k: args.k.or(file.lda.k).unwrap_or(timepref::topics::DEFAULT_K),
                alpha: args.alpha.or(file.lda.alpha),
                beta: args
                    .beta
                    .or(file.lda.beta)
                    .unwrap_or(timepref::topics::DEFAULT_BETA),
                iters: args
                    .iters
                    .or(file.lda.iters)
                    .unwrap_or(timepref::topics::DEFAULT_SWEEPS),
                seed: args.lda_seed.or(file.lda.seed).unwrap_or(7),
                context_stopwords: if args.context_stopwords.is_empty() {
                    file.context_stopwords.clone()
                } else {
                    args.context_stopwords.clone()
                },
                merge_map: args.merge_map.clone().or_else(|| file.lda.merge_map.clone()),
                top_n: args.top_n,
            };
            analyze::cmd_topics(&args.base.run, args.base.out.as_deref(), &opts)
        }
        Command::Report(args) => analyze::cmd_report(&args.run, args.out.as_deref()),
        Command::TranslateTemplates(args) => {
            let endpoint = args
                .endpoint
                .or(file.endpoint)
                .ok_or_else(|| usage("--endpoint is required"))?;
            let model_id = args
                .model_id
                .or(file.model_id)
                .unwrap_or_else(|| "gpt-4".to_string());
            translate::cmd_translate_templates(&endpoint, &model_id, &args.out)
        }
    }
}

fn cmd_grid(args: GridArgs, file: &FileConfig) -> Result<(), AppError> {
    let requested = args.languages.or_else(|| file.languages.clone());
    let languages = resolve_languages(requested.as_deref())?;
    let unit = args
        .unit
        .or_else(|| file.unit.clone())
        .unwrap_or_else(|| config::DEFAULT_UNIT.to_string());
    let study = if args.same_period {
        Study::SamePeriod
    } else {
        Study::StandardGpt4
    };
    let cells = build_cells(study, &languages);
    write_file(&args.out.join("grid.csv"), &grid_to_csv(&cells, &unit))?;
    if !args.same_period {
        write_file(&args.out.join("reward_table.txt"), &render_reward_table())?;
    }
    println!(
        "{} cells across {} languages written to {}",
        cells.len(),
        languages.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_run(args: RunArgs, file: &FileConfig) -> Result<(), AppError> {
    let study: Study = args.study.into();
    let requested = args.languages.or_else(|| file.languages.clone());
    let languages = resolve_languages(requested.as_deref())?;
    let population = run_cmd::load_population(
        args.population
            .as_deref()
            .or(file.population.as_deref()),
    )?;
    let settings = run_cmd::RunSettings {
        out: args.out,
        study,
        live: args.live,
        samples_per_cell: args
            .samples_per_cell
            .or(file.samples_per_cell)
            .unwrap_or_else(|| study.default_samples_per_cell()),
        languages,
        seed: args.seed.or(file.seed).unwrap_or(42),
        unit: args
            .unit
            .or_else(|| file.unit.clone())
            .unwrap_or_else(|| config::DEFAULT_UNIT.to_string()),
        model_id: args
            .model_id
            .or_else(|| file.model_id.clone())
            .unwrap_or_else(|| "simulated-agent".to_string()),
        endpoint: args.endpoint.or_else(|| file.endpoint.clone()),
        budget: args.budget_tokens.or(file.budget_tokens),
        refusal_retry_cap: file.refusal_retry_cap.unwrap_or(3),
        population,
        template_dir: args.template_dir.or_else(|| file.template_dir.clone()),
        max_samples: args.max_samples,
    };
    if settings.samples_per_cell == 0 {
        return Err(usage("samples-per-cell must be positive"));
    }
    run_cmd::execute(settings)
}
