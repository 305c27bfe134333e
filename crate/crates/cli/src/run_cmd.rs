//! The `run` subcommand: execute (or resume) a sample-collection plan
//! against simulated agents or a live chat-completions endpoint.

use crate::util::{build_cells, grid_snapshot_path, runtime, usage, write_file, AppError};
use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Mutex;
use timepref::agents::{sample_seed, synthetic_explanation, PopulationSpec};
use timepref::client::{
    ChatClient, ClientError, CompletionRequest, HttpTransport, TokenUsage, TransportPolicy,
};
use timepref::design::{grid_to_csv, Cell, Language};
use timepref::prompting::{
    build_extraction_followup, build_preamble, parse_choice, render_question, ChatMessage,
    ChoiceOutcome, ProtocolVariant, QuestionTemplate,
};
use timepref::storage::{
    export_analysis, grid_hash, remaining_work, PlannedSample, RunDir, RunManifest, SampleLog,
    SampleRecord, Study,
};

pub struct RunSettings {
    pub out: PathBuf,
    pub study: Study,
    pub live: bool,
    pub samples_per_cell: usize,
    pub languages: Vec<Language>,
    pub seed: u64,
    pub unit: String,
    pub model_id: String,
    pub endpoint: Option<String>,
    pub budget: Option<u64>,
    pub refusal_retry_cap: u32,
    pub population: PopulationSpec,
    pub template_dir: Option<PathBuf>,
    /// Stop after this many samples in this invocation (the run stays
    /// resumable); mainly for drills and tests.
    pub max_samples: Option<usize>,
}

/// Fixed timestamp for simulated runs so re-runs are byte-identical.
fn simulated_now() -> chrono::DateTime<chrono::Utc> {
    chrono::DateTime::UNIX_EPOCH
}

pub fn execute(settings: RunSettings) -> Result<(), AppError> {
    let cells = build_cells(settings.study, &settings.languages);
    if cells.is_empty() {
        return Err(usage("no cells: language list resolved empty"));
    }
    let dir = RunDir::new(&settings.out);

    let manifest = if dir.manifest_path().exists() {
        let existing = dir
            .read_manifest()
            .map_err(|e| runtime(format!("cannot read manifest: {e}")))?;
        if existing.study != settings.study {
            return Err(usage(format!(
                "run directory holds a {} run, requested {}",
                existing.study.as_str(),
                settings.study.as_str()
            )));
        }
        existing
    } else {
        std::fs::create_dir_all(&dir.root)
            .map_err(|e| runtime(format!("cannot create {}: {e}", dir.root.display())))?;
        let manifest = RunManifest {
            run_id: format!("{}-{:016x}", settings.study.as_str(), settings.seed),
            study: settings.study,
            grid_hash: grid_hash(&cells, &settings.unit),
            samples_per_cell: settings.samples_per_cell,
            model_id: settings.model_id.clone(),
            created_at: if settings.live {
                chrono::Utc::now()
            } else {
                simulated_now()
            },
            unit: settings.unit.clone(),
            seed: settings.seed,
        };
        dir.write_manifest(&manifest)
            .map_err(|e| runtime(format!("cannot write manifest: {e}")))?;
        write_file(&grid_snapshot_path(&dir), &grid_to_csv(&cells, &settings.unit))?;
        manifest
    };

    let log = dir.log(&manifest);
    let mut remaining = remaining_work(&manifest, &cells, &log)
        .map_err(|e| runtime(format!("cannot resume: {e}")))?;
    let total_plan = cells.len() * manifest.samples_per_cell;
    println!(
        "run {}: {} cells, {} planned samples, {} remaining",
        manifest.run_id,
        cells.len(),
        total_plan,
        remaining.len()
    );
    if let Some(cap) = settings.max_samples {
        remaining.truncate(cap);
    }

    let truncated = settings.max_samples.is_some();
    if settings.live {
        run_live(&settings, &manifest, &cells, &log, remaining)?;
    } else {
        run_simulated(&settings, &manifest, &cells, &log, remaining)?;
    }

    // Export analysis artifacts; deterministic given the log contents.
    let (rows, summary) = export_analysis(&manifest, &cells, &log)
        .map_err(|e| runtime(format!("export failed: {e}")))?;
    write_file(
        &dir.analysis_path(),
        &timepref::storage::analysis_to_csv(&rows),
    )?;
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| runtime(format!("summary serialization failed: {e}")))?;
    write_file(&dir.summary_path(), &format!("{summary_json}\n"))?;
    println!(
        "parsed {} samples ({} refusals, {} unparseable){}",
        summary.parsed,
        summary.refusals,
        summary.unparseable,
        if truncated {
            "; stopped at --max-samples, resumable"
        } else {
            ""
        }
    );
    Ok(())
}

fn run_simulated(
    settings: &RunSettings,
    manifest: &RunManifest,
    cells: &[Cell],
    log: &SampleLog,
    remaining: Vec<PlannedSample>,
) -> Result<(), AppError> {
    let use_cot = manifest.study.uses_chain_of_thought();
    let n = remaining.len();
    for (done, planned) in remaining.into_iter().enumerate() {
        let cell = &cells[planned.cell_index];
        let agent = settings.population.agent_for(cell.language());
        let seed = sample_seed(manifest.seed, planned.cell_index, planned.sample_index);
        let raw_reply = agent.respond_noisy(cell, planned.order, seed);
        let outcome = parse_choice(&raw_reply, planned.order);
        let (cot_explanation, english_translation) = if use_cot {
            // Simulated explanations are generated in English, so the
            // translation step is the identity.
            let text = synthetic_explanation(cell, seed);
            (Some(text.clone()), Some(text))
        } else {
            (None, None)
        };
        log.append(&SampleRecord {
            run_id: manifest.run_id.clone(),
            cell_key: planned.cell_key,
            cell_index: planned.cell_index,
            sample_index: planned.sample_index,
            order: planned.order,
            raw_reply,
            cot_explanation,
            english_translation,
            outcome,
            attempt: 1,
            seed: Some(seed),
            usage: TokenUsage::default(),
            timestamp: simulated_now(),
        })
        .map_err(|e| runtime(format!("log append failed: {e}")))?;
        if (done + 1) % 20_000 == 0 {
            eprintln!("  {}/{n} samples", done + 1);
        }
    }
    Ok(())
}

fn run_live(
    settings: &RunSettings,
    manifest: &RunManifest,
    cells: &[Cell],
    log: &SampleLog,
    remaining: Vec<PlannedSample>,
) -> Result<(), AppError> {
    let endpoint = settings
        .endpoint
        .as_deref()
        .ok_or_else(|| usage("--endpoint is required for live runs"))?;
    let policy = TransportPolicy::default();
    let transport = HttpTransport::from_env(endpoint, policy.timeout).map_err(|e| usage(format!("{e}")))?;
    let workers = policy.max_in_flight;
    let client = ChatClient::new(transport, policy).with_budget(settings.budget);

    let registry: Vec<Language> = settings.languages.clone();
    let mut templates = std::collections::HashMap::new();
    for language in &registry {
        let template = QuestionTemplate::load(settings.template_dir.as_deref(), language.clone())
            .map_err(|e| usage(format!("template for {}: {e}", language.code)))?;
        templates.insert(language.code.clone(), template);
    }

    let queue: Mutex<VecDeque<PlannedSample>> = Mutex::new(remaining.into());
    let log_lock = Mutex::new(());
    let failure: Mutex<Option<AppError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failure.lock().unwrap().is_some() {
                    return;
                }
                let Some(planned) = queue.lock().unwrap().pop_front() else {
                    return;
                };
                let cell = &cells[planned.cell_index];
                let template = &templates[&cell.language().code];
                match collect_one(settings, manifest, &client, cell, template, &planned) {
                    Ok(records) => {
                        let _guard = log_lock.lock().unwrap();
                        for record in &records {
                            if let Err(e) = log.append(record) {
                                *failure.lock().unwrap() =
                                    Some(runtime(format!("log append failed: {e}")));
                                return;
                            }
                        }
                    }
                    Err(e) => {
                        *failure.lock().unwrap() = Some(e);
                        return;
                    }
                }
            });
        }
    });

    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => {
            println!("tokens spent: {}", client.tokens_spent());
            Ok(())
        }
    }
}

/// Collect one planned sample, retrying refusals up to the cap. Every
/// attempt is logged; the last record carries the final outcome.
fn collect_one(
    settings: &RunSettings,
    manifest: &RunManifest,
    client: &ChatClient<HttpTransport>,
    cell: &Cell,
    template: &QuestionTemplate,
    planned: &PlannedSample,
) -> Result<Vec<SampleRecord>, AppError> {
    let use_cot = manifest.study.uses_chain_of_thought();
    let variant = if use_cot {
        ProtocolVariant::ChainOfThought
    } else {
        ProtocolVariant::Standard
    };
    let question = render_question(cell, planned.order, template, &manifest.unit)
        .map_err(|e| runtime(format!("render failed: {e}")))?;
    let mut records = Vec::new();
    for attempt in 1..=settings.refusal_retry_cap.max(1) {
        let mut messages: Vec<ChatMessage> = build_preamble(variant);
        messages.push(question.clone());
        let request = CompletionRequest::new(&manifest.model_id, messages.clone());
        let response = client.complete(&request).map_err(map_client_error)?;
        let mut usage = response.usage;
        let (reply_for_parse, cot_explanation) = if use_cot {
            messages.push(ChatMessage::assistant(response.content.clone()));
            messages.push(build_extraction_followup());
            let extraction = CompletionRequest::new(&manifest.model_id, messages.clone());
            let extracted = client.complete(&extraction).map_err(map_client_error)?;
            usage.input_tokens += extracted.usage.input_tokens;
            usage.output_tokens += extracted.usage.output_tokens;
            (extracted.content, Some(response.content.clone()))
        } else {
            (response.content.clone(), None)
        };
        let english_translation = match &cot_explanation {
            Some(text) if cell.language().code != "english" => Some(
                client
                    .translate(text, cell.language(), &manifest.model_id)
                    .map_err(map_client_error)?,
            ),
            Some(text) => Some(text.clone()),
            None => None,
        };
        let outcome = parse_choice(&reply_for_parse, planned.order);
        let is_refusal = outcome == ChoiceOutcome::Refusal;
        records.push(SampleRecord {
            run_id: manifest.run_id.clone(),
            cell_key: planned.cell_key.clone(),
            cell_index: planned.cell_index,
            sample_index: planned.sample_index,
            order: planned.order,
            raw_reply: reply_for_parse,
            cot_explanation,
            english_translation,
            outcome,
            attempt,
            seed: None,
            usage,
            timestamp: chrono::Utc::now(),
        });
        if !is_refusal {
            break;
        }
    }
    Ok(records)
}

fn map_client_error(e: ClientError) -> AppError {
    match e {
        ClientError::BudgetExceeded { spent, budget } => runtime(format!(
            "token budget exceeded (spent {spent} of {budget}); run state is resumable"
        )),
        ClientError::Auth(msg) => usage(format!("authentication failed: {msg}")),
        other => runtime(format!("{other}")),
    }
}

/// Parse a population preset name or JSON file path.
pub fn load_population(spec: Option<&str>) -> Result<PopulationSpec, AppError> {
    match spec {
        None | Some("default-calibrated") => Ok(PopulationSpec::default_calibrated()),
        Some("default-lexicographic") => Ok(PopulationSpec::default_lexicographic()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read population {path}: {e}")))?;
            PopulationSpec::from_json(&text)
                .map_err(|e| usage(format!("invalid population {path}: {e}")))
        }
    }
}
