//! Durable run state: manifests, append-only JSONL sample logs with
//! torn-tail tolerance, resume planning, and analysis-ready CSV export.

use crate::client::TokenUsage;
use crate::design::{Cell, PresentationOrder};
use crate::prompting::ChoiceOutcome;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("record run_id {record} does not match manifest run_id {manifest}")]
    RunIdMismatch { record: String, manifest: String },
    #[error("grid hash mismatch: manifest {manifest}, current grid {current}; refusing to resume")]
    GridHashMismatch { manifest: String, current: String },
    #[error("no manifest found in {0}")]
    MissingManifest(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Study {
    StandardGpt35,
    StandardGpt4,
    CoTGpt4,
    SamePeriod,
    Simulated,
}

impl Study {
    /// Sample count per cell used in the published runs.
    pub fn default_samples_per_cell(&self) -> usize {
        match self {
            Study::StandardGpt35 | Study::SamePeriod => 100,
            Study::StandardGpt4 | Study::CoTGpt4 => 10,
            Study::Simulated => 100,
        }
    }

    pub fn uses_chain_of_thought(&self) -> bool {
        matches!(self, Study::CoTGpt4)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Study::StandardGpt35 => "standard_gpt35",
            Study::StandardGpt4 => "standard_gpt4",
            Study::CoTGpt4 => "cot_gpt4",
            Study::SamePeriod => "same_period",
            Study::Simulated => "simulated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub study: Study,
    pub grid_hash: String,
    pub samples_per_cell: usize,
    pub model_id: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub unit: String,
    pub seed: u64,
}

/// Content hash binding a manifest to an exact grid: SHA-256 of the
/// canonical CSV export.
pub fn grid_hash(cells: &[Cell], unit: &str) -> String {
    let csv = crate::design::grid_to_csv(cells, unit);
    let digest = Sha256::digest(csv.as_bytes());
    format!("{digest:x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub run_id: String,
    pub cell_key: String,
    pub cell_index: usize,
    pub sample_index: usize,
    pub order: PresentationOrder,
    pub raw_reply: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cot_explanation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub english_translation: Option<String>,
    pub outcome: ChoiceOutcome,
    pub attempt: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub usage: TokenUsage,
    pub timestamp: chrono::DateTime<chrono::Utc>,
}

/// Single-writer append-only JSONL log. A crash mid-append leaves at
/// most one torn final line, which readers detect and drop.
pub struct SampleLog {
    path: PathBuf,
    manifest_run_id: String,
}

impl SampleLog {
    pub fn new(path: impl Into<PathBuf>, manifest: &RunManifest) -> Self {
        Self {
            path: path.into(),
            manifest_run_id: manifest.run_id.clone(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &SampleRecord) -> Result<(), StorageError> {
        if record.run_id != self.manifest_run_id {
            return Err(StorageError::RunIdMismatch {
                record: record.run_id.clone(),
                manifest: self.manifest_run_id.clone(),
            });
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let line = serde_json::to_string(record)?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(())
    }

    /// Read every intact record. A final line that fails to parse (torn
    /// write) is skipped; a malformed line elsewhere is an error.
    pub fn read_all(&self) -> Result<Vec<SampleRecord>, StorageError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(File::open(&self.path)?);
        let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        let mut records = Vec::with_capacity(lines.len());
        let last = lines.len().saturating_sub(1);
        for (idx, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<SampleRecord>(line) {
                Ok(record) => records.push(record),
                Err(e) if idx == last => {
                    // Torn tail from an interrupted append; drop it.
                    let _ = e;
                }
                Err(e) => return Err(StorageError::Serde(e)),
            }
        }
        Ok(records)
    }
}

/// One planned sample: the coordinates the run orchestrator needs to
/// execute (or re-execute) it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSample {
    pub cell_index: usize,
    pub cell_key: String,
    pub sample_index: usize,
    pub order: PresentationOrder,
}

/// Full sample plan for a grid: `samples_per_cell` balanced orders per
/// cell, in deterministic (cell, sample) order.
pub fn build_plan(cells: &[Cell], samples_per_cell: usize) -> Vec<PlannedSample> {
    let mut plan = Vec::with_capacity(cells.len() * samples_per_cell);
    for (cell_index, cell) in cells.iter().enumerate() {
        let key = cell.key();
        for (sample_index, order) in crate::design::plan_orders(samples_per_cell, cell_index)
            .into_iter()
            .enumerate()
        {
            plan.push(PlannedSample {
                cell_index,
                cell_key: key.clone(),
                sample_index,
                order,
            });
        }
    }
    plan
}

/// Samples still to be collected: the plan minus non-refusal completed
/// samples, matched per (cell_key, order) multiset. Refuses to resume
/// against a different grid.
pub fn remaining_work(
    manifest: &RunManifest,
    cells: &[Cell],
    log: &SampleLog,
) -> Result<Vec<PlannedSample>, StorageError> {
    let current_hash = grid_hash(cells, &manifest.unit);
    if current_hash != manifest.grid_hash {
        return Err(StorageError::GridHashMismatch {
            manifest: manifest.grid_hash.clone(),
            current: current_hash,
        });
    }
    let mut completed: HashMap<(String, bool), usize> = HashMap::new();
    for record in log.read_all()? {
        if record.outcome != ChoiceOutcome::Refusal {
            *completed
                .entry((record.cell_key, record.order.sooner_listed_first))
                .or_default() += 1;
        }
    }
    let plan = build_plan(cells, manifest.samples_per_cell);
    let mut remaining = Vec::new();
    for planned in plan {
        let key = (planned.cell_key.clone(), planned.order.sooner_listed_first);
        match completed.get_mut(&key) {
            Some(count) if *count > 0 => *count -= 1,
            _ => remaining.push(planned),
        }
    }
    Ok(remaining)
}

/// One analysis-ready row: a parsed (non-refusal, non-unparseable)
/// sample joined to its cell's design coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRow {
    pub language: String,
    pub ftr_strong: u8,
    pub d: Option<u32>,
    pub i: Option<f64>,
    pub t1: u32,
    pub r1: u64,
    pub t2: u32,
    pub r2: u64,
    pub order_sooner_first: u8,
    pub y_later: u8,
    pub study: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub parsed: usize,
    pub refusals: usize,
    pub unparseable: usize,
}

/// Export the log as an analysis table. Refusals and unparseable replies
/// are excluded from the rows and counted in the summary sidecar.
pub fn export_analysis(
    manifest: &RunManifest,
    cells: &[Cell],
    log: &SampleLog,
) -> Result<(Vec<AnalysisRow>, ExportSummary), StorageError> {
    let by_key: HashMap<String, &Cell> = cells.iter().map(|c| (c.key(), c)).collect();
    let mut rows = Vec::new();
    let mut summary = ExportSummary::default();
    for record in log.read_all()? {
        let y_later = match record.outcome {
            ChoiceOutcome::LaterChosen => 1,
            ChoiceOutcome::SoonerChosen => 0,
            ChoiceOutcome::Refusal => {
                summary.refusals += 1;
                continue;
            }
            ChoiceOutcome::Unparseable => {
                summary.unparseable += 1;
                continue;
            }
        };
        let Some(cell) = by_key.get(&record.cell_key) else {
            continue;
        };
        summary.parsed += 1;
        let (d, i) = match cell {
            Cell::CrossPeriod(c) => (Some(c.delay_months), Some(c.interest)),
            Cell::SamePeriod(_) => (None, None),
        };
        let sooner = cell.sooner();
        let later = cell.later();
        rows.push(AnalysisRow {
            language: cell.language().code.clone(),
            ftr_strong: (cell.language().ftr_class == crate::design::FtrClass::Strong) as u8,
            d,
            i,
            t1: sooner.delivery_months,
            r1: sooner.amount,
            t2: later.delivery_months,
            r2: later.amount,
            order_sooner_first: record.order.sooner_listed_first as u8,
            y_later,
            study: manifest.study.as_str().to_string(),
        });
    }
    Ok((rows, summary))
}

/// Render analysis rows as CSV; pure function of the rows, so re-export
/// of the same log is byte-identical.
pub fn analysis_to_csv(rows: &[AnalysisRow]) -> String {
    let mut out =
        String::from("language,ftr_strong,d,i,t1,r1,t2,r2,order_sooner_first,y_later,study\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.language,
            row.ftr_strong,
            row.d.map(|v| v.to_string()).unwrap_or_default(),
            row.i.map(|v| v.to_string()).unwrap_or_default(),
            row.t1,
            row.r1,
            row.t2,
            row.r2,
            row.order_sooner_first,
            row.y_later,
            row.study,
        ));
    }
    out
}

/// Standard file layout inside a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn samples_path(&self) -> PathBuf {
        self.root.join("samples.jsonl")
    }

    pub fn analysis_path(&self) -> PathBuf {
        self.root.join("analysis.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), StorageError> {
        std::fs::create_dir_all(&self.root)?;
        let json = serde_json::to_string_pretty(manifest)?;
        std::fs::write(self.manifest_path(), json)?;
        Ok(())
    }

    pub fn read_manifest(&self) -> Result<RunManifest, StorageError> {
        let path = self.manifest_path();
        if !path.exists() {
            return Err(StorageError::MissingManifest(self.root.clone()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn log(&self, manifest: &RunManifest) -> SampleLog {
        SampleLog::new(self.samples_path(), manifest)
    }
}
