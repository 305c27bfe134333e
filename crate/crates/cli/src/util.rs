//! Shared plumbing for the subcommands: error/exit-code mapping,
//! language resolution, grid construction, and run-directory loading.

use std::path::Path;
use timepref::design::{
    build_cross_period_grid, build_same_period_grid, find_language, language_registry, Cell,
    Language,
};
use timepref::storage::{grid_hash, RunDir, RunManifest, Study};

/// Command failure with its exit code: usage/config problems exit 2,
/// runtime failures exit 1.
#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Runtime(m) => m,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

pub fn runtime(msg: impl Into<String>) -> AppError {
    AppError::Runtime(msg.into())
}

/// Resolve requested language codes (flags > config > all 22) against
/// the registry, preserving registry order.
pub fn resolve_languages(requested: Option<&[String]>) -> Result<Vec<Language>, AppError> {
    let registry = language_registry();
    let Some(requested) = requested else {
        return Ok(registry);
    };
    if requested.is_empty() {
        return Err(usage("language list is empty"));
    }
    for code in requested {
        if find_language(&registry, code).is_none() {
            return Err(usage(format!("unknown language: {code}")));
        }
    }
    Ok(registry
        .into_iter()
        .filter(|l| requested.iter().any(|c| c == &l.code))
        .collect())
}

/// Build the experiment grid for a study over the given languages.
pub fn build_cells(study: Study, languages: &[Language]) -> Vec<Cell> {
    if study == Study::SamePeriod {
        build_same_period_grid(languages)
            .into_iter()
            .map(Cell::SamePeriod)
            .collect()
    } else {
        build_cross_period_grid(languages)
            .into_iter()
            .map(Cell::CrossPeriod)
            .collect()
    }
}

/// A run directory opened for analysis: manifest plus the reconstructed
/// grid, verified against the manifest's grid hash.
pub struct LoadedRun {
    pub dir: RunDir,
    pub manifest: RunManifest,
    pub cells: Vec<Cell>,
}

pub fn grid_snapshot_path(dir: &RunDir) -> std::path::PathBuf {
    dir.root.join("grid.csv")
}

/// Open a run directory: read the manifest, recover the language set
/// from the grid snapshot, rebuild the grid, and verify its hash.
pub fn load_run(root: &Path) -> Result<LoadedRun, AppError> {
    let dir = RunDir::new(root);
    if !dir.manifest_path().exists() {
        return Err(usage(format!(
            "{} is not a run directory (missing manifest.json)",
            root.display()
        )));
    }
    let manifest = dir
        .read_manifest()
        .map_err(|e| runtime(format!("cannot read manifest: {e}")))?;
    let snapshot = std::fs::read_to_string(grid_snapshot_path(&dir))
        .map_err(|e| runtime(format!("cannot read grid snapshot: {e}")))?;
    let mut codes: Vec<String> = Vec::new();
    for line in snapshot.lines().skip(1) {
        if let Some(code) = line.split(',').next() {
            if !code.is_empty() && !codes.iter().any(|c| c == code) {
                codes.push(code.to_string());
            }
        }
    }
    let languages = resolve_languages(Some(&codes))?;
    let cells = build_cells(manifest.study, &languages);
    let current = grid_hash(&cells, &manifest.unit);
    if current != manifest.grid_hash {
        return Err(runtime(format!(
            "grid snapshot does not match manifest hash ({} vs {})",
            current, manifest.grid_hash
        )));
    }
    Ok(LoadedRun {
        dir,
        manifest,
        cells,
    })
}

/// Write a file, creating parent directories as needed.
pub fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}
