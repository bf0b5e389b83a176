//! CSV tables with a provenance comment line, plus one JSON metadata file per run.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Column names in the order the row type serializes its fields.
pub trait CsvRow: Serialize {
    const COLUMNS: &'static [&'static str];
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub rows: usize,
}

/// Writes `# config_hash=<hash> seeds=<seeds>`, the header row, then the rows.
/// The header is written even when there are no rows.
pub fn write_csv<T: CsvRow>(path: &Path, config_hash: &str, seeds: &str, rows: &[T]) -> Result<OutputFile> {
    let mut file = File::create(path).map_err(CliError::io(path))?;
    writeln!(file, "# config_hash={config_hash} seeds={seeds}").map_err(CliError::io(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(T::COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(CliError::io(path))?;
    Ok(OutputFile {
        path: path.to_path_buf(),
        rows: rows.len(),
    })
}

#[derive(Serialize)]
pub struct Metadata<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config_hash: String,
    pub seeds: String,
    pub config: &'a ExperimentConfig,
    pub workers: usize,
    pub elapsed_seconds: f64,
    pub outputs: Vec<OutputFile>,
}

pub fn write_metadata(path: &Path, meta: &Metadata) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
    std::fs::write(path, text + "\n").map_err(CliError::io(path))
}
