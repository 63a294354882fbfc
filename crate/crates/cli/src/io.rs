//! JSONL data files and commented CSV result files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
}

/// One observation: index `t` (from 1), time `s`, data `y`, optionally the latent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub t: usize,
    pub s: f64,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_true: Option<Vec<f64>>,
}

pub fn write_data(path: &Path, header: &Header, records: &[Record]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    let json = |e: serde_json::Error| CliError::Io(e.to_string());
    writeln!(w, "{}", serde_json::to_string(header).map_err(json)?)?;
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).map_err(json)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a data file; the header line is optional.
pub fn read_data(path: &Path) -> Result<(Option<Header>, Vec<Record>), CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut header = None;
    let mut records = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if k == 0 {
            if let Ok(h) = serde_json::from_str::<Header>(&line) {
                header = Some(h);
                continue;
            }
        }
        let r: Record = serde_json::from_str(&line)
            .map_err(|e| CliError::config(format!("{} line {}: {e}", path.display(), k + 1)))?;
        records.push(r);
    }
    Ok((header, records))
}

/// CSV writer whose file starts with a `#` provenance line.
pub struct ResultFile {
    csv: csv::Writer<BufWriter<File>>,
}

impl ResultFile {
    pub fn create(path: &Path, config_hash: &str, seed: u64, columns: &[String]) -> Result<Self, CliError> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "# config_hash={config_hash} seed={seed}")?;
        let mut csv = csv::Writer::from_writer(file);
        csv.write_record(columns)?;
        Ok(ResultFile { csv })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        self.csv.write_record(fields)?;
        Ok(())
    }

    /// Appends a trailing `#` line and closes the file.
    pub fn finish(self, trailer: Option<&str>) -> Result<(), CliError> {
        let mut inner = self.csv.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        if let Some(t) = trailer {
            writeln!(inner, "# {t}")?;
        }
        inner.flush()?;
        Ok(())
    }
}

/// Shortest round-trip form, switching to exponent notation at extreme magnitudes.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}
