//! Report format, dataset fingerprints and the error-to-exit-code mapping.

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use remia_core::generators::GenerateError;
use remia_core::Table;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const SWEEP_FORMAT_VERSION: u32 = 1;
pub const COMPARE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("generator failed: {0}")]
    Generator(GenerateError),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Generator(_) => 3,
            CliError::Runtime(_) | CliError::Io { .. } => 1,
        }
    }
}

fn generator_error(e: GenerateError) -> CliError {
    match e {
        GenerateError::Spawn { .. }
        | GenerateError::NonZeroExit { .. }
        | GenerateError::Timeout(_)
        | GenerateError::Output { .. }
        | GenerateError::Io(_) => CliError::Generator(e),
        other => CliError::Validation(other.to_string()),
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        generator_error(e)
    }
}

impl From<remia_core::Error> for CliError {
    fn from(e: remia_core::Error) -> Self {
        use remia_core::Error as E;
        match e {
            E::Generate(g) => generator_error(g),
            E::Table(_) | E::Config(_) | E::Baseline(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<remia_core::tabular::TableError> for CliError {
    fn from(e: remia_core::tabular::TableError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<remia_core::baselines::BaselineError> for CliError {
    fn from(e: remia_core::baselines::BaselineError) -> Self {
        remia_core::Error::from(e).into()
    }
}

impl From<remia_core::quality::QualityError> for CliError {
    fn from(e: remia_core::quality::QualityError) -> Self {
        use remia_core::quality::QualityError as Q;
        match e {
            Q::Train(_) | Q::Stats(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub rows: usize,
    pub columns: usize,
    /// FNV-1a 64 of the canonical CSV, hex.
    pub hash: String,
}

pub fn fingerprint(t: &Table) -> Fingerprint {
    let mut h = FnvHasher::default();
    h.write(&t.canonical_csv());
    Fingerprint {
        rows: t.len(),
        columns: t.n_columns(),
        hash: format!("{:016x}", h.finish()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub p_value: f64,
    pub level: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub command: String,
    /// The command's flags with every default filled in.
    pub args: serde_json::Value,
    /// Resolved metric settings (discriminator, thresholds, sizes).
    pub resolved: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub format_version: u32,
    pub tool_version: String,
    pub metric: String,
    pub generator: String,
    pub dataset: Fingerprint,
    pub config: ConfigEcho,
    pub seeds: Vec<u64>,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over repetitions.
    pub std: f64,
    pub significance: Option<Significance>,
    pub records_used: Option<usize>,
    pub wall_clock_seconds: f64,
    pub flags: Vec<String>,
    pub details: serde_json::Value,
}

impl AuditReport {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let report: AuditReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: not a report: {e}", path.display())))?;
        if report.format_version != REPORT_FORMAT_VERSION {
            return Err(CliError::Validation(format!(
                "{}: unsupported report format_version {}",
                path.display(),
                report.format_version
            )));
        }
        Ok(report)
    }

    /// One-line summary for the terminal.
    pub fn summary(&self) -> String {
        let mut line = format!(
            "{} [{}]: mean {:.4} (std {:.4}, {} reps)",
            self.metric,
            self.generator,
            self.mean,
            self.std,
            self.scores.len()
        );
        if let Some(s) = &self.significance {
            line += &format!(
                ", p={:.3e}{}",
                s.p_value,
                if s.significant { " significant" } else { "" }
            );
        }
        for f in &self.flags {
            line += &format!(", {f}");
        }
        line
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use remia_core::{Cell, Column, Schema};
    use std::sync::Arc;

    #[test]
    fn fingerprint_tracks_content_only() {
        let schema = Arc::new(Schema::new(vec![Column::numerical("a")]).unwrap());
        let t = Table::from_rows(schema.clone(), vec![vec![Cell::Num(1.0)], vec![Cell::Num(2.5)]]).unwrap();
        let same = t.clone().with_fresh_ids(40);
        let other = Table::from_rows(schema, vec![vec![Cell::Num(1.0)], vec![Cell::Num(2.0)]]).unwrap();
        assert_eq!(fingerprint(&t), fingerprint(&same));
        assert_ne!(fingerprint(&t).hash, fingerprint(&other).hash);
        assert_eq!(fingerprint(&t).hash.len(), 16);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Validation("x".into()).exit_code(), 2);
        let g: CliError = GenerateError::Timeout(std::time::Duration::from_secs(1)).into();
        assert_eq!(g.exit_code(), 3);
        let p: CliError = GenerateError::Parameter("p".into()).into();
        assert_eq!(p.exit_code(), 2);
    }
}
