//! Error taxonomy, provenance and artifact writing.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use ldplab::action::ActionError;
use ldplab::conditions::ConditionError;
use ldplab::flows::FlowError;
use ldplab::hj1d::HjError;
use ldplab::ldp_verify::LdpError;
use ldplab::legendre::LegendreError;
use ldplab::simulator::SimError;
use ldplab::{ExprError, GeometryError, HamiltonianError, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical non-convergence: {0}")]
    NonConvergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn validation(e: impl Display) -> Self {
        CliError::Validation(e.to_string())
    }

    fn numeric(e: impl Display) -> Self {
        CliError::NonConvergence(e.to_string())
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::validation(e)
            }
        }
    )*};
}

validation_from!(ModelError, ExprError, GeometryError, HamiltonianError, SimError, ConditionError);

impl From<LegendreError> for CliError {
    fn from(e: LegendreError) -> Self {
        match e {
            LegendreError::NonConvergence { .. } => CliError::numeric(e),
            _ => CliError::validation(e),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Legendre(l) => l.into(),
            _ => CliError::validation(e),
        }
    }
}

impl From<ActionError> for CliError {
    fn from(e: ActionError) -> Self {
        match e {
            ActionError::Legendre(l) => l.into(),
            ActionError::Flow(f) => (*f).into(),
            _ => CliError::validation(e),
        }
    }
}

impl From<HjError> for CliError {
    fn from(e: HjError) -> Self {
        match e {
            HjError::NonConvergence { .. } | HjError::TruncationDominated { .. } => CliError::numeric(e),
            HjError::Action(a) => a.into(),
            _ => CliError::validation(e),
        }
    }
}

impl From<LdpError> for CliError {
    fn from(e: LdpError) -> Self {
        match e {
            LdpError::TooFewHits { .. } => CliError::numeric(e),
            LdpError::Action(a) => a.into(),
            _ => CliError::validation(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Parse errors carry the line and column reported by the JSON parser.
pub fn parse_error(path: &Path, e: serde_json::Error) -> CliError {
    CliError::Validation(format!("{}: {} (line {}, column {})", path.display(), e, e.line(), e.column()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Provenance {
    /// The hash covers the canonical (sorted-key) form of the parsed configuration.
    pub fn new(command: &str, config: &serde_json::Value, seed: Option<u64>) -> Self {
        let canonical = serde_json::to_vec(config).expect("JSON values serialize");
        let digest = Sha256::digest(&canonical);
        let config_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Provenance { tool: "ldplab", version: env!("CARGO_PKG_VERSION"), command: command.into(), config_sha256, seed }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    provenance: &'a Provenance,
    report: &'a T,
}

pub struct Output {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: &Path, provenance: Provenance) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf(), provenance, written: Vec::new() })
    }

    fn write(&mut self, name: &str, text: String) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<(), CliError> {
        let env = Envelope { provenance: &self.provenance, report };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    /// CSV with a leading `#` provenance line.
    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let p = &self.provenance;
        let mut text = format!("# {} {} {} config_sha256={}", p.tool, p.version, p.command, p.config_sha256);
        if let Some(seed) = p.seed {
            text.push_str(&format!(" seed={seed}"));
        }
        text.push('\n');
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write(name, text)
    }

    /// Wall-clock time goes into its own file so payloads stay reproducible.
    pub fn finish(mut self) -> Result<Vec<PathBuf>, CliError> {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let meta = serde_json::json!({ "command": self.provenance.command, "unix_time": secs });
        self.write("timestamp.json", format!("{meta}\n"))?;
        Ok(self.written)
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}
