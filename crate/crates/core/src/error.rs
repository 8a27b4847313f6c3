use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {msg}")]
    Parse { what: String, msg: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("network topology is not a radial tree: {0}")]
    Topology(String),

    #[error("step {step} is outside the horizon of {horizon} steps")]
    StepOutOfRange { step: usize, horizon: usize },

    #[error("series length {got} does not match horizon {expected} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("power flow did not converge within {iterations} iterations (last update {last_update:.3e} pu)")]
    NonConvergence { iterations: usize, last_update: f64 },

    #[error("power flow did not converge at step {step}: {source}")]
    StepNonConvergence {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid tariff: {0}")]
    InvalidTariff(String),

    #[error("band power {power_w:.3} W exceeds envelope {cap_w:.3} W at step {step}, band {band}")]
    EnvelopeExceeded {
        step: usize,
        band: usize,
        power_w: f64,
        cap_w: f64,
    },

    #[error("invalid session: {0}")]
    InvalidSession(String),

    #[error("cannot place session arriving at step {arrival}: all {points} charging points are occupied")]
    InfeasibleDensity { arrival: usize, points: usize },

    #[error("empty calibration scenario set")]
    EmptyCalibration,

    #[error("inconsistent dispatch mode: {0}")]
    InconsistentMode(String),

    #[error("dispatch window infeasible (first violated class: {class})")]
    Infeasible { class: String },

    #[error("dispatch window unbounded")]
    Unbounded,

    #[error("LP solution violates constraints by {residual:.3e} (tolerance {tol:.1e})")]
    Residual { residual: f64, tol: f64 },

    #[error("scenario {scenario}, step {step}: {source}")]
    Scenario {
        scenario: String,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing baseline scenario {0}")]
    MissingBaseline(String),

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, msg: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            msg: msg.to_string(),
        }
    }
}
