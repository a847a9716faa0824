use thiserror::Error;

/// Errors raised by the simulator, the controllers and the scenario loader.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("unknown underlay policy `{0}`")]
    UnknownUnderlayPolicy(String),

    #[error("unknown controller `{0}`")]
    UnknownController(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("network fails validation:\n{0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("flow {flow}: injection {requested:?} exceeds caps {caps:?} or {available} available packets")]
    BadInjection { flow: usize, requested: Vec<u32>, caps: Vec<u32>, available: u32 },

    #[error("virtual queue of tunnel {tunnel} went negative ({value})")]
    NegativeVirtualQueue { tunnel: usize, value: i64 },

    #[error("state space of {states} states exceeds the enumeration cap {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("replicator trajectory left the simplex at t = {time}: sum = {sum}, min = {min}")]
    SimplexViolation { time: f64, sum: f64, min: f64 },

    #[error("q-table import, line {line}: {msg}")]
    TableImport { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
