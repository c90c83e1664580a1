use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("empty result: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("missing baseline for trajectory `{0}`")]
    MissingBaseline(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("all kernel weights vanish at z = {z}")]
    ZeroWeights { z: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("coordinate descent diverged after {passes} passes (|beta| = {norm:e}); try a smaller step size mu")]
    Diverged { passes: usize, norm: f64 },

    #[error("at grid point z = {z}: {source}")]
    AtGridPoint {
        z: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("policy iteration {iteration}: {source}")]
    AtPolicyIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_z(self, z: f64) -> Self {
        Error::AtGridPoint { z, source: Box::new(self) }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtPolicyIteration { iteration, source: Box::new(self) }
    }

    /// True for failures of the numerical routines rather than of the input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::ZeroWeights { .. } | Error::Singular(_) | Error::Diverged { .. } => true,
            Error::AtGridPoint { source, .. } | Error::AtPolicyIteration { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }

    /// Process exit code: 2 for user or configuration errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else {
            2
        }
    }
}
