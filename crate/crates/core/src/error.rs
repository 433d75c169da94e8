use std::fmt;

/// Which half of the two-stage pipeline raised an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// MS-RIS recovery from the active-element observations.
    First,
    /// RIS-BS recovery from the base-station observations.
    Second,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::First => f.write_str("stage 1"),
            Stage::Second => f.write_str("stage 2"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("structure violation: {0}")]
    Structure(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver hit {iterations} iterations without converging (primal {primal:.3e}, dual {dual:.3e})")]
    Convergence {
        iterations: usize,
        primal: f64,
        dual: f64,
    },

    #[error("certificate is not PSD: min eigenvalue {min_eig:.3e} below {bound:.3e}")]
    Certificate { min_eig: f64, bound: f64 },

    #[error("model order {order} leaves no noise subspace in dimension {dim}")]
    Order { order: usize, dim: usize },

    #[error("regressor is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{stage}: {source}")]
    InStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: Stage) -> Self {
        Error::InStage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
