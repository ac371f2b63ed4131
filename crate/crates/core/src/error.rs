use thiserror::Error;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {what} has length {actual}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("parameter domain error: {0}")]
    ParameterDomain(String),

    /// The likelihood presolve produced a non-finite iterate; `best` is the
    /// last finite one.
    #[error("trajectory presolve diverged (best negative log-likelihood {nll})")]
    PresolveDiverged {
        best: Box<crate::dynamics::Trajectory>,
        nll: f64,
    },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = GameError> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(GameError::Dimension {
            what,
            expected,
            actual,
        })
    }
}
