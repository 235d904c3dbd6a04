use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared by every stage of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input field violates a precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// The cell geometry cannot support the requested computation.
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("{solver} did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("operator is not positive definite: curvature {curvature:.3e} at iteration {iteration}")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("Newton iteration diverged; residual history {history:?}")]
    NewtonDiverged { history: Vec<f64> },

    #[error("non-finite value at node {node} (t = {time})")]
    NonFinite { node: usize, time: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::Indefinite { .. }
                | Error::NewtonDiverged { .. }
                | Error::NonFinite { .. }
        )
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }
}
