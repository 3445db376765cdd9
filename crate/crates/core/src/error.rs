use thiserror::Error;

/// Where in the mesh a failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Location {
    pub element: Option<usize>,
    pub node: Option<usize>,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.element, self.node) {
            (Some(e), Some(n)) => write!(f, " at element {e}, node {n}"),
            (Some(e), None) => write!(f, " at element {e}"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("polynomial degree {0} is not supported (need N >= 1)")]
    InvalidDegree(usize),

    #[error("invalid operator: {0}")]
    Operator(String),

    #[error("inadmissible state (rho = {rho:e}, p = {p:e}){loc}")]
    InadmissibleState { rho: f64, p: f64, loc: Location },

    #[error("low-order update is not positive (rho = {rho:e}, p = {p:e}){loc}")]
    InadmissibleLowOrder { rho: f64, p: f64, loc: Location },

    #[error("infeasible knapsack instance: a.caps = {reach:e} < b = {b:e}")]
    InfeasibleInstance { reach: f64, b: f64 },

    #[error("logarithmic mean needs positive arguments, got ({0}, {1})")]
    NonPositiveMean(f64, f64),

    #[error("maximum number of time steps ({0}) exceeded")]
    MaxStepsExceeded(usize),

    #[error("step size collapsed after {0} consecutive rejections at t = {1}")]
    StepRejected(usize, f64),

    #[error("initial data generates vacuum")]
    Vacuum,

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("problem too large: {0} degrees of freedom (cap {1})")]
    DofCap(usize, usize),

    #[error("eigenvalue computation failed: {0}")]
    Eigensolver(String),

    #[error("step {step} (t = {t:e}): {source}")]
    AtStep {
        step: usize,
        t: f64,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach an element/node location to state errors.
    pub fn at(self, element: usize, node: Option<usize>) -> Self {
        let loc = Location { element: Some(element), node };
        match self {
            Error::InadmissibleState { rho, p, .. } => Error::InadmissibleState { rho, p, loc },
            Error::InadmissibleLowOrder { rho, p, .. } => {
                Error::InadmissibleLowOrder { rho, p, loc }
            }
            other => other,
        }
    }

    /// True for failures that signal a solver blow-up rather than a usage error.
    pub fn is_solver_failure(&self) -> bool {
        if let Error::AtStep { source, .. } = self {
            return source.is_solver_failure();
        }
        matches!(
            self,
            Error::InadmissibleState { .. }
                | Error::InadmissibleLowOrder { .. }
                | Error::InfeasibleInstance { .. }
                | Error::MaxStepsExceeded(_)
                | Error::StepRejected(..)
                | Error::Vacuum
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
