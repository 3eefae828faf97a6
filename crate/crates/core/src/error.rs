use thiserror::Error;

use crate::tomography::ReconstructionResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The step unitary is ±I at this momentum, so the Bloch vector is undefined.
    #[error("quasienergy gap closed at k = {k:.6} (E = {energy:.3e})")]
    GapClosure { k: f64, energy: f64 },

    #[error("grid too coarse: overlap between nodes {node} and {next} is {overlap:.3e}")]
    GridTooCoarse { node: usize, next: usize, overlap: f64 },

    #[error("density matrix at node {node} is rank deficient (min eigenvalue {min_eigenvalue:.3e})")]
    RankDeficient { node: usize, min_eigenvalue: f64 },

    #[error("momentum weight at node {node} is degenerate (trace {trace:.3e})")]
    DegenerateMomentumWeight { node: usize, trace: f64 },

    /// Carries the best estimate found within the budget.
    #[error("optimizer did not converge after {iterations} iterations (best nll {best_nll:.6e})")]
    ConvergenceFailure { iterations: usize, best_nll: f64, best: Box<ReconstructionResult> },

    #[error("grid mismatch: {0} vs {1} nodes")]
    GridMismatch(usize, usize),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep { step, source: Box::new(self) }
    }

    /// Strips any `AtStep` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
