use thiserror::Error;

use crate::operators::Qubit;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cutoff {0}: Fock cutoffs must be non-negative")]
    NegativeCutoff(i64),

    #[error("invalid mode index {0}: expected 0 (resonator), 1 or 2 (magnons)")]
    InvalidMode(usize),

    #[error("occupation {occupation} of mode {mode} exceeds its cutoff {cutoff}")]
    OccupationAboveCutoff {
        mode: usize,
        occupation: usize,
        cutoff: usize,
    },

    #[error("basis state lies outside the restricted excitation window")]
    OutsideSubspace,

    #[error("operands live on different Hilbert spaces")]
    SpaceMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("measurement outcome {outcome} has probability {probability:.3e}")]
    ImpossibleOutcome { outcome: Qubit, probability: f64 },

    #[error("input state is not normalized (norm {0:.12})")]
    NotNormalized(f64),

    #[error("unknown Hamiltonian variant: {0}")]
    UnknownVariant(String),

    #[error("Fourier components {0} and -{0} are not Hermitian conjugates")]
    NonConjugatePair(i32),

    #[error("resonance index n' = {0} is not supported (n' must be at least 2)")]
    InvalidResonanceIndex(i64),

    #[error("step size underflow at t = {t}: h = {h:.3e}")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("trace drift {drift:.3e} at t = {t} exceeds the abort threshold")]
    TraceDrift { t: f64, drift: f64 },

    #[error("time grid must be non-empty, finite and nondecreasing")]
    InvalidTimeGrid,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown experiment: {0}")]
    UnknownExperiment(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for failures of the numerical engines (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepSizeUnderflow { .. } | Error::TraceDrift { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
