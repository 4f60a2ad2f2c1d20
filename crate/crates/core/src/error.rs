use thiserror::Error;

/// Errors raised by the analytic models and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field} = {value} is out of range (expected {expected})")]
    OutOfRange {
        field: String,
        value: f64,
        expected: &'static str,
    },

    #[error("herald probability is zero, the heralded distribution is undefined")]
    UndefinedConditional,

    #[error("belief solver failed for q = {q}, N = {units}: {reason}")]
    SolverFailure {
        q: f64,
        units: usize,
        reason: String,
    },

    #[error("degenerate chain: {0}")]
    DegenerateChain(String),

    #[error("steady state did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("distributions have different support ({left} vs {right})")]
    SupportMismatch { left: usize, right: usize },

    #[error("fidelity undefined: {0}")]
    UndefinedFidelity(String),

    #[error("no p in (0, {p_hi}] reaches fidelity threshold {theta}")]
    NoThreshold { theta: f64, p_hi: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("parameter fingerprints differ ({0:016x} vs {1:016x})")]
    FingerprintMismatch(u64, u64),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

pub(crate) fn check_range(
    field: &str,
    value: f64,
    ok: bool,
    expected: &'static str,
) -> Result<()> {
    if ok && !value.is_nan() {
        Ok(())
    } else {
        Err(ModelError::OutOfRange {
            field: field.to_string(),
            value,
            expected,
        })
    }
}
