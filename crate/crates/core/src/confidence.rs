//! Confidence-width multiplier beta(delta) for kernel-ridge predictions of
//! expected value functions, in two forms: the full truncated-spectrum
//! expression and the simplified square-root form with its implied constant
//! fixed at 1.

use thiserror::Error;

use crate::kernels::{EigenDecay, EigenProfile};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("log-determinant must be nonnegative, got {0}")]
    NegativeLogDet(f64),
    #[error("observation count must be positive for the simplified width")]
    EmptyHistory,
}

/// Which beta expression the agent uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaMode {
    Full,
    Simplified,
}

/// Constants feeding the confidence width: RKHS-norm bounds for the predicted
/// function and the value class, the eigenfunction bound, confidence level,
/// ridge parameter, and the value-kernel eigendecay profile.
#[derive(Debug, Clone)]
pub struct ConfidenceParams<S> {
    pub c_f: S,
    pub c_v: S,
    pub psi_max: S,
    pub delta: S,
    pub rho: S,
    pub state_profile: EigenProfile<S>,
    pub mode: BetaMode,
}

impl<S: Scalar> ConfidenceParams<S> {
    pub fn new(
        c_f: S,
        c_v: S,
        psi_max: S,
        delta: S,
        rho: S,
        state_profile: EigenProfile<S>,
        mode: BetaMode,
    ) -> Result<Self, ConfidenceError> {
        let params = ConfidenceParams {
            c_f,
            c_v,
            psi_max,
            delta,
            rho,
            state_profile,
            mode,
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<(), ConfidenceError> {
        if self.c_f < S::zero() || self.c_v < S::zero() {
            return Err(ConfidenceError::InvalidParameter(
                "norm bounds must be nonnegative".into(),
            ));
        }
        if !(self.psi_max > S::zero()) {
            return Err(ConfidenceError::InvalidParameter(
                "psi_max must be positive".into(),
            ));
        }
        if !(self.delta > S::zero() && self.delta < S::one()) {
            return Err(ConfidenceError::InvalidParameter(
                "delta must lie in (0, 1)".into(),
            ));
        }
        if !(self.rho > S::zero()) {
            return Err(ConfidenceError::InvalidParameter(
                "rho must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Same constants at a different confidence level (union-bound splits).
    pub fn with_delta(&self, delta: S) -> Result<Self, ConfidenceError> {
        let mut params = self.clone();
        params.delta = delta;
        params.validate()?;
        Ok(params)
    }
}

/// Truncation level for the spectrum split: ceil(n^{1/q}) for polynomial
/// decay with q = p - 1, ceil(log n) for exponential decay, and for explicit
/// spectra the smallest M whose scaled tail drops below the head.
pub fn choose_m<S: Scalar>(profile: &EigenProfile<S>, n: usize) -> Result<usize, ConfidenceError> {
    if n == 0 {
        return Err(ConfidenceError::InvalidParameter(
            "truncation level needs n >= 1".into(),
        ));
    }
    match &profile.decay {
        EigenDecay::Polynomial { p, .. } => {
            let p = p.to_f64().unwrap_or(f64::NAN);
            if !(p > 1.0) {
                return Err(ConfidenceError::InvalidParameter(format!(
                    "polynomial decay requires p > 1, got {p}"
                )));
            }
            let q = p - 1.0;
            let x = (n as f64).powf(1.0 / q);
            Ok(ceil_guarded(x).max(1))
        }
        EigenDecay::Exponential { .. } => Ok(ceil_guarded((n as f64).ln()).max(1)),
        EigenDecay::Explicit(values) => {
            let n_s = cast::<S>(n as f64);
            for m in 1..=values.len() {
                let (head, tail) = profile.tail_sums(m);
                if tail * n_s <= head {
                    return Ok(m);
                }
            }
            Ok(values.len())
        }
    }
}

/// Ceiling with a relative guard against floating-point overshoot
/// (e.g. 16.000000000000004 from powf).
fn ceil_guarded(x: f64) -> usize {
    let guard = x - 1e-9 * x.abs().max(1.0);
    guard.ceil().max(0.0) as usize
}

/// Full three-term confidence width:
///
/// ```text
/// C_f + (C_v psi/sqrt(rho)) sqrt(head_M) sqrt(log(M/delta) + logdet)
///     + (2 C_v psi/sqrt(rho)) sqrt(n tail_M)
/// ```
///
/// where `logdet = log det(I + K_n/rho)`. The log argument is assembled from
/// the running log-determinant rather than the determinant itself, so it
/// cannot overflow.
pub fn beta_full<S: Scalar>(
    params: &ConfidenceParams<S>,
    n: usize,
    logdet: S,
    m: usize,
) -> Result<S, ConfidenceError> {
    params.validate()?;
    if logdet < S::zero() {
        return Err(ConfidenceError::NegativeLogDet(
            logdet.to_f64().unwrap_or(f64::NAN),
        ));
    }
    if m == 0 {
        return Err(ConfidenceError::InvalidParameter(
            "truncation level must be at least 1".into(),
        ));
    }
    let (head, tail) = params.state_profile.tail_sums(m);
    let scale = params.c_v * params.psi_max / params.rho.sqrt();
    let log_arg = (cast::<S>(m as f64) / params.delta).ln() + logdet;
    let term2 = scale * head.sqrt() * log_arg.sqrt();
    let term3 = cast::<S>(2.0) * scale * (cast::<S>(n as f64) * tail).sqrt();
    Ok(params.c_f + term2 + term3)
}

/// Simplified width `C_f + (C_v/sqrt(rho)) sqrt(log(n/delta) + gamma)` with
/// the hidden constant taken as 1; callers scale it externally when sweeping
/// the constant.
pub fn beta_simplified<S: Scalar>(
    params: &ConfidenceParams<S>,
    n: usize,
    gamma: S,
) -> Result<S, ConfidenceError> {
    params.validate()?;
    if n == 0 {
        return Err(ConfidenceError::EmptyHistory);
    }
    if gamma < S::zero() {
        return Err(ConfidenceError::InvalidParameter(
            "information gain must be nonnegative".into(),
        ));
    }
    let log_term = (cast::<S>(n as f64) / params.delta).ln();
    if !(log_term + gamma).is_finite() || log_term + gamma < S::zero() {
        return Err(ConfidenceError::InvalidParameter(
            "log(n/delta) + gamma must be finite and nonnegative".into(),
        ));
    }
    Ok(params.c_f + params.c_v / params.rho.sqrt() * (log_term + gamma).sqrt())
}
