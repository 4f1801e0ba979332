//! Positive-definite kernels over embedded state-action points, Gram-matrix
//! construction, and eigendecay profiles feeding the confidence-width
//! computation.

use ndarray::Array2;
use thiserror::Error;

use crate::linalg;
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("point dimension {got} does not match kernel input_dim {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid eigendecay profile: {0}")]
    InvalidProfile(String),
    #[error("Gram matrix is not positive semi-definite: min eigenvalue {min_eig:e}, trace {trace:e}")]
    NotPositiveSemiDefinite { min_eig: f64, trace: f64 },
}

/// Matérn smoothness orders with closed-form kernels. Other orders would need
/// Bessel functions and are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn try_from_f64(nu: f64) -> Result<Self, KernelError> {
        match nu {
            x if x == 0.5 => Ok(MaternNu::Half),
            x if x == 1.5 => Ok(MaternNu::ThreeHalves),
            x if x == 2.5 => Ok(MaternNu::FiveHalves),
            other => Err(KernelError::InvalidParameter(format!(
                "Matern nu must be 0.5, 1.5, or 2.5; got {other}"
            ))),
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily<S> {
    Linear,
    SquaredExponential { lengthscale: S },
    Matern { nu: MaternNu, lengthscale: S },
}

/// A positive-definite kernel: family plus hyperparameters over points of a
/// fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec<S> {
    pub family: KernelFamily<S>,
    pub input_dim: usize,
    pub variance_scale: S,
}

impl<S: Scalar> KernelSpec<S> {
    pub fn new(family: KernelFamily<S>, input_dim: usize) -> Result<Self, KernelError> {
        let spec = KernelSpec {
            family,
            input_dim,
            variance_scale: S::one(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_variance_scale(mut self, variance_scale: S) -> Result<Self, KernelError> {
        self.variance_scale = variance_scale;
        self.validate()?;
        Ok(self)
    }

    pub fn squared_exponential(input_dim: usize, lengthscale: S) -> Result<Self, KernelError> {
        Self::new(KernelFamily::SquaredExponential { lengthscale }, input_dim)
    }

    pub fn matern(input_dim: usize, nu: MaternNu, lengthscale: S) -> Result<Self, KernelError> {
        Self::new(KernelFamily::Matern { nu, lengthscale }, input_dim)
    }

    pub fn linear(input_dim: usize) -> Result<Self, KernelError> {
        Self::new(KernelFamily::Linear, input_dim)
    }

    fn validate(&self) -> Result<(), KernelError> {
        if self.input_dim == 0 {
            return Err(KernelError::InvalidParameter(
                "input_dim must be positive".into(),
            ));
        }
        if !(self.variance_scale > S::zero()) {
            return Err(KernelError::InvalidParameter(
                "variance_scale must be positive".into(),
            ));
        }
        match &self.family {
            KernelFamily::Linear => Ok(()),
            KernelFamily::SquaredExponential { lengthscale }
            | KernelFamily::Matern { lengthscale, .. } => {
                if *lengthscale > S::zero() {
                    Ok(())
                } else {
                    Err(KernelError::InvalidParameter(
                        "lengthscale must be positive".into(),
                    ))
                }
            }
        }
    }

    fn check_dim(&self, z: &[S]) -> Result<(), KernelError> {
        if z.len() != self.input_dim {
            return Err(KernelError::DimensionMismatch {
                expected: self.input_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Kernel value k(z1, z2); symmetric in its arguments.
    pub fn eval(&self, z1: &[S], z2: &[S]) -> Result<S, KernelError> {
        self.check_dim(z1)?;
        self.check_dim(z2)?;
        Ok(self.eval_unchecked(z1, z2))
    }

    pub(crate) fn eval_unchecked(&self, z1: &[S], z2: &[S]) -> S {
        let vs = self.variance_scale;
        match &self.family {
            KernelFamily::Linear => {
                let dot = z1
                    .iter()
                    .zip(z2.iter())
                    .fold(S::zero(), |acc, (a, b)| acc + *a * *b);
                vs * dot
            }
            KernelFamily::SquaredExponential { lengthscale } => {
                let sq = sq_dist(z1, z2);
                let ell = *lengthscale;
                vs * (-sq / (cast::<S>(2.0) * ell * ell)).exp()
            }
            KernelFamily::Matern { nu, lengthscale } => {
                let r = sq_dist(z1, z2).sqrt();
                let ell = *lengthscale;
                match nu {
                    MaternNu::Half => vs * (-r / ell).exp(),
                    MaternNu::ThreeHalves => {
                        let s = cast::<S>(3.0_f64.sqrt()) * r / ell;
                        vs * (S::one() + s) * (-s).exp()
                    }
                    MaternNu::FiveHalves => {
                        let s = cast::<S>(5.0_f64.sqrt()) * r / ell;
                        vs * (S::one() + s + s * s / cast::<S>(3.0)) * (-s).exp()
                    }
                }
            }
        }
    }

    /// Gram matrix over a point set; each pair is evaluated once and mirrored,
    /// so the result is exactly symmetric.
    pub fn gram<P: AsRef<[S]>>(&self, points: &[P]) -> Result<Array2<S>, KernelError> {
        if points.is_empty() {
            return Err(KernelError::InvalidParameter(
                "gram requires a nonempty point list".into(),
            ));
        }
        for p in points {
            self.check_dim(p.as_ref())?;
        }
        let n = points.len();
        let mut k = Array2::<S>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(points[i].as_ref(), points[j].as_ref());
                k[[i, j]] = v;
                k[[j, i]] = v;
            }
        }
        Ok(k)
    }
}

fn sq_dist<S: Scalar>(z1: &[S], z2: &[S]) -> S {
    z1.iter().zip(z2.iter()).fold(S::zero(), |acc, (a, b)| {
        let d = *a - *b;
        acc + d * d
    })
}

/// How the operator eigenvalues of a kernel decay with the index.
#[derive(Debug, Clone, PartialEq)]
pub enum EigenDecay<S> {
    /// lambda_m = c * m^{-p}, p > 1.
    Polynomial { c: S, p: S },
    /// lambda_m = c * exp(-rate * m).
    Exponential { c: S, rate: S },
    /// Finitely many eigenvalues, decreasing; the operator is treated as
    /// rank-limited beyond the list.
    Explicit(Vec<S>),
}

/// Eigendecay profile plus the uniform eigenfunction bound.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenProfile<S> {
    pub decay: EigenDecay<S>,
    pub psi_max: S,
}

impl<S: Scalar> EigenProfile<S> {
    pub fn new(decay: EigenDecay<S>) -> Result<Self, KernelError> {
        let profile = EigenProfile {
            decay,
            psi_max: S::one(),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn with_psi_max(mut self, psi_max: S) -> Result<Self, KernelError> {
        self.psi_max = psi_max;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), KernelError> {
        if !(self.psi_max > S::zero()) {
            return Err(KernelError::InvalidProfile("psi_max must be positive".into()));
        }
        match &self.decay {
            EigenDecay::Polynomial { c, p } => {
                if !(*c > S::zero()) {
                    return Err(KernelError::InvalidProfile("polynomial c must be positive".into()));
                }
                if !(*p > S::one()) {
                    return Err(KernelError::InvalidProfile("polynomial p must exceed 1".into()));
                }
            }
            EigenDecay::Exponential { c, rate } => {
                if !(*c > S::zero()) || !(*rate > S::zero()) {
                    return Err(KernelError::InvalidProfile(
                        "exponential c and rate must be positive".into(),
                    ));
                }
            }
            EigenDecay::Explicit(values) => {
                if values.is_empty() {
                    return Err(KernelError::InvalidProfile("explicit list is empty".into()));
                }
                if !(values[0] > S::zero()) {
                    return Err(KernelError::InvalidProfile(
                        "leading eigenvalue must be positive".into(),
                    ));
                }
                for w in values.windows(2) {
                    if w[1] > w[0] {
                        return Err(KernelError::InvalidProfile(
                            "explicit eigenvalues must be nonincreasing".into(),
                        ));
                    }
                }
                if values.iter().any(|v| *v < S::zero()) {
                    return Err(KernelError::InvalidProfile(
                        "explicit eigenvalues must be nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The m-th eigenvalue sampled from the profile (1-based).
    pub fn lambda(&self, m: usize) -> S {
        assert!(m >= 1, "eigenvalue index is 1-based");
        match &self.decay {
            EigenDecay::Polynomial { c, p } => *c * cast::<S>(m as f64).powf(-*p),
            EigenDecay::Exponential { c, rate } => *c * (-*rate * cast::<S>(m as f64)).exp(),
            EigenDecay::Explicit(values) => values.get(m - 1).copied().unwrap_or(S::zero()),
        }
    }

    /// Head sum over the first `m` eigenvalues and an upper bound on the tail
    /// beyond them. Explicit profiles sum exactly; the parametric profiles use
    /// closed-form bounds: `c/(p-1) * m^(1-p)` for polynomial decay and the
    /// exact geometric remainder for exponential decay.
    pub fn tail_sums(&self, m: usize) -> (S, S) {
        assert!(m >= 1, "truncation level must be at least 1");
        match &self.decay {
            EigenDecay::Explicit(values) => {
                let head = values.iter().take(m).copied().sum();
                let tail = if m >= values.len() {
                    S::zero()
                } else {
                    values.iter().skip(m).copied().sum()
                };
                (head, tail)
            }
            EigenDecay::Polynomial { c, p } => {
                let mut head = S::zero();
                for i in 1..=m {
                    head += *c * cast::<S>(i as f64).powf(-*p);
                }
                let capped = *c * *p / (*p - S::one());
                let head = head.min(capped);
                let tail = *c / (*p - S::one()) * cast::<S>(m as f64).powf(S::one() - *p);
                (head, tail)
            }
            EigenDecay::Exponential { c, rate } => {
                let q = (-*rate).exp();
                let head = *c * q * (S::one() - q.powf(cast::<S>(m as f64))) / (S::one() - q);
                let tail = *c * q.powf(cast::<S>((m + 1) as f64)) / (S::one() - q);
                (head, tail)
            }
        }
    }
}

/// Default eigendecay profile for a kernel: squared-exponential kernels get a
/// unit-rate exponential profile, Matérn kernels a polynomial profile with
/// p = 1 + 2*nu/d, and linear kernels an explicit rank-d profile. The
/// constants are calibration defaults, overridable in configuration.
pub fn default_profile<S: Scalar>(kernel: &KernelSpec<S>) -> EigenProfile<S> {
    let decay = match &kernel.family {
        KernelFamily::SquaredExponential { .. } => EigenDecay::Exponential {
            c: S::one(),
            rate: S::one(),
        },
        KernelFamily::Matern { nu, .. } => EigenDecay::Polynomial {
            c: S::one(),
            p: cast::<S>(1.0 + 2.0 * nu.as_f64() / kernel.input_dim as f64),
        },
        KernelFamily::Linear => EigenDecay::Explicit(vec![S::one(); kernel.input_dim]),
    };
    EigenProfile::new(decay).expect("default profile parameters are valid")
}

/// Numerically estimates the operator spectrum of a kernel over a finite
/// state set: eigenvalues of Gram/n in decreasing order, with psi_max taken
/// from the empirically normalized eigenvectors (|u| * sqrt(n)).
pub fn estimate_state_profile<S: Scalar, P: AsRef<[S]>>(
    kernel: &KernelSpec<S>,
    states: &[P],
) -> Result<EigenProfile<S>, KernelError> {
    if states.len() < 2 {
        return Err(KernelError::InvalidParameter(
            "spectrum estimation needs at least 2 states".into(),
        ));
    }
    let n = states.len();
    let mut gram = kernel.gram(states)?;
    let scale = cast::<S>(n as f64);
    gram.mapv_inplace(|x| x / scale);

    let (evals, evecs) = linalg::jacobi_eigh(&gram);
    let trace: S = (0..n).map(|i| gram[[i, i]]).sum();
    let tol = cast::<S>(1e-8) * trace;
    if let Some(min) = evals.last() {
        if *min < -tol {
            return Err(KernelError::NotPositiveSemiDefinite {
                min_eig: min.to_f64().unwrap_or(f64::NAN),
                trace: trace.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let values: Vec<S> = evals.iter().map(|v| v.max(S::zero())).collect();

    let sqrt_n = scale.sqrt();
    let mut psi_max = S::zero();
    for v in evecs.iter() {
        psi_max = psi_max.max(v.abs() * sqrt_n);
    }

    EigenProfile::new(EigenDecay::Explicit(values))?.with_psi_max(psi_max)
}
