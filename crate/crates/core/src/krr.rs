//! Incremental kernel ridge regression over a growing observation history:
//! posterior variance, prediction against arbitrary target vectors, and the
//! realized information gain maintained as a running log-determinant.
//!
//! Observations that revisit an already-seen point do not enlarge the solved
//! system. With `A` the n-by-g one-hot matrix mapping observations to the g
//! distinct points, `B` the distinct-point Gram matrix, and `N = A^T A` the
//! multiplicity diagonal, the push-through identity
//! `A^T (A B A^T + rho I)^{-1} A = D M^{-1} D` with `D = N^{1/2}` and
//! `M = rho I + D B D` turns every n-dimensional solve into a g-dimensional
//! one, exactly. For all-distinct histories `M` is the plain `K_n + rho I`
//! and the state degenerates to the textbook factorization.

use std::sync::Arc;

use thiserror::Error;

use crate::kernels::{KernelError, KernelSpec};
use crate::linalg::{cholesky_packed_in_place, forward_solve_packed, tri_row};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error)]
pub enum KrrError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("target vector length {got} does not match observation count {expected}")]
    TargetLength { expected: usize, got: usize },
    #[error("aggregated target length {got} does not match distinct point count {expected}")]
    AggregatedLength { expected: usize, got: usize },
    #[error("factor update broke down at distinct point {index} (jitter {jitter:e} already applied)")]
    NumericalBreakdown { index: usize, jitter: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// What one append did: which distinct point the observation landed on and
/// the posterior variance at that point just before insertion (the sigma^2
/// entering the log-determinant increment).
#[derive(Debug, Clone, Copy)]
pub struct AppendOutcome<S> {
    pub distinct_index: usize,
    pub is_new_point: bool,
    pub prior_variance: S,
    pub jitter_added: S,
}

/// Forward-solved kernel column for a fixed query point. Variance reads off
/// directly; predictions pair it with a [`SolvedTargets`].
#[derive(Debug, Clone)]
pub struct SolvedQuery<S> {
    coeffs: Vec<S>,
    prior: S,
}

impl<S: Scalar> SolvedQuery<S> {
    /// Posterior variance at the query point, clamped below at zero.
    pub fn variance(&self) -> S {
        let sq: S = self.coeffs.iter().map(|c| *c * *c).sum();
        (self.prior - sq).max(S::zero())
    }

    /// Prior variance k(z, z) of the query point.
    pub fn prior(&self) -> S {
        self.prior
    }

    /// Posterior mean against a solved target vector from the same state.
    pub fn predict_with(&self, targets: &SolvedTargets<S>) -> S {
        debug_assert_eq!(self.coeffs.len(), targets.0.len());
        self.coeffs
            .iter()
            .zip(targets.0.iter())
            .fold(S::zero(), |acc, (a, b)| acc + *a * *b)
    }
}

/// Forward-solved target vector, reusable across many queries.
#[derive(Debug, Clone)]
pub struct SolvedTargets<S>(Vec<S>);

/// Incrementally factorized ridge system over the observation history.
#[derive(Debug, Clone)]
pub struct GramState<S: Scalar> {
    kernel: KernelSpec<S>,
    rho: S,
    /// Distinct observation points in first-seen order.
    distinct: Vec<Arc<[S]>>,
    counts: Vec<usize>,
    jitters: Vec<S>,
    /// Observation index -> distinct index.
    assignment: Vec<u32>,
    /// Packed lower triangle of the raw Gram over distinct points.
    gram: Vec<S>,
    /// Packed lower-triangular factor of rho I + D B D + diag(jitters).
    chol: Vec<S>,
    /// Running log det(I + K_n / rho).
    logdet: S,
    total_jitter: S,
}

impl<S: Scalar> GramState<S> {
    pub fn new(kernel: KernelSpec<S>, rho: S) -> Result<Self, KrrError> {
        if !(rho > S::zero()) {
            return Err(KrrError::InvalidParameter(
                "regularization rho must be positive".into(),
            ));
        }
        Ok(GramState {
            kernel,
            rho,
            distinct: Vec::new(),
            counts: Vec::new(),
            jitters: Vec::new(),
            assignment: Vec::new(),
            gram: Vec::new(),
            chol: Vec::new(),
            logdet: S::zero(),
            total_jitter: S::zero(),
        })
    }

    /// Number of appended observations.
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Number of distinct observation points.
    pub fn distinct_len(&self) -> usize {
        self.distinct.len()
    }

    pub fn kernel(&self) -> &KernelSpec<S> {
        &self.kernel
    }

    pub fn rho(&self) -> S {
        self.rho
    }

    /// Observation-to-distinct-point mapping, in append order.
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    /// Total diagonal jitter applied so far (diagnostic; zero in benign runs).
    pub fn jitter(&self) -> S {
        self.total_jitter
    }

    /// Running log det(I + K_n / rho).
    pub fn log_det(&self) -> S {
        self.logdet
    }

    /// Realized information gain of the observed sequence: 0.5 log det(I + K_n/rho).
    pub fn info_gain(&self) -> S {
        cast::<S>(0.5) * self.logdet
    }

    /// An independent copy; later appends to either side leave the other
    /// untouched. Point storage is shared.
    pub fn snapshot(&self) -> GramState<S> {
        self.clone()
    }

    /// Count-scaled kernel column of `z` against the distinct points,
    /// forward-solved through the factor.
    fn solved_column(&self, z: &[S]) -> Vec<S> {
        let g = self.distinct.len();
        let mut col = vec![S::zero(); g];
        for (j, point) in self.distinct.iter().enumerate() {
            let scale = cast::<S>(self.counts[j] as f64).sqrt();
            col[j] = scale * self.kernel.eval_unchecked(z, point);
        }
        forward_solve_packed(&self.chol, g, &mut col);
        col
    }

    /// Forward-solved handle for a query point.
    pub fn query(&self, z: &[S]) -> Result<SolvedQuery<S>, KrrError> {
        let prior = self.kernel.eval(z, z)?;
        Ok(SolvedQuery {
            coeffs: self.solved_column(z),
            prior,
        })
    }

    /// Posterior variance sigma^2(z) = k(z,z) - k_n(z)^T (K_n + rho I)^{-1} k_n(z),
    /// clamped below at zero.
    pub fn posterior_variance(&self, z: &[S]) -> Result<S, KrrError> {
        Ok(self.query(z)?.variance())
    }

    /// Solves a per-observation target vector (length n) against the factor.
    pub fn solve_targets(&self, targets: &[S]) -> Result<SolvedTargets<S>, KrrError> {
        if targets.len() != self.assignment.len() {
            return Err(KrrError::TargetLength {
                expected: self.assignment.len(),
                got: targets.len(),
            });
        }
        let mut sums = vec![S::zero(); self.distinct.len()];
        for (y, &j) in targets.iter().zip(self.assignment.iter()) {
            sums[j as usize] += *y;
        }
        self.solve_target_sums(&sums)
    }

    /// Solves targets already aggregated per distinct point (entry j holds
    /// the sum of target values over all observations of point j).
    pub fn solve_target_sums(&self, sums: &[S]) -> Result<SolvedTargets<S>, KrrError> {
        let g = self.distinct.len();
        if sums.len() != g {
            return Err(KrrError::AggregatedLength {
                expected: g,
                got: sums.len(),
            });
        }
        let mut rhs = vec![S::zero(); g];
        for j in 0..g {
            rhs[j] = sums[j] / cast::<S>(self.counts[j] as f64).sqrt();
        }
        forward_solve_packed(&self.chol, g, &mut rhs);
        Ok(SolvedTargets(rhs))
    }

    /// Posterior mean k_n(z)^T (K_n + rho I)^{-1} y for a length-n target
    /// vector. The factor is shared across target vectors; batch callers keep
    /// the [`SolvedQuery`] and reuse it.
    pub fn predict(&self, z: &[S], targets: &[S]) -> Result<S, KrrError> {
        let query = self.query(z)?;
        let solved = self.solve_targets(targets)?;
        Ok(query.predict_with(&solved))
    }

    /// Appends one observation point, extending the factor. Revisited points
    /// update the multiplicity of their distinct entry; the log-determinant
    /// grows by log(1 + sigma^2_prev(z)/rho) either way.
    pub fn append(&mut self, z: &[S]) -> Result<AppendOutcome<S>, KrrError> {
        let kzz = self.kernel.eval(z, z)?;
        let g = self.distinct.len();

        let mut col = vec![S::zero(); g];
        for (j, point) in self.distinct.iter().enumerate() {
            let scale = cast::<S>(self.counts[j] as f64).sqrt();
            col[j] = scale * self.kernel.eval_unchecked(z, point);
        }
        forward_solve_packed(&self.chol, g, &mut col);
        let solved_sq: S = col.iter().map(|c| *c * *c).sum();
        let prior_raw = kzz - solved_sq;
        let prior_variance = prior_raw.max(S::zero());

        let duplicate = self.distinct.iter().position(|p| p.as_ref() == z);
        let outcome = match duplicate {
            None => {
                // Rank-one extension: the new row of M is the solved column
                // plus the Schur pivot rho + sigma^2_prev.
                let mut schur = prior_raw + self.rho;
                let mut jit = S::zero();
                if schur <= S::zero() {
                    jit = cast::<S>(1e-10) * kzz;
                    schur += jit;
                    if schur <= S::zero() {
                        return Err(KrrError::NumericalBreakdown {
                            index: g,
                            jitter: jit.to_f64().unwrap_or(f64::NAN),
                        });
                    }
                }
                for (j, point) in self.distinct.iter().enumerate() {
                    debug_assert!(j < g);
                    self.gram.push(self.kernel.eval_unchecked(z, point));
                }
                self.gram.push(kzz);
                self.chol.extend_from_slice(&col);
                self.chol.push(schur.sqrt());
                self.distinct.push(Arc::from(z.to_vec().into_boxed_slice()));
                self.counts.push(1);
                self.jitters.push(jit);
                self.total_jitter += jit;
                AppendOutcome {
                    distinct_index: g,
                    is_new_point: true,
                    prior_variance,
                    jitter_added: jit,
                }
            }
            Some(j) => {
                self.counts[j] += 1;
                let jit = self.refactor(j, kzz)?;
                AppendOutcome {
                    distinct_index: j,
                    is_new_point: false,
                    prior_variance,
                    jitter_added: jit,
                }
            }
        };

        self.logdet += (prior_variance / self.rho).ln_1p();
        self.assignment.push(outcome.distinct_index as u32);
        Ok(outcome)
    }

    /// Rebuilds and refactorizes the compressed system after a multiplicity
    /// change at `index`. At most one jitter escalation before giving up.
    fn refactor(&mut self, index: usize, kzz: S) -> Result<S, KrrError> {
        let g = self.distinct.len();
        let build = |jitters: &[S]| -> Vec<S> {
            let mut m = vec![S::zero(); tri_row(g) + g];
            for i in 0..g {
                let row = tri_row(i);
                let ci = cast::<S>(self.counts[i] as f64).sqrt();
                for j in 0..i {
                    let cj = cast::<S>(self.counts[j] as f64).sqrt();
                    m[row + j] = ci * cj * self.gram[row + j];
                }
                m[row + i] = self.rho + cast::<S>(self.counts[i] as f64) * self.gram[row + i]
                    + jitters[i];
            }
            m
        };

        let mut factor = build(&self.jitters);
        if cholesky_packed_in_place(&mut factor, g).is_ok() {
            self.chol = factor;
            return Ok(S::zero());
        }

        let jit = cast::<S>(1e-10) * kzz;
        self.jitters[index] += jit;
        self.total_jitter += jit;
        let mut factor = build(&self.jitters);
        match cholesky_packed_in_place(&mut factor, g) {
            Ok(()) => {
                self.chol = factor;
                Ok(jit)
            }
            Err(pivot) => Err(KrrError::NumericalBreakdown {
                index: pivot,
                jitter: jit.to_f64().unwrap_or(f64::NAN),
            }),
        }
    }
}
