//! Finite synthetic MDPs embedded in the unit box, an exact average-reward
//! solver (relative value iteration with an aperiodicity transform), and the
//! exact expectation oracle used by the coverage checks.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{KernelError, KernelSpec};
use crate::linalg::solve_dense;
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("model generation produced a degenerate kernel system after {attempts} attempts")]
    DegenerateGeneration { attempts: usize },
    #[error("solver did not converge after {iters} iterations (residual {residual:e})")]
    SolverDiverged { residual: f64, iters: usize },
    #[error("stationary distribution system is singular")]
    SingularSystem,
    #[error("model file error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// A finite weakly-communicating MDP with states and actions embedded in
/// Euclidean boxes. Transition rows are stochastic; rewards are deterministic
/// in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel<S> {
    pub states: Vec<Vec<S>>,
    pub actions: Vec<Vec<S>>,
    /// n_states x n_actions reward table.
    pub rewards: Array2<S>,
    /// n_states x n_actions x n_states stochastic tensor.
    pub transitions: Array3<S>,
    /// Uniform mixing floor used at generation time; zero for hand-built
    /// models without a floor guarantee.
    pub mixing_eps: S,
}

impl<S: Scalar> MdpModel<S> {
    pub fn from_parts(
        states: Vec<Vec<S>>,
        actions: Vec<Vec<S>>,
        rewards: Array2<S>,
        transitions: Array3<S>,
        mixing_eps: S,
    ) -> Result<Self, MdpError> {
        let model = MdpModel {
            states,
            actions,
            rewards,
            transitions,
            mixing_eps,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, |a| a.len())
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        let (ns, na) = (self.n_states(), self.n_actions());
        if ns < 1 || na < 1 {
            return Err(MdpError::InvalidParameter(
                "model needs at least one state and one action".into(),
            ));
        }
        if self.states.iter().any(|s| s.len() != self.state_dim())
            || self.actions.iter().any(|a| a.len() != self.action_dim())
        {
            return Err(MdpError::InvalidParameter(
                "ragged state or action embeddings".into(),
            ));
        }
        if self.rewards.shape() != [ns, na] || self.transitions.shape() != [ns, na, ns] {
            return Err(MdpError::InvalidParameter("table shape mismatch".into()));
        }
        if self
            .rewards
            .iter()
            .any(|r| !(*r >= S::zero() && *r <= S::one()))
        {
            return Err(MdpError::InvalidParameter(
                "rewards must lie in [0, 1]".into(),
            ));
        }
        if !(self.mixing_eps >= S::zero() && self.mixing_eps < S::one()) {
            return Err(MdpError::InvalidParameter(
                "mixing_eps must lie in [0, 1)".into(),
            ));
        }
        let tol = cast::<S>(1e-12);
        let floor = if self.mixing_eps > S::zero() {
            self.mixing_eps / cast::<S>(ns as f64) * (S::one() - tol)
        } else {
            S::zero()
        };
        for s in 0..ns {
            for a in 0..na {
                let row = self.transitions.slice(ndarray::s![s, a, ..]);
                let sum: S = row.iter().copied().sum();
                if (sum - S::one()).abs() > tol {
                    return Err(MdpError::InvalidParameter(format!(
                        "transition row ({s},{a}) sums to {sum}"
                    )));
                }
                if row.iter().any(|p| *p < floor) {
                    return Err(MdpError::InvalidParameter(format!(
                        "transition row ({s},{a}) violates the mixing floor"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Joint embedding of a state-action pair: state coordinates followed by
    /// action coordinates.
    pub fn embed(&self, s: usize, a: usize) -> Vec<S> {
        let mut z = Vec::with_capacity(self.state_dim() + self.action_dim());
        z.extend_from_slice(&self.states[s]);
        z.extend_from_slice(&self.actions[a]);
        z
    }

    /// All joint embeddings, indexed `s * n_actions + a`.
    pub fn grid_embeddings(&self) -> Vec<Vec<S>> {
        let mut grid = Vec::with_capacity(self.n_states() * self.n_actions());
        for s in 0..self.n_states() {
            for a in 0..self.n_actions() {
                grid.push(self.embed(s, a));
            }
        }
        grid
    }

    pub fn transition_row(&self, s: usize, a: usize) -> ArrayView1<'_, S> {
        self.transitions.slice(ndarray::s![s, a, ..])
    }

    /// Samples the successor state by inverse CDF on a single uniform draw and
    /// returns it with the (deterministic) reward.
    pub fn step<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> (usize, S) {
        let u = cast::<S>(rng.random::<f64>());
        let row = self.transition_row(s, a);
        let mut acc = S::zero();
        let mut next = self.n_states() - 1;
        for (i, p) in row.iter().enumerate() {
            acc += *p;
            if u < acc {
                next = i;
                break;
            }
        }
        (next, self.rewards[[s, a]])
    }

    /// Exact expected value of `v` at the successor of (s, a): the dot product
    /// of the transition row with `v`.
    pub fn expected_value(&self, v: &[S], s: usize, a: usize) -> S {
        debug_assert_eq!(v.len(), self.n_states());
        self.transition_row(s, a)
            .iter()
            .zip(v.iter())
            .fold(S::zero(), |acc, (p, x)| acc + *p * *x)
    }
}

/// Generation parameters for [`make_smooth_mdp`].
#[derive(Debug, Clone)]
pub struct SmoothMdpParams<S> {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub state_dim: usize,
    pub kernel: KernelSpec<S>,
    pub mixing_eps: S,
    pub roughness: S,
}

/// Builds a random finite MDP whose transition logits and rewards are
/// kernel-smooth functions of the joint embedding. Each latent function is a
/// kernel expansion over shared random centers, scaled to unit RKHS norm;
/// transition rows mix a softmax of the logits with a uniform floor, which
/// keeps every row strictly positive (hence the chain unichain).
pub fn make_smooth_mdp<S: Scalar>(params: &SmoothMdpParams<S>) -> Result<MdpModel<S>, MdpError> {
    let SmoothMdpParams {
        seed,
        n_states,
        n_actions,
        state_dim,
        kernel,
        mixing_eps,
        roughness,
    } = params;
    let (ns, na, ds) = (*n_states, *n_actions, *state_dim);
    if ns < 2 || na < 2 {
        return Err(MdpError::InvalidParameter(
            "need at least 2 states and 2 actions".into(),
        ));
    }
    if !(*mixing_eps > S::zero() && *mixing_eps <= cast::<S>(0.5)) {
        return Err(MdpError::InvalidParameter(
            "mixing_eps must lie in (0, 0.5]".into(),
        ));
    }
    if *roughness < S::zero() {
        return Err(MdpError::InvalidParameter(
            "roughness must be nonnegative".into(),
        ));
    }
    if kernel.input_dim <= ds {
        return Err(MdpError::InvalidParameter(format!(
            "kernel input_dim {} must exceed state_dim {ds}",
            kernel.input_dim
        )));
    }
    let da = kernel.input_dim - ds;

    for attempt in 0..5u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(attempt));
        let draw_point =
            |rng: &mut ChaCha20Rng, dim: usize| -> Vec<S> {
                (0..dim).map(|_| cast::<S>(rng.random::<f64>())).collect()
            };

        let states: Vec<Vec<S>> = (0..ns).map(|_| draw_point(&mut rng, ds)).collect();
        let actions: Vec<Vec<S>> = (0..na).map(|_| draw_point(&mut rng, da)).collect();
        let centers: Vec<Vec<S>> = (0..ns).map(|_| draw_point(&mut rng, ds + da)).collect();

        // one coefficient vector per successor state, plus one for the reward
        let mut coeffs: Vec<Vec<S>> = Vec::with_capacity(ns + 1);
        for _ in 0..=ns {
            let c: Vec<S> = (0..ns)
                .map(|_| cast::<S>(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            coeffs.push(c);
        }

        let gram = kernel.gram(&centers)?;
        let mut degenerate = false;
        for c in coeffs.iter_mut() {
            let mut norm_sq = S::zero();
            for i in 0..ns {
                for j in 0..ns {
                    norm_sq += c[i] * gram[[i, j]] * c[j];
                }
            }
            if !(norm_sq > cast::<S>(1e-12)) {
                degenerate = true;
                break;
            }
            let scale = norm_sq.sqrt();
            for x in c.iter_mut() {
                *x /= scale;
            }
        }
        if degenerate {
            continue;
        }

        let latent = |c: &[S], z: &[S]| -> S {
            centers
                .iter()
                .zip(c.iter())
                .fold(S::zero(), |acc, (center, w)| {
                    acc + *w * kernel.eval_unchecked(z, center)
                })
        };

        let mut rewards = Array2::<S>::zeros((ns, na));
        let mut transitions = Array3::<S>::zeros((ns, na, ns));
        let eps = *mixing_eps;
        let uniform = eps / cast::<S>(ns as f64);
        let half = cast::<S>(0.5);
        for s in 0..ns {
            for a in 0..na {
                let mut z = Vec::with_capacity(ds + da);
                z.extend_from_slice(&states[s]);
                z.extend_from_slice(&actions[a]);

                let r = half + half * latent(&coeffs[ns], &z);
                rewards[[s, a]] = r.max(S::zero()).min(S::one());

                let logits: Vec<S> = (0..ns)
                    .map(|sp| *roughness * latent(&coeffs[sp], &z))
                    .collect();
                let max_logit = logits.iter().copied().fold(S::neg_infinity(), S::max);
                let exps: Vec<S> = logits.iter().map(|l| (*l - max_logit).exp()).collect();
                let total: S = exps.iter().copied().sum();
                for sp in 0..ns {
                    transitions[[s, a, sp]] = (S::one() - eps) * exps[sp] / total + uniform;
                }
            }
        }

        let model = MdpModel {
            states,
            actions,
            rewards,
            transitions,
            mixing_eps: eps,
        };
        model.validate()?;
        return Ok(model);
    }
    Err(MdpError::DegenerateGeneration { attempts: 5 })
}

/// Exact solution of the average-reward Bellman optimality equations.
#[derive(Debug, Clone)]
pub struct OptimalSolution<S> {
    pub j_star: S,
    pub v_star: Vec<S>,
    pub q_star: Array2<S>,
    pub span_v: S,
    pub iters: usize,
    pub residual: S,
}

/// Relative value iteration with the aperiodicity transform
/// `r -> tau r`, `P -> (1 - tau) I + tau P` at tau = 1/2, which leaves the
/// bias function unchanged and scales the gain by tau. The bias is anchored
/// at state 0 every iteration; iteration stops once the span of successive
/// differences drops below tau * tol.
pub fn solve_average_reward<S: Scalar>(
    model: &MdpModel<S>,
    tol: S,
    max_iters: usize,
) -> Result<OptimalSolution<S>, MdpError> {
    model.validate()?;
    let (ns, na) = (model.n_states(), model.n_actions());
    let tau = cast::<S>(0.5);

    let transformed_update = |v: &[S], u: &mut [S]| {
        for s in 0..ns {
            let mut best = S::neg_infinity();
            for a in 0..na {
                let pv = model.expected_value(v, s, a);
                let val = tau * (model.rewards[[s, a]] + pv) + (S::one() - tau) * v[s];
                best = best.max(val);
            }
            u[s] = best;
        }
    };

    let mut v = vec![S::zero(); ns];
    let mut u = vec![S::zero(); ns];
    let mut iters = 0;
    let mut converged = false;
    let mut span = S::infinity();
    while iters < max_iters {
        iters += 1;
        transformed_update(&v, &mut u);
        let mut lo = S::infinity();
        let mut hi = S::neg_infinity();
        for s in 0..ns {
            let d = u[s] - v[s];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        span = hi - lo;
        let anchor = u[0];
        for s in 0..ns {
            v[s] = u[s] - anchor;
        }
        if span <= tau * tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MdpError::SolverDiverged {
            residual: (span / tau).to_f64().unwrap_or(f64::NAN),
            iters,
        });
    }

    // one refinement pass to read the gain off the anchored bias
    transformed_update(&v, &mut u);
    let mut lo = S::infinity();
    let mut hi = S::neg_infinity();
    for s in 0..ns {
        let d = u[s] - v[s];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let j_star = (lo + hi) / (cast::<S>(2.0) * tau);

    let v_star = v;
    let mut q_star = Array2::<S>::zeros((ns, na));
    for s in 0..ns {
        for a in 0..na {
            q_star[[s, a]] = model.rewards[[s, a]] + model.expected_value(&v_star, s, a) - j_star;
        }
    }
    let mut residual = S::zero();
    for s in 0..ns {
        let mut best = S::neg_infinity();
        for a in 0..na {
            best = best.max(q_star[[s, a]]);
        }
        residual = residual.max((best - v_star[s]).abs());
    }
    let span_v = {
        let lo = v_star.iter().copied().fold(S::infinity(), S::min);
        let hi = v_star.iter().copied().fold(S::neg_infinity(), S::max);
        hi - lo
    };
    Ok(OptimalSolution {
        j_star,
        v_star,
        q_star,
        span_v,
        iters,
        residual,
    })
}

/// Optimal total reward over a fixed `w`-step lookahead, by backward
/// induction on the true model.
pub fn finite_horizon_optimal<S: Scalar>(model: &MdpModel<S>, w: usize) -> Vec<S> {
    let (ns, na) = (model.n_states(), model.n_actions());
    let mut v = vec![S::zero(); ns];
    for _ in 0..w {
        let mut next = vec![S::neg_infinity(); ns];
        for s in 0..ns {
            for a in 0..na {
                let val = model.rewards[[s, a]] + model.expected_value(&v, s, a);
                next[s] = next[s].max(val);
            }
        }
        v = next;
    }
    v
}

/// Exact long-run average reward of a stationary (possibly randomized)
/// policy, via the stationary distribution of its chain.
pub fn evaluate_policy_gain<S: Scalar>(
    model: &MdpModel<S>,
    policy: &Array2<S>,
) -> Result<S, MdpError> {
    let (ns, na) = (model.n_states(), model.n_actions());
    if policy.shape() != [ns, na] {
        return Err(MdpError::InvalidParameter("policy shape mismatch".into()));
    }
    for s in 0..ns {
        let sum: S = policy.row(s).iter().copied().sum();
        if (sum - S::one()).abs() > cast::<S>(1e-9) {
            return Err(MdpError::InvalidParameter(format!(
                "policy row {s} sums to {sum}"
            )));
        }
    }

    let mut p_pi = Array2::<S>::zeros((ns, ns));
    let mut r_pi = vec![S::zero(); ns];
    for s in 0..ns {
        for a in 0..na {
            let w = policy[[s, a]];
            if w == S::zero() {
                continue;
            }
            r_pi[s] += w * model.rewards[[s, a]];
            for sp in 0..ns {
                p_pi[[s, sp]] += w * model.transitions[[s, a, sp]];
            }
        }
    }

    // mu^T P = mu^T with sum(mu) = 1: replace the first balance equation by
    // the normalization row
    let mut a = Array2::<S>::zeros((ns, ns));
    for i in 0..ns {
        for j in 0..ns {
            a[[i, j]] = if i == j { S::one() } else { S::zero() } - p_pi[[j, i]];
        }
    }
    for j in 0..ns {
        a[[0, j]] = S::one();
    }
    let mut b = vec![S::zero(); ns];
    b[0] = S::one();
    let mu = solve_dense(&a, &b).ok_or(MdpError::SingularSystem)?;
    Ok(mu
        .iter()
        .zip(r_pi.iter())
        .fold(S::zero(), |acc, (m, r)| acc + *m * *r))
}

/// Uniform-random stationary policy.
pub fn uniform_policy<S: Scalar>(model: &MdpModel<S>) -> Array2<S> {
    let (ns, na) = (model.n_states(), model.n_actions());
    Array2::from_elem((ns, na), S::one() / cast::<S>(na as f64))
}

/// Deterministic policy as a stochastic matrix.
pub fn deterministic_policy<S: Scalar>(model: &MdpModel<S>, actions: &[usize]) -> Array2<S> {
    let (ns, na) = (model.n_states(), model.n_actions());
    let mut policy = Array2::<S>::zeros((ns, na));
    for (s, &a) in actions.iter().enumerate() {
        policy[[s, a]] = S::one();
    }
    policy
}

/// Greedy action indices from a state-action value table, ties to the lowest
/// action index.
pub fn greedy_actions<S: Scalar>(q: &Array2<S>) -> Vec<usize> {
    let (ns, na) = (q.nrows(), q.ncols());
    (0..ns)
        .map(|s| {
            let mut best = 0;
            for a in 1..na {
                if q[[s, a]] > q[[s, best]] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
    mixing_eps: f64,
}

impl<S: Scalar> MdpModel<S> {
    /// Serializes the model as nested JSON arrays (always in f64).
    pub fn to_json(&self) -> Result<String, MdpError> {
        let to64 = |x: &S| x.to_f64().unwrap_or(f64::NAN);
        let (ns, na) = (self.n_states(), self.n_actions());
        let file = ModelFile {
            states: self.states.iter().map(|s| s.iter().map(&to64).collect()).collect(),
            actions: self.actions.iter().map(|a| a.iter().map(&to64).collect()).collect(),
            rewards: (0..ns)
                .map(|s| (0..na).map(|a| to64(&self.rewards[[s, a]])).collect())
                .collect(),
            transitions: (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| (0..ns).map(|sp| to64(&self.transitions[[s, a, sp]])).collect())
                        .collect()
                })
                .collect(),
            mixing_eps: to64(&self.mixing_eps),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let file: ModelFile = serde_json::from_str(text)?;
        let ns = file.states.len();
        let na = file.actions.len();
        let mut rewards = Array2::<S>::zeros((ns, na));
        let mut transitions = Array3::<S>::zeros((ns, na, ns));
        for s in 0..ns {
            for a in 0..na {
                rewards[[s, a]] = cast::<S>(
                    *file
                        .rewards
                        .get(s)
                        .and_then(|row| row.get(a))
                        .ok_or_else(|| MdpError::InvalidParameter("reward table shape".into()))?,
                );
                for sp in 0..ns {
                    transitions[[s, a, sp]] = cast::<S>(
                        *file
                            .transitions
                            .get(s)
                            .and_then(|x| x.get(a))
                            .and_then(|x| x.get(sp))
                            .ok_or_else(|| {
                                MdpError::InvalidParameter("transition tensor shape".into())
                            })?,
                    );
                }
            }
        }
        MdpModel::from_parts(
            file.states
                .into_iter()
                .map(|s| s.into_iter().map(cast::<S>).collect())
                .collect(),
            file.actions
                .into_iter()
                .map(|a| a.into_iter().map(cast::<S>).collect())
                .collect(),
            rewards,
            transitions,
            cast::<S>(file.mixing_eps),
        )
    }
}

/// Helper vector view of the optimal bias for expectation oracles.
impl<S: Scalar> OptimalSolution<S> {
    pub fn v_star_array(&self) -> Array1<S> {
        Array1::from_vec(self.v_star.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn default_params(seed: u64) -> SmoothMdpParams<f64> {
        SmoothMdpParams {
            seed,
            n_states: 10,
            n_actions: 3,
            state_dim: 2,
            kernel: KernelSpec::squared_exponential(3, 0.4).unwrap(),
            mixing_eps: 0.05,
            roughness: 3.0,
        }
    }

    #[test]
    fn rejects_out_of_range_mixing() {
        let mut params = default_params(0);
        params.mixing_eps = 1.0;
        assert!(make_smooth_mdp(&params).is_err());
    }

    #[test]
    fn zero_roughness_full_mixing_gives_uniform_rows() {
        let mut params = default_params(0);
        params.mixing_eps = 0.5;
        params.roughness = 0.0;
        let model = make_smooth_mdp(&params).unwrap();
        for s in 0..model.n_states() {
            for a in 0..model.n_actions() {
                for p in model.transition_row(s, a) {
                    assert!((p - 0.1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn generated_rows_are_stochastic_with_floor() {
        let model = make_smooth_mdp(&default_params(0)).unwrap();
        let floor = model.mixing_eps / model.n_states() as f64;
        for s in 0..model.n_states() {
            for a in 0..model.n_actions() {
                let sum: f64 = model.transition_row(s, a).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                for p in model.transition_row(s, a) {
                    assert!(*p >= floor * (1.0 - 1e-12));
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = make_smooth_mdp(&default_params(7)).unwrap();
        let b = make_smooth_mdp(&default_params(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn support_graph_is_strongly_connected() {
        // mixing floor makes every entry positive; reachability on the
        // support of an arbitrary deterministic policy must cover all states
        let model = make_smooth_mdp(&default_params(3)).unwrap();
        let ns = model.n_states();
        let mut reached = vec![false; ns];
        let mut stack = vec![0usize];
        while let Some(s) = stack.pop() {
            if reached[s] {
                continue;
            }
            reached[s] = true;
            for sp in 0..ns {
                if model.transitions[[s, 0, sp]] > 0.0 && !reached[sp] {
                    stack.push(sp);
                }
            }
        }
        assert!(reached.iter().all(|r| *r));
    }

    fn constant_reward_single_action(r0: f64) -> MdpModel<f64> {
        let states = vec![vec![0.0], vec![1.0]];
        let actions = vec![vec![0.0]];
        let rewards = array![[r0], [r0]];
        let transitions = Array3::from_shape_vec((2, 1, 2), vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        MdpModel::from_parts(states, actions, rewards, transitions, 0.5).unwrap()
    }

    #[test]
    fn constant_chain_has_constant_gain() {
        let model = constant_reward_single_action(0.37);
        let sol = solve_average_reward(&model, 1e-10, 1_000_000).unwrap();
        assert!((sol.j_star - 0.37).abs() < 1e-10);
        for v in &sol.v_star {
            assert!(v.abs() < 1e-9);
        }
        assert!(sol.residual <= 1e-10);
    }

    fn two_state_deterministic() -> MdpModel<f64> {
        // action 0: stay (reward 0.2), action 1: swap (reward 0.9)
        let states = vec![vec![0.0], vec![1.0]];
        let actions = vec![vec![0.0], vec![1.0]];
        let rewards = array![[0.2, 0.9], [0.2, 0.9]];
        let mut transitions = Array3::zeros((2, 2, 2));
        transitions[[0, 0, 0]] = 1.0;
        transitions[[1, 0, 1]] = 1.0;
        transitions[[0, 1, 1]] = 1.0;
        transitions[[1, 1, 0]] = 1.0;
        MdpModel::from_parts(states, actions, rewards, transitions, 0.0).unwrap()
    }

    #[test]
    fn two_state_swap_loop_wins() {
        // the four stationary deterministic policies have gains
        // 0.2 (stay/stay), 0.9 (swap/swap), 0.2 and 0.2 (mixed); optimum 0.9
        let model = two_state_deterministic();
        let sol = solve_average_reward(&model, 1e-10, 1_000_000).unwrap();
        assert!((sol.j_star - 0.9).abs() < 1e-9);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn greedy_policy_gain_matches_optimum() {
        let model = make_smooth_mdp(&default_params(11)).unwrap();
        let sol = solve_average_reward(&model, 1e-10, 1_000_000).unwrap();
        let greedy = greedy_actions(&sol.q_star);
        let gain = evaluate_policy_gain(&model, &deterministic_policy(&model, &greedy)).unwrap();
        assert!(
            (gain - sol.j_star).abs() <= 2e-10,
            "gain {gain} vs j* {}",
            sol.j_star
        );
    }

    #[test]
    fn step_deterministic_row() {
        let model = two_state_deterministic();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..50 {
            let (next, r) = model.step(0, 1, &mut rng);
            assert_eq!(next, 1);
            assert_eq!(r, 0.9);
        }
    }

    #[test]
    fn step_uniform_row_frequencies() {
        let model = {
            let mut params = default_params(0);
            params.mixing_eps = 0.5;
            params.roughness = 0.0;
            make_smooth_mdp(&params).unwrap()
        };
        let ns = model.n_states();
        let draws = 100_000usize;
        let mut counts = vec![0usize; ns];
        let mut rng = ChaCha20Rng::seed_from_u64(123);
        for _ in 0..draws {
            let (next, _) = model.step(0, 0, &mut rng);
            counts[next] += 1;
        }
        let p = 1.0 / ns as f64;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "freq {freq} deviates from {p} by more than 3 sigma"
            );
        }
    }

    #[test]
    fn step_is_deterministic_given_seed() {
        let model = make_smooth_mdp(&default_params(5)).unwrap();
        let run = |seed: u64| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut s = 0usize;
            let mut path = Vec::new();
            for t in 0..200 {
                let (next, _) = model.step(s, t % model.n_actions(), &mut rng);
                path.push(next);
                s = next;
            }
            path
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn expected_value_constants_and_deterministic_rows() {
        let model = two_state_deterministic();
        let v = vec![3.0, 3.0];
        assert!((model.expected_value(&v, 0, 0) - 3.0).abs() < 1e-15);
        let v = vec![1.0, 7.0];
        assert_eq!(model.expected_value(&v, 0, 1), 7.0);
    }

    #[test]
    fn expected_value_matches_monte_carlo() {
        let model = make_smooth_mdp(&default_params(2)).unwrap();
        let ns = model.n_states();
        let v: Vec<f64> = (0..ns).map(|i| (i as f64 * 0.711).sin()).collect();
        let exact = model.expected_value(&v, 3, 1);
        let draws = 1_000_000usize;
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let (next, _) = model.step(3, 1, &mut rng);
            sum += v[next];
            sum_sq += v[next] * v[next];
        }
        let mean = sum / draws as f64;
        let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "MC mean {mean} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn uniform_policy_gain_is_between_extremes() {
        let model = make_smooth_mdp(&default_params(4)).unwrap();
        let sol = solve_average_reward(&model, 1e-10, 1_000_000).unwrap();
        let uniform = evaluate_policy_gain(&model, &uniform_policy(&model)).unwrap();
        assert!(uniform <= sol.j_star + 1e-9);
    }

    #[test]
    fn finite_horizon_one_step_is_max_reward() {
        let model = two_state_deterministic();
        let v1 = finite_horizon_optimal(&model, 1);
        assert!((v1[0] - 0.9).abs() < 1e-15);
        assert!((v1[1] - 0.9).abs() < 1e-15);
        let v0 = finite_horizon_optimal(&model, 0);
        assert_eq!(v0, vec![0.0, 0.0]);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let model = make_smooth_mdp(&default_params(6)).unwrap();
        let text = model.to_json().unwrap();
        let back: MdpModel<f64> = MdpModel::from_json(&text).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn bellman_equations_hold_at_solution() {
        let model = make_smooth_mdp(&default_params(8)).unwrap();
        let sol = solve_average_reward(&model, 1e-10, 1_000_000).unwrap();
        for s in 0..model.n_states() {
            for a in 0..model.n_actions() {
                let lhs = sol.j_star + sol.q_star[[s, a]];
                let rhs = model.rewards[[s, a]] + model.expected_value(&sol.v_star, s, a);
                assert!((lhs - rhs).abs() < 1e-12);
            }
            let best = (0..model.n_actions())
                .map(|a| sol.q_star[[s, a]])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((best - sol.v_star[s]).abs() <= 1e-10);
        }
    }
}
