//! The optimistic kernel agent: batched backward planning over a fixed
//! lookahead window, greedy action selection on the optimistic value proxy,
//! and delayed dataset updates at window boundaries.

use ndarray::{Array2, Array3};
use rand::Rng;
use thiserror::Error;

use crate::analysis::{BatchRecord, RunTrace, StepRecord};
use crate::confidence::{beta_full, beta_simplified, choose_m, BetaMode, ConfidenceError, ConfidenceParams};
use crate::kernels::KernelSpec;
use crate::krr::{GramState, KrrError};
use crate::mdp::MdpModel;
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error)]
pub enum KucbError {
    #[error(transparent)]
    Krr(#[from] KrrError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Tie-breaking rule for the greedy argmax. Fixed to the lowest action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

/// Agent parameters: window size, ridge parameter, planning horizon, the
/// state-action kernel, confidence constants, and the width multiplier
/// applied on top of the theoretical beta.
#[derive(Debug, Clone)]
pub struct AgentConfig<S: Scalar> {
    pub window: usize,
    pub rho: S,
    pub horizon: usize,
    pub kernel: KernelSpec<S>,
    pub confidence: ConfidenceParams<S>,
    pub beta_scale: S,
    pub tie_break: TieBreak,
}

impl<S: Scalar> AgentConfig<S> {
    pub fn validate(&self) -> Result<(), KucbError> {
        if self.window == 0 {
            return Err(KucbError::InvalidConfig("window must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(KucbError::InvalidConfig("horizon must be positive".into()));
        }
        if self.window > self.horizon {
            return Err(KucbError::InvalidConfig(format!(
                "window {} exceeds horizon {}",
                self.window, self.horizon
            )));
        }
        if !(self.rho > S::zero()) {
            return Err(KucbError::InvalidConfig("rho must be positive".into()));
        }
        if self.beta_scale < S::zero() {
            return Err(KucbError::InvalidConfig(
                "beta_scale must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Number of planning batches over the horizon.
    pub fn num_batches(&self) -> usize {
        self.horizon.div_ceil(self.window)
    }
}

/// Tables computed by one planning call, indexed by step-in-window h = 1..=w
/// at row h-1. Entries of `q` are projected onto [0, w]; `v` rows are exact
/// action maxima of the matching `q` rows.
#[derive(Debug, Clone)]
pub struct WindowPlan<S> {
    pub t0: usize,
    pub beta_used: S,
    /// w x n_states x n_actions optimistic state-action proxy.
    pub q: Array3<S>,
    /// w x n_states value proxy.
    pub v: Array2<S>,
    /// Delayed posterior widths sigma_{t0}(s, a), shared by every h.
    pub sigma: Array2<S>,
    /// Raw kernel predictions per h before the optimism bonus and projection.
    pub fhat: Array3<S>,
}

/// Reward table and embeddings the agent is allowed to see. The transition
/// tensor stays hidden; only sampled successors reach the agent.
pub struct ModelView<'a, S> {
    pub rewards: &'a Array2<S>,
    pub embeddings: &'a [Vec<S>],
    pub n_states: usize,
    pub n_actions: usize,
}

impl<'a, S: Scalar> ModelView<'a, S> {
    pub fn new(model: &'a MdpModel<S>, embeddings: &'a [Vec<S>]) -> Self {
        ModelView {
            rewards: &model.rewards,
            embeddings,
            n_states: model.n_states(),
            n_actions: model.n_actions(),
        }
    }
}

/// Backward planning over one window from a frozen dataset. Initializes the
/// level-(w+1) values at zero and recurses down to h = 1, each level
/// predicting the expected next-level value from the history targets
/// v_{h+1}(s_2), ..., v_{h+1}(s_{t0+1}).
pub fn plan_window<S: Scalar>(
    snapshot: &GramState<S>,
    view: &ModelView<'_, S>,
    config: &AgentConfig<S>,
    succ_states: &[usize],
    delta_batch: S,
) -> Result<WindowPlan<S>, KucbError> {
    let w = config.window;
    let (ns, na) = (view.n_states, view.n_actions);
    let n = snapshot.len();
    if succ_states.len() != n {
        return Err(KucbError::InvalidConfig(format!(
            "successor history length {} does not match observation count {n}",
            succ_states.len()
        )));
    }

    let params = config.confidence.with_delta(delta_batch)?;
    let beta = match params.mode {
        BetaMode::Full => {
            let m = choose_m(&params.state_profile, n.max(1))?;
            beta_full(&params, n, snapshot.log_det(), m)?
        }
        BetaMode::Simplified => beta_simplified(&params, n.max(1), snapshot.info_gain())?,
    } * config.beta_scale;

    // per grid point: forward-solved kernel column (target-independent)
    let mut queries = Vec::with_capacity(ns * na);
    let mut sigma = Array2::<S>::zeros((ns, na));
    for s in 0..ns {
        for a in 0..na {
            let q = snapshot.query(&view.embeddings[s * na + a])?;
            sigma[[s, a]] = q.variance().sqrt();
            queries.push(q);
        }
    }

    // multiplicity of (distinct point, successor state) pairs in the history
    let g = snapshot.distinct_len();
    let mut counts = vec![S::zero(); g * ns];
    for (i, &succ) in succ_states.iter().enumerate() {
        let j = snapshot.assignment()[i] as usize;
        counts[j * ns + succ] += S::one();
    }

    let w_cap = cast::<S>(w as f64);
    let mut q_table = Array3::<S>::zeros((w, ns, na));
    let mut v_table = Array2::<S>::zeros((w, ns));
    let mut fhat = Array3::<S>::zeros((w, ns, na));
    let mut v_next = vec![S::zero(); ns];

    for h_idx in (0..w).rev() {
        let mut sums = vec![S::zero(); g];
        for j in 0..g {
            let row = &counts[j * ns..(j + 1) * ns];
            sums[j] = row
                .iter()
                .zip(v_next.iter())
                .fold(S::zero(), |acc, (c, v)| acc + *c * *v);
        }
        let solved = snapshot.solve_target_sums(&sums)?;
        for s in 0..ns {
            let mut best = S::neg_infinity();
            for a in 0..na {
                let f = queries[s * na + a].predict_with(&solved);
                fhat[[h_idx, s, a]] = f;
                let raw = view.rewards[[s, a]] + f + beta * sigma[[s, a]];
                let clamped = raw.max(S::zero()).min(w_cap);
                q_table[[h_idx, s, a]] = clamped;
                best = best.max(clamped);
            }
            v_table[[h_idx, s]] = best;
        }
        for s in 0..ns {
            v_next[s] = v_table[[h_idx, s]];
        }
    }

    Ok(WindowPlan {
        t0: n,
        beta_used: beta,
        q: q_table,
        v: v_table,
        sigma,
        fhat,
    })
}

/// Greedy action at step-in-window `h` (1-based) in state `s`; ties go to the
/// lowest action index.
pub fn select_action<S: Scalar>(plan: &WindowPlan<S>, h: usize, s: usize) -> usize {
    assert!(h >= 1 && h <= plan.q.shape()[0], "step-in-window out of range");
    let na = plan.q.shape()[2];
    let mut best = 0usize;
    for a in 1..na {
        if plan.q[[h - 1, s, a]] > plan.q[[h - 1, s, best]] {
            best = a;
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Label recorded in the trace; does not influence the run.
    pub seed: u64,
    /// Keep every window plan in the trace for coverage and optimism checks.
    pub retain_plans: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: 0,
            retain_plans: false,
        }
    }
}

/// Runs the agent for the configured horizon. Steps are 1-based; the batch
/// anchored at t0 = w * floor((t-1)/w) covers steps t0+1 ..= t0+w, so every
/// prediction at step t conditions on exactly the first t0 transitions. The
/// per-run confidence budget is split evenly across batches.
pub fn run<S: Scalar, R: Rng>(
    model: &MdpModel<S>,
    config: &AgentConfig<S>,
    rng: &mut R,
) -> Result<RunTrace<S>, KucbError> {
    run_with_options(model, config, rng, RunOptions::default())
}

pub fn run_with_options<S: Scalar, R: Rng>(
    model: &MdpModel<S>,
    config: &AgentConfig<S>,
    rng: &mut R,
    options: RunOptions,
) -> Result<RunTrace<S>, KucbError> {
    config.validate()?;
    let dim = model.state_dim() + model.action_dim();
    if config.kernel.input_dim != dim {
        return Err(KucbError::InvalidConfig(format!(
            "kernel input_dim {} does not match joint embedding dimension {dim}",
            config.kernel.input_dim
        )));
    }

    let embeddings = model.grid_embeddings();
    let view = ModelView::new(model, &embeddings);
    let (w, t_max) = (config.window, config.horizon);
    let na = model.n_actions();
    let delta_batch = config.confidence.delta / cast::<S>(config.num_batches() as f64);

    let mut gram = GramState::new(config.kernel.clone(), config.rho)?;
    let mut steps = Vec::with_capacity(t_max);
    let mut batches = Vec::new();
    let mut plans = Vec::new();
    let mut succ: Vec<usize> = Vec::with_capacity(t_max);
    let mut plan: Option<WindowPlan<S>> = None;
    let mut state = 0usize;

    for t in 1..=t_max {
        if (t - 1) % w == 0 {
            let p = plan_window(&gram, &view, config, &succ, delta_batch)?;
            batches.push(BatchRecord {
                t0: t - 1,
                n: gram.len(),
                logdet: gram.log_det(),
                info_gain: gram.info_gain(),
                beta: p.beta_used,
            });
            if options.retain_plans {
                plans.push(p.clone());
            }
            plan = Some(p);
        }
        let current = plan.as_ref().expect("plan exists after first boundary");
        let h = t - current.t0;
        let action = select_action(current, h, state);
        let (next, reward) = model.step(state, action, rng);
        steps.push(StepRecord {
            t,
            state,
            action,
            reward,
            sigma_used: current.sigma[[state, action]],
            beta_used: current.beta_used,
            t0: current.t0,
        });
        gram.append(&embeddings[state * na + action])?;
        succ.push(next);
        state = next;
    }

    Ok(RunTrace {
        seed: options.seed,
        config: config.clone(),
        steps,
        batches,
        final_state: state,
        final_info_gain: gram.info_gain(),
        plans: if options.retain_plans { Some(plans) } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::{BetaMode, ConfidenceParams};
    use crate::kernels::{default_profile, KernelSpec};
    use crate::mdp::{make_smooth_mdp, SmoothMdpParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn test_model(seed: u64) -> MdpModel<f64> {
        make_smooth_mdp(&SmoothMdpParams {
            seed,
            n_states: 6,
            n_actions: 3,
            state_dim: 1,
            kernel: KernelSpec::squared_exponential(2, 0.4).unwrap(),
            mixing_eps: 0.1,
            roughness: 2.0,
        })
        .unwrap()
    }

    fn test_config(model: &MdpModel<f64>, w: usize, horizon: usize, beta_scale: f64) -> AgentConfig<f64> {
        let kernel = KernelSpec::squared_exponential(2, 0.4).unwrap();
        let state_kernel = KernelSpec::squared_exponential(1, 0.4).unwrap();
        let profile = default_profile(&state_kernel);
        let _ = model;
        AgentConfig {
            window: w,
            rho: 1.0,
            horizon,
            kernel,
            confidence: ConfidenceParams::new(
                w as f64,
                w as f64,
                1.0,
                0.1,
                1.0,
                profile,
                BetaMode::Full,
            )
            .unwrap(),
            beta_scale,
            tie_break: TieBreak::LowestIndex,
        }
    }

    #[test]
    fn zero_data_zero_bonus_plan_reduces_to_rewards() {
        let model = test_model(0);
        let config = test_config(&model, 4, 16, 0.0);
        let embeddings = model.grid_embeddings();
        let view = ModelView::new(&model, &embeddings);
        let gram = GramState::new(config.kernel.clone(), config.rho).unwrap();
        let plan = plan_window(&gram, &view, &config, &[], 0.05).unwrap();
        for h in 0..4 {
            for s in 0..model.n_states() {
                for a in 0..model.n_actions() {
                    assert_eq!(plan.q[[h, s, a]], model.rewards[[s, a]]);
                }
            }
        }
    }

    #[test]
    fn plan_tables_respect_projection_and_max() {
        let model = test_model(1);
        let config = test_config(&model, 5, 50, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let trace = run_with_options(
            &model,
            &config,
            &mut rng,
            RunOptions { seed: 0, retain_plans: true },
        )
        .unwrap();
        for plan in trace.plans.as_ref().unwrap() {
            let w = config.window as f64;
            for h in 0..config.window {
                for s in 0..model.n_states() {
                    let mut best = f64::NEG_INFINITY;
                    for a in 0..model.n_actions() {
                        let q = plan.q[[h, s, a]];
                        assert!((0.0..=w).contains(&q));
                        best = best.max(q);
                    }
                    assert_eq!(plan.v[[h, s]], best);
                }
            }
        }
    }

    #[test]
    fn single_step_window_has_zero_prediction() {
        let model = test_model(2);
        let config = test_config(&model, 1, 30, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let trace = run_with_options(
            &model,
            &config,
            &mut rng,
            RunOptions { seed: 0, retain_plans: true },
        )
        .unwrap();
        for plan in trace.plans.as_ref().unwrap() {
            for s in 0..model.n_states() {
                for a in 0..model.n_actions() {
                    // targets are identically zero at the deepest level
                    assert_eq!(plan.fhat[[0, s, a]], 0.0);
                    let expected = (model.rewards[[s, a]]
                        + plan.beta_used * plan.sigma[[s, a]])
                        .clamp(0.0, 1.0);
                    assert!((plan.q[[0, s, a]] - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn select_action_tie_breaks_to_lowest_index() {
        let mut plan = WindowPlan {
            t0: 0,
            beta_used: 0.0,
            q: Array3::from_elem((1, 2, 3), 1.0),
            v: Array2::from_elem((1, 2), 1.0),
            sigma: Array2::zeros((2, 3)),
            fhat: Array3::zeros((1, 2, 3)),
        };
        assert_eq!(select_action(&plan, 1, 0), 0);
        plan.q[[0, 0, 2]] = 2.0;
        assert_eq!(select_action(&plan, 1, 0), 2);
        // adding a constant to a whole row leaves the argmax unchanged
        for a in 0..3 {
            plan.q[[0, 0, a]] += 5.0;
        }
        assert_eq!(select_action(&plan, 1, 0), 2);
    }

    #[test]
    fn batch_schedule_matches_window_arithmetic() {
        let model = test_model(3);
        let w = 4;
        let config = test_config(&model, w, w, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let trace = run(&model, &config, &mut rng).unwrap();
        assert_eq!(trace.batches.len(), 1);

        let config = test_config(&model, w, 2 * w + 1, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let trace = run(&model, &config, &mut rng).unwrap();
        let anchors: Vec<usize> = trace.batches.iter().map(|b| b.t0).collect();
        assert_eq!(anchors, vec![0, w, 2 * w]);
        assert_eq!(trace.batches.len(), config.num_batches());
    }

    #[test]
    fn dataset_delay_uses_exactly_the_anchored_prefix() {
        let model = test_model(4);
        let config = test_config(&model, 3, 20, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let trace = run(&model, &config, &mut rng).unwrap();
        for step in &trace.steps {
            assert_eq!(step.t0, config.window * ((step.t - 1) / config.window));
        }
        for batch in &trace.batches {
            assert_eq!(batch.n, batch.t0);
        }
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let model = test_model(5);
        let config = test_config(&model, 5, 60, 1.0);
        let run_once = || {
            let mut rng = ChaCha20Rng::seed_from_u64(42);
            run(&model, &config, &mut rng).unwrap()
        };
        let a = run_once();
        let b = run_once();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.batches, b.batches);
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.final_info_gain, b.final_info_gain);
    }

    #[test]
    fn config_validation_rejects_bad_windows() {
        let model = test_model(6);
        let mut config = test_config(&model, 10, 5, 1.0);
        assert!(config.validate().is_err());
        config.horizon = 10;
        assert!(config.validate().is_ok());
        config.window = 0;
        assert!(config.validate().is_err());
    }
}
