//! The distributed outer loop: consensus on `x`, gradient tracking on `y`,
//! fed by zeroth-order estimates built from two inexact lower-level solves.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::lower::{solve_inner, BudgetRule, InnerConfig};
use crate::network::MixingMatrix;
use crate::problem::SmpecInstance;
use crate::rng::{self, Role};
use crate::smoothing::{sample_sphere, zo_estimate, Provenance, ZoGradient};
use crate::vecops::{add, all_finite, norm, norm_sq};
use crate::{Error, Result};

/// How the agents' starting points are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum InitConfig {
    /// `x_i = c + s (e_i - mean(e))` with `c ~ N(0, I)` drawn from
    /// `center_seed` and `e_i ~ N(0, I)` from the run seed. The network mean
    /// starts at `c` whatever `m` is.
    SharedCenter { center_seed: u64, spread: f64 },
    /// Independent `N(0, I)` points from the run seed.
    IndependentNormal,
    Explicit(Vec<Vec<f64>>),
}

/// Objective estimation at the mean iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Evaluate every `every` epochs (and always at epochs 0 and K); 0 disables.
    pub every: usize,
    pub inner_budget: usize,
    pub samples: usize,
    /// Seed of the evaluation streams, fixed across epochs.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 1,
            inner_budget: 2000,
            samples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gamma: f64,
    pub eta: f64,
    pub epochs: usize,
    pub inner: InnerConfig,
    pub warm_start: bool,
    pub seed: u64,
    pub init: InitConfig,
    pub eval: EvalConfig,
    /// Spread agent work over the rayon pool.
    pub parallel_agents: bool,
}

impl RunConfig {
    pub fn new(instance: &SmpecInstance, gamma: f64, eta: f64, epochs: usize, seed: u64) -> Self {
        Self {
            gamma,
            eta,
            epochs,
            inner: InnerConfig::default_for(instance),
            warm_start: true,
            seed,
            init: InitConfig::SharedCenter {
                center_seed: seed,
                spread: 1.0,
            },
            eval: EvalConfig {
                seed,
                ..EvalConfig::default()
            },
            parallel_agents: true,
        }
    }

    pub fn validate(&self, instance: &SmpecInstance) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::range("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::range("eta", format!("must be positive, got {}", self.eta)));
        }
        if let InitConfig::SharedCenter { spread, .. } = self.init {
            if !(spread >= 0.0 && spread.is_finite()) {
                return Err(Error::range("init_spread", "must be nonnegative"));
            }
        }
        if self.eval.every > 0 && (self.eval.samples == 0 || self.eval.inner_budget == 0) {
            return Err(Error::range("eval_samples", "evaluation needs samples >= 1 and a positive inner budget"));
        }
        self.inner.validate(instance.mu_f())
    }
}

/// Stacked agent state at outer iteration `k`. Row `i` of each matrix belongs
/// to agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub g_prev: Vec<Vec<f64>>,
    pub k: usize,
    /// Warm starts for the solves at `x_i` and `x_i + v_i`.
    pub z_base: Vec<Vec<f64>>,
    pub z_pert: Vec<Vec<f64>>,
    /// Inner steps spent so far, all agents.
    pub inner_steps: u64,
    /// Largest inner error estimate seen in the latest round.
    pub last_epsilon: f64,
}

/// One agent's oracle call.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGradient {
    pub g: ZoGradient,
    pub z_base: Vec<f64>,
    pub z_pert: Vec<f64>,
    pub inner_steps: usize,
}

/// Inexact zeroth-order gradient of agent `agent` at `x` for round `epoch`.
#[allow(clippy::too_many_arguments)]
pub fn agent_gradient(
    instance: &SmpecInstance,
    agent: usize,
    x: &[f64],
    epoch: usize,
    cfg: &RunConfig,
    z_base0: &[f64],
    z_pert0: &[f64],
) -> Result<AgentGradient> {
    let n = instance.n();
    let xi = instance.draw_xi(&mut rng::stream(cfg.seed, agent, Role::Xi, epoch));
    let v = sample_sphere(n, cfg.eta, &mut rng::stream(cfg.seed, agent, Role::Sphere, epoch))?;
    let x_pert = add(x, &v.v);
    let zero = vec![0.0; instance.p()];
    let (s0, s1) = if cfg.warm_start { (z_base0, z_pert0) } else { (&zero[..], &zero[..]) };
    let base = solve_inner(
        instance,
        x,
        epoch,
        &cfg.inner,
        s0,
        &mut rng::stream(cfg.seed, agent, Role::ZetaBase, epoch),
    )?;
    let pert = solve_inner(
        instance,
        &x_pert,
        epoch,
        &cfg.inner,
        s1,
        &mut rng::stream(cfg.seed, agent, Role::ZetaPerturbed, epoch),
    )?;
    let h_x = instance.objective(agent, x, &base.z, &xi);
    let h_xv = instance.objective(agent, &x_pert, &pert.z, &xi);
    let g = zo_estimate(h_x, h_xv, &v, n)?.with_provenance(Provenance::Inexact {
        epsilon: Some(base.epsilon_estimate.max(pert.epsilon_estimate)),
    });
    if !all_finite(&g.g) {
        return Err(Error::NonFiniteIterate(format!("gradient of agent {agent} at epoch {epoch}")));
    }
    Ok(AgentGradient {
        g,
        z_base: base.z,
        z_pert: pert.z,
        inner_steps: base.iterations_used + pert.iterations_used,
    })
}

fn all_gradients(
    instance: &SmpecInstance,
    x: &[Vec<f64>],
    epoch: usize,
    cfg: &RunConfig,
    z_base: &[Vec<f64>],
    z_pert: &[Vec<f64>],
) -> Result<Vec<AgentGradient>> {
    let one = |i: usize| agent_gradient(instance, i, &x[i], epoch, cfg, &z_base[i], &z_pert[i]);
    if cfg.parallel_agents {
        (0..x.len()).into_par_iter().map(one).collect()
    } else {
        (0..x.len()).map(one).collect()
    }
}

fn initial_points(instance: &SmpecInstance, cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let (m, n) = (instance.m(), instance.n());
    let normal = |seed: u64, agent: usize, role: Role| -> Vec<f64> {
        let mut r = rng::stream(seed, agent, role, 0);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    };
    match &cfg.init {
        InitConfig::Explicit(rows) => {
            if rows.len() != m || rows.iter().any(|r| r.len() != n) {
                return Err(Error::DimensionMismatch {
                    expected: m * n,
                    got: rows.iter().map(Vec::len).sum(),
                });
            }
            Ok(rows.clone())
        }
        InitConfig::IndependentNormal => Ok((0..m).map(|i| normal(cfg.seed, i, Role::Init)).collect()),
        InitConfig::SharedCenter { center_seed, spread } => {
            let c = normal(*center_seed, 0, Role::Center);
            let e: Vec<Vec<f64>> = (0..m).map(|i| normal(cfg.seed, i, Role::Init)).collect();
            let e_bar = mean_row(&e);
            Ok(e.iter()
                .map(|ei| (0..n).map(|k| c[k] + spread * (ei[k] - e_bar[k])).collect())
                .collect())
        }
    }
}

/// Draws the starting points and sets `y_0 = g_0`.
pub fn init_swarm(instance: &SmpecInstance, w: &MixingMatrix, cfg: &RunConfig) -> Result<SwarmState> {
    if w.m() != instance.m() {
        return Err(Error::DimensionMismatch {
            expected: instance.m(),
            got: w.m(),
        });
    }
    cfg.validate(instance)?;
    let x = initial_points(instance, cfg)?;
    let zeros = vec![vec![0.0; instance.p()]; instance.m()];
    let grads = all_gradients(instance, &x, 0, cfg, &zeros, &zeros)?;
    let mut state = SwarmState {
        x,
        y: Vec::new(),
        g_prev: Vec::new(),
        k: 0,
        z_base: zeros.clone(),
        z_pert: zeros,
        inner_steps: 0,
        last_epsilon: 0.0,
    };
    absorb(&mut state, grads);
    state.y = state.g_prev.clone();
    Ok(state)
}

/// Stores new gradients and warm starts; returns them stacked.
fn absorb(state: &mut SwarmState, grads: Vec<AgentGradient>) -> Vec<Vec<f64>> {
    let mut eps: f64 = 0.0;
    let mut g = Vec::with_capacity(grads.len());
    for (i, a) in grads.into_iter().enumerate() {
        state.inner_steps += a.inner_steps as u64;
        if let Provenance::Inexact { epsilon: Some(e) } = a.g.provenance {
            eps = eps.max(e);
        }
        state.z_base[i] = a.z_base;
        state.z_pert[i] = a.z_pert;
        g.push(a.g.g);
    }
    state.last_epsilon = eps;
    state.g_prev = g.clone();
    g
}

/// One synchronous round: `X <- WX - gamma Y`, fresh oracle calls, then
/// `Y <- WY + G_new - G_prev`.
pub fn step(state: &mut SwarmState, instance: &SmpecInstance, w: &MixingMatrix, cfg: &RunConfig) -> Result<()> {
    let wx = w.mix(&state.x);
    let x_new: Vec<Vec<f64>> = wx
        .iter()
        .zip(&state.y)
        .map(|(a, y)| a.iter().zip(y).map(|(a, y)| a - cfg.gamma * y).collect())
        .collect();
    if x_new.iter().any(|r| !all_finite(r)) {
        return Err(Error::NonFiniteIterate(format!("x at epoch {}", state.k + 1)));
    }
    let grads = all_gradients(instance, &x_new, state.k + 1, cfg, &state.z_base, &state.z_pert)?;
    let g_old = std::mem::take(&mut state.g_prev);
    let g_new = absorb(state, grads);
    let wy = w.mix(&state.y);
    let y_new: Vec<Vec<f64>> = wy
        .iter()
        .zip(g_new.iter().zip(&g_old))
        .map(|(a, (gn, go))| a.iter().zip(gn.iter().zip(go)).map(|(a, (gn, go))| a + gn - go).collect())
        .collect();
    if y_new.iter().any(|r| !all_finite(r)) {
        return Err(Error::NonFiniteIterate(format!("y at epoch {}", state.k + 1)));
    }
    state.x = x_new;
    state.y = y_new;
    state.k += 1;
    Ok(())
}

pub fn mean_row(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let m = rows.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= m);
    out
}

/// `|M - 1 mean(M)|_F^2`.
pub fn centered_frobenius_sq(rows: &[Vec<f64>]) -> f64 {
    let mean = mean_row(rows);
    rows.iter()
        .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

pub fn consensus_violation(state: &SwarmState) -> f64 {
    centered_frobenius_sq(&state.x)
}

pub fn tracker_dispersion(state: &SwarmState) -> f64 {
    centered_frobenius_sq(&state.y)
}

fn frobenius(rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| norm_sq(r)).sum::<f64>().sqrt()
}

/// Mean objective over agents at `x`, with the lower level solved from a cold
/// start on the evaluation stream.
pub fn evaluate_objective(instance: &SmpecInstance, x: &[f64], inner: &InnerConfig, eval: &EvalConfig) -> Result<(f64, f64)> {
    let cfg = InnerConfig {
        budget: BudgetRule::Fixed(eval.inner_budget),
        residual_samples: 0,
        ..*inner
    };
    let zero = vec![0.0; instance.p()];
    let z = solve_inner(instance, x, 0, &cfg, &zero, &mut rng::stream(eval.seed, 0, Role::Evaluation, 0))?.z;
    let mut r = rng::stream(eval.seed, 1, Role::Evaluation, 0);
    let m = instance.m();
    let (mut mean, mut m2) = (0.0, 0.0);
    for s in 0..eval.samples {
        let xi = instance.draw_xi(&mut r);
        let v = (0..m).map(|i| instance.objective(i, x, &z, &xi)).sum::<f64>() / m as f64;
        let d = v - mean;
        mean += d / (s + 1) as f64;
        m2 += d * (v - mean);
    }
    let n = eval.samples as f64;
    let se = if eval.samples > 1 { (m2 / (n - 1.0) / n).sqrt() } else { 0.0 };
    Ok((mean, se))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub x_bar: Vec<f64>,
    pub consensus_violation: f64,
    pub tracker_dispersion: f64,
    /// `(mean, standard error)` when this epoch was evaluated.
    pub objective: Option<(f64, f64)>,
    /// `|grad f^eta(x_bar)|^2` when the instance has a closed form.
    pub smoothed_grad_norm_sq: Option<f64>,
    pub inner_steps: u64,
    pub epsilon_estimate: f64,
    /// `|mean(Y) - mean(G)| / (1 + |Y|_F)`.
    pub tracking_residual: f64,
    /// `|x_bar_k - x_bar_{k-1} + gamma mean(Y_{k-1})| / (1 + |x_bar_{k-1}|)`; 0 at epoch 0.
    pub mean_update_residual: f64,
    /// `|1^T (Y - 1 mean(Y))| / (1 + |Y|_F)`.
    pub centering_residual: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub epochs: Vec<EpochMetrics>,
    pub final_state: SwarmState,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("record holds the initial epoch")
    }

    /// Smallest `|grad f^eta(x_bar_k)|^2` seen.
    pub fn best_grad_norm_sq(&self) -> Option<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.smoothed_grad_norm_sq)
            .reduce(f64::min)
    }
}

fn metrics(
    instance: &SmpecInstance,
    state: &SwarmState,
    cfg: &RunConfig,
    prev: Option<(&[f64], &[f64])>,
    started: Instant,
) -> Result<EpochMetrics> {
    let x_bar = mean_row(&state.x);
    let y_bar = mean_row(&state.y);
    let g_bar = mean_row(&state.g_prev);
    let y_norm = frobenius(&state.y);
    let diff: Vec<f64> = y_bar.iter().zip(&g_bar).map(|(a, b)| a - b).collect();
    let tracking_residual = norm(&diff) / (1.0 + y_norm);
    let mean_update_residual = match prev {
        Some((xb, yb)) => {
            let r: Vec<f64> = (0..x_bar.len()).map(|k| x_bar[k] - xb[k] + cfg.gamma * yb[k]).collect();
            norm(&r) / (1.0 + norm(xb))
        }
        None => 0.0,
    };
    let mut col = vec![0.0; y_bar.len()];
    for row in &state.y {
        for (c, (v, b)) in col.iter_mut().zip(row.iter().zip(&y_bar)) {
            *c += v - b;
        }
    }
    let centering_residual = norm(&col) / (1.0 + y_norm);
    let due = cfg.eval.every > 0 && (state.k.is_multiple_of(cfg.eval.every) || state.k == cfg.epochs);
    let objective = if due {
        Some(evaluate_objective(instance, &x_bar, &cfg.inner, &cfg.eval)?)
    } else {
        None
    };
    let smoothed_grad_norm_sq = instance
        .analytic()
        .map(|a| norm_sq(&a.smoothed_gradient(&x_bar, cfg.eta)));
    Ok(EpochMetrics {
        epoch: state.k,
        consensus_violation: consensus_violation(state),
        tracker_dispersion: tracker_dispersion(state),
        x_bar,
        objective,
        smoothed_grad_norm_sq,
        inner_steps: state.inner_steps,
        epsilon_estimate: state.last_epsilon,
        tracking_residual,
        mean_update_residual,
        centering_residual,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Initialization plus `cfg.epochs` rounds, with metrics after each.
pub fn run(instance: &SmpecInstance, w: &MixingMatrix, cfg: &RunConfig) -> Result<TrajectoryRecord> {
    let started = Instant::now();
    let mut state = init_swarm(instance, w, cfg)?;
    let mut epochs = Vec::with_capacity(cfg.epochs + 1);
    epochs.push(metrics(instance, &state, cfg, None, started)?);
    for _ in 0..cfg.epochs {
        let xb = mean_row(&state.x);
        let yb = mean_row(&state.y);
        step(&mut state, instance, w, cfg)?;
        epochs.push(metrics(instance, &state, cfg, Some((&xb, &yb)), started)?);
    }
    Ok(TrajectoryRecord {
        epochs,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_mixing, Topology};
    use crate::problem::{builtin_benchmark, NoiseModel, DEFAULT_NOISE_MEAN, DEFAULT_NOISE_STD};

    fn bench(m: usize) -> SmpecInstance {
        let nm = NoiseModel::normal(DEFAULT_NOISE_MEAN, DEFAULT_NOISE_STD).unwrap();
        builtin_benchmark(m, nm, nm).unwrap()
    }

    #[test]
    fn centered_norm_examples() {
        assert_eq!(centered_frobenius_sq(&[vec![1.0, 2.0], vec![1.0, 2.0]]), 0.0);
        assert_eq!(centered_frobenius_sq(&[vec![1.0, 0.0], vec![-1.0, 0.0]]), 2.0);
    }

    #[test]
    fn zero_epochs_records_only_start() {
        let inst = bench(3);
        let w = build_mixing(&Topology::Ring, 3).unwrap();
        let mut cfg = RunConfig::new(&inst, 1e-5, 0.1, 0, 4);
        cfg.eval.inner_budget = 50;
        cfg.eval.samples = 10;
        let rec = run(&inst, &w, &cfg).unwrap();
        assert_eq!(rec.epochs.len(), 1);
        assert!(rec.epochs[0].objective.is_some());
    }

    #[test]
    fn single_agent_tracker_is_its_gradient() {
        let inst = bench(1);
        let w = build_mixing(&Topology::Ring, 1).unwrap();
        let cfg = RunConfig::new(&inst, 1e-5, 0.1, 0, 4);
        let s = init_swarm(&inst, &w, &cfg).unwrap();
        assert_eq!(s.y, s.g_prev);
        assert_eq!(consensus_violation(&s), 0.0);
    }

    #[test]
    fn shared_center_fixes_initial_mean() {
        let mut first: Option<Vec<f64>> = None;
        for m in [1, 5, 10] {
            let inst = bench(m);
            let cfg = RunConfig::new(&inst, 1e-5, 0.1, 0, 11);
            let xb = mean_row(&initial_points(&inst, &cfg).unwrap());
            match &first {
                None => first = Some(xb),
                Some(f) => {
                    for (a, b) in f.iter().zip(&xb) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn parallel_and_serial_agree() {
        let inst = bench(5);
        let w = build_mixing(&Topology::Ring, 5).unwrap();
        let mut cfg = RunConfig::new(&inst, 1e-3, 0.1, 5, 2);
        cfg.eval.every = 0;
        let a = run(&inst, &w, &cfg).unwrap();
        cfg.parallel_agents = false;
        let b = run(&inst, &w, &cfg).unwrap();
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn invalid_gamma_is_rejected() {
        let inst = bench(2);
        let w = build_mixing(&Topology::Ring, 2).unwrap();
        let cfg = RunConfig::new(&inst, -1.0, 0.1, 1, 0);
        assert!(matches!(run(&inst, &w, &cfg), Err(Error::Range { .. })));
    }
}
