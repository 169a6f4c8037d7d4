//! Projected stochastic approximation for the strongly monotone lower-level VI.
//!
//! At outer iteration `k` the solver runs `t_k = ceil(sqrt(k + 1))` steps of
//! `z <- P_{Z(x)}[z - g_t F(x, z, zeta_t)]` with `g_t = gamma_hat / (t + 1 + Gamma)`.

use rand::Rng;

use crate::problem::SmpecInstance;
use crate::vecops::{all_finite, dist};
use crate::{Error, Result};

/// How many inner steps outer iteration `k` gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetRule {
    /// `ceil(sqrt(k + 1))`.
    SqrtCeil,
    Fixed(usize),
}

impl BudgetRule {
    pub fn steps(&self, k: usize) -> usize {
        match *self {
            BudgetRule::SqrtCeil => ceil_sqrt(k as u64 + 1) as usize,
            BudgetRule::Fixed(t) => t,
        }
    }
}

/// Smallest integer `r` with `r * r >= v`.
pub fn ceil_sqrt(v: u64) -> u64 {
    let r = v.isqrt();
    if r * r == v {
        r
    } else {
        r + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    /// Base step `gamma_hat`, must exceed `1 / (2 mu_F)`.
    pub gamma_hat: f64,
    /// Step offset `Gamma > 0`.
    pub big_gamma: f64,
    pub budget: BudgetRule,
    /// Samples behind the mean map in the residual diagnostic; 0 uses the map
    /// at the noise mean.
    pub residual_samples: usize,
}

impl InnerConfig {
    /// `gamma_hat = 1 / mu_F`, `Gamma = 1`, square-root budget.
    pub fn default_for(instance: &SmpecInstance) -> Self {
        Self {
            gamma_hat: 1.0 / instance.mu_f(),
            big_gamma: 1.0,
            budget: BudgetRule::SqrtCeil,
            residual_samples: 0,
        }
    }

    pub fn validate(&self, mu_f: f64) -> Result<()> {
        if !(self.gamma_hat > 1.0 / (2.0 * mu_f)) || !self.gamma_hat.is_finite() {
            return Err(Error::range(
                "gamma_hat",
                format!("must exceed 1/(2 mu_F) = {}, got {}", 1.0 / (2.0 * mu_f), self.gamma_hat),
            ));
        }
        if !(self.big_gamma > 0.0) || !self.big_gamma.is_finite() {
            return Err(Error::range("big_gamma", format!("must be positive, got {}", self.big_gamma)));
        }
        Ok(())
    }

    /// Step size used at inner step `t` (0-based).
    pub fn stepsize(&self, t: usize) -> f64 {
        self.gamma_hat / (t as f64 + 1.0 + self.big_gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolveResult {
    pub z: Vec<f64>,
    pub iterations_used: usize,
    /// Natural-map residual at `z`.
    pub residual: f64,
    /// Heuristic bound on `E|z - z(x)|^2`; an estimate, not a certificate.
    pub epsilon_estimate: f64,
}

/// Stateful projected SA iteration at a frozen upper-level point.
#[derive(Debug, Clone)]
pub struct ProjectedSa<'a> {
    instance: &'a SmpecInstance,
    x_hat: Vec<f64>,
    cfg: InnerConfig,
    z: Vec<f64>,
    t: usize,
}

impl<'a> ProjectedSa<'a> {
    /// Starts from the projection of `z0` onto `Z(x_hat)`.
    pub fn new(instance: &'a SmpecInstance, x_hat: &[f64], cfg: InnerConfig, z0: &[f64]) -> Result<Self> {
        cfg.validate(instance.mu_f())?;
        if x_hat.len() != instance.n() {
            return Err(Error::DimensionMismatch {
                expected: instance.n(),
                got: x_hat.len(),
            });
        }
        let z = instance.project(x_hat, z0)?;
        Ok(Self {
            instance,
            x_hat: x_hat.to_vec(),
            cfg,
            z,
            t: 0,
        })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let zeta = self.instance.draw_zeta(rng);
        let f = self.instance.lower_map(&self.x_hat, &self.z, &zeta);
        let step = self.cfg.stepsize(self.t);
        let trial: Vec<f64> = self.z.iter().zip(&f).map(|(z, g)| z - step * g).collect();
        if !all_finite(&trial) {
            return Err(Error::NonFiniteIterate(format!("inner step {}", self.t)));
        }
        self.z = self.instance.project(&self.x_hat, &trial)?;
        self.t += 1;
        Ok(())
    }
}

/// `|z - P_{Z(x)}[z - F_N(x, z)]|` with `F_N` an `samples`-sample mean of the
/// stochastic map (or the map at the noise mean when `samples == 0`).
pub fn natural_residual<R: Rng + ?Sized>(
    instance: &SmpecInstance,
    x: &[f64],
    z: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let f = if samples == 0 {
        instance.mean_lower_map(x, z)
    } else {
        let mut acc = vec![0.0; z.len()];
        for _ in 0..samples {
            let zeta = instance.draw_zeta(rng);
            for (a, v) in acc.iter_mut().zip(instance.lower_map(x, z, &zeta)) {
                *a += v;
            }
        }
        acc.into_iter().map(|a| a / samples as f64).collect()
    };
    let trial: Vec<f64> = z.iter().zip(&f).map(|(zi, fi)| zi - fi).collect();
    Ok(dist(z, &instance.project(x, &trial)?))
}

/// Error-bound constant of projected SA with steps `gamma_hat / (t + 1 + Gamma)`:
/// `C = max(gamma_hat^2 (s2 + L^2 e0) / (2 mu gamma_hat - 1), (1 + Gamma) e0)`,
/// where `e0` bounds the initial squared distance via
/// `|z - z*| <= ((1 + L) / mu) * residual(z)` and `s2` is the noise variance.
pub fn sa_error_constant(cfg: &InnerConfig, mu_f: f64, l_f: f64, initial_residual: f64, noise_var: f64) -> f64 {
    let d0 = (1.0 + l_f) / mu_f * initial_residual;
    let e0 = d0 * d0;
    let spread = cfg.gamma_hat * cfg.gamma_hat * (noise_var + l_f * l_f * e0) / (2.0 * mu_f * cfg.gamma_hat - 1.0);
    spread.max((1.0 + cfg.big_gamma) * e0)
}

/// Runs the inner solver for outer iteration `k` from `z0`.
pub fn solve_inner<R: Rng + ?Sized>(
    instance: &SmpecInstance,
    x_hat: &[f64],
    k: usize,
    cfg: &InnerConfig,
    z0: &[f64],
    rng: &mut R,
) -> Result<InnerSolveResult> {
    let mut sa = ProjectedSa::new(instance, x_hat, *cfg, z0)?;
    let r0 = natural_residual(instance, x_hat, sa.z(), cfg.residual_samples, rng)?;
    let budget = cfg.budget.steps(k);
    for _ in 0..budget {
        sa.step(rng)?;
    }
    let residual = natural_residual(instance, x_hat, sa.z(), cfg.residual_samples, rng)?;
    let noise_var = instance.noise_zeta().variance() * instance.zeta_dim() as f64;
    let c = sa_error_constant(cfg, instance.mu_f(), instance.l_f(), r0, noise_var);
    Ok(InnerSolveResult {
        z: sa.z,
        iterations_used: budget,
        residual,
        epsilon_estimate: c / (budget as f64 + 1.0 + cfg.big_gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_benchmark, NoiseModel, SyntheticQuadratic, QuadraticObjective};
    use crate::rng;
    use crate::vecops::norm;
    use nalgebra::{DMatrix, DVector};

    fn identity_instance(p: usize) -> SmpecInstance {
        SyntheticQuadratic::new(
            DMatrix::identity(p, p),
            DMatrix::zeros(p, 1),
            DVector::zeros(p),
            vec![QuadraticObjective {
                scale: 1.0,
                anchor: vec![0.0],
                coupling: vec![0.0; p],
            }],
        )
        .unwrap()
        .instance()
        .unwrap()
    }

    #[test]
    fn budget_rule_is_ceiling_of_sqrt() {
        let r = BudgetRule::SqrtCeil;
        assert_eq!(r.steps(0), 1);
        assert_eq!(r.steps(3), 2);
        assert_eq!(r.steps(4), 3);
        assert_eq!(r.steps(99), 10);
        assert_eq!(r.steps(100), 11);
        for k in 0..5000usize {
            let t = r.steps(k);
            assert!(t * t > k && (t - 1) * (t - 1) < k + 1);
        }
    }

    #[test]
    fn stepsizes_follow_schedule() {
        let cfg = InnerConfig {
            gamma_hat: 0.5,
            big_gamma: 1.0,
            budget: BudgetRule::SqrtCeil,
            residual_samples: 0,
        };
        assert_eq!(cfg.stepsize(0), 0.25);
        assert_eq!(cfg.stepsize(2), 0.125);
    }

    #[test]
    fn config_rejects_small_gamma_hat() {
        let inst = identity_instance(2);
        let mut cfg = InnerConfig::default_for(&inst);
        cfg.gamma_hat = 0.5; // 1/(2 mu) with mu = 1
        assert!(matches!(cfg.validate(1.0), Err(Error::Range { .. })));
        cfg.gamma_hat = 1.0;
        cfg.big_gamma = 0.0;
        assert!(cfg.validate(1.0).is_err());
    }

    #[test]
    fn scalar_contraction_is_monotone() {
        let inst = identity_instance(3);
        let cfg = InnerConfig::default_for(&inst);
        let mut sa = ProjectedSa::new(&inst, &[0.0], cfg, &[1.0, 0.0, 0.0]).unwrap();
        let mut r = rng::from_seed(1);
        let mut prev = norm(sa.z());
        for _ in 0..50 {
            sa.step(&mut r).unwrap();
            let now = norm(sa.z());
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn residual_examples_on_identity_map() {
        let inst = identity_instance(2);
        let mut r = rng::from_seed(0);
        assert_eq!(natural_residual(&inst, &[0.0], &[0.0, 0.0], 0, &mut r).unwrap(), 0.0);
        assert_eq!(natural_residual(&inst, &[0.0], &[1.0, 0.0], 0, &mut r).unwrap(), 1.0);
        assert_eq!(natural_residual(&inst, &[0.0], &[1.0, 0.0], 10, &mut r).unwrap(), 1.0);
    }

    #[test]
    fn iterations_used_matches_budget() {
        let nz = NoiseModel::normal(1.0, 0.1).unwrap();
        let inst = builtin_benchmark(1, nz, nz).unwrap();
        let cfg = InnerConfig::default_for(&inst);
        let mut r = rng::from_seed(5);
        for k in [0, 3, 99, 250] {
            let res = solve_inner(&inst, &[0.1, 0.2], k, &cfg, &[0.0, 0.0], &mut r).unwrap();
            assert_eq!(res.iterations_used, cfg.budget.steps(k));
            assert!(inst.feasible_set().contains(&[0.1, 0.2], &res.z, 1e-10));
            assert!(res.residual >= 0.0 && res.epsilon_estimate > 0.0);
        }
    }

    #[test]
    fn epsilon_estimate_shrinks_with_k() {
        let nz = NoiseModel::normal(1.0, 0.1).unwrap();
        let inst = builtin_benchmark(1, nz, nz).unwrap();
        let cfg = InnerConfig::default_for(&inst);
        let z0 = [2.0, 2.0];
        let a = solve_inner(&inst, &[0.0, 0.0], 0, &cfg, &z0, &mut rng::from_seed(1)).unwrap();
        let b = solve_inner(&inst, &[0.0, 0.0], 400, &cfg, &z0, &mut rng::from_seed(1)).unwrap();
        assert!(b.epsilon_estimate < a.epsilon_estimate);
    }
}
