//! Instance model for distributed stochastic MPECs.
//!
//! An [`SmpecInstance`] bundles `m` local stochastic objectives `h_i(x, z, xi)`,
//! the shared stochastic lower-level map `F(x, z, zeta)` and the parametric
//! feasible set `Z(x)`. Instances are immutable once built and can be shared
//! across threads.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::projection::{FeasibleSet, ParametricHalfspaces};
use crate::rng::{self, StreamRng};
use crate::vecops::{add, dist, dot, norm_sq, sub};
use crate::{Error, Result};

/// Normal noise source. Draws are `mean + std_dev * e` with `e ~ N(0, 1)`, so a
/// zero standard deviation returns the mean exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub mean: f64,
    pub std_dev: f64,
    /// Tag mixed into stream seeds; lets two sources share a master seed.
    pub stream: u64,
}

impl NoiseModel {
    pub fn normal(mean: f64, std_dev: f64) -> Result<Self> {
        if !(std_dev >= 0.0) || !mean.is_finite() || !std_dev.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "normal noise needs finite mean and std_dev >= 0 (got {mean}, {std_dev})"
            )));
        }
        Ok(Self {
            mean,
            std_dev,
            stream: 0,
        })
    }

    pub fn deterministic(mean: f64) -> Self {
        Self {
            mean,
            std_dev: 0.0,
            stream: 0,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        self.mean + self.std_dev * e
    }

    pub fn draw_vec<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.draw(rng)).collect()
    }

    pub fn variance(&self) -> f64 {
        self.std_dev * self.std_dev
    }
}

/// Artifact defaults for the benchmark noise (not taken from any reported
/// experiment): `xi ~ N(1, 0.1^2)` and `zeta ~ N(1, 0.1^2)`.
pub const DEFAULT_NOISE_MEAN: f64 = 1.0;
pub const DEFAULT_NOISE_STD: f64 = 0.1;

pub trait LocalObjective: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64], z: &[f64], xi: &[f64]) -> f64;
}

pub trait LowerMap: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64], z: &[f64], zeta: &[f64]) -> Vec<f64>;
}

/// Closed-form quantities for instances that have them (test fixtures).
pub trait AnalyticImplicit: Send + Sync + fmt::Debug {
    fn lower_solution(&self, x: &[f64]) -> Vec<f64>;
    /// Global implicit objective `f(x) = (1/m) sum_i f_i(x)`.
    fn value(&self, x: &[f64]) -> f64;
    /// Gradient of the ball-smoothed global objective.
    fn smoothed_gradient(&self, x: &[f64], eta: f64) -> Vec<f64>;
}

#[derive(Clone)]
pub struct SmpecInstance {
    name: String,
    n: usize,
    p: usize,
    objectives: Vec<Arc<dyn LocalObjective>>,
    lower_map: Arc<dyn LowerMap>,
    feasible: FeasibleSet,
    noise_xi: NoiseModel,
    xi_dim: usize,
    noise_zeta: NoiseModel,
    zeta_dim: usize,
    mu_f: f64,
    l_f: f64,
    l0: Option<f64>,
    l0_tilde: Option<f64>,
    analytic: Option<Arc<dyn AnalyticImplicit>>,
}

impl fmt::Debug for SmpecInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmpecInstance")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("p", &self.p)
            .field("m", &self.m())
            .field("mu_f", &self.mu_f)
            .field("l_f", &self.l_f)
            .field("l0", &self.l0)
            .field("l0_tilde", &self.l0_tilde)
            .finish_non_exhaustive()
    }
}

impl SmpecInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n: usize,
        p: usize,
        objectives: Vec<Arc<dyn LocalObjective>>,
        lower_map: Arc<dyn LowerMap>,
        feasible: FeasibleSet,
        (noise_xi, xi_dim): (NoiseModel, usize),
        (noise_zeta, zeta_dim): (NoiseModel, usize),
        mu_f: f64,
        l_f: f64,
    ) -> Result<Self> {
        if n == 0 || p == 0 || objectives.is_empty() {
            return Err(Error::InvalidArgument(
                "instance needs n >= 1, p >= 1 and at least one agent".into(),
            ));
        }
        if feasible.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: feasible.dim(),
            });
        }
        if !(mu_f > 0.0 && l_f >= mu_f) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < mu_F <= L_F, got mu_F = {mu_f}, L_F = {l_f}"
            )));
        }
        Ok(Self {
            name: name.into(),
            n,
            p,
            objectives,
            lower_map,
            feasible,
            noise_xi,
            xi_dim,
            noise_zeta,
            zeta_dim,
            mu_f,
            l_f,
            l0: None,
            l0_tilde: None,
            analytic: None,
        })
    }

    pub fn with_lipschitz(mut self, l0: f64, l0_tilde: f64) -> Self {
        self.l0 = Some(l0);
        self.l0_tilde = Some(l0_tilde);
        self
    }

    pub fn with_analytic(mut self, analytic: Arc<dyn AnalyticImplicit>) -> Self {
        self.analytic = Some(analytic);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn m(&self) -> usize {
        self.objectives.len()
    }
    pub fn mu_f(&self) -> f64 {
        self.mu_f
    }
    pub fn l_f(&self) -> f64 {
        self.l_f
    }
    pub fn l0(&self) -> Option<f64> {
        self.l0
    }
    pub fn l0_tilde(&self) -> Option<f64> {
        self.l0_tilde
    }
    pub fn feasible_set(&self) -> &FeasibleSet {
        &self.feasible
    }
    pub fn noise_xi(&self) -> &NoiseModel {
        &self.noise_xi
    }
    pub fn xi_dim(&self) -> usize {
        self.xi_dim
    }
    pub fn zeta_dim(&self) -> usize {
        self.zeta_dim
    }
    pub fn noise_zeta(&self) -> &NoiseModel {
        &self.noise_zeta
    }
    pub fn analytic(&self) -> Option<&Arc<dyn AnalyticImplicit>> {
        self.analytic.as_ref()
    }

    pub fn objective(&self, agent: usize, x: &[f64], z: &[f64], xi: &[f64]) -> f64 {
        self.objectives[agent].value(x, z, xi)
    }

    pub fn lower_map(&self, x: &[f64], z: &[f64], zeta: &[f64]) -> Vec<f64> {
        self.lower_map.value(x, z, zeta)
    }

    /// `F(x, z)` with the noise frozen at its mean. Equals the expected map for
    /// maps that are affine in the noise, which covers the built-in instances.
    pub fn mean_lower_map(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let zeta = vec![self.noise_zeta.mean; self.zeta_dim];
        self.lower_map.value(x, z, &zeta)
    }

    pub fn xi_mean(&self) -> Vec<f64> {
        vec![self.noise_xi.mean; self.xi_dim]
    }

    pub fn draw_xi<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.noise_xi.draw_vec(rng, self.xi_dim)
    }

    pub fn draw_zeta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.noise_zeta.draw_vec(rng, self.zeta_dim)
    }

    pub fn project(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.feasible.project(x, u)
    }

    /// Solves the mean-map VI at `x` by the projected fixed-point iteration
    /// `z <- P[z - (mu/L^2) F(x, z)]`, which contracts with factor
    /// `sqrt(1 - mu^2/L^2)`.
    pub fn deterministic_lower_solution(&self, x: &[f64], tol: f64) -> Result<Vec<f64>> {
        let step = self.mu_f / (self.l_f * self.l_f);
        let mut z = self.project(x, &vec![0.0; self.p])?;
        for _ in 0..1_000_000 {
            let f = self.mean_lower_map(x, &z);
            let trial: Vec<f64> = z.iter().zip(&f).map(|(zi, fi)| zi - step * fi).collect();
            let next = self.project(x, &trial)?;
            let moved = dist(&next, &z);
            z = next;
            if moved <= tol {
                return Ok(z);
            }
        }
        Err(Error::NoConvergence(1_000_000))
    }

    /// Deterministic implicit objective `(1/m) sum_i h_i(x, z(x), E[xi])`.
    pub fn implicit_value_at_mean(&self, x: &[f64]) -> Result<f64> {
        let z = self.deterministic_lower_solution(x, 1e-13)?;
        let xi = self.xi_mean();
        let m = self.m() as f64;
        Ok((0..self.m()).map(|i| self.objective(i, x, &z, &xi)).sum::<f64>() / m)
    }

    /// Empirical Lipschitz constants of `x -> h_i(x, z(x), xi)` and of
    /// `z -> h_i(x, z, xi)` over the box `[-half_width, half_width]`.
    ///
    /// Half of the pairs are far apart, half are local (radius 1e-3 of the box),
    /// so both global and local slopes are probed. The result is an estimate.
    pub fn estimate_lipschitz(&self, half_width: f64, pairs: usize, seed: u64) -> Result<(f64, f64)> {
        if !(half_width > 0.0) || pairs == 0 {
            return Err(Error::InvalidArgument(
                "Lipschitz estimation needs half_width > 0 and pairs >= 1".into(),
            ));
        }
        let mut rng = rng::from_seed(seed);
        let uniform = |rng: &mut StreamRng, dim: usize| -> Vec<f64> {
            (0..dim).map(|_| rng.random_range(-half_width..half_width)).collect()
        };
        let mut l0: f64 = 0.0;
        let mut l0_tilde: f64 = 0.0;
        for k in 0..pairs {
            let agent = k % self.m();
            let xi = self.draw_xi(&mut rng);
            let local = k % 2 == 1;

            let x1 = uniform(&mut rng, self.n);
            let x2 = if local {
                let d = uniform(&mut rng, self.n);
                add(&x1, &d.iter().map(|v| v * 1e-3).collect::<Vec<_>>())
            } else {
                uniform(&mut rng, self.n)
            };
            let dx = dist(&x1, &x2);
            if dx > 0.0 {
                let z1 = self.deterministic_lower_solution(&x1, 1e-13)?;
                let z2 = self.deterministic_lower_solution(&x2, 1e-13)?;
                let h1 = self.objective(agent, &x1, &z1, &xi);
                let h2 = self.objective(agent, &x2, &z2, &xi);
                l0 = l0.max((h1 - h2).abs() / dx);
            }

            let z1 = uniform(&mut rng, self.p);
            let z2 = if local {
                let d = uniform(&mut rng, self.p);
                add(&z1, &d.iter().map(|v| v * 1e-3).collect::<Vec<_>>())
            } else {
                uniform(&mut rng, self.p)
            };
            let dz = dist(&z1, &z2);
            if dz > 0.0 {
                let h1 = self.objective(agent, &x1, &z1, &xi);
                let h2 = self.objective(agent, &x1, &z2, &xi);
                l0_tilde = l0_tilde.max((h1 - h2).abs() / dz);
            }
        }
        Ok((l0, l0_tilde))
    }
}

/// Benchmark upper objective `-c1 x1^2 - c2 x2 - xi y1 + y2^2`; the reference
/// coefficients are `c1 = 1`, `c2 = 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkObjective {
    pub c1: f64,
    pub c2: f64,
}

impl Default for BenchmarkObjective {
    fn default() -> Self {
        Self { c1: 1.0, c2: 3.0 }
    }
}

impl LocalObjective for BenchmarkObjective {
    fn value(&self, x: &[f64], y: &[f64], xi: &[f64]) -> f64 {
        -self.c1 * x[0] * x[0] - self.c2 * x[1] - xi[0] * y[0] + y[1] * y[1]
    }
}

/// y-gradient of the benchmark lower objective `2x1^2 + y1^2 + y2^2 - zeta y2`.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkLowerMap;

impl LowerMap for BenchmarkLowerMap {
    fn value(&self, _x: &[f64], y: &[f64], zeta: &[f64]) -> Vec<f64> {
        vec![2.0 * y[0], 2.0 * y[1] - zeta[0]]
    }
}

/// Lower-level feasible set of the benchmark:
/// `y >= 0`, `-2y1 + y2 >= -3 - x1^2 + 2x1 - x2^2`, `3y1 - y2 >= 4 - x2`.
pub fn benchmark_feasible_set() -> FeasibleSet {
    FeasibleSet::Halfspaces(ParametricHalfspaces::new(
        2,
        vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-2.0, 1.0],
            vec![3.0, -1.0],
        ],
        |x: &[f64]| {
            vec![
                0.0,
                0.0,
                -3.0 - x[0] * x[0] + 2.0 * x[0] - x[1] * x[1],
                4.0 - x[1],
            ]
        },
    ))
}

/// The bilevel benchmark with `m` identical agents.
pub fn builtin_benchmark(m: usize, noise_xi: NoiseModel, noise_zeta: NoiseModel) -> Result<SmpecInstance> {
    benchmark_with_objectives(m, vec![BenchmarkObjective::default(); m], noise_xi, noise_zeta)
}

/// Benchmark variant where each agent's `c1`, `c2` are scaled by `1 + spread * d_i`
/// with `d_i` standard normal draws re-centered to zero mean, so the network
/// average objective is unchanged. This heterogeneity is an extension.
pub fn benchmark_with_heterogeneity(
    m: usize,
    noise_xi: NoiseModel,
    noise_zeta: NoiseModel,
    spread: f64,
    seed: u64,
) -> Result<SmpecInstance> {
    if m == 0 {
        return Err(Error::InvalidArgument("agent count must be at least 1".into()));
    }
    let mut rng = rng::from_seed(rng::derive(seed, &[0x4845_5445]));
    let centered = |rng: &mut StreamRng| -> Vec<f64> {
        let d: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let mean = d.iter().sum::<f64>() / m as f64;
        d.into_iter().map(|v| v - mean).collect()
    };
    let d1 = centered(&mut rng);
    let d2 = centered(&mut rng);
    let base = BenchmarkObjective::default();
    let objectives = (0..m)
        .map(|i| BenchmarkObjective {
            c1: base.c1 * (1.0 + spread * d1[i]),
            c2: base.c2 * (1.0 + spread * d2[i]),
        })
        .collect();
    benchmark_with_objectives(m, objectives, noise_xi, noise_zeta)
}

fn benchmark_with_objectives(
    m: usize,
    objectives: Vec<BenchmarkObjective>,
    noise_xi: NoiseModel,
    noise_zeta: NoiseModel,
) -> Result<SmpecInstance> {
    if m == 0 {
        return Err(Error::InvalidArgument("agent count must be at least 1".into()));
    }
    let objectives = objectives
        .into_iter()
        .map(|o| Arc::new(o) as Arc<dyn LocalObjective>)
        .collect();
    SmpecInstance::new(
        "benchmark",
        2,
        2,
        objectives,
        Arc::new(BenchmarkLowerMap),
        benchmark_feasible_set(),
        (noise_xi.with_stream(1), 1),
        (noise_zeta.with_stream(2), 1),
        2.0,
        2.0,
    )
}

/// Local objective `0.5 * s * |x - a|^2 + (1 + xi) * c . z` of the synthetic instance.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub scale: f64,
    pub anchor: Vec<f64>,
    pub coupling: Vec<f64>,
}

impl LocalObjective for QuadraticObjective {
    fn value(&self, x: &[f64], z: &[f64], xi: &[f64]) -> f64 {
        0.5 * self.scale * norm_sq(&sub(x, &self.anchor)) + (1.0 + xi[0]) * dot(&self.coupling, z)
    }
}

/// Affine map `F(x, z, zeta) = A z + B x + b + zeta`.
#[derive(Debug, Clone)]
pub struct AffineLowerMap {
    pub a: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
}

impl LowerMap for AffineLowerMap {
    fn value(&self, x: &[f64], z: &[f64], zeta: &[f64]) -> Vec<f64> {
        let az = &self.a * DVector::from_column_slice(z);
        let bx = &self.b_mat * DVector::from_column_slice(x);
        (0..self.a.nrows())
            .map(|r| az[r] + bx[r] + self.b_vec[r] + zeta[r])
            .collect()
    }
}

/// Test fixture with an affine, strongly monotone lower level and quadratic
/// upper objectives. On `Z = R^p` everything has a closed form:
/// `z(x) = -A^{-1}(Bx + b)`, and each `f_i` is quadratic, so ball smoothing
/// only shifts its value by a constant.
#[derive(Debug, Clone)]
pub struct SyntheticQuadratic {
    map: AffineLowerMap,
    a_inv: DMatrix<f64>,
    objectives: Vec<QuadraticObjective>,
    noise_xi: NoiseModel,
    noise_zeta: NoiseModel,
    set: FeasibleSet,
    mu_f: f64,
    l_f: f64,
}

impl SyntheticQuadratic {
    pub fn new(
        a: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        b_vec: DVector<f64>,
        objectives: Vec<QuadraticObjective>,
    ) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p || b_mat.nrows() != p || b_vec.len() != p {
            return Err(Error::InvalidArgument("inconsistent affine map shapes".into()));
        }
        let n = b_mat.ncols();
        if objectives.is_empty()
            || objectives
                .iter()
                .any(|o| o.anchor.len() != n || o.coupling.len() != p)
        {
            return Err(Error::InvalidArgument("objective shapes must match (n, p)".into()));
        }
        if (&a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
            return Err(Error::InvalidArgument("A must be symmetric".into()));
        }
        let eig = a.clone().symmetric_eigen();
        let mu_f = eig.eigenvalues.min();
        let l_f = eig.eigenvalues.max();
        if !(mu_f > 0.0) {
            return Err(Error::InvalidArgument("A must be positive definite".into()));
        }
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("A is singular".into()))?;
        Ok(Self {
            map: AffineLowerMap { a, b_mat, b_vec },
            a_inv,
            objectives,
            noise_xi: NoiseModel::deterministic(0.0),
            noise_zeta: NoiseModel::deterministic(0.0),
            set: FeasibleSet::Whole { dim: p },
            mu_f,
            l_f,
        })
    }

    /// Random instance: `A = M M^T / p + I`, Gaussian `B`, `b`, anchors and
    /// couplings, scales uniform in `[0.5, 1.5]`.
    pub fn random(n: usize, p: usize, m: usize, seed: u64) -> Result<Self> {
        if n == 0 || p == 0 || m == 0 {
            return Err(Error::InvalidArgument("n, p, m must all be at least 1".into()));
        }
        let mut rng = rng::from_seed(rng::derive(seed, &[0x5359_4e54]));
        let normal = |rng: &mut StreamRng| -> f64 { rng.sample(StandardNormal) };
        let mm = DMatrix::from_fn(p, p, |_, _| normal(&mut rng));
        let a = &mm * mm.transpose() / p as f64 + DMatrix::identity(p, p);
        let a = (&a + a.transpose()) * 0.5;
        let b_mat = DMatrix::from_fn(p, n, |_, _| normal(&mut rng));
        let b_vec = DVector::from_fn(p, |_, _| normal(&mut rng));
        let objectives = (0..m)
            .map(|_| QuadraticObjective {
                scale: rng.random_range(0.5..1.5),
                anchor: (0..n).map(|_| normal(&mut rng)).collect(),
                coupling: (0..p).map(|_| normal(&mut rng)).collect(),
            })
            .collect();
        Self::new(a, b_mat, b_vec, objectives)
    }

    pub fn with_noise(mut self, noise_xi: NoiseModel, noise_zeta: NoiseModel) -> Self {
        self.noise_xi = noise_xi;
        self.noise_zeta = noise_zeta;
        self
    }

    /// Replaces `R^p` by a box; closed forms are then no longer attached.
    pub fn with_box(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        self.set = FeasibleSet::boxed(lower, upper)?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.map.b_mat.ncols()
    }
    pub fn p(&self) -> usize {
        self.map.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.objectives.len()
    }
    pub fn map(&self) -> &AffineLowerMap {
        &self.map
    }
    pub fn objectives(&self) -> &[QuadraticObjective] {
        &self.objectives
    }
    pub fn mu_f(&self) -> f64 {
        self.mu_f
    }
    pub fn l_f(&self) -> f64 {
        self.l_f
    }

    fn zeta_mean(&self) -> DVector<f64> {
        DVector::from_element(self.p(), self.noise_zeta.mean)
    }

    /// Solution of the unconstrained mean-map VI: `-A^{-1}(Bx + b + E[zeta])`.
    pub fn lower_solution(&self, x: &[f64]) -> Vec<f64> {
        let rhs = &self.map.b_mat * DVector::from_column_slice(x) + &self.map.b_vec + self.zeta_mean();
        (-(&self.a_inv * rhs)).as_slice().to_vec()
    }

    /// Lipschitz constant of `h_i` in `z`, in the root-mean-square sense over
    /// `xi`: `max_i |c_i| sqrt((1 + E xi)^2 + Var xi)`.
    pub fn l0_tilde(&self) -> f64 {
        let factor = ((1.0 + self.noise_xi.mean).powi(2) + self.noise_xi.variance()).sqrt();
        self.objectives
            .iter()
            .map(|o| norm_sq(&o.coupling).sqrt() * factor)
            .fold(0.0, f64::max)
    }

    pub fn implicit_value(&self, x: &[f64]) -> f64 {
        let z = self.lower_solution(x);
        let w = 1.0 + self.noise_xi.mean;
        self.objectives
            .iter()
            .map(|o| 0.5 * o.scale * norm_sq(&sub(x, &o.anchor)) + w * dot(&o.coupling, &z))
            .sum::<f64>()
            / self.m() as f64
    }

    /// Gradient of agent `i`'s implicit objective.
    pub fn local_gradient(&self, agent: usize, x: &[f64]) -> Vec<f64> {
        let o = &self.objectives[agent];
        let w = 1.0 + self.noise_xi.mean;
        // d/dx c . z(x) = -B^T A^{-1} c
        let back = self.map.b_mat.transpose() * (&self.a_inv * DVector::from_column_slice(&o.coupling));
        x.iter()
            .zip(&o.anchor)
            .enumerate()
            .map(|(k, (xk, ak))| o.scale * (xk - ak) - w * back[k])
            .collect()
    }

    pub fn implicit_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n()];
        for i in 0..self.m() {
            for (gk, v) in g.iter_mut().zip(self.local_gradient(i, x)) {
                *gk += v;
            }
        }
        g.iter().map(|v| v / self.m() as f64).collect()
    }

    /// Ball-smoothed value: a quadratic `0.5 s |x|^2` picks up `0.5 s eta^2 n/(n+2)`.
    pub fn smoothed_value(&self, x: &[f64], eta: f64) -> f64 {
        let n = self.n() as f64;
        let mean_scale = self.objectives.iter().map(|o| o.scale).sum::<f64>() / self.m() as f64;
        self.implicit_value(x) + 0.5 * mean_scale * eta * eta * n / (n + 2.0)
    }

    pub fn instance(&self) -> Result<SmpecInstance> {
        let objectives = self
            .objectives
            .iter()
            .map(|o| Arc::new(o.clone()) as Arc<dyn LocalObjective>)
            .collect();
        let p = self.p();
        let inst = SmpecInstance::new(
            "synthetic",
            self.n(),
            p,
            objectives,
            Arc::new(self.map.clone()),
            self.set.clone(),
            (self.noise_xi.with_stream(1), 1),
            (self.noise_zeta.with_stream(2), p),
            self.mu_f,
            self.l_f,
        )?;
        Ok(match self.set {
            FeasibleSet::Whole { .. } => inst.with_analytic(Arc::new(self.clone())),
            _ => inst,
        })
    }
}

impl AnalyticImplicit for SyntheticQuadratic {
    fn lower_solution(&self, x: &[f64]) -> Vec<f64> {
        SyntheticQuadratic::lower_solution(self, x)
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.implicit_value(x)
    }
    fn smoothed_gradient(&self, x: &[f64], _eta: f64) -> Vec<f64> {
        self.implicit_gradient(x)
    }
}

/// Random synthetic instance with closed-form ground truth.
pub fn synthetic_quadratic_instance(n: usize, p: usize, m: usize, seed: u64) -> Result<SmpecInstance> {
    SyntheticQuadratic::random(n, p, m, seed)?.instance()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::norm;

    fn benchmark(m: usize) -> SmpecInstance {
        builtin_benchmark(
            m,
            NoiseModel::normal(DEFAULT_NOISE_MEAN, DEFAULT_NOISE_STD).unwrap(),
            NoiseModel::normal(DEFAULT_NOISE_MEAN, DEFAULT_NOISE_STD).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn benchmark_map_examples() {
        let inst = benchmark(3);
        assert_eq!((inst.n(), inst.p(), inst.m()), (2, 2, 3));
        assert_eq!(inst.lower_map(&[0.3, -1.0], &[0.0, 0.0], &[0.0]), vec![0.0, 0.0]);
        assert_eq!(inst.lower_map(&[0.3, -1.0], &[1.0, 2.0], &[1.0]), vec![2.0, 3.0]);
        assert_eq!((inst.mu_f(), inst.l_f()), (2.0, 2.0));
    }

    #[test]
    fn benchmark_rejects_zero_agents() {
        let nz = NoiseModel::deterministic(1.0);
        assert!(builtin_benchmark(0, nz, nz).is_err());
    }

    #[test]
    fn benchmark_objective_matches_formula() {
        let inst = benchmark(1);
        let v = inst.objective(0, &[1.0, 2.0], &[0.5, 3.0], &[2.0]);
        assert_eq!(v, -1.0 - 6.0 - 1.0 + 9.0);
    }

    #[test]
    fn noise_with_zero_std_returns_mean() {
        let nm = NoiseModel::normal(0.7, 0.0).unwrap();
        let mut r = rng::from_seed(3);
        assert!((0..100).all(|_| nm.draw(&mut r) == 0.7));
        assert!(NoiseModel::normal(0.0, -1.0).is_err());
    }

    #[test]
    fn noise_draws_are_reproducible() {
        let nm = NoiseModel::normal(1.0, 0.5).unwrap();
        let a = nm.draw_vec(&mut rng::from_seed(9), 20);
        let b = nm.draw_vec(&mut rng::from_seed(9), 20);
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_identity_has_zero_solution() {
        let sq = SyntheticQuadratic::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            vec![QuadraticObjective {
                scale: 1.0,
                anchor: vec![0.0, 0.0],
                coupling: vec![1.0, 1.0],
            }],
        )
        .unwrap();
        assert_eq!(sq.lower_solution(&[3.0, -2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn synthetic_diagonal_solve() {
        let sq = SyntheticQuadratic::new(
            DMatrix::identity(3, 3) * 2.0,
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            vec![QuadraticObjective {
                scale: 1.0,
                anchor: vec![0.0; 3],
                coupling: vec![0.0; 3],
            }],
        )
        .unwrap();
        let z = sq.lower_solution(&[1.0, 1.0, 1.0]);
        assert!(z.iter().all(|v| (v + 0.5).abs() < 1e-15));
        assert_eq!((sq.mu_f(), sq.l_f()), (2.0, 2.0));
    }

    #[test]
    fn synthetic_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = SyntheticQuadratic::new(
            a,
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            vec![QuadraticObjective {
                scale: 1.0,
                anchor: vec![0.0],
                coupling: vec![0.0, 0.0],
            }],
        );
        assert!(r.is_err());
    }

    #[test]
    fn synthetic_gradient_matches_central_differences() {
        let sq = SyntheticQuadratic::random(3, 2, 4, 17).unwrap();
        let x = [0.3, -0.7, 1.1];
        let g = sq.implicit_gradient(&x);
        let h = 1e-5;
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (sq.implicit_value(&xp) - sq.implicit_value(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "coordinate {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn deterministic_solution_is_a_fixed_point() {
        let inst = benchmark(1);
        let x = [0.4, -0.2];
        let z = inst.deterministic_lower_solution(&x, 1e-14).unwrap();
        let f = inst.mean_lower_map(&x, &z);
        let trial: Vec<f64> = z.iter().zip(&f).map(|(a, b)| a - 0.1 * b).collect();
        let back = inst.project(&x, &trial).unwrap();
        assert!(norm(&sub(&back, &z)) < 1e-12);
    }

    #[test]
    fn lipschitz_estimate_is_positive_and_finite() {
        let inst = benchmark(2);
        let (l0, l0t) = inst.estimate_lipschitz(2.0, 200, 1).unwrap();
        assert!(l0.is_finite() && l0 > 3.0, "l0 = {l0}");
        assert!(l0t.is_finite() && l0t > 0.5, "l0t = {l0t}");
    }

    #[test]
    fn heterogeneous_benchmark_keeps_average_objective() {
        let nz = NoiseModel::deterministic(1.0);
        let het = benchmark_with_heterogeneity(6, nz, nz, 0.3, 4).unwrap();
        let hom = builtin_benchmark(6, nz, nz).unwrap();
        let x = [0.7, -0.4];
        let z = [1.2, 0.3];
        let avg = |inst: &SmpecInstance| (0..6).map(|i| inst.objective(i, &x, &z, &[1.0])).sum::<f64>() / 6.0;
        assert!((avg(&het) - avg(&hom)).abs() < 1e-12);
        assert_ne!(het.objective(0, &x, &z, &[1.0]), hom.objective(0, &x, &z, &[1.0]));
    }
}
