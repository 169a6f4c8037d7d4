//! Randomized sphere smoothing and the two-point zeroth-order estimator.
//!
//! For a continuous `h` and radius `eta > 0` the smoothed function is
//! `h_eta(x) = E_{u ~ unif(unit ball)} h(x + eta u)`, and its gradient is
//! `(n / eta) E_{v ~ unif(eta S)} [(h(x + v) - h(x)) v / |v|]`. The estimator
//! below is one sample of that expectation. The Monte-Carlo routines exist to
//! verify those identities, the drivers never need ball samples.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::vecops::norm;
use crate::{Error, Result};

/// A point drawn uniformly from the sphere of radius `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereSample {
    pub v: Vec<f64>,
    pub eta: f64,
}

impl SphereSample {
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// `v / |v|`.
    pub fn direction(&self) -> Vec<f64> {
        let len = norm(&self.v);
        self.v.iter().map(|c| c / len).collect()
    }
}

/// Whether a zeroth-order gradient was formed from exact or inexact lower-level
/// solutions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Exact,
    /// `epsilon` is the inner solver's accuracy estimate, when known.
    Inexact { epsilon: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoGradient {
    pub g: Vec<f64>,
    pub eta: f64,
    pub provenance: Provenance,
}

impl ZoGradient {
    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

fn unit_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&e);
        if len > 0.0 && len.is_finite() {
            return e.into_iter().map(|c| c / len).collect();
        }
    }
}

/// Uniform draw on the radius-`eta` sphere in `R^n` via normalized Gaussians.
pub fn sample_sphere<R: Rng + ?Sized>(n: usize, eta: f64, rng: &mut R) -> Result<SphereSample> {
    if n == 0 {
        return Err(Error::InvalidArgument("sphere dimension must be at least 1".into()));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::ZeroRadius);
    }
    let v = unit_direction(n, rng).into_iter().map(|c| c * eta).collect();
    Ok(SphereSample { v, eta })
}

/// Uniform draw from the radius-`eta` ball: a sphere direction scaled by
/// `eta * U^(1/n)`.
pub fn sample_ball<R: Rng + ?Sized>(n: usize, eta: f64, rng: &mut R) -> Result<Vec<f64>> {
    let dir = sample_sphere(n, 1.0, rng)?.v;
    let u: f64 = rng.random();
    let r = eta * u.powf(1.0 / n as f64);
    Ok(dir.into_iter().map(|c| c * r).collect())
}

/// Two-point estimator `(n (h(x + v) - h(x)) / eta) * v / |v|`.
///
/// The division by `eta` and by `|v|` are kept separate even though they
/// coincide in exact arithmetic.
pub fn zo_estimate(h_at_x: f64, h_at_x_plus_v: f64, v: &SphereSample, n: usize) -> Result<ZoGradient> {
    if !(v.eta > 0.0) {
        return Err(Error::ZeroRadius);
    }
    if v.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.dim(),
        });
    }
    let len = norm(&v.v);
    if len == 0.0 {
        return Err(Error::ZeroRadius);
    }
    let scale = n as f64 * (h_at_x_plus_v - h_at_x) / v.eta;
    Ok(ZoGradient {
        g: v.v.iter().map(|c| scale * c / len).collect(),
        eta: v.eta,
        provenance: Provenance::Exact,
    })
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McGradient {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Welford accumulator for one coordinate.
#[derive(Debug, Clone, Copy, Default)]
struct Running {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }

    fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}

/// Monte-Carlo estimate of `h_eta(x)` from `samples` uniform-ball draws.
pub fn smoothed_value_mc<R, H>(h: H, x: &[f64], eta: f64, samples: usize, rng: &mut R) -> Result<McEstimate>
where
    R: Rng + ?Sized,
    H: Fn(&[f64]) -> f64,
{
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut acc = Running::default();
    let mut point = vec![0.0; x.len()];
    for _ in 0..samples {
        let u = sample_ball(x.len(), eta, rng)?;
        for ((p, xi), ui) in point.iter_mut().zip(x).zip(&u) {
            *p = xi + ui;
        }
        acc.push(h(&point));
    }
    Ok(McEstimate {
        value: acc.mean,
        std_error: acc.std_error(),
    })
}

/// Monte-Carlo estimate of `grad h_eta(x)`, averaging [`zo_estimate`] over
/// `samples` fresh sphere draws.
pub fn smoothed_gradient_mc<R, H>(h: H, x: &[f64], eta: f64, samples: usize, rng: &mut R) -> Result<McGradient>
where
    R: Rng + ?Sized,
    H: Fn(&[f64]) -> f64,
{
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let n = x.len();
    let hx = h(x);
    let mut acc = vec![Running::default(); n];
    let mut point = vec![0.0; n];
    for _ in 0..samples {
        let v = sample_sphere(n, eta, rng)?;
        for ((p, xi), vi) in point.iter_mut().zip(x).zip(&v.v) {
            *p = xi + vi;
        }
        let g = zo_estimate(hx, h(&point), &v, n)?;
        for (a, gi) in acc.iter_mut().zip(&g.g) {
            a.push(*gi);
        }
    }
    Ok(McGradient {
        mean: acc.iter().map(|a| a.mean).collect(),
        std_error: acc.iter().map(Running::std_error).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn sphere_sample_has_exact_radius() {
        let mut r = rng::from_seed(1);
        for n in 1..6 {
            for _ in 0..200 {
                let s = sample_sphere(n, 0.37, &mut r).unwrap();
                assert!((norm(&s.v) - 0.37).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn one_dimensional_sphere_is_two_points() {
        let mut r = rng::from_seed(2);
        let draws = 10_000;
        let mut plus = 0usize;
        for _ in 0..draws {
            let s = sample_sphere(1, 0.5, &mut r).unwrap();
            assert!(s.v[0] == 0.5 || s.v[0] == -0.5);
            plus += usize::from(s.v[0] > 0.0);
        }
        let freq = plus as f64 / draws as f64;
        let sigma = (0.25 / draws as f64).sqrt();
        assert!((freq - 0.5).abs() <= 3.0 * sigma, "freq = {freq}");
    }

    #[test]
    fn sphere_rejects_bad_arguments() {
        let mut r = rng::from_seed(3);
        assert!(matches!(sample_sphere(2, 0.0, &mut r), Err(Error::ZeroRadius)));
        assert!(sample_sphere(0, 1.0, &mut r).is_err());
    }

    #[test]
    fn linear_function_identity() {
        let v = SphereSample {
            v: vec![1.0, 0.0],
            eta: 1.0,
        };
        let c = [3.0, 5.0];
        let x = [0.2, -0.4];
        let h = |p: &[f64]| c[0] * p[0] + c[1] * p[1];
        let g = zo_estimate(h(&x), h(&[x[0] + 1.0, x[1]]), &v, 2).unwrap();
        assert!((g.g[0] - 6.0).abs() < 1e-12 && g.g[1] == 0.0);
    }

    #[test]
    fn constant_function_gives_zero() {
        let mut r = rng::from_seed(4);
        for _ in 0..50 {
            let v = sample_sphere(3, 0.2, &mut r).unwrap();
            let g = zo_estimate(1.5, 1.5, &v, 3).unwrap();
            assert!(g.g.iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn zero_radius_is_rejected() {
        let v = SphereSample {
            v: vec![0.0, 0.0],
            eta: 0.0,
        };
        assert!(matches!(zo_estimate(0.0, 1.0, &v, 2), Err(Error::ZeroRadius)));
    }

    #[test]
    fn estimator_magnitude_identity() {
        let mut r = rng::from_seed(5);
        let v = sample_sphere(4, 0.3, &mut r).unwrap();
        let g = zo_estimate(1.0, 1.6, &v, 4).unwrap();
        let bound = 4.0 / 0.3 * 0.6;
        assert!((norm(&g.g) - bound).abs() <= 1e-12 * bound);
    }

    #[test]
    fn tiny_radius_smoothing_recovers_value() {
        let mut r = rng::from_seed(6);
        let h = |p: &[f64]| p[0].sin() + p[1] * p[1];
        let x = [0.4, 1.3];
        let est = smoothed_value_mc(h, &x, 1e-8, 1000, &mut r).unwrap();
        assert!(((est.value - h(&x)) / h(&x)).abs() < 1e-6);
    }
}
