//! Step-size and horizon constants from the convergence analysis.
//!
//! Pure arithmetic. `T1`, `T2`, `T3` are the positive roots of the quadratics
//! that keep `C1`, `C2` and `C3 / gamma` nonnegative, `C0 = min(T1, T2, T3)`,
//! and the admissible step for a horizon `K >= K_min` is `C0 / sqrt(K)`.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryInputs {
    pub l0: f64,
    pub l0_tilde: f64,
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub rho: f64,
    pub beta: f64,
    pub alpha: f64,
    pub eps0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovCoefficients {
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub inputs: TheoryInputs,
    pub theta: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub c0: f64,
    /// Largest step any admissible horizon can produce.
    pub gamma_max: f64,
    pub k_min: f64,
    /// `C1..C4` evaluated at `gamma_max`.
    pub at_gamma_max: LyapunovCoefficients,
}

impl TheoryInputs {
    /// Upper end of the admissible `beta` interval, `min(2/3, rho^-2 - 1)`.
    pub fn beta_upper(&self) -> f64 {
        if self.rho == 0.0 {
            2.0 / 3.0
        } else {
            (2.0 / 3.0f64).min(1.0 / (self.rho * self.rho) - 1.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::range(name, format!("must be positive and finite, got {v}")))
            }
        };
        pos("l0", self.l0)?;
        pos("eta", self.eta)?;
        pos("alpha", self.alpha)?;
        if !(self.l0_tilde >= 0.0 && self.l0_tilde.is_finite()) {
            return Err(Error::range("l0_tilde", "must be nonnegative"));
        }
        if !(self.eps0 >= 0.0 && self.eps0.is_finite()) {
            return Err(Error::range("eps0", "must be nonnegative"));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::range("n", "n and m must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::range("rho", format!("must lie in [0, 1), got {}", self.rho)));
        }
        let upper = self.beta_upper();
        if !(self.beta > 0.0 && self.beta < upper) {
            return Err(Error::InvalidBeta {
                beta: self.beta,
                upper,
            });
        }
        Ok(())
    }

    /// Shorthand values shared by every formula.
    fn common(&self) -> (f64, f64) {
        (1.0 + 1.0 / self.beta, self.l0 * self.n as f64 / self.eta)
    }

    pub fn theta(&self) -> f64 {
        let n = self.n as f64;
        4.0 / self.beta * (4.0 * self.l0_tilde * self.l0_tilde * n * n / (self.eta * self.eta))
    }

    /// `C1..C4` at step `gamma` with `Q = alpha * gamma`.
    pub fn lyapunov_coefficients(&self, gamma: f64) -> LyapunovCoefficients {
        let (ib, r) = self.common();
        let (beta, alpha, rho2) = (self.beta, self.alpha, self.rho * self.rho);
        let m = self.m as f64;
        let n = self.n as f64;
        let q = alpha * gamma;
        let g2 = gamma * gamma;

        let c1 = 2.0 - 1.5 * beta - 2.0 * r * gamma - 8.0 * q * r * r * gamma * ib * ib;

        let c2 = 1.0
            - gamma / (2.0 * beta) * r * r / m
            - 2.0 * r / m * (-gamma + gamma * beta / 2.0 + r * g2)
            - (1.0 + beta) * rho2
            - 4.0 * q * r * r * ib * ib
            - q * r * r * rho2 * (1.0 + beta) * ib
            - 2.0 * q * r / m * 4.0 * r * r * g2 * ib * ib;

        let c3 = q - 2.0 * r * g2 - 3.0 * ib * g2 - q * (1.0 + beta) * rho2 - 4.0 * q * r * r * g2 * ib * ib;

        let lam = 1.0 - rho2;
        let noise = 2.0 * m * (n * n * self.l0 * self.l0 + 4.0 * self.l0_tilde * self.l0_tilde * n * n * self.eps0 / (self.eta * self.eta));
        let c4 = (2.0 * r * g2 + 6.0 * ib * g2 + 4.0 * r * r * g2 * ib * ib) * noise * (1.0 + 8.0 * (1.0 + rho2) / (lam * lam));

        LyapunovCoefficients { gamma, c1, c2, c3, c4 }
    }
}

/// Evaluates every constant for the given inputs.
pub fn theory_constants(inputs: &TheoryInputs) -> Result<TheoryConstants> {
    inputs.validate()?;
    let (ib, r) = inputs.common();
    let (beta, alpha, rho2) = (inputs.beta, inputs.alpha, inputs.rho * inputs.rho);
    let m = inputs.m as f64;

    // Each root is written as `2c / (-b + sqrt(b^2 - 4ac))`; the textbook form
    // cancels catastrophically once `r = L0 n / eta` is large.
    let delta = 16.0 * alpha * (1.0 - 0.75 * beta) * ib * ib;
    let t1 = delta / ((1.0 + delta).sqrt() + 1.0) / (8.0 * r * alpha * ib * ib);

    let a = -4.0 * alpha * r * r / m * ib * ib * (1.0 - 1.5 * beta) - 2.0 * r * r / m;
    let b = -r * r / (2.0 * beta * m) + r * (2.0 - beta) / m - 4.0 * alpha * r * r * ib * ib - alpha * r * r * rho2 * (1.0 + beta) * ib;
    let c = 1.0 - (1.0 + beta) * rho2;
    // a < 0 < c, so the roots have opposite signs.
    let disc2 = b * b - 4.0 * a * c;
    if disc2 < 0.0 {
        return Err(Error::NegativeDiscriminant("T2"));
    }
    let t2 = 2.0 * c / (disc2.sqrt() - b);

    let d = 2.0 * r + 3.0 * ib;
    let e = 16.0 * alpha * r * r * ib * ib * (alpha - (1.0 + beta) * rho2 * alpha);
    let disc3 = d * d + e;
    if disc3 < 0.0 {
        return Err(Error::NegativeDiscriminant("T3"));
    }
    let t3 = e / (disc3.sqrt() + d) / (8.0 * r * r * alpha * ib * ib);

    let c0 = t1.min(t2).min(t3);
    let shrink = 1.0 - 1.5 * beta;
    let k_min = c0 * c0 / (shrink * shrink) * 4.0 * r * r;
    let gamma_max = c0.min(shrink / (2.0 * r));

    Ok(TheoryConstants {
        inputs: *inputs,
        theta: inputs.theta(),
        t1,
        t2,
        t3,
        c0,
        gamma_max,
        k_min,
        at_gamma_max: inputs.lyapunov_coefficients(gamma_max),
    })
}

impl TheoryConstants {
    /// Smallest integer horizon the analysis admits.
    pub fn horizon_min(&self) -> usize {
        (self.k_min.ceil() as usize).max(1)
    }

    /// `gamma = C0 / sqrt(K)`.
    pub fn gamma_for_horizon(&self, k: usize) -> f64 {
        self.c0 / (k as f64).sqrt()
    }

    pub fn at_horizon(&self, k: usize) -> LyapunovCoefficients {
        self.inputs.lyapunov_coefficients(self.gamma_for_horizon(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed() -> TheoryInputs {
        TheoryInputs {
            l0: 1.0,
            l0_tilde: 1.0,
            n: 2,
            m: 5,
            eta: 0.1,
            rho: 0.5,
            beta: 0.1,
            alpha: 1.0,
            eps0: 1.0,
        }
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn t1_is_root_of_c1() {
        let inp = fixed();
        let tc = theory_constants(&inp).unwrap();
        let root = bisect(|g| inp.lyapunov_coefficients(g).c1, 0.0, 1.0);
        assert!((tc.t1 - root).abs() <= 1e-12 * root);
    }

    #[test]
    fn t3_is_root_of_c3_over_gamma() {
        let inp = fixed();
        let tc = theory_constants(&inp).unwrap();
        let f = |g: f64| inp.lyapunov_coefficients(g).c3 / g;
        let root = bisect(f, 1e-12, 1.0);
        assert!((tc.t3 - root).abs() <= 1e-10 * root);
    }

    #[test]
    fn t2_is_root_of_bounding_quadratic() {
        let inp = fixed();
        let tc = theory_constants(&inp).unwrap();
        // At T2 the cubic-bounded C2 vanishes, so the exact C2 is nonnegative
        // whenever T2 also respects the step cap.
        let cap = (1.0 - 1.5 * inp.beta) * inp.eta / (2.0 * inp.l0 * inp.n as f64);
        let g = tc.t2.min(cap);
        assert!(inp.lyapunov_coefficients(g).c2 >= -1e-12);
    }

    #[test]
    fn coefficients_nonnegative_at_admissible_steps() {
        let tc = theory_constants(&fixed()).unwrap();
        let k = tc.horizon_min();
        let c = tc.at_horizon(k);
        assert!(c.c1 >= 0.0 && c.c2 >= 0.0 && c.c3 >= 0.0 && c.c4 >= 0.0);
        let c = tc.at_gamma_max;
        assert!(c.c1 >= 0.0 && c.c2 >= 0.0 && c.c3 >= 0.0);
    }

    #[test]
    fn beta_outside_interval_is_rejected() {
        let mut inp = fixed();
        inp.beta = 0.7;
        assert!(matches!(theory_constants(&inp), Err(Error::InvalidBeta { .. })));
        inp.rho = 0.9;
        inp.beta = 0.3; // rho^-2 - 1 ~ 0.2346
        assert!(matches!(theory_constants(&inp), Err(Error::InvalidBeta { .. })));
        inp.beta = 0.0;
        assert!(theory_constants(&inp).is_err());
    }

    #[test]
    fn theta_formula() {
        let inp = fixed();
        assert!((inp.theta() - 4.0 / 0.1 * (4.0 * 4.0 / 0.01)).abs() < 1e-9);
    }
}
