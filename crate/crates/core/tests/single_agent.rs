//! With one agent and `W = [1]` the network scheme collapses to a plain
//! zeroth-order method. The reference below is written as a straight loop
//! over the same random streams and must agree bit for bit.

use rand_distr::{Distribution, StandardNormal};

use dzgt_core::driver::{self, InitConfig, RunConfig};
use dzgt_core::network::{build_mixing, Topology};
use dzgt_core::problem::{builtin_benchmark, NoiseModel, SmpecInstance, SyntheticQuadratic};
use dzgt_core::rng::{stream, Role};
use dzgt_core::smoothing::sample_sphere;

fn inner(inst: &SmpecInstance, x: &[f64], z0: &[f64], k: usize, seed: u64, role: Role) -> Vec<f64> {
    let mut rng = stream(seed, 0, role, k);
    let gamma_hat = 1.0 / inst.mu_f();
    let budget = (1..).find(|t: &usize| t * t > k).unwrap();
    let mut z = inst.project(x, z0).unwrap();
    for t in 0..budget {
        let zeta = inst.draw_zeta(&mut rng);
        let f = inst.lower_map(x, &z, &zeta);
        let a = gamma_hat / (t as f64 + 1.0 + 1.0);
        let trial: Vec<f64> = z.iter().zip(&f).map(|(z, g)| z - a * g).collect();
        z = inst.project(x, &trial).unwrap();
    }
    z
}

struct Oracle {
    g: Vec<f64>,
    z_base: Vec<f64>,
    z_pert: Vec<f64>,
}

fn oracle(inst: &SmpecInstance, x: &[f64], k: usize, seed: u64, eta: f64, z_base: &[f64], z_pert: &[f64]) -> Oracle {
    let n = inst.n();
    let xi = inst.draw_xi(&mut stream(seed, 0, Role::Xi, k));
    let v = sample_sphere(n, eta, &mut stream(seed, 0, Role::Sphere, k)).unwrap().v;
    let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
    let z1 = inner(inst, x, z_base, k, seed, Role::ZetaBase);
    let z2 = inner(inst, &xp, z_pert, k, seed, Role::ZetaPerturbed);
    let diff = inst.objective(0, &xp, &z2, &xi) - inst.objective(0, x, &z1, &xi);
    let len = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let scale = n as f64 * diff / eta;
    Oracle {
        g: v.iter().map(|c| scale * c / len).collect(),
        z_base: z1,
        z_pert: z2,
    }
}

/// Returns the iterate after every round, starting with the initial point.
fn reference(inst: &SmpecInstance, gamma: f64, eta: f64, epochs: usize, seed: u64, center_seed: u64) -> Vec<Vec<f64>> {
    let mut r = stream(center_seed, 0, Role::Center, 0);
    let c: Vec<f64> = (0..inst.n()).map(|_| StandardNormal.sample(&mut r)).collect();
    // With one agent e - mean(e) = 0, so the start is the center itself.
    let mut x = c;
    let zeros = vec![0.0; inst.p()];
    let first = oracle(inst, &x, 0, seed, eta, &zeros, &zeros);
    let mut y = first.g.clone();
    let mut g_prev = first.g;
    let (mut zb, mut zp) = (first.z_base, first.z_pert);
    let mut out = vec![x.clone()];
    for k in 1..=epochs {
        x = x.iter().zip(&y).map(|(a, b)| a - gamma * b).collect();
        let o = oracle(inst, &x, k, seed, eta, &zb, &zp);
        y = y.iter().zip(o.g.iter().zip(&g_prev)).map(|(y, (gn, go))| y + gn - go).collect();
        g_prev = o.g;
        zb = o.z_base;
        zp = o.z_pert;
        out.push(x.clone());
    }
    out
}

fn check(inst: &SmpecInstance, gamma: f64) {
    let (eta, epochs, seed, center_seed) = (0.1, 60, 0xABCD, 77);
    let w = build_mixing(&Topology::Ring, 1).unwrap();
    let mut cfg = RunConfig::new(inst, gamma, eta, epochs, seed);
    cfg.eval.every = 0;
    cfg.init = InitConfig::SharedCenter { center_seed, spread: 0.5 };
    let rec = driver::run(inst, &w, &cfg).unwrap();
    let expected = reference(inst, gamma, eta, epochs, seed, center_seed);
    assert_eq!(rec.epochs.len(), expected.len());
    for (e, x) in rec.epochs.iter().zip(&expected) {
        assert_eq!(&e.x_bar, x, "epoch {}", e.epoch);
        assert_eq!(e.consensus_violation, 0.0);
    }
    assert_eq!(&rec.final_state.x[0], expected.last().unwrap());
}

#[test]
fn benchmark_matches_straight_line_reference() {
    let noise = NoiseModel::normal(1.0, 0.1).unwrap();
    check(&builtin_benchmark(1, noise, noise).unwrap(), 1e-3);
}

#[test]
fn synthetic_matches_straight_line_reference() {
    let inst = SyntheticQuadratic::random(3, 2, 1, 5)
        .unwrap()
        .with_noise(NoiseModel::normal(0.0, 0.2).unwrap(), NoiseModel::normal(0.0, 0.5).unwrap())
        .instance()
        .unwrap();
    check(&inst, 0.05);
}
