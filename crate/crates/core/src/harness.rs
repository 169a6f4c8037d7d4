//! Config-driven experiment runner.
//!
//! A sweep covers every `(topology, m, gamma)` combination, repeated over
//! seeds. Each run writes a per-epoch CSV; the sweep also writes
//! `summary.csv` and `summary.md`.
//!
//! Seeds are split from the master seed with [`rng::derive`]:
//! the run seed is keyed by `(m, repeat)`, the shared starting center and the
//! evaluation streams by `repeat`. Runs that differ only in topology or step
//! size therefore see the same noise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::driver::{self, EvalConfig, InitConfig, RunConfig, TrajectoryRecord};
use crate::lower::{solve_inner, BudgetRule, InnerConfig};
use crate::network::{self, build_mixing, MixingMatrix, Topology};
use crate::problem::{benchmark_with_heterogeneity, builtin_benchmark, NoiseModel, SmpecInstance, SyntheticQuadratic};
use crate::rng::{self, Role};
use crate::theory::{theory_constants, TheoryConstants, TheoryInputs};
use crate::{Error, Result};

const CENTER_TAG: u64 = 0x4345_4e54;
const EVAL_TAG: u64 = 0x4556_414c;
const SPARSE_TAG: u64 = 0x5350_4152;
const LIPSCHITZ_TAG: u64 = 0x4c49_5053;

pub const RUN_CSV_HEADER: &str = "epoch,objective_mean,objective_se,consensus_violation,tracker_dispersion,inner_steps";

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceKind {
    Benchmark { heterogeneity: f64 },
    Synthetic { n: usize, p: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub xi_mean: f64,
    pub xi_std: f64,
    pub zeta_mean: f64,
    pub zeta_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Ring,
    /// Chords seeded by `seed`, or by the master seed when absent.
    Sparse { seed: Option<u64> },
    Complete { uniform: bool },
    EdgeList { path: PathBuf, edges: Vec<(usize, usize)> },
}

impl TopologySpec {
    pub fn name(&self) -> &'static str {
        match self {
            TopologySpec::Ring => "ring",
            TopologySpec::Sparse { .. } => "sparse",
            TopologySpec::Complete { .. } => "complete",
            TopologySpec::EdgeList { .. } => "edgelist",
        }
    }

    fn resolve(&self, master_seed: u64, m: usize) -> Topology {
        match self {
            TopologySpec::Ring => Topology::Ring,
            TopologySpec::Sparse { seed } => Topology::Sparse {
                seed: seed.unwrap_or_else(|| rng::derive(master_seed, &[SPARSE_TAG, m as u64])),
            },
            TopologySpec::Complete { uniform } => Topology::Complete { uniform: *uniform },
            TopologySpec::EdgeList { edges, .. } => Topology::EdgeList(edges.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed,
    /// `gamma = C0 / sqrt(K)` per `(topology, m)`.
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSettings {
    /// Defaults to `1 / mu_F` of the instance.
    pub gamma_hat: Option<f64>,
    pub big_gamma: f64,
    pub residual_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub every: usize,
    pub inner_budget: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheorySettings {
    /// Defaults to half the admissible upper end for each graph.
    pub beta: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub instance: InstanceKind,
    pub noise: NoiseSpec,
    pub topologies: Vec<TopologySpec>,
    pub m_values: Vec<usize>,
    pub gammas: Vec<f64>,
    pub step_rule: StepRule,
    pub eta: f64,
    pub epochs: usize,
    pub repeats: usize,
    pub master_seed: u64,
    pub inner: InnerSettings,
    pub warm_start: bool,
    pub init_spread: f64,
    pub eval: EvalSettings,
    pub theory: TheorySettings,
    pub output_dir: PathBuf,
    pub write_runs: bool,
    /// Worker threads for combinations; 0 lets rayon decide.
    pub parallel: usize,
}

impl ExperimentSpec {
    pub fn combinations(&self) -> usize {
        let g = match self.step_rule {
            StepRule::Fixed => self.gammas.len(),
            StepRule::Theory => 1,
        };
        self.topologies.len() * self.m_values.len() * g
    }

    pub fn build_instance(&self, m: usize) -> Result<SmpecInstance> {
        let nxi = NoiseModel::normal(self.noise.xi_mean, self.noise.xi_std)?;
        let nz = NoiseModel::normal(self.noise.zeta_mean, self.noise.zeta_std)?;
        match self.instance {
            InstanceKind::Benchmark { heterogeneity: 0.0 } => builtin_benchmark(m, nxi, nz),
            InstanceKind::Benchmark { heterogeneity } => {
                benchmark_with_heterogeneity(m, nxi, nz, heterogeneity, self.master_seed)
            }
            InstanceKind::Synthetic { n, p, seed } => SyntheticQuadratic::random(n, p, m, seed)?.with_noise(nxi, nz).instance(),
        }
    }

    pub fn build_mixing(&self, topology: &TopologySpec, m: usize) -> Result<MixingMatrix> {
        build_mixing(&topology.resolve(self.master_seed, m), m)
    }

    pub fn inner_config(&self, instance: &SmpecInstance) -> InnerConfig {
        InnerConfig {
            gamma_hat: self.inner.gamma_hat.unwrap_or(1.0 / instance.mu_f()),
            big_gamma: self.inner.big_gamma,
            budget: BudgetRule::SqrtCeil,
            residual_samples: self.inner.residual_samples,
        }
    }

    /// Per-run seed, shared across topologies and step sizes.
    pub fn run_seed(&self, m: usize, repeat: usize) -> u64 {
        rng::derive(self.master_seed, &[m as u64, repeat as u64])
    }

    pub fn run_config(&self, instance: &SmpecInstance, gamma: f64, repeat: usize) -> RunConfig {
        RunConfig {
            gamma,
            eta: self.eta,
            epochs: self.epochs,
            inner: self.inner_config(instance),
            warm_start: self.warm_start,
            seed: self.run_seed(instance.m(), repeat),
            init: InitConfig::SharedCenter {
                center_seed: rng::derive(self.master_seed, &[CENTER_TAG, repeat as u64]),
                spread: self.init_spread,
            },
            eval: EvalConfig {
                every: self.eval.every,
                inner_budget: self.eval.inner_budget,
                samples: self.eval.samples,
                seed: rng::derive(self.master_seed, &[EVAL_TAG, repeat as u64]),
            },
            parallel_agents: true,
        }
    }
}

// ---- config parsing ----

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    instance: RawInstance,
    noise: RawNoise,
    network: RawNetwork,
    algorithm: RawAlgorithm,
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawInstance {
    kind: String,
    n: i64,
    p: i64,
    seed: u64,
    heterogeneity: f64,
}

impl Default for RawInstance {
    fn default() -> Self {
        Self {
            kind: "benchmark".into(),
            n: 3,
            p: 4,
            seed: 0,
            heterogeneity: 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawNoise {
    xi_mean: f64,
    xi_std: f64,
    zeta_mean: f64,
    zeta_std: f64,
}

impl Default for RawNoise {
    fn default() -> Self {
        Self {
            xi_mean: 1.0,
            xi_std: 0.1,
            zeta_mean: 1.0,
            zeta_std: 0.1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawNetwork {
    topology: OneOrMany<String>,
    m: OneOrMany<i64>,
    sparse_seed: Option<u64>,
    complete_uniform: bool,
    edge_list: Option<String>,
}

impl Default for RawNetwork {
    fn default() -> Self {
        Self {
            topology: OneOrMany::One("complete".into()),
            m: OneOrMany::One(5),
            sparse_seed: None,
            complete_uniform: true,
            edge_list: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawAlgorithm {
    gamma: OneOrMany<f64>,
    step_rule: String,
    eta: f64,
    epochs: i64,
    repeats: i64,
    seed: u64,
    gamma_hat: Option<f64>,
    big_gamma: f64,
    residual_samples: i64,
    warm_start: bool,
    init_spread: f64,
    eval_every: i64,
    eval_inner_budget: i64,
    eval_samples: i64,
    theory_beta: Option<f64>,
    theory_alpha: f64,
}

impl Default for RawAlgorithm {
    fn default() -> Self {
        Self {
            gamma: OneOrMany::One(1e-5),
            step_rule: "fixed".into(),
            eta: 0.1,
            epochs: 100,
            repeats: 5,
            seed: 0,
            gamma_hat: None,
            big_gamma: 1.0,
            residual_samples: 0,
            warm_start: true,
            init_spread: 1.0,
            eval_every: 1,
            eval_inner_budget: 2000,
            eval_samples: 200,
            theory_beta: None,
            theory_alpha: 1.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    dir: String,
    write_runs: bool,
    parallel: i64,
}

impl Default for RawOutput {
    fn default() -> Self {
        Self {
            dir: "results".into(),
            write_runs: true,
            parallel: 0,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::range(field, format!("must be positive and finite, got {v}")))
    }
}

fn count(field: &str, v: i64, min: i64) -> Result<usize> {
    if v >= min {
        Ok(v as usize)
    } else {
        Err(Error::range(field, format!("must be at least {min}, got {v}")))
    }
}

/// Parses a TOML config; relative paths resolve against the working directory.
pub fn validate_config(text: &str) -> Result<ExperimentSpec> {
    validate_config_at(text, None)
}

/// Parses a TOML config; relative paths resolve against `base_dir` when given.
pub fn validate_config_at(text: &str, base_dir: Option<&Path>) -> Result<ExperimentSpec> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let resolve = |p: &str| match base_dir {
        Some(b) if Path::new(p).is_relative() => b.join(p),
        _ => PathBuf::from(p),
    };

    let instance = match raw.instance.kind.as_str() {
        "benchmark" => {
            let h = raw.instance.heterogeneity;
            if !(h >= 0.0 && h.is_finite()) {
                return Err(Error::range("instance.heterogeneity", "must be nonnegative"));
            }
            InstanceKind::Benchmark { heterogeneity: h }
        }
        "synthetic" => InstanceKind::Synthetic {
            n: count("instance.n", raw.instance.n, 1)?,
            p: count("instance.p", raw.instance.p, 1)?,
            seed: raw.instance.seed,
        },
        other => {
            return Err(Error::range(
                "instance.kind",
                format!("expected `benchmark` or `synthetic`, got `{other}`"),
            ))
        }
    };

    let noise = NoiseSpec {
        xi_mean: raw.noise.xi_mean,
        xi_std: raw.noise.xi_std,
        zeta_mean: raw.noise.zeta_mean,
        zeta_std: raw.noise.zeta_std,
    };
    for (field, v) in [("noise.xi_mean", noise.xi_mean), ("noise.zeta_mean", noise.zeta_mean)] {
        if !v.is_finite() {
            return Err(Error::range(field, "must be finite"));
        }
    }
    for (field, v) in [("noise.xi_std", noise.xi_std), ("noise.zeta_std", noise.zeta_std)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::range(field, format!("must be nonnegative, got {v}")));
        }
    }

    let m_values = raw
        .network
        .m
        .into_vec()
        .into_iter()
        .map(|m| count("network.m", m, 1))
        .collect::<Result<Vec<_>>>()?;
    if m_values.is_empty() {
        return Err(Error::range("network.m", "list must not be empty"));
    }

    let mut topologies = Vec::new();
    for name in raw.network.topology.into_vec() {
        topologies.push(match name.as_str() {
            "ring" => TopologySpec::Ring,
            "sparse" => TopologySpec::Sparse {
                seed: raw.network.sparse_seed,
            },
            "complete" => TopologySpec::Complete {
                uniform: raw.network.complete_uniform,
            },
            "edgelist" => {
                let path = raw
                    .network
                    .edge_list
                    .as_deref()
                    .map(resolve)
                    .ok_or_else(|| Error::range("network.edge_list", "required by topology `edgelist`"))?;
                let edges = network::load_edge_list(&path).map_err(|e| match e {
                    Error::Io(io) => Error::range("network.edge_list", format!("{}: {io}", path.display())),
                    other => other,
                })?;
                TopologySpec::EdgeList { path, edges }
            }
            other => {
                return Err(Error::range(
                    "network.topology",
                    format!("expected ring, sparse, complete or edgelist, got `{other}`"),
                ))
            }
        });
    }
    if topologies.is_empty() {
        return Err(Error::range("network.topology", "list must not be empty"));
    }

    let a = raw.algorithm;
    let gammas = a
        .gamma
        .into_vec()
        .into_iter()
        .map(|g| positive("algorithm.gamma", g))
        .collect::<Result<Vec<_>>>()?;
    let step_rule = match a.step_rule.as_str() {
        "fixed" => StepRule::Fixed,
        "theory" => StepRule::Theory,
        other => {
            return Err(Error::range(
                "algorithm.step_rule",
                format!("expected `fixed` or `theory`, got `{other}`"),
            ))
        }
    };
    if gammas.is_empty() && step_rule == StepRule::Fixed {
        return Err(Error::range("algorithm.gamma", "list must not be empty"));
    }
    let eta = positive("algorithm.eta", a.eta)?;
    let epochs = count("algorithm.epochs", a.epochs, 0)?;
    let repeats = count("algorithm.repeats", a.repeats, 1)?;
    if let Some(g) = a.gamma_hat {
        positive("algorithm.gamma_hat", g)?;
    }
    let big_gamma = positive("algorithm.big_gamma", a.big_gamma)?;
    if !(a.init_spread >= 0.0 && a.init_spread.is_finite()) {
        return Err(Error::range("algorithm.init_spread", "must be nonnegative"));
    }
    let eval = EvalSettings {
        every: count("algorithm.eval_every", a.eval_every, 0)?,
        inner_budget: count("algorithm.eval_inner_budget", a.eval_inner_budget, 1)?,
        samples: count("algorithm.eval_samples", a.eval_samples, 1)?,
    };
    if let Some(b) = a.theory_beta {
        positive("algorithm.theory_beta", b)?;
    }
    let theory = TheorySettings {
        beta: a.theory_beta,
        alpha: positive("algorithm.theory_alpha", a.theory_alpha)?,
    };

    let spec = ExperimentSpec {
        instance,
        noise,
        topologies,
        m_values,
        gammas,
        step_rule,
        eta,
        epochs,
        repeats,
        master_seed: a.seed,
        inner: InnerSettings {
            gamma_hat: a.gamma_hat,
            big_gamma,
            residual_samples: count("algorithm.residual_samples", a.residual_samples, 0)?,
        },
        warm_start: a.warm_start,
        init_spread: a.init_spread,
        eval,
        theory,
        output_dir: resolve(&raw.output.dir),
        write_runs: raw.output.write_runs,
        parallel: count("output.parallel", raw.output.parallel, 0)?,
    };

    // Every (topology, m) pair must be buildable and every instance must
    // accept the inner step.
    for &m in &spec.m_values {
        let inst = spec.build_instance(m).map_err(|e| Error::range("instance", e.to_string()))?;
        spec.inner_config(&inst)
            .validate(inst.mu_f())
            .map_err(|e| match e {
                Error::Range { message, .. } => Error::range("algorithm.gamma_hat", message),
                other => other,
            })?;
        for t in &spec.topologies {
            spec.build_mixing(t, m)
                .map_err(|e| Error::range("network.topology", format!("{} with m = {m}: {e}", t.name())))?;
        }
    }
    Ok(spec)
}

/// Reads and validates a config file; relative paths resolve against its directory.
pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)?;
    validate_config_at(&text, path.parent())
}

// ---- output formatting ----

/// C `printf("%.*g", precision, x)`.
pub fn format_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let p = precision.max(1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn g17(x: f64) -> String {
    format_g(x, 17)
}

/// Per-epoch CSV of one run.
pub fn run_csv(record: &TrajectoryRecord) -> String {
    let mut out = String::with_capacity(64 * (record.epochs.len() + 1));
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for e in &record.epochs {
        let (mean, se) = e.objective.unwrap_or((f64::NAN, f64::NAN));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.epoch,
            g17(mean),
            g17(se),
            g17(e.consensus_violation),
            g17(e.tracker_dispersion),
            e.inner_steps
        );
    }
    out
}

pub fn run_file_name(topology: &str, m: usize, gamma: f64, repeat: usize) -> String {
    format!("{topology}_m{m}_g{}_r{repeat}.csv", format_g(gamma, 6))
}

// ---- sweep ----

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub repeat: usize,
    pub final_consensus: f64,
    pub initial_objective: Option<f64>,
    pub final_objective: Option<f64>,
    pub csv_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub topology: String,
    pub m: usize,
    pub gamma: f64,
    pub rho: f64,
    pub seeds: Vec<SeedOutcome>,
    /// First failure message, if any repeat failed.
    pub error: Option<String>,
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl ResultRow {
    pub fn consensus_mean(&self) -> Option<f64> {
        mean_of(self.seeds.iter().map(|s| s.final_consensus))
    }
    pub fn initial_objective_mean(&self) -> Option<f64> {
        mean_of(self.seeds.iter().filter_map(|s| s.initial_objective))
    }
    pub fn final_objective_mean(&self) -> Option<f64> {
        mean_of(self.seeds.iter().filter_map(|s| s.final_objective))
    }
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn find(&self, topology: &str, m: usize, gamma: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.topology == topology && r.m == m && r.gamma == gamma)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }
}

struct Combo {
    topology: usize,
    m: usize,
    gamma: f64,
    mixing: std::result::Result<MixingMatrix, String>,
}

/// Theory constants for one `(topology, m)` pair.
#[derive(Debug, Clone)]
pub struct ConstantsRow {
    pub topology: String,
    pub m: usize,
    pub rho: f64,
    pub l0: f64,
    pub l0_tilde: f64,
    pub eps0: f64,
    pub beta: f64,
    pub constants: std::result::Result<TheoryConstants, String>,
}

fn theory_row(spec: &ExperimentSpec, topology: &TopologySpec, m: usize) -> Result<ConstantsRow> {
    let inst = spec.build_instance(m)?;
    let mixing = spec.build_mixing(topology, m)?;
    let (l0, l0_tilde) = match (inst.l0(), inst.l0_tilde()) {
        (Some(a), Some(b)) => (a, b),
        _ => inst.estimate_lipschitz(3.0, 2000, rng::derive(spec.master_seed, &[LIPSCHITZ_TAG]))?,
    };
    let x0 = vec![0.0; inst.n()];
    let z0 = vec![0.0; inst.p()];
    let eps0 = solve_inner(
        &inst,
        &x0,
        0,
        &spec.inner_config(&inst),
        &z0,
        &mut rng::stream(spec.master_seed, 0, Role::Evaluation, 0),
    )?
    .epsilon_estimate;
    let mut inputs = TheoryInputs {
        l0,
        l0_tilde,
        n: inst.n(),
        m,
        eta: spec.eta,
        rho: mixing.rho(),
        beta: 0.0,
        alpha: spec.theory.alpha,
        eps0,
    };
    inputs.beta = spec.theory.beta.unwrap_or_else(|| 0.5 * inputs.beta_upper());
    Ok(ConstantsRow {
        topology: topology.name().into(),
        m,
        rho: mixing.rho(),
        l0,
        l0_tilde,
        eps0,
        beta: inputs.beta,
        constants: theory_constants(&inputs).map_err(|e| e.to_string()),
    })
}

/// Theory constants for every `(topology, m)` pair of the spec.
pub fn constants_report(spec: &ExperimentSpec) -> Result<Vec<ConstantsRow>> {
    let mut rows = Vec::new();
    for t in &spec.topologies {
        for &m in &spec.m_values {
            rows.push(theory_row(spec, t, m)?);
        }
    }
    Ok(rows)
}

fn combos(spec: &ExperimentSpec) -> Result<Vec<Combo>> {
    let mut out = Vec::new();
    for (ti, t) in spec.topologies.iter().enumerate() {
        for &m in &spec.m_values {
            let mixing = spec.build_mixing(t, m).map_err(|e| e.to_string());
            let gammas = match spec.step_rule {
                StepRule::Fixed => spec.gammas.clone(),
                StepRule::Theory => {
                    let row = theory_row(spec, t, m)?;
                    match row.constants {
                        Ok(c) => vec![c.gamma_for_horizon(spec.epochs.max(1))],
                        Err(e) => {
                            out.push(Combo {
                                topology: ti,
                                m,
                                gamma: f64::NAN,
                                mixing: Err(format!("theory step rule: {e}")),
                            });
                            continue;
                        }
                    }
                }
            };
            for gamma in gammas {
                out.push(Combo {
                    topology: ti,
                    m,
                    gamma,
                    mixing: mixing.clone(),
                });
            }
        }
    }
    Ok(out)
}

fn run_one(spec: &ExperimentSpec, combo: &Combo, repeat: usize, runs_dir: &Path) -> Result<SeedOutcome> {
    let mixing = combo.mixing.as_ref().map_err(|e| Error::InvalidArgument(e.clone()))?;
    let inst = spec.build_instance(combo.m)?;
    let cfg = spec.run_config(&inst, combo.gamma, repeat);
    let record = driver::run(&inst, mixing, &cfg)?;
    let csv_path = if spec.write_runs {
        let name = run_file_name(spec.topologies[combo.topology].name(), combo.m, combo.gamma, repeat);
        let path = runs_dir.join(name);
        fs::write(&path, run_csv(&record))?;
        Some(path)
    } else {
        None
    };
    Ok(SeedOutcome {
        repeat,
        final_consensus: record.last().consensus_violation,
        initial_objective: record.epochs[0].objective.map(|o| o.0),
        final_objective: record.last().objective.map(|o| o.0),
        csv_path,
    })
}

/// Runs the whole sweep and writes all outputs under `spec.output_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    let runs_dir = spec.output_dir.join("runs");
    if spec.write_runs {
        fs::create_dir_all(&runs_dir)?;
    } else {
        fs::create_dir_all(&spec.output_dir)?;
    }
    let combos = combos(spec)?;
    let tasks: Vec<(usize, usize)> = (0..combos.len())
        .flat_map(|c| (0..spec.repeats).map(move |r| (c, r)))
        .collect();
    let work = || -> Vec<Result<SeedOutcome>> {
        tasks
            .par_iter()
            .map(|&(c, r)| run_one(spec, &combos[c], r, &runs_dir))
            .collect()
    };
    let results = if spec.parallel > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.parallel)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(work)
    } else {
        work()
    };

    let mut rows: Vec<ResultRow> = combos
        .iter()
        .map(|c| ResultRow {
            topology: spec.topologies[c.topology].name().into(),
            m: c.m,
            gamma: c.gamma,
            rho: c.mixing.as_ref().map_or(f64::NAN, |w| w.rho()),
            seeds: Vec::new(),
            error: None,
        })
        .collect();
    for (&(c, _), res) in tasks.iter().zip(results) {
        match res {
            Ok(outcome) => rows[c].seeds.push(outcome),
            Err(Error::Io(e)) => return Err(Error::Io(e)),
            Err(e) => {
                rows[c].error.get_or_insert(e.to_string());
            }
        }
    }
    let table = ResultTable { rows };
    fs::write(spec.output_dir.join("summary.csv"), summary_csv(&table))?;
    fs::write(spec.output_dir.join("summary.md"), summary_markdown(spec, &table))?;
    Ok(table)
}

pub fn summary_csv(table: &ResultTable) -> String {
    let mut out = String::from(
        "topology,m,gamma,rho,repeats,consensus_mean,consensus_per_seed,objective_initial_mean,objective_final_mean,status\n",
    );
    let opt = |v: Option<f64>| g17(v.unwrap_or(f64::NAN));
    for r in &table.rows {
        let per_seed = r
            .seeds
            .iter()
            .map(|s| g17(s.final_consensus))
            .collect::<Vec<_>>()
            .join(";");
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.topology,
            r.m,
            g17(r.gamma),
            g17(r.rho),
            r.seeds.len(),
            opt(r.consensus_mean()),
            per_seed,
            opt(r.initial_objective_mean()),
            opt(r.final_objective_mean()),
            status
        );
    }
    out
}

fn sci(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.4e}"),
        _ => "n/a".into(),
    }
}

fn title_case(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
        .unwrap_or_default()
}

/// Markdown tables laid out as setting rows by graph columns, one per step size.
pub fn summary_markdown(spec: &ExperimentSpec, table: &ResultTable) -> String {
    let mut out = String::new();
    let instance = match spec.instance {
        InstanceKind::Benchmark { .. } => "benchmark".to_string(),
        InstanceKind::Synthetic { n, p, .. } => format!("synthetic (n = {n}, p = {p})"),
    };
    let _ = writeln!(out, "# Experiment summary\n");
    let _ = writeln!(
        out,
        "Instance: {instance}; eta = {}; K = {}; repeats = {}; master seed = {}.\n",
        format_g(spec.eta, 6),
        spec.epochs,
        spec.repeats,
        spec.master_seed
    );
    let mut gammas: Vec<f64> = Vec::new();
    for r in &table.rows {
        if !gammas.iter().any(|g| g.to_bits() == r.gamma.to_bits()) {
            gammas.push(r.gamma);
        }
    }
    let names: Vec<&str> = spec.topologies.iter().map(TopologySpec::name).collect();
    let header = |out: &mut String| {
        let _ = write!(out, "| Setting |");
        for n in &names {
            let _ = write!(out, " {} graph |", title_case(n));
        }
        let _ = write!(out, "\n|---|");
        for _ in &names {
            let _ = write!(out, "---|");
        }
        out.push('\n');
    };
    let section = |out: &mut String, title: &str, value: &dyn Fn(&ResultRow) -> Option<f64>| {
        for &g in &gammas {
            let _ = writeln!(out, "## {title}, gamma = {}\n", format_g(g, 6));
            header(out);
            let mut ms: Vec<usize> = table.rows.iter().filter(|r| r.gamma.to_bits() == g.to_bits()).map(|r| r.m).collect();
            ms.sort_unstable();
            ms.dedup();
            for m in ms {
                let _ = write!(out, "| m = {m} |");
                for n in &names {
                    let cell = table
                        .rows
                        .iter()
                        .find(|r| r.topology == *n && r.m == m && r.gamma.to_bits() == g.to_bits())
                        .map_or("n/a".to_string(), |r| if r.ok() { sci(value(r)) } else { "failed".into() });
                    let _ = write!(out, " {cell} |");
                }
                out.push('\n');
            }
            out.push('\n');
        }
    };
    section(&mut out, "Final-epoch consensus violation (seed mean)", &|r| r.consensus_mean());
    section(&mut out, "Final implicit objective estimate (seed mean)", &|r| r.final_objective_mean());
    let failed: Vec<&ResultRow> = table.rows.iter().filter(|r| !r.ok()).collect();
    if !failed.is_empty() {
        let _ = writeln!(out, "## Failed combinations\n");
        for r in failed {
            let _ = writeln!(
                out,
                "- {} m = {} gamma = {}: {}",
                r.topology,
                r.m,
                format_g(r.gamma, 6),
                r.error.as_deref().unwrap_or("")
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_g_matches_printf() {
        // Expected strings produced by C printf.
        assert_eq!(format_g(0.1, 17), "0.10000000000000001");
        assert_eq!(format_g(1e-5, 17), "1.0000000000000001e-05");
        assert_eq!(format_g(100.0, 17), "100");
        assert_eq!(format_g(-1.3475, 17), "-1.3474999999999999");
        assert_eq!(format_g(1e20, 17), "1e+20");
        assert_eq!(format_g(123456789.0, 6), "1.23457e+08");
        assert_eq!(format_g(0.0001, 6), "0.0001");
        assert_eq!(format_g(1e-5, 6), "1e-05");
        assert_eq!(format_g(0.0, 17), "0");
        assert_eq!(format_g(f64::NAN, 17), "nan");
    }

    #[test]
    fn empty_config_gives_defaults() {
        let s = validate_config("").unwrap();
        assert_eq!(s.instance, InstanceKind::Benchmark { heterogeneity: 0.0 });
        assert_eq!(s.topologies, vec![TopologySpec::Complete { uniform: true }]);
        assert_eq!(s.m_values, vec![5]);
        assert_eq!(s.gammas, vec![1e-5]);
        assert_eq!(s.eta, 0.1);
        assert_eq!(s.epochs, 100);
        assert_eq!(s.repeats, 5);
    }

    #[test]
    fn negative_gamma_names_the_field() {
        match validate_config("[algorithm]\ngamma = -1\n") {
            Err(Error::Range { field, .. }) => assert_eq!(field, "algorithm.gamma"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let e = validate_config("[algorithm]\ngama = 1e-5\n").unwrap_err();
        assert!(matches!(e, Error::Parse(ref msg) if msg.contains("gama")));
        assert!(matches!(validate_config("[nope]\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn run_names_are_stable() {
        assert_eq!(run_file_name("ring", 10, 1e-5, 3), "ring_m10_g1e-05_r3.csv");
    }
}
