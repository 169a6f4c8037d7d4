//! Python bindings for the simulator core.
//!
//! Vectors cross the boundary as Python lists of floats and matrices as lists
//! of rows. Configuration and range errors raise `ValueError`, everything else
//! `RuntimeError`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use dzgt_core::driver::{self, InitConfig, RunConfig};
use dzgt_core::harness;
use dzgt_core::network::{self, Topology};
use dzgt_core::problem::{self, NoiseModel, SmpecInstance, SyntheticQuadratic};
use dzgt_core::rng;
use dzgt_core::smoothing;
use dzgt_core::theory::{self, TheoryInputs};
use dzgt_core::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_config_error() || matches!(e, Error::InvalidArgument(_) | Error::InvalidBeta { .. }) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// A bilevel problem instance shared by `m` agents.
#[pyclass(name = "Instance", module = "dzgt", frozen)]
struct PyInstance {
    inner: SmpecInstance,
}

#[pymethods]
impl PyInstance {
    /// Built-in two-dimensional benchmark.
    #[staticmethod]
    #[pyo3(signature = (m, xi_mean = 1.0, xi_std = 0.1, zeta_mean = 1.0, zeta_std = 0.1))]
    fn benchmark(m: usize, xi_mean: f64, xi_std: f64, zeta_mean: f64, zeta_std: f64) -> PyResult<Self> {
        let nxi = NoiseModel::normal(xi_mean, xi_std).map_err(to_py)?;
        let nz = NoiseModel::normal(zeta_mean, zeta_std).map_err(to_py)?;
        let inner = problem::builtin_benchmark(m, nxi, nz).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Random affine-quadratic instance with closed-form lower level.
    #[staticmethod]
    #[pyo3(signature = (n, p, m, seed, xi_std = 0.0, zeta_std = 0.0))]
    fn synthetic(n: usize, p: usize, m: usize, seed: u64, xi_std: f64, zeta_std: f64) -> PyResult<Self> {
        let inner = SyntheticQuadratic::random(n, p, m, seed)
            .map_err(to_py)?
            .with_noise(
                NoiseModel::normal(0.0, xi_std).map_err(to_py)?,
                NoiseModel::normal(0.0, zeta_std).map_err(to_py)?,
            )
            .instance()
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }
    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }
    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }
    #[getter]
    fn mu_f(&self) -> f64 {
        self.inner.mu_f()
    }
    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    /// Local objective of `agent` at `(x, z, xi)`.
    fn objective(&self, agent: usize, x: Vec<f64>, z: Vec<f64>, xi: Vec<f64>) -> PyResult<f64> {
        if agent >= self.inner.m() || x.len() != self.inner.n() || z.len() != self.inner.p() || xi.len() != self.inner.xi_dim() {
            return Err(PyValueError::new_err("agent index or vector length out of range"));
        }
        Ok(self.inner.objective(agent, &x, &z, &xi))
    }

    /// Lower-level solution at `x` with the noise frozen at its mean.
    #[pyo3(signature = (x, tol = 1e-12))]
    fn lower_solution(&self, x: Vec<f64>, tol: f64) -> PyResult<Vec<f64>> {
        self.inner.deterministic_lower_solution(&x, tol).map_err(to_py)
    }

    /// Implicit objective at `x` with the noise frozen at its mean.
    fn implicit_value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.implicit_value_at_mean(&x).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(name={:?}, n={}, p={}, m={})",
            self.inner.name(),
            self.inner.n(),
            self.inner.p(),
            self.inner.m()
        )
    }
}

/// Doubly stochastic mixing matrix of a communication graph.
#[pyclass(name = "MixingMatrix", module = "dzgt", frozen)]
struct PyMixing {
    inner: network::MixingMatrix,
}

#[pymethods]
impl PyMixing {
    /// `topology` is "ring", "sparse", "complete" or "edgelist" (with `edges`).
    #[new]
    #[pyo3(signature = (topology, m, seed = 0, uniform = true, edges = None))]
    fn new(topology: &str, m: usize, seed: u64, uniform: bool, edges: Option<Vec<(usize, usize)>>) -> PyResult<Self> {
        let t = match topology {
            "ring" => Topology::Ring,
            "sparse" => Topology::Sparse { seed },
            "complete" => Topology::Complete { uniform },
            "edgelist" => Topology::EdgeList(edges.ok_or_else(|| PyValueError::new_err("edgelist needs `edges`"))?),
            other => return Err(PyValueError::new_err(format!("unknown topology `{other}`"))),
        };
        let inner = network::build_mixing(&t, m).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho()
    }
    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }
    #[getter]
    fn topology(&self) -> &'static str {
        self.inner.topology().name()
    }
    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    /// The matrix as a list of rows.
    fn matrix(&self) -> Vec<Vec<f64>> {
        let w = self.inner.w();
        (0..w.nrows()).map(|i| w.row(i).iter().copied().collect()).collect()
    }

    /// Row-wise `W X`.
    fn mix(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        if rows.len() != self.inner.m() {
            return Err(PyValueError::new_err(format!("expected {} rows", self.inner.m())));
        }
        Ok(self.inner.mix(&rows))
    }

    fn __repr__(&self) -> String {
        format!("MixingMatrix({}, m={}, rho={})", self.inner.topology(), self.inner.m(), self.inner.rho())
    }
}

/// Uniform point on the radius-`eta` sphere in `R^n`.
#[pyfunction]
fn sample_sphere(n: usize, eta: f64, seed: u64) -> PyResult<Vec<f64>> {
    Ok(smoothing::sample_sphere(n, eta, &mut rng::from_seed(seed)).map_err(to_py)?.v)
}

/// Two-point estimate `n (h(x + v) - h(x)) / eta * v / |v|`.
#[pyfunction]
fn zo_estimate(h_at_x: f64, h_at_x_plus_v: f64, v: Vec<f64>, eta: f64) -> PyResult<Vec<f64>> {
    let n = v.len();
    let sample = smoothing::SphereSample { v, eta };
    Ok(smoothing::zo_estimate(h_at_x, h_at_x_plus_v, &sample, n).map_err(to_py)?.g)
}

/// Step-size constants of the convergence analysis, as a dict.
#[pyfunction]
#[pyo3(signature = (l0, l0_tilde, n, m, eta, rho, beta, alpha = 1.0, eps0 = 0.0, horizon = None))]
#[allow(clippy::too_many_arguments)]
fn theory_constants<'py>(
    py: Python<'py>,
    l0: f64,
    l0_tilde: f64,
    n: usize,
    m: usize,
    eta: f64,
    rho: f64,
    beta: f64,
    alpha: f64,
    eps0: f64,
    horizon: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let inputs = TheoryInputs {
        l0,
        l0_tilde,
        n,
        m,
        eta,
        rho,
        beta,
        alpha,
        eps0,
    };
    let c = theory::theory_constants(&inputs).map_err(to_py)?;
    let k = horizon.unwrap_or_else(|| c.horizon_min());
    let at = c.at_horizon(k);
    let d = PyDict::new(py);
    for (key, v) in [
        ("T1", c.t1),
        ("T2", c.t2),
        ("T3", c.t3),
        ("C0", c.c0),
        ("gamma_max", c.gamma_max),
        ("K_min", c.k_min),
        ("theta", c.theta),
        ("gamma", at.gamma),
        ("C1", at.c1),
        ("C2", at.c2),
        ("C3", at.c3),
        ("C4", at.c4),
    ] {
        d.set_item(key, v)?;
    }
    d.set_item("K", k)?;
    Ok(d)
}

/// One run of the network method. Returns a dict of per-epoch lists plus the
/// final iterates.
#[pyfunction]
#[pyo3(signature = (instance, mixing, gamma, eta, epochs, seed, spread = 1.0, eval_every = 0, eval_samples = 200, eval_inner_budget = 2000))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    mixing: &PyMixing,
    gamma: f64,
    eta: f64,
    epochs: usize,
    seed: u64,
    spread: f64,
    eval_every: usize,
    eval_samples: usize,
    eval_inner_budget: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfig::new(&instance.inner, gamma, eta, epochs, seed);
    cfg.init = InitConfig::SharedCenter { center_seed: seed, spread };
    cfg.eval.every = eval_every;
    cfg.eval.samples = eval_samples;
    cfg.eval.inner_budget = eval_inner_budget;
    let rec = py
        .detach(|| driver::run(&instance.inner, &mixing.inner, &cfg))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    let col = |f: &dyn Fn(&driver::EpochMetrics) -> f64| rec.epochs.iter().map(f).collect::<Vec<f64>>();
    d.set_item("epoch", rec.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>())?;
    d.set_item("consensus_violation", col(&|e| e.consensus_violation))?;
    d.set_item("tracker_dispersion", col(&|e| e.tracker_dispersion))?;
    d.set_item("tracking_residual", col(&|e| e.tracking_residual))?;
    d.set_item("epsilon_estimate", col(&|e| e.epsilon_estimate))?;
    d.set_item("objective", rec.epochs.iter().map(|e| e.objective.map(|o| o.0)).collect::<Vec<_>>())?;
    d.set_item(
        "smoothed_grad_norm_sq",
        rec.epochs.iter().map(|e| e.smoothed_grad_norm_sq).collect::<Vec<_>>(),
    )?;
    d.set_item("x_bar", rec.epochs.iter().map(|e| e.x_bar.clone()).collect::<Vec<_>>())?;
    d.set_item("x", rec.final_state.x.clone())?;
    d.set_item("y", rec.final_state.y.clone())?;
    Ok(d)
}

/// Parses a TOML config and returns a short description of the sweep.
#[pyfunction]
fn validate_config<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyDict>> {
    let spec = harness::validate_config(text).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("combinations", spec.combinations())?;
    d.set_item("topologies", spec.topologies.iter().map(|t| t.name()).collect::<Vec<_>>())?;
    d.set_item("m", spec.m_values.clone())?;
    d.set_item("gamma", spec.gammas.clone())?;
    d.set_item("epochs", spec.epochs)?;
    d.set_item("repeats", spec.repeats)?;
    d.set_item("seed", spec.master_seed)?;
    d.set_item("output_dir", spec.output_dir.display().to_string())?;
    Ok(d)
}

/// Runs the sweep in a config file. Returns one dict per combination and
/// writes the usual files under the output directory.
#[pyfunction]
#[pyo3(signature = (path, out = None))]
fn run_experiment<'py>(py: Python<'py>, path: PathBuf, out: Option<PathBuf>) -> PyResult<Bound<'py, PyList>> {
    let mut spec = harness::load_config(&path).map_err(to_py)?;
    if let Some(dir) = out {
        spec.output_dir = dir;
    }
    let table = py.detach(|| harness::run_experiment(&spec)).map_err(to_py)?;
    let rows = PyList::empty(py);
    for r in &table.rows {
        let d = PyDict::new(py);
        d.set_item("topology", &r.topology)?;
        d.set_item("m", r.m)?;
        d.set_item("gamma", r.gamma)?;
        d.set_item("rho", r.rho)?;
        d.set_item("consensus_mean", r.consensus_mean())?;
        d.set_item("objective_initial_mean", r.initial_objective_mean())?;
        d.set_item("objective_final_mean", r.final_objective_mean())?;
        d.set_item("error", r.error.clone())?;
        rows.append(d)?;
    }
    Ok(rows)
}

#[pymodule]
pub fn dzgt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PyMixing>()?;
    m.add_function(wrap_pyfunction!(sample_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(zo_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(theory_constants, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
