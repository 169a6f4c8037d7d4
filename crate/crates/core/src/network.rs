//! Communication graphs and their doubly stochastic mixing matrices.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Topology {
    /// Cycle through all agents.
    Ring,
    /// Ring plus `floor(m / 5)` chords. Chords come from `seed`, except for
    /// `m = 10`, which uses the fixed chords `(0, 5)` and `(2, 7)`.
    Sparse { seed: u64 },
    /// All pairs. `uniform` selects `W = 11^T / m`; otherwise lazy Metropolis.
    Complete { uniform: bool },
    /// Undirected 0-indexed edges.
    EdgeList(Vec<(usize, usize)>),
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Ring => "ring",
            Topology::Sparse { .. } => "sparse",
            Topology::Complete { .. } => "complete",
            Topology::EdgeList(_) => "edgelist",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Symmetric doubly stochastic `W` together with `rho = |W - 11^T/m|_2`.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    rho: f64,
    topology: Topology,
    edges: Vec<(usize, usize)>,
}

impl MixingMatrix {
    /// Wraps an explicit matrix after checking symmetry, nonnegativity and
    /// unit row sums.
    pub fn from_matrix(w: DMatrix<f64>, topology: Topology) -> Result<Self> {
        let m = w.nrows();
        if m == 0 || w.ncols() != m {
            return Err(Error::InvalidTopologyParams("mixing matrix must be square and nonempty".into()));
        }
        for i in 0..m {
            let row: f64 = w.row(i).sum();
            if (row - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidTopologyParams(format!("row {i} sums to {row}")));
            }
            for j in 0..m {
                if w[(i, j)] < 0.0 || (w[(i, j)] - w[(j, i)]).abs() > 1e-14 {
                    return Err(Error::InvalidTopologyParams(format!(
                        "entry ({i}, {j}) breaks symmetry or nonnegativity"
                    )));
                }
            }
        }
        let edges = (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .filter(|&(i, j)| w[(i, j)] > 0.0)
            .collect::<Vec<_>>();
        if !connected(m, &edges) {
            return Err(Error::DisconnectedGraph);
        }
        let rho = second_eigenvalue(&w)?;
        Ok(Self { w, rho, topology, edges })
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Row-wise `W X` for agent-stacked vectors.
    pub fn mix(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let m = self.m();
        assert_eq!(rows.len(), m, "one row per agent");
        let dim = rows.first().map_or(0, Vec::len);
        (0..m)
            .map(|i| {
                let mut out = vec![0.0; dim];
                for (j, row) in rows.iter().enumerate() {
                    let wij = self.w[(i, j)];
                    if wij != 0.0 {
                        for (o, v) in out.iter_mut().zip(row) {
                            *o += wij * v;
                        }
                    }
                }
                out
            })
            .collect()
    }
}

/// Builds `W` for `m` agents.
pub fn build_mixing(topology: &Topology, m: usize) -> Result<MixingMatrix> {
    if m == 0 {
        return Err(Error::InvalidTopologyParams("need at least one agent".into()));
    }
    match topology {
        Topology::Complete { uniform: true } => {
            let w = DMatrix::from_element(m, m, 1.0 / m as f64);
            MixingMatrix::from_matrix(w, topology.clone())
        }
        Topology::Complete { uniform: false } => {
            let edges = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect::<Vec<_>>();
            from_edges(m, &edges, topology.clone())
        }
        Topology::Ring => from_edges(m, &ring_edges(m), Topology::Ring),
        Topology::Sparse { seed } => sparse_topology(m, *seed),
        Topology::EdgeList(edges) => from_edges(m, edges, topology.clone()),
    }
}

fn ring_edges(m: usize) -> Vec<(usize, usize)> {
    match m {
        1 => vec![],
        2 => vec![(0, 1)],
        _ => (0..m).map(|i| (i, (i + 1) % m)).collect(),
    }
}

const SPARSE_REDRAWS: u64 = 64;

/// Ring plus `floor(m / 5)` chords, redrawn until the graph mixes at least as
/// fast as the bare ring. When no draw of that size does (at `m = 5` every
/// single chord slows the ring down), one more chord is allowed per round.
pub fn sparse_topology(m: usize, seed: u64) -> Result<MixingMatrix> {
    let ring = ring_edges(m);
    let topology = Topology::Sparse { seed };
    if m / 5 == 0 {
        return from_edges(m, &ring, topology);
    }
    if m == 10 {
        let mut edges = ring;
        edges.extend([(0, 5), (2, 7)]);
        return from_edges(m, &edges, topology);
    }
    let ring_rho = from_edges(m, &ring, Topology::Ring)?.rho;
    let max_chords = m * (m - 1) / 2 - ring.len();
    for chords in (m / 5)..=max_chords {
        for attempt in 0..SPARSE_REDRAWS {
            let mut r = rng::from_seed(rng::derive(seed, &[m as u64, chords as u64, attempt]));
            let mut set: BTreeSet<(usize, usize)> = ring.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
            let mut added = 0;
            while added < chords {
                let i = r.random_range(0..m);
                let j = r.random_range(0..m);
                if i != j && set.insert((i.min(j), i.max(j))) {
                    added += 1;
                }
            }
            let mm = from_edges(m, &set.into_iter().collect::<Vec<_>>(), topology.clone())?;
            if mm.rho <= ring_rho {
                return Ok(mm);
            }
        }
    }
    // Every pair present: the lazy complete graph, which always beats the ring.
    build_mixing(&Topology::Complete { uniform: false }, m).map(|mut mm| {
        mm.topology = topology;
        mm
    })
}

/// Lazy Metropolis weights `W_ij = 1 / (2 max(d_i, d_j))` on the given edges.
pub fn lazy_metropolis(m: usize, edges: &[(usize, usize)]) -> Result<DMatrix<f64>> {
    let edges = normalize_edges(m, edges)?;
    let mut deg = vec![0usize; m];
    for &(i, j) in &edges {
        deg[i] += 1;
        deg[j] += 1;
    }
    let mut w = DMatrix::zeros(m, m);
    for &(i, j) in &edges {
        let v = 1.0 / (2.0 * deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    Ok(w)
}

fn normalize_edges(m: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut set = BTreeSet::new();
    for &(i, j) in edges {
        if i >= m || j >= m {
            return Err(Error::InvalidTopologyParams(format!("edge ({i}, {j}) out of range for m = {m}")));
        }
        if i == j {
            return Err(Error::InvalidTopologyParams(format!("self loop at {i}")));
        }
        set.insert((i.min(j), i.max(j)));
    }
    Ok(set.into_iter().collect())
}

fn from_edges(m: usize, edges: &[(usize, usize)], topology: Topology) -> Result<MixingMatrix> {
    let edges = normalize_edges(m, edges)?;
    if !connected(m, &edges) {
        return Err(Error::DisconnectedGraph);
    }
    let w = lazy_metropolis(m, &edges)?;
    let rho = second_eigenvalue(&w)?;
    Ok(MixingMatrix { w, rho, topology, edges })
}

fn connected(m: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); m];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; m];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

const POWER_MAX_ITERS: usize = 20_000;

/// `|W - 11^T/m|_2` by power iteration on the square of the deflated matrix,
/// falling back to a dense eigensolve if it stalls.
pub fn second_eigenvalue(w: &DMatrix<f64>) -> Result<f64> {
    match power_rho(w, POWER_MAX_ITERS) {
        Ok(r) => Ok(r),
        Err(Error::NoConvergence(_)) => Ok(dense_rho(w)),
        Err(e) => Err(e),
    }
}

/// Power iteration only; `NoConvergence` after `max_iters`.
pub fn power_rho(w: &DMatrix<f64>, max_iters: usize) -> Result<f64> {
    let m = w.nrows();
    if m == 1 {
        return Ok(0.0);
    }
    let deflate = |v: &mut DVector<f64>| {
        let mean = v.mean();
        v.add_scalar_mut(-mean);
    };
    let apply = |v: &DVector<f64>| {
        let mut u = w * v;
        deflate(&mut u);
        u
    };
    let mut v = DVector::from_fn(m, |i, _| ((i as f64 + 1.0) * 0.754_877_666).sin() + 0.3);
    deflate(&mut v);
    let n0 = v.norm();
    if n0 == 0.0 {
        return Err(Error::NoConvergence(0));
    }
    v /= n0;
    let mut prev = f64::INFINITY;
    let mut calm = 0;
    for it in 0..max_iters {
        let u = apply(&apply(&v));
        // v has unit norm, so this is the Rayleigh quotient of M^2.
        let lambda = v.dot(&u);
        let un = u.norm();
        if un == 0.0 || lambda <= 0.0 {
            return Ok(0.0);
        }
        if (lambda - prev).abs() <= 4.0 * f64::EPSILON * lambda {
            calm += 1;
            if calm >= 3 {
                return Ok(lambda.sqrt());
            }
        } else {
            calm = 0;
        }
        prev = lambda;
        v = u / un;
        if it + 1 == max_iters {
            break;
        }
    }
    Err(Error::NoConvergence(max_iters))
}

/// Dense reference: largest `|lambda|` of `W - 11^T/m`.
pub fn dense_rho(w: &DMatrix<f64>) -> f64 {
    let m = w.nrows();
    let j = DMatrix::from_element(m, m, 1.0 / m as f64);
    let d = w - j;
    let d = (&d + d.transpose()) * 0.5;
    d.symmetric_eigen().eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max)
}

/// Parses `i j` pairs, one per line; blank lines and `#` comments are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("edge list line {}: expected `i j`, got `{line}`", lineno + 1)))
        };
        let i = parse(it.next())?;
        let j = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::Parse(format!("edge list line {}: trailing tokens", lineno + 1)));
        }
        edges.push((i, j));
    }
    Ok(edges)
}

pub fn load_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    parse_edge_list(&std::fs::read_to_string(path)?)
}
