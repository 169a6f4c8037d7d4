//! Distributed zeroth-order gradient tracking for stochastic mathematical
//! programs with equilibrium constraints (SMPECs).
//!
//! Agents on an undirected network cooperatively minimize the average of their
//! local implicit objectives `f_i(x) = E[h_i(x, z(x), xi)]`, where `z(x)` solves a
//! strongly monotone parametric variational inequality shared by all agents.
//! Each agent only sees zeroth-order samples of its objective and inexact
//! lower-level solutions produced by projected stochastic approximation.
//!
//! Module map:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`problem`] | instance model, noise models, benchmark and synthetic instances |
//! | [`projection`] | exact Euclidean projection onto boxes and low-dimensional polyhedra |
//! | [`smoothing`] | sphere sampling, the zeroth-order estimator, Monte-Carlo smoothing oracles |
//! | [`lower`] | projected stochastic approximation for the lower-level VI |
//! | [`network`] | mixing matrices and their spectral contraction factor |
//! | [`driver`] | the gradient-tracking outer loop and trajectory metrics |
//! | [`theory`] | step-size and horizon constants from the convergence analysis |
//! | [`harness`] | experiment configs, sweeps, CSV and Markdown output |

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod error;
pub mod harness;
pub mod lower;
pub mod network;
pub mod problem;
pub mod projection;
pub mod rng;
pub mod smoothing;
pub mod theory;
pub mod vecops;

pub use error::{Error, Result};
