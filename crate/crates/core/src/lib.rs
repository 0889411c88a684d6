//! Breaks a benchmark score down into per-factor contributions without
//! looking inside the benchmark.
//!
//! The pipeline: run the microbenchmark kernels on many systems
//! ([`microbench`]), turn their times into overhead-free compound scores
//! ([`compound`]), collect one record per system ([`dataset`]), fit the
//! target score on those factors by non-negative least squares ([`nnls`],
//! [`breakdown`]) and split every system's fitted score into contributions.
//! [`synth`] generates fleets with known answers to validate all of it.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, the precision of all measurements and files.

pub mod breakdown;
pub mod compound;
pub mod dataset;
pub mod linalg;
pub mod microbench;
pub mod nnls;
pub mod scalar;
pub mod synth;

pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type NnlsProblem = nnls::NnlsProblem<f64>;
pub type NnlsSolution = nnls::NnlsSolution<f64>;
pub type CompoundScores = compound::CompoundScores<f64>;
pub type TrialSeries = compound::TrialSeries<f64>;
pub type BreakdownModel = breakdown::BreakdownModel<f64>;
pub type ContributionTable = breakdown::ContributionTable<f64>;
pub type FitOptions = breakdown::FitOptions<f64>;

pub type Matrix32 = linalg::Matrix<f32>;
pub type NnlsProblem32 = nnls::NnlsProblem<f32>;
pub type NnlsSolution32 = nnls::NnlsSolution<f32>;
pub type BreakdownModel32 = breakdown::BreakdownModel<f32>;
