//! Oja's streaming PCA iteration and its diffusion approximations.
//!
//! The library works in the covariance eigenbasis: the population covariance
//! is `diag(λ₁, …, λ_d)` with `λ₁ > λ₂ ≥ … ≥ λ_d > 0`, so the principal
//! direction is `e₁`. Eigen-directions are addressed with the 1-based index
//! `k` used in the math (`k = 1` is the principal direction, `k ≥ 2` are the
//! saddle points on the equator `v₁ = 0`).
//!
//! Modules:
//!
//! * [`spectrum`]: the covariance model and i.i.d. sample streams.
//! * [`oja`]: the Oja update on the unit sphere and its per-step increment
//!   decomposition.
//! * [`ode`]: the global ODE limit (generalized logistic curve), an RK4
//!   cross-check and ODE crossing times.
//! * [`sde`]: local Ornstein–Uhlenbeck limits around stationary points and
//!   the time-varying equator SDE.
//! * [`phases`]: three-phase crossing-time predictions and detection, plus
//!   the finite-sample rate formulas.
//! * [`montecarlo`]: ensemble experiments comparing chains to the limits.
//! * [`export`]: CSV writers for trajectories, curves and tables.

pub mod error;
pub mod export;
pub mod montecarlo;
pub mod ode;
pub mod oja;
pub mod phases;
pub mod rng;
pub mod sde;
pub mod spectrum;
mod stats;

pub use error::{Error, Result};
pub use montecarlo::{EnsembleConfig, EnsembleSummary};
pub use oja::{InitPreset, OjaConfig, Trajectory, UnitVector};
pub use phases::{CrossingPrediction, CrossingReport, EmpiricalCrossings, PhaseThresholds, RateReport};
pub use sde::{OuPath, OuSpec};
pub use spectrum::{EigenSpectrum, RotationMatrix, SampleBound, SamplerKind};
