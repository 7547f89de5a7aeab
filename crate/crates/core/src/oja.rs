//! Oja's iteration on the unit sphere, angle metrics and the per-step
//! increment decomposition.
//!
//! All chains run in the rescaled (eigen) coordinates, where the samples have
//! covariance `Λ` and the target direction is `e₁`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{chain_rng, ChainRng};
use crate::spectrum::{EigenSpectrum, SampleBound, Sampler, SamplerKind};

/// A point on the unit sphere `S^{d−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub const NORM_TOL: f64 = 1e-12;

    /// Wraps `coords`, which must already have unit norm.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let norm = norm(&coords);
        if coords.is_empty() || !((norm - 1.0).abs() <= Self::NORM_TOL) {
            return Err(Error::NotUnit { norm });
        }
        Ok(Self(coords))
    }

    /// Projects a nonzero finite vector onto the sphere.
    pub fn normalize(mut coords: Vec<f64>) -> Result<Self> {
        let n = norm(&coords);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::NotUnit { norm: n });
        }
        coords.iter_mut().for_each(|x| *x /= n);
        Ok(Self(coords))
    }

    /// Basis vector `e_k` (1-based `k`).
    pub fn basis(d: usize, k: usize) -> Self {
        assert!((1..=d).contains(&k), "basis index {k} out of 1..={d}");
        let mut v = vec![0.0; d];
        v[k - 1] = 1.0;
        Self(v)
    }

    pub(crate) fn from_normalized(coords: Vec<f64>) -> Self {
        debug_assert!((norm(&coords) - 1.0).abs() <= 1e-10);
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `sin²∠(v, w) = 1 − (vᵀw)²`, clamped to `[0, 1]`.
pub fn sin2_angle(v: &UnitVector, w: &UnitVector) -> f64 {
    sin2_from_cos(v.dot(w))
}

fn sin2_from_cos(c: f64) -> f64 {
    (1.0 - c * c).clamp(0.0, 1.0)
}

/// Angle to `e₁` from raw coordinates, `1 − v₁²`.
pub(crate) fn sin2_to_e1(v: &[f64]) -> f64 {
    sin2_from_cos(v[0])
}

/// In-place update `v ← Π(v + β(vᵀy)y)`.
pub(crate) fn step_in_place(v: &mut [f64], y: &[f64], beta: f64) -> Result<()> {
    let a = beta * dot(v, y);
    for (vi, yi) in v.iter_mut().zip(y) {
        *vi += a * yi;
    }
    let n = norm(v);
    if !(n.is_finite() && n >= 1e-30) {
        return Err(Error::DegenerateStep { norm: n });
    }
    v.iter_mut().for_each(|x| *x /= n);
    debug_assert!((norm(v) - 1.0).abs() <= UnitVector::NORM_TOL);
    Ok(())
}

/// One Oja step `Π{v + β y yᵀ v}`.
pub fn oja_step(v: &UnitVector, y: &[f64], beta: f64) -> Result<UnitVector> {
    if y.len() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: y.len(),
        });
    }
    if !(beta > 0.0) {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    let mut out = v.coords().to_vec();
    step_in_place(&mut out, y, beta)?;
    Ok(UnitVector(out))
}

/// Split of one step's increment into the order-`β` drift term and the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementParts {
    /// `β((vᵀY)Y_k − v_k(vᵀY)²)`.
    pub main: Vec<f64>,
    /// Actual increment minus `main`.
    pub remainder: Vec<f64>,
    /// The actual increment `v⁺ − v`.
    pub increment: Vec<f64>,
}

impl IncrementParts {
    /// `v + main + remainder`.
    pub fn reconstruct(&self, v: &UnitVector) -> Vec<f64> {
        v.coords()
            .iter()
            .zip(&self.main)
            .zip(&self.remainder)
            .map(|((x, m), r)| x + (m + r))
            .collect()
    }
}

/// Decomposes `Π(v + β(vᵀy)y) − v` into its leading drift term and remainder.
/// The remainder is `O(B²β²)` when `β ≤ 1/(3B)` with `B ≥ ‖y‖²`.
pub fn increment_parts(v: &UnitVector, y: &[f64], beta: f64) -> IncrementParts {
    let a = dot(v.coords(), y);
    let main: Vec<f64> = v
        .coords()
        .iter()
        .zip(y)
        .map(|(vk, yk)| beta * (a * yk - vk * a * a))
        .collect();
    let mut next = v.coords().to_vec();
    // A unit v never yields a degenerate step; NaN propagates for NaN input.
    let _ = step_in_place(&mut next, y, beta);
    let increment: Vec<f64> = next.iter().zip(v.coords()).map(|(n, x)| n - x).collect();
    let remainder = increment.iter().zip(&main).map(|(i, m)| i - m).collect();
    IncrementParts {
        main,
        remainder,
        increment,
    }
}

/// Monte Carlo estimate of the one-step mean increment from a fixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub samples: usize,
}

/// Averages `m` independent one-step increments from `v`.
pub fn empirical_drift<R: Rng + ?Sized>(
    spec: &EigenSpectrum,
    sampler: SamplerKind,
    v: &UnitVector,
    beta: f64,
    m: usize,
    rng: &mut R,
) -> Result<DriftEstimate> {
    if m == 0 {
        return Err(invalid("m", "must be at least 1"));
    }
    if v.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: v.dim(),
        });
    }
    let d = spec.dim();
    let sampler = Sampler::new(spec, sampler);
    let mut y = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for _ in 0..m {
        sampler.fill(rng, &mut y);
        next.copy_from_slice(v.coords());
        step_in_place(&mut next, &y, beta)?;
        for k in 0..d {
            let inc = next[k] - v.coords()[k];
            sum[k] += inc;
            sum_sq[k] += inc * inc;
        }
    }
    let mf = m as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / mf).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(s2, mu)| {
            let var = if m > 1 {
                ((s2 - mf * mu * mu) / (mf - 1.0)).max(0.0)
            } else {
                0.0
            };
            (var / mf).sqrt()
        })
        .collect();
    Ok(DriftEstimate {
        mean,
        std_err,
        samples: m,
    })
}

/// Declarative starting points for chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPreset {
    /// Haar-uniform on the sphere.
    Uniform,
    /// Exactly `e_k`.
    Saddle(usize),
    /// `Π(e_k + ε·u)` with `u` uniform on the unit sphere orthogonal to `e_k`.
    NearSaddle { k: usize, eps: f64 },
    /// `v₁² = 1 − δ`, remaining mass spread evenly: the Phase-III entry point.
    Warm(f64),
    /// `v₁² = s`, remaining mass spread evenly. `tilted(δ)` is the Phase-II
    /// entry point.
    Tilted(f64),
    /// An explicit unit vector.
    Vector(Vec<f64>),
}

impl InitPreset {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            InitPreset::Uniform => Ok(()),
            InitPreset::Saddle(k) | InitPreset::NearSaddle { k, .. } if *k == 0 || *k > d => {
                Err(invalid("init", format!("saddle index must be in 1..={d}, got {k}")))
            }
            InitPreset::Saddle(_) => Ok(()),
            InitPreset::NearSaddle { eps, .. } => {
                if eps.is_finite() && *eps >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid("init", format!("eps must be nonnegative, got {eps}")))
                }
            }
            InitPreset::Warm(x) | InitPreset::Tilted(x) => {
                if (0.0..=1.0).contains(x) {
                    Ok(())
                } else {
                    Err(invalid("init", format!("squared coordinate must lie in [0, 1], got {x}")))
                }
            }
            InitPreset::Vector(v) => {
                if v.len() != d {
                    return Err(invalid(
                        "init",
                        format!("vector has dimension {}, spectrum has {d}", v.len()),
                    ));
                }
                UnitVector::new(v.clone()).map(|_| ()).map_err(|e| invalid("init", e.to_string()))
            }
        }
    }

    /// The saddle this preset starts at or near, if any.
    pub fn saddle_index(&self) -> Option<usize> {
        match self {
            InitPreset::Saddle(k) | InitPreset::NearSaddle { k, .. } => Some(*k),
            _ => None,
        }
    }

    pub fn resolve<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<UnitVector> {
        self.validate(d)?;
        Ok(match self {
            InitPreset::Uniform => loop {
                let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                if let Ok(v) = UnitVector::normalize(g) {
                    break v;
                }
            },
            InitPreset::Saddle(k) => UnitVector::basis(d, *k),
            InitPreset::NearSaddle { k, eps } => {
                let u = loop {
                    let mut g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                    g[k - 1] = 0.0;
                    if let Ok(u) = UnitVector::normalize(g) {
                        break u;
                    }
                };
                let mut v: Vec<f64> = u.coords().iter().map(|x| eps * x).collect();
                v[k - 1] = 1.0;
                UnitVector::normalize(v)?
            }
            InitPreset::Warm(delta) => split_mass(d, 1.0 - delta),
            InitPreset::Tilted(s) => split_mass(d, *s),
            InitPreset::Vector(v) => UnitVector::new(v.clone())?,
        })
    }
}

fn split_mass(d: usize, v1_sq: f64) -> UnitVector {
    let rest = ((1.0 - v1_sq) / (d - 1) as f64).sqrt();
    let mut v = vec![rest; d];
    v[0] = v1_sq.sqrt();
    UnitVector::normalize(v).expect("nonzero by construction")
}

/// A single Oja chain run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OjaConfig {
    pub spec: EigenSpectrum,
    pub beta: f64,
    pub n_steps: u64,
    pub init: InitPreset,
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerKind,
    /// Record every `record_stride`-th state; defaults to `max(1, n_steps / 10⁴)`.
    #[serde(default)]
    pub record_stride: Option<u64>,
}

impl OjaConfig {
    pub fn new(spec: EigenSpectrum, beta: f64, n_steps: u64, init: InitPreset, seed: u64) -> Self {
        Self {
            spec,
            beta,
            n_steps,
            init,
            seed,
            sampler: SamplerKind::Bounded,
            record_stride: None,
        }
    }

    pub fn with_sampler(mut self, sampler: SamplerKind) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_record_stride(mut self, stride: u64) -> Self {
        self.record_stride = Some(stride);
        self
    }

    pub fn stride(&self) -> u64 {
        self.record_stride.unwrap_or((self.n_steps / 10_000).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid("beta", format!("must be positive and finite, got {}", self.beta)));
        }
        if self.sampler.is_bounded() {
            let b = SampleBound::of_bounded_sampler(&self.spec).value();
            let cap = 1.0 / (3.0 * b);
            if self.beta > cap {
                return Err(invalid(
                    "beta",
                    format!("must be at most 1/(3B) = {cap} for the bounded sampler (B = {b}), got {}", self.beta),
                ));
            }
        }
        if self.record_stride == Some(0) {
            return Err(invalid("record_stride", "must be at least 1"));
        }
        self.init.validate(self.spec.dim())
    }
}

/// Record of one chain: every `stride`-th state and its `sin²∠(v, e₁)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: OjaConfig,
    pub times: Vec<u64>,
    pub states: Vec<UnitVector>,
    pub sin2_angle: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&UnitVector> {
        self.states.last()
    }
}

/// Stepwise driver for one chain; owns its state, sampler and scratch.
#[derive(Debug, Clone)]
pub struct OjaChain {
    sampler: Sampler,
    beta: f64,
    v: Vec<f64>,
    y: Vec<f64>,
    step: u64,
}

impl OjaChain {
    pub fn new(spec: &EigenSpectrum, sampler: SamplerKind, beta: f64, start: UnitVector) -> Self {
        let d = spec.dim();
        Self {
            sampler: Sampler::new(spec, sampler),
            beta,
            v: start.into_inner(),
            y: vec![0.0; d],
            step: 0,
        }
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.sampler.fill(rng, &mut self.y);
        step_in_place(&mut self.v, &self.y, self.beta)?;
        self.step += 1;
        Ok(())
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn coords(&self) -> &[f64] {
        &self.v
    }

    pub fn state(&self) -> UnitVector {
        UnitVector::from_normalized(self.v.clone())
    }

    pub fn sin2(&self) -> f64 {
        sin2_to_e1(&self.v)
    }
}

/// Builds the chain for `config`, drawing any random start from `rng`.
pub(crate) fn start_chain(config: &OjaConfig, rng: &mut ChainRng) -> Result<OjaChain> {
    config.validate()?;
    let start = config.init.resolve(config.spec.dim(), rng)?;
    Ok(OjaChain::new(&config.spec, config.sampler, config.beta, start))
}

/// Runs `config.n_steps` Oja steps; deterministic in `config.seed`.
pub fn run_chain(config: &OjaConfig) -> Result<Trajectory> {
    run_chain_with_rng(config, &mut chain_rng(config.seed, 0))
}

pub(crate) fn run_chain_with_rng(config: &OjaConfig, rng: &mut ChainRng) -> Result<Trajectory> {
    let mut chain = start_chain(config, rng)?;
    let stride = config.stride();
    let cap = (config.n_steps / stride + 2) as usize;
    let mut traj = Trajectory {
        config: config.clone(),
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        sin2_angle: Vec::with_capacity(cap),
    };
    let record = |chain: &OjaChain, traj: &mut Trajectory| {
        traj.times.push(chain.step());
        traj.states.push(chain.state());
        traj.sin2_angle.push(chain.sin2());
    };
    record(&chain, &mut traj);
    for _ in 0..config.n_steps {
        chain.advance(rng)?;
        if chain.step() % stride == 0 {
            record(&chain, &mut traj);
        }
    }
    Ok(traj)
}
