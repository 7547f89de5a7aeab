//! Local diffusion limits around the stationary points `e_k`.
//!
//! Near `e_k` the rescaled off-anchor coordinates `β^{−1/2} v_{k̄}` follow the
//! diagonal Ornstein–Uhlenbeck process
//!
//! ```text
//! dU_i = −(λ_k − λ_i) U_i dt + (λ_k λ_i)^{1/2} dB_i,   i ≠ k,
//! ```
//!
//! which is stable for `k = 1` and has the unstable direction `i = 1` for
//! every saddle `k ≥ 2`. Off saddles, escape from the equator is driven by a
//! one-dimensional SDE with coefficients read off the ODE path.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::oja::UnitVector;
use crate::rng::chain_rng;
use crate::spectrum::EigenSpectrum;
use crate::stats::mean_var;

/// OU limit anchored at `e_k` (1-based `k`).
#[derive(Debug, Clone, PartialEq)]
pub struct OuSpec {
    spec: EigenSpectrum,
    k: usize,
    noise: bool,
}

impl OuSpec {
    pub fn new(spec: EigenSpectrum, k: usize) -> Result<Self> {
        spec.check_index(k)?;
        Ok(Self { spec, k, noise: true })
    }

    /// Drops the Brownian term, leaving the deterministic linear flow.
    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }

    pub fn spec(&self) -> &EigenSpectrum {
        &self.spec
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.spec.dim() - 1
    }

    /// The 1-based eigen-indices `i ≠ k`, in the order of the OU coordinates.
    pub fn coordinates(&self) -> Vec<usize> {
        (1..=self.spec.dim()).filter(|&i| i != self.k).collect()
    }

    /// Mean-reversion rates `λ_k − λ_i`; negative entries are unstable.
    pub fn rates(&self) -> Vec<f64> {
        let lk = self.spec.lambda(self.k);
        self.coordinates().iter().map(|&i| lk - self.spec.lambda(i)).collect()
    }

    /// Diffusion coefficients `(λ_k λ_i)^{1/2}`.
    pub fn diffusion(&self) -> Vec<f64> {
        let lk = self.spec.lambda(self.k);
        self.coordinates()
            .iter()
            .map(|&i| if self.noise { (lk * self.spec.lambda(i)).sqrt() } else { 0.0 })
            .collect()
    }
}

/// Largest Euler–Maruyama step accepted for a spectrum.
pub fn max_dt(spec: &EigenSpectrum) -> f64 {
    1e-2 / spec.top().max(spec.top() - spec.smallest())
}

/// Per-coordinate mean and variance (coordinates are uncorrelated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_u0(ou: &OuSpec, u0: &[f64]) -> Result<()> {
    if u0.len() != ou.dim() {
        return Err(Error::DimensionMismatch {
            expected: ou.dim(),
            got: u0.len(),
        });
    }
    Ok(())
}

/// Closed-form moments at time `t` from the deterministic start `u0`.
///
/// `mean_i = u0_i e^{−a_i t}`, `var_i = σ_i² (1 − e^{−2a_i t}) / (2a_i)` with
/// `a_i = λ_k − λ_i`, and `var_i = σ_i² t` when `a_i = 0`.
pub fn ou_mean_cov(ou: &OuSpec, u0: &[f64], t: f64) -> Result<OuMoments> {
    check_u0(ou, u0)?;
    if !(t >= 0.0) {
        return Err(invalid("t", format!("must be nonnegative, got {t}")));
    }
    let rates = ou.rates();
    let sigma = ou.diffusion();
    let mean = u0.iter().zip(&rates).map(|(u, a)| u * (-a * t).exp()).collect();
    let var = rates
        .iter()
        .zip(&sigma)
        .map(|(&a, s)| {
            let s2 = s * s;
            if a == 0.0 {
                s2 * t
            } else {
                -s2 * (-2.0 * a * t).exp_m1() / (2.0 * a)
            }
        })
        .collect();
    Ok(OuMoments { mean, var })
}

/// Exact moments of the Euler–Maruyama recursion after `steps` steps of size
/// `h`; their distance to [`ou_mean_cov`] is the discretization bias.
pub fn em_moments(ou: &OuSpec, u0: &[f64], h: f64, steps: u64) -> Result<OuMoments> {
    check_u0(ou, u0)?;
    let rates = ou.rates();
    let sigma = ou.diffusion();
    let mut mean = Vec::with_capacity(u0.len());
    let mut var = Vec::with_capacity(u0.len());
    for ((u, a), s) in u0.iter().zip(&rates).zip(&sigma) {
        let r = 1.0 - a * h;
        let r2 = r * r;
        let n = steps as i32;
        mean.push(u * r.powi(n));
        let geo = if (r2 - 1.0).abs() < 1e-300 {
            steps as f64
        } else {
            (r2.powi(n) - 1.0) / (r2 - 1.0)
        };
        var.push(s * s * h * geo);
    }
    Ok(OuMoments { mean, var })
}

/// A sampled path on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Uniform grid `h = t_end / n` with `n = ⌈t_end / dt⌉`, so `h ≤ dt`.
fn grid(t_end: f64, dt: f64, limit: f64) -> Result<(u64, f64)> {
    if !(dt > 0.0 && dt <= limit) {
        return Err(invalid("dt", format!("must be in (0, {limit}], got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(invalid("t_end", format!("must be finite and nonnegative, got {t_end}")));
    }
    let n = (t_end / dt - 1e-9).ceil().max(0.0) as u64;
    Ok(if n == 0 { (0, dt) } else { (n, t_end / n as f64) })
}

/// Diagonal linear SDE `du_i = −a_i(t) u_i dt + σ_i(t) dB_i`.
trait DiagonalSde: Sync {
    fn dim(&self) -> usize;
    fn coefficients(&self, t: f64, rates: &mut [f64], sigma: &mut [f64]) -> Result<()>;
}

impl DiagonalSde for OuSpec {
    fn dim(&self) -> usize {
        OuSpec::dim(self)
    }

    fn coefficients(&self, _t: f64, rates: &mut [f64], sigma: &mut [f64]) -> Result<()> {
        rates.copy_from_slice(&OuSpec::rates(self));
        sigma.copy_from_slice(&self.diffusion());
        Ok(())
    }
}

/// Runs Euler–Maruyama, calling `visit(step, t, u)` at every grid point.
fn euler_maruyama<S: DiagonalSde + ?Sized, R: Rng>(
    sde: &S,
    u0: &[f64],
    h: f64,
    steps: u64,
    rng: &mut R,
    mut visit: impl FnMut(u64, f64, &[f64]),
) -> Result<()> {
    let d = sde.dim();
    let mut u = u0.to_vec();
    let mut rates = vec![0.0; d];
    let mut sigma = vec![0.0; d];
    let sqrt_h = h.sqrt();
    visit(0, 0.0, &u);
    for n in 0..steps {
        let t = n as f64 * h;
        sde.coefficients(t, &mut rates, &mut sigma)?;
        for i in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            u[i] += -rates[i] * u[i] * h + sigma[i] * sqrt_h * z;
        }
        visit(n + 1, (n + 1) as f64 * h, &u);
    }
    Ok(())
}

fn record_path<S: DiagonalSde + ?Sized>(sde: &S, u0: &[f64], t_end: f64, dt: f64, limit: f64, seed: u64) -> Result<OuPath> {
    let (steps, h) = grid(t_end, dt, limit)?;
    let mut path = OuPath {
        times: Vec::with_capacity(steps as usize + 1),
        states: Vec::with_capacity(steps as usize + 1),
        seed,
    };
    euler_maruyama(sde, u0, h, steps, &mut chain_rng(seed, 0), |_, t, u| {
        path.times.push(t);
        path.states.push(u.to_vec());
    })?;
    Ok(path)
}

/// One Euler–Maruyama path of the OU limit, deterministic in `seed`.
pub fn simulate_ou(ou: &OuSpec, u0: &[f64], t_end: f64, dt: f64, seed: u64) -> Result<OuPath> {
    check_u0(ou, u0)?;
    record_path(ou, u0, t_end, dt, max_dt(ou.spec()), seed)
}

/// Ensemble statistics against the closed form at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub se_mean: Vec<f64>,
    pub se_var: Vec<f64>,
    pub closed_mean: Vec<f64>,
    pub closed_var: Vec<f64>,
    /// Exact moments of the discretized recursion.
    pub em_mean: Vec<f64>,
    pub em_var: Vec<f64>,
}

impl MomentRow {
    /// Whether every mean and variance lies within `z` standard errors of the
    /// closed form, after allowing for the exact discretization bias.
    pub fn consistent(&self, z: f64) -> bool {
        let ok = |x: &[f64], se: &[f64], c: &[f64], em: &[f64]| {
            (0..x.len()).all(|i| (x[i] - c[i]).abs() <= z * se[i] + (em[i] - c[i]).abs() + 1e-12)
        };
        ok(&self.mean, &self.se_mean, &self.closed_mean, &self.em_mean)
            && ok(&self.var, &self.se_var, &self.closed_var, &self.em_var)
    }
}

/// Simulates `paths` independent OU paths (path `i` on stream `i` of
/// `master_seed`) and summarizes them at the requested times.
pub fn ou_ensemble_moments(
    ou: &OuSpec,
    u0: &[f64],
    dt: f64,
    times: &[f64],
    paths: usize,
    master_seed: u64,
) -> Result<Vec<MomentRow>> {
    check_u0(ou, u0)?;
    if paths < 2 {
        return Err(invalid("paths", "need at least 2 paths"));
    }
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let (steps, h) = grid(t_end, dt, max_dt(ou.spec()))?;
    let targets: Vec<u64> = times.iter().map(|t| (t / h).round() as u64).collect();
    let d = ou.dim();
    let snapshots: Vec<Vec<Vec<f64>>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = chain_rng(master_seed, i);
            let mut snaps = vec![Vec::new(); targets.len()];
            euler_maruyama(ou, u0, h, steps, &mut rng, |n, _, u| {
                for (j, &tgt) in targets.iter().enumerate() {
                    if tgt == n {
                        snaps[j] = u.to_vec();
                    }
                }
            })
            .map(|_| snaps)
        })
        .collect::<Result<_>>()?;
    targets
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let t = n as f64 * h;
            let closed = ou_mean_cov(ou, u0, t)?;
            let em = em_moments(ou, u0, h, n)?;
            let mut row = MomentRow {
                t,
                mean: vec![0.0; d],
                var: vec![0.0; d],
                se_mean: vec![0.0; d],
                se_var: vec![0.0; d],
                closed_mean: closed.mean,
                closed_var: closed.var,
                em_mean: em.mean,
                em_var: em.var,
            };
            for c in 0..d {
                let xs: Vec<f64> = snapshots.iter().map(|s| s[j][c]).collect();
                let (m, v) = mean_var(&xs);
                let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / xs.len() as f64;
                let nf = xs.len() as f64;
                row.mean[c] = m;
                row.var[c] = v;
                row.se_mean[c] = (v / nf).sqrt();
                row.se_var[c] = ((m4 - v * v).max(0.0) / nf).sqrt();
            }
            Ok(row)
        })
        .collect()
}

/// Stationary `lim E sin²∠(v, e₁) ≍ β Σ_{k≥2} λ₁λ_k / (2(λ₁ − λ_k))`.
pub fn stationary_sin2(spec: &EigenSpectrum, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    Ok(beta * spec.stationary_trace())
}

/// Predicted Phase-I exit time from near the saddle `e_k`.
///
/// With `χ` standard normal,
/// `N₁(χ) = (λ₁−λ_k)⁻¹β⁻¹ [ln(√δ |χ|⁻¹ s_k^{−1/2}) + ln β^{−1/2}]`,
/// `s_k = λ₁λ_k / (2(λ₁−λ_k))`, clamped at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase1ExitLaw {
    pub k: usize,
    pub beta: f64,
    pub delta: f64,
    rate: f64,
    scale: f64,
}

impl Phase1ExitLaw {
    pub fn n1(&self, chi: f64) -> f64 {
        let a = (self.delta.sqrt() / chi.abs() / self.scale.sqrt()).ln();
        let b = -0.5 * self.beta.ln();
        ((a + b) / (self.rate * self.beta)).max(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let chi: f64 = StandardNormal.sample(rng);
        self.n1(chi)
    }

    /// `p`-quantile of `N₁`. `N₁` decreases in `|χ|`, so this is
    /// `N₁` at the `(1 − p)`-quantile of `|χ|`.
    pub fn quantile(&self, p: f64) -> f64 {
        let std = Normal::standard();
        let abs_chi = std.inverse_cdf((2.0 - p) / 2.0);
        self.n1(abs_chi)
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

pub fn phase1_exit_law(spec: &EigenSpectrum, k: usize, beta: f64, delta: f64) -> Result<Phase1ExitLaw> {
    spec.check_index(k)?;
    if k < 2 {
        return Err(invalid("k", "phase I starts at a saddle, need k >= 2"));
    }
    if !(beta > 0.0) {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(invalid("delta", format!("must be in (0, 1/2), got {delta}")));
    }
    let l1 = spec.top();
    let lk = spec.lambda(k);
    if lk >= l1 {
        return Err(invalid("k", "λ_k must be below λ₁"));
    }
    Ok(Phase1ExitLaw {
        k,
        beta,
        delta,
        rate: l1 - lk,
        scale: l1 * lk / (2.0 * (l1 - lk)),
    })
}

/// `L(v) = v_{1̄}ᵀΛ_{1̄}v_{1̄} / v_{1̄}ᵀv_{1̄}`, a convex combination of
/// `λ₂, …, λ_d`.
pub fn equator_drift_coeff(spec: &EigenSpectrum, v: &UnitVector) -> Result<f64> {
    if v.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: v.dim(),
        });
    }
    let tail = &v.coords()[1..];
    let den: f64 = tail.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return Err(invalid("v", "L(v) is undefined at ±e₁"));
    }
    let num: f64 = spec.lambdas()[1..].iter().zip(tail).map(|(l, x)| l * x * x).sum();
    Ok(num / den)
}

struct EquatorSde<'a, F> {
    spec: &'a EigenSpectrum,
    path: F,
}

impl<F: Fn(f64) -> UnitVector + Sync> DiagonalSde for EquatorSde<'_, F> {
    fn dim(&self) -> usize {
        1
    }

    fn coefficients(&self, t: f64, rates: &mut [f64], sigma: &mut [f64]) -> Result<()> {
        let l = equator_drift_coeff(self.spec, &(self.path)(t))?;
        let l1 = self.spec.top();
        rates[0] = -(l1 - l);
        sigma[0] = (l1 * l).sqrt();
        Ok(())
    }
}

/// Euler–Maruyama for `dU = [λ₁ − L(V(t))] U dt + [λ₁ L(V(t))]^{1/2} dB`,
/// with `v_path(t)` supplying `V(t)`.
pub fn simulate_equator_sde<F>(spec: &EigenSpectrum, v_path: F, u0: f64, t_end: f64, dt: f64, seed: u64) -> Result<OuPath>
where
    F: Fn(f64) -> UnitVector + Sync,
{
    let sde = EquatorSde { spec, path: v_path };
    record_path(&sde, &[u0], t_end, dt, max_dt(spec), seed)
}
