//! Three-phase crossing times and finite-sample rate formulas.
//!
//! Starting near a saddle `e_k`, a constant-stepsize chain
//!
//! 1. escapes the equator until `v₁² ≥ δ` (Phase I, `N₁`),
//! 2. crosses deterministically until `v₁² ≥ 1 − δ` (Phase II, `N₂`),
//! 3. settles into the `O(β)` stationary band around `e₁` (Phase III, `N₃`).
//!
//! Rate formulas carry unknown universal constants; they are evaluated with
//! every such constant set to 1 and are only meaningful up to constants.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::oja::Trajectory;
use crate::sde::{phase1_exit_law, stationary_sin2};
use crate::spectrum::{EigenSpectrum, SampleBound};

/// Note attached to every formula-valued report.
pub const UP_TO_CONSTANTS: &str = "values are rate formulas with unknown universal constants set to 1 (up to constants)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseThresholds {
    pub delta: f64,
}

impl PhaseThresholds {
    pub fn new(delta: f64) -> Result<Self> {
        let t = Self { delta };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta > 0.0 && self.delta < 0.5 {
            Ok(())
        } else {
            Err(invalid("delta", format!("must be in (0, 1/2), got {}", self.delta)))
        }
    }
}

/// Formula predictions of the three crossing times, in steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingPrediction {
    pub n1_median: f64,
    pub n1_q10: f64,
    pub n1_q90: f64,
    pub n2_low: f64,
    pub n2_high: f64,
    pub n3: f64,
}

/// Crossing times measured on one trajectory; `None` when never reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EmpiricalCrossings {
    pub n1: Option<u64>,
    pub n2: Option<u64>,
    pub n3: Option<u64>,
}

/// Inputs a crossing report was computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingConfig {
    pub spec: EigenSpectrum,
    pub beta: f64,
    pub delta: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub config: CrossingConfig,
    pub predicted: CrossingPrediction,
    pub empirical: Option<EmpiricalCrossings>,
    pub note: String,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(invalid("beta", format!("must be positive and finite, got {beta}")))
    }
}

/// `N₁` quantiles from the Phase-I law, the `N₂` sandwich
/// `ln((1−δ)/δ) / ((λ₁−λ_d)β) ≤ N₂ ≤ ln((1−δ)/δ) / ((λ₁−λ₂)β)` and
/// `N₃ = 0.5 (λ₁−λ₂)⁻¹ β⁻¹ ln(δ/β)`.
pub fn predict_crossings(spec: &EigenSpectrum, beta: f64, delta: f64, k: usize) -> Result<CrossingPrediction> {
    check_beta(beta)?;
    PhaseThresholds::new(delta)?;
    let law = phase1_exit_law(spec, k, beta, delta)?;
    let log_odds = ((1.0 - delta) / delta).ln();
    let l1 = spec.top();
    Ok(CrossingPrediction {
        n1_median: law.median(),
        n1_q10: law.quantile(0.1),
        n1_q90: law.quantile(0.9),
        n2_low: log_odds / ((l1 - spec.smallest()) * beta),
        n2_high: log_odds / (spec.gap() * beta),
        n3: (0.5 / (spec.gap() * beta) * (delta / beta).ln()).max(0.0),
    })
}

pub fn crossing_report(spec: &EigenSpectrum, beta: f64, delta: f64, k: usize) -> Result<CrossingReport> {
    Ok(CrossingReport {
        config: CrossingConfig {
            spec: spec.clone(),
            beta,
            delta,
            k,
        },
        predicted: predict_crossings(spec, beta, delta, k)?,
        empirical: None,
        note: UP_TO_CONSTANTS.into(),
    })
}

/// Phase III is declared once the trailing mean of `sin²∠` over this many
/// steps falls within this factor of the stationary level.
pub const PHASE3_FACTOR: f64 = 2.0;

/// Window for the Phase-III detector: one drift time-constant, `1/(β(λ₁−λ₂))` steps.
pub fn phase3_window(spec: &EigenSpectrum, beta: f64) -> f64 {
    1.0 / (beta * spec.gap())
}

/// Measures `N₁`, `N₂`, `N₃` on a recorded trajectory.
///
/// `N₁` is the first recorded step with `v₁² ≥ δ`; `N₂` counts steps from
/// there to the first with `v₁² ≥ 1 − δ`; `N₃` counts steps from the end of
/// Phase II until the trailing-window mean of `sin²∠` (window restricted to
/// Phase III) is at most twice the stationary prediction.
pub fn detect_phases(traj: &Trajectory, thresholds: PhaseThresholds) -> Result<EmpiricalCrossings> {
    thresholds.validate()?;
    let cfg = &traj.config;
    let target = PHASE3_FACTOR * stationary_sin2(&cfg.spec, cfg.beta)?;
    let window = phase3_window(&cfg.spec, cfg.beta);
    Ok(detect_on_series(&traj.times, &traj.sin2_angle, thresholds.delta, window, target))
}

pub(crate) fn detect_on_series(times: &[u64], sin2: &[f64], delta: f64, window: f64, target: f64) -> EmpiricalCrossings {
    let mut out = EmpiricalCrossings::default();
    let v1_sq = |j: usize| 1.0 - sin2[j];
    let Some(j1) = (0..times.len()).find(|&j| v1_sq(j) >= delta) else {
        return out;
    };
    out.n1 = Some(times[j1]);
    let Some(j2) = (j1..times.len()).find(|&j| v1_sq(j) >= 1.0 - delta) else {
        return out;
    };
    out.n2 = Some(times[j2] - times[j1]);
    // Trailing window (t − window, t] clipped to start at the Phase-II exit.
    let mut lo = j2;
    let mut sum = 0.0;
    for j in j2..times.len() {
        sum += sin2[j];
        while lo < j && (times[j] - times[lo]) as f64 >= window {
            sum -= sin2[lo];
            lo += 1;
        }
        let mean = sum / (j - lo + 1) as f64;
        if mean <= target {
            out.n3 = Some(times[j] - times[j2]);
            break;
        }
    }
    out
}

fn check_samples(t: u64) -> Result<f64> {
    if t < 3 {
        return Err(invalid("t_samples", format!("must be at least 3, got {t}")));
    }
    Ok(t as f64)
}

/// `β̄(T) = ln T / ((λ₁ − λ₂) T)`.
pub fn stepsize_rule(spec: &EigenSpectrum, t_samples: u64) -> Result<f64> {
    let t = check_samples(t_samples)?;
    Ok(t.ln() / (spec.gap() * t))
}

/// `E sin²∠ ≤ Σ_{k≥2} λ₁λ_k / (2(λ₁−λ_k)) · ln T / ((λ₁−λ₂) T)`.
pub fn rate_bound_sin2(spec: &EigenSpectrum, t_samples: u64) -> Result<f64> {
    let t = check_samples(t_samples)?;
    let l1 = spec.top();
    let tail: f64 = spec.lambdas()[1..].iter().map(|lk| l1 * lk / (2.0 * (l1 - lk))).sum();
    Ok(tail * t.ln() / (spec.gap() * t))
}

/// Rayleigh-quotient gap `E[λ₁ − vᵀΛv] ≲ (λ₁ Σλ_k − λ₁²)/2 · ln T / ((λ₁−λ₂) T)`.
pub fn rate_bound_rayleigh(spec: &EigenSpectrum, t_samples: u64) -> Result<f64> {
    let t = check_samples(t_samples)?;
    let l1 = spec.top();
    Ok((l1 * spec.trace() - l1 * l1) / 2.0 * t.ln() / (spec.gap() * t))
}

/// Smallest `σ*²` admitted for the spectrum: `λ₁λ₂ / (λ₁ − λ₂)²`.
pub fn tight_sigma_star2(spec: &EigenSpectrum) -> f64 {
    spec.top() * spec.lambda(2) / spec.gap().powi(2)
}

/// Minimax lower-bound reference `σ*² (d − 1) / n`.
pub fn minimax_lower_bound(spec: &EigenSpectrum, n: u64, sigma_star2: f64) -> f64 {
    sigma_star2 * (spec.dim() - 1) as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub name: String,
    pub value: f64,
}

pub const MINIMAX_ROW: &str = "minimax rate";
pub const THIS_WORK_ROW: &str = "oja, diffusion analysis";

/// Published convergence-rate formulas for online PCA, evaluated at `n`
/// samples with every constant set to 1.
pub fn table1_rows(spec: &EigenSpectrum, b: SampleBound, n: u64, sigma_star2: f64) -> Result<Vec<Table1Row>> {
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    if !(b.value() > 0.0) {
        return Err(invalid("b", format!("must be positive, got {}", b.value())));
    }
    if !(sigma_star2 > 0.0) {
        return Err(invalid("sigma_star2", format!("must be positive, got {sigma_star2}")));
    }
    let l1 = spec.top();
    let gap = spec.gap();
    let d = spec.dim() as f64;
    let n = n as f64;
    let b = b.value();
    let tail: f64 = spec.lambdas()[1..].iter().map(|lk| lk / (l1 - lk)).sum();
    let rows = [
        (MINIMAX_ROW, sigma_star2 * d / n),
        ("alecton", b * l1 * d / (gap * gap * n)),
        ("block power method", b * l1 * l1 / (gap.powi(3) * n)),
        ("oja, balsubramani et al.", b * b / (gap * gap * n)),
        ("oja, shamir", b * b * d / (gap * gap * n)),
        ("oja, jain et al.", b * l1 / (gap * gap * n)),
        (THIS_WORK_ROW, l1 / gap * tail / n),
    ];
    Ok(rows
        .into_iter()
        .map(|(name, value)| Table1Row {
            name: name.into(),
            value,
        })
        .collect())
}

/// Finite-sample summary for a sample budget `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub t_samples: u64,
    pub beta_used: f64,
    pub bound_sin2: f64,
    pub bound_rayleigh: f64,
    pub minimax_reference: f64,
    pub sigma_star2: f64,
    pub table1_rows: Vec<Table1Row>,
    pub note: String,
}

/// Evaluates every rate formula at `T` samples, with `B = trace(Λ)` and the
/// tight `σ*²`.
pub fn rate_report(spec: &EigenSpectrum, t_samples: u64) -> Result<RateReport> {
    let sigma_star2 = tight_sigma_star2(spec);
    Ok(RateReport {
        t_samples,
        beta_used: stepsize_rule(spec, t_samples)?,
        bound_sin2: rate_bound_sin2(spec, t_samples)?,
        bound_rayleigh: rate_bound_rayleigh(spec, t_samples)?,
        minimax_reference: minimax_lower_bound(spec, t_samples, sigma_star2),
        sigma_star2,
        table1_rows: table1_rows(spec, SampleBound::of_bounded_sampler(spec), t_samples, sigma_star2)?,
        note: UP_TO_CONSTANTS.into(),
    })
}

impl fmt::Display for RateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scalars = [
            ("t_samples", self.t_samples as f64),
            ("beta_used", self.beta_used),
            ("bound_sin2", self.bound_sin2),
            ("bound_rayleigh", self.bound_rayleigh),
            ("minimax_reference", self.minimax_reference),
            ("sigma_star2", self.sigma_star2),
        ];
        let width = self
            .table1_rows
            .iter()
            .map(|r| r.name.len())
            .chain(scalars.iter().map(|(n, _)| n.len()))
            .max()
            .unwrap_or(0);
        for (name, value) in scalars {
            writeln!(f, "{name:<width$}  {value:>14.6e}")?;
        }
        writeln!(f)?;
        writeln!(f, "{:<width$}  {:>14}", "rate formula", "sin^2 angle")?;
        for row in &self.table1_rows {
            writeln!(f, "{:<width$}  {:>14.6e}", row.name, row.value)?;
        }
        write!(f, "# {}", self.note)
    }
}

impl fmt::Display for CrossingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_opt = |x: Option<u64>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
        let p = &self.predicted;
        writeln!(f, "{:<10} {:>14} {:>14}", "phase", "predicted", "empirical")?;
        let e = self.empirical.unwrap_or_default();
        writeln!(f, "{:<10} {:>14.1} {:>14}", "N1", p.n1_median, fmt_opt(e.n1))?;
        writeln!(f, "{:<10} {:>14.1} {:>14}", "N1 q10", p.n1_q10, "")?;
        writeln!(f, "{:<10} {:>14.1} {:>14}", "N1 q90", p.n1_q90, "")?;
        writeln!(f, "{:<10} {:>14.1} {:>14}", "N2 low", p.n2_low, fmt_opt(e.n2))?;
        writeln!(f, "{:<10} {:>14.1} {:>14}", "N2 high", p.n2_high, "")?;
        writeln!(f, "{:<10} {:>14.1} {:>14}", "N3", p.n3, fmt_opt(e.n3))?;
        write!(f, "# {}", self.note)
    }
}

/// Predicted `N₂/N₁` and `N₃/N₁`, with `N₁` at its median and `N₂` at its
/// upper bound.
pub fn cutoff_ratios(spec: &EigenSpectrum, beta: f64, delta: f64, k: usize) -> Result<(f64, f64)> {
    let p = predict_crossings(spec, beta, delta, k)?;
    Ok((p.n2_high / p.n1_median, p.n3 / p.n1_median))
}
