//! Deterministic ODE limit `dV/dt = (Λ − VᵀΛV)V` of the rescaled chain.
//!
//! [`logistic_solution`] evaluates the closed form
//! `V_k(t) ∝ V_k(0)·exp(λ_k t)`; [`integrate_rk4`] is an independent
//! numerical route used to cross-check it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::oja::{norm, UnitVector};
use crate::spectrum::EigenSpectrum;

/// A point of the ODE solution at rescaled time `t = nβ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeState {
    pub t: f64,
    pub v: UnitVector,
}

fn check_dim(spec: &EigenSpectrum, v: &UnitVector) -> Result<()> {
    if v.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: v.dim(),
        });
    }
    Ok(())
}

/// Right-hand side in coordinates: `V_k Σ_i (λ_k − λ_i) V_i²`.
pub fn ode_rhs(spec: &EigenSpectrum, v: &UnitVector) -> Vec<f64> {
    rhs(spec.lambdas(), v.coords())
}

fn rhs(lambdas: &[f64], v: &[f64]) -> Vec<f64> {
    lambdas
        .iter()
        .zip(v)
        .map(|(lk, vk)| {
            let s: f64 = lambdas.iter().zip(v).map(|(li, vi)| (lk - li) * vi * vi).sum();
            vk * s
        })
        .collect()
}

/// Closed-form solution at time `t ≥ 0`.
///
/// Exponents are shifted by the largest `λ_k` carried by a nonzero start
/// coordinate, so the normalizer never overflows and equator starts stay on
/// the equator.
pub fn logistic_solution(spec: &EigenSpectrum, v0: &UnitVector, t: f64) -> Result<UnitVector> {
    check_dim(spec, v0)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("must be finite and nonnegative, got {t}")));
    }
    let shift = spec
        .lambdas()
        .iter()
        .zip(v0.coords())
        .filter(|(_, v)| **v != 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = spec
        .lambdas()
        .iter()
        .zip(v0.coords())
        .map(|(l, v)| if *v == 0.0 { 0.0 } else { v * ((l - shift) * t).exp() })
        .collect();
    UnitVector::normalize(raw)
}

/// `V₁(t)²` from the closed form, written as
/// `1 / (1 + Σ_{i≥2} (V_i(0)/V₁(0))² e^{−2(λ₁−λ_i)t})`.
fn v1_sq_at(spec: &EigenSpectrum, v0: &[f64], t: f64) -> f64 {
    let v1 = v0[0];
    let l1 = spec.top();
    let tail: f64 = spec.lambdas()[1..]
        .iter()
        .zip(&v0[1..])
        .map(|(l, v)| (v / v1).powi(2) * (-2.0 * (l1 - l) * t).exp())
        .sum();
    1.0 / (1.0 + tail)
}

/// Result of a fixed-step RK4 run.
#[derive(Debug, Clone, PartialEq)]
pub struct Rk4Run {
    pub state: UnitVector,
    pub steps: u64,
    /// Largest per-step relative norm correction `|‖V‖ − 1|` applied.
    pub max_renormalization: f64,
}

/// Per-step norm correction allowed before the integration is rejected.
pub const RK4_RENORM_TOL: f64 = 1e-10;

/// Classical RK4 with per-step renormalization. `dt` must not exceed
/// `10⁻²/λ₁`; the step is shrunk so an integer number of steps hits `t_end`.
pub fn integrate_rk4(spec: &EigenSpectrum, v0: &UnitVector, t_end: f64, dt: f64) -> Result<Rk4Run> {
    check_dim(spec, v0)?;
    let max_dt = 1e-2 / spec.top();
    if !(dt > 0.0 && dt <= max_dt) {
        return Err(invalid("dt", format!("must be in (0, {max_dt}], got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(invalid("t_end", format!("must be finite and nonnegative, got {t_end}")));
    }
    let steps = (t_end / dt).ceil() as u64;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let l = spec.lambdas();
    let d = l.len();
    let mut v = v0.coords().to_vec();
    let mut tmp = vec![0.0; d];
    let mut max_renorm: f64 = 0.0;
    for _ in 0..steps {
        let k1 = rhs(l, &v);
        for i in 0..d {
            tmp[i] = v[i] + 0.5 * h * k1[i];
        }
        let k2 = rhs(l, &tmp);
        for i in 0..d {
            tmp[i] = v[i] + 0.5 * h * k2[i];
        }
        let k3 = rhs(l, &tmp);
        for i in 0..d {
            tmp[i] = v[i] + h * k3[i];
        }
        let k4 = rhs(l, &tmp);
        for i in 0..d {
            v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let n = norm(&v);
        let correction = (n - 1.0).abs();
        if !(correction <= RK4_RENORM_TOL) {
            return Err(Error::Integration(format!(
                "renormalization correction {correction:e} exceeds {RK4_RENORM_TOL:e}"
            )));
        }
        max_renorm = max_renorm.max(correction);
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(Rk4Run {
        state: UnitVector::normalize(v)?,
        steps,
        max_renormalization: max_renorm,
    })
}

/// Smallest `T` with `V₁(T)² = 1 − δ`, by bisection on the closed form.
///
/// From `V₁(0)² = δ` the result lies in
/// `[(λ₁−λ_d)⁻¹ ln((1−δ)/δ), (λ₁−λ₂)⁻¹ ln((1−δ)/δ)]`.
pub fn ode_crossing_time(spec: &EigenSpectrum, v0: &UnitVector, delta: f64) -> Result<f64> {
    check_dim(spec, v0)?;
    if !(delta > 0.0 && delta < 0.5) {
        return Err(invalid("delta", format!("must be in (0, 1/2), got {delta}")));
    }
    if v0.coords()[0] == 0.0 {
        return Err(Error::EquatorStart);
    }
    let target = 1.0 - delta;
    let v = v0.coords();
    if v1_sq_at(spec, v, 0.0) >= target {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0 / spec.gap();
    while v1_sq_at(spec, v, hi) < target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Integration("crossing time bracket overflowed".into()));
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if v1_sq_at(spec, v, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Rows `(t, V₁², …, V_d²)` of the closed-form curve over `grid`.
pub fn ode_curve(spec: &EigenSpectrum, v0: &UnitVector, grid: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
    grid.iter()
        .map(|&t| {
            let v = logistic_solution(spec, v0, t)?;
            Ok((t, v.coords().iter().map(|x| x * x).collect()))
        })
        .collect()
}
