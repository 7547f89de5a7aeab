//! Covariance model in its eigenbasis and i.i.d. sample streams.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Eigenvalues `λ₁ > λ₂ ≥ … ≥ λ_d > 0` of a diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EigenSpectrum {
    lambdas: Vec<f64>,
}

impl EigenSpectrum {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() < 2 {
            return Err(Error::InvalidSpectrum(format!(
                "need at least 2 eigenvalues, got {}",
                lambdas.len()
            )));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidSpectrum(format!(
                "eigenvalues must be finite and positive, got {bad}"
            )));
        }
        if lambdas[0] <= lambdas[1] {
            return Err(Error::InvalidSpectrum(format!(
                "eigengap must be positive (need λ1 > λ2, got λ1 = {}, λ2 = {})",
                lambdas[0], lambdas[1]
            )));
        }
        if let Some(w) = lambdas.windows(2).skip(1).find(|w| w[1] > w[0]) {
            return Err(Error::InvalidSpectrum(format!(
                "eigenvalues must be nonincreasing (found {} followed by {})",
                w[0], w[1]
            )));
        }
        Ok(Self { lambdas })
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `λ_k` for the 1-based index `k`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.lambdas[k - 1]
    }

    pub fn top(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn smallest(&self) -> f64 {
        self.lambdas[self.lambdas.len() - 1]
    }

    /// Eigengap `λ₁ − λ₂`.
    pub fn gap(&self) -> f64 {
        self.lambdas[0] - self.lambdas[1]
    }

    pub fn trace(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// `Σ_{k≥2} λ₁λ_k / (2(λ₁ − λ_k))`: the stationary value of `E‖U‖²` for
    /// the stable OU limit around `e₁`.
    pub fn stationary_trace(&self) -> f64 {
        let l1 = self.top();
        self.lambdas[1..]
            .iter()
            .map(|&lk| l1 * lk / (2.0 * (l1 - lk)))
            .sum()
    }

    /// Rayleigh quotient `vᵀΛv`.
    pub fn rayleigh(&self, v: &[f64]) -> f64 {
        self.lambdas.iter().zip(v).map(|(l, x)| l * x * x).sum()
    }

    pub(crate) fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.dim() {
            return Err(invalid("k", format!("must be in 1..={}, got {k}", self.dim())));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for EigenSpectrum {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EigenSpectrum> for Vec<f64> {
    fn from(s: EigenSpectrum) -> Self {
        s.lambdas
    }
}

/// Almost-sure bound `B` on `‖Y‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBound(pub f64);

impl SampleBound {
    /// The bound met by the bounded sampler: `trace(Λ)`, attained on every draw.
    pub fn of_bounded_sampler(spec: &EigenSpectrum) -> Self {
        Self(spec.trace())
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Which sample distribution feeds a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Atomic distribution on `{±√trace · e_i}` with `P(i) = λ_i / trace`.
    /// Meets the bounded-sample assumption exactly, but its fourth moments
    /// `E[Y_i²Y_k²]` vanish for `i ≠ k`.
    #[default]
    Bounded,
    /// Independent `N(0, λ_i)` coordinates. Unbounded, but
    /// `E[Y_i²Y_k²] = λ_iλ_k`, the structure the local diffusion limits need.
    Gaussian,
}

impl SamplerKind {
    pub fn is_bounded(self) -> bool {
        matches!(self, SamplerKind::Bounded)
    }
}

/// Precomputed sampler for one spectrum; fills caller-owned buffers.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: SamplerKind,
    dim: usize,
    scale: Vec<f64>,
    radius: f64,
    index: Option<WeightedIndex<f64>>,
}

impl Sampler {
    pub fn new(spec: &EigenSpectrum, kind: SamplerKind) -> Self {
        let (scale, index) = match kind {
            SamplerKind::Bounded => (
                Vec::new(),
                Some(WeightedIndex::new(spec.lambdas()).expect("positive weights")),
            ),
            SamplerKind::Gaussian => (spec.lambdas().iter().map(|l| l.sqrt()).collect(), None),
        };
        Self {
            kind,
            dim: spec.dim(),
            scale,
            radius: spec.trace().sqrt(),
            index,
        }
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    /// Overwrites `out` with a fresh sample.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.index {
            Some(index) => {
                out.fill(0.0);
                let i = index.sample(rng);
                out[i] = if rng.random::<bool>() {
                    self.radius
                } else {
                    -self.radius
                };
            }
            None => {
                for (o, s) in out.iter_mut().zip(&self.scale) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = s * z;
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.fill(rng, &mut out);
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// One draw from the bounded atomic sampler: `s·√trace·e_i` with
/// `P(i) = λ_i/trace` and a fair sign `s`. `‖Y‖² = trace` on every draw.
pub fn sample_bounded<R: Rng + ?Sized>(spec: &EigenSpectrum, rng: &mut R) -> Vec<f64> {
    Sampler::new(spec, SamplerKind::Bounded).sample(rng)
}

/// One draw with independent `N(0, λ_i)` coordinates.
pub fn sample_gaussian<R: Rng + ?Sized>(spec: &EigenSpectrum, rng: &mut R) -> Vec<f64> {
    Sampler::new(spec, SamplerKind::Gaussian).sample(rng)
}

/// Orthogonal `d × d` matrix `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    entries: DMatrix<f64>,
}

impl RotationMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `U v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let x = &self.entries * nalgebra::DVector::from_column_slice(v);
        x.as_slice().to_vec()
    }

    /// `Uᵀ v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let x = self.entries.tr_mul(&nalgebra::DVector::from_column_slice(v));
        x.as_slice().to_vec()
    }

    /// `max |UᵀU − I|` over entries.
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.dim();
        let g = self.entries.tr_mul(&self.entries) - DMatrix::<f64>::identity(d, d);
        g.amax()
    }
}

/// Haar-distributed rotation: QR of a Gaussian matrix with the signs of
/// `diag(R)` folded into `Q`.
pub fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<RotationMatrix> {
    if d < 2 {
        return Err(invalid("d", format!("must be at least 2, got {d}")));
    }
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(RotationMatrix { entries: q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;

    fn spec(l: &[f64]) -> EigenSpectrum {
        EigenSpectrum::new(l.to_vec()).unwrap()
    }

    #[test]
    fn accessors() {
        let s = spec(&[2.0, 1.0]);
        assert_eq!(s.gap(), 1.0);
        assert_eq!(s.trace(), 3.0);
        let s = spec(&[2.0, 1.5, 1.0, 0.5]);
        assert_eq!(s.gap(), 0.5);
        assert_eq!(s.trace(), 5.0);
        assert_eq!(s.lambda(3), 1.0);
    }

    #[test]
    fn rejects_invalid_spectra() {
        let gap = EigenSpectrum::new(vec![1.0, 1.0]).unwrap_err();
        assert!(gap.to_string().contains("eigengap"));
        assert!(EigenSpectrum::new(vec![1.0]).is_err());
        assert!(EigenSpectrum::new(vec![]).is_err());
        assert!(EigenSpectrum::new(vec![2.0, 1.0, 0.0]).is_err());
        assert!(EigenSpectrum::new(vec![2.0, -1.0]).is_err());
        assert!(EigenSpectrum::new(vec![2.0, 1.0, 1.5]).is_err());
        assert!(EigenSpectrum::new(vec![2.0, f64::NAN]).is_err());
        assert!(EigenSpectrum::new(vec![2.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn serde_validates() {
        let s: EigenSpectrum = serde_json::from_str("[2.0, 1.0]").unwrap();
        assert_eq!(s.trace(), 3.0);
        assert!(serde_json::from_str::<EigenSpectrum>("[1.0, 1.0]").is_err());
    }

    #[test]
    fn bounded_norm_is_exactly_trace() {
        let s = spec(&[2.0, 1.0]);
        let mut rng = chain_rng(1, 0);
        for _ in 0..10_000 {
            let y = sample_bounded(&s, &mut rng);
            let n2: f64 = y.iter().map(|x| x * x).sum();
            assert!((n2 - 3.0).abs() <= 4.0 * f64::EPSILON);
            assert_eq!(y.iter().filter(|x| **x != 0.0).count(), 1);
        }
    }

    /// Brute force over the 2d atoms: weights λ_i/(2·trace) each sign.
    fn atoms(s: &EigenSpectrum) -> Vec<(f64, Vec<f64>)> {
        let tr = s.trace();
        let mut out = Vec::new();
        for (i, &l) in s.lambdas().iter().enumerate() {
            for sign in [-1.0, 1.0] {
                let mut y = vec![0.0; s.dim()];
                y[i] = sign * tr.sqrt();
                out.push((l / tr / 2.0, y));
            }
        }
        out
    }

    #[test]
    fn bounded_atom_moments_are_exact() {
        let s = spec(&[3.0, 2.0, 1.0, 0.25]);
        let atoms = atoms(&s);
        let d = s.dim();
        for i in 0..d {
            let mean: f64 = atoms.iter().map(|(w, y)| w * y[i]).sum();
            assert!(mean.abs() < 1e-15);
            for j in 0..d {
                let m: f64 = atoms.iter().map(|(w, y)| w * y[i] * y[j]).sum();
                let want = if i == j { s.lambdas()[i] } else { 0.0 };
                assert!((m - want).abs() < 1e-12, "({i},{j}) {m}");
            }
        }
        let cross: f64 = atoms.iter().map(|(w, y)| w * y[0] * y[0] * y[1] * y[1]).sum();
        assert_eq!(cross, 0.0);
    }

    #[test]
    fn bounded_second_moment_monte_carlo() {
        let s = spec(&[2.0, 1.0]);
        let mut rng = chain_rng(11, 0);
        let n = 1_000_000;
        let sampler = Sampler::new(&s, SamplerKind::Bounded);
        let mut y = [0.0; 2];
        let (mut m11, mut m22, mut m12) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            sampler.fill(&mut rng, &mut y);
            m11 += y[0] * y[0];
            m22 += y[1] * y[1];
            m12 += y[0] * y[1];
        }
        let nf = n as f64;
        // Y₁² = 3·Bernoulli(2/3): sd = 3·√(2/9) = √2; Y₂²: same sd.
        let sd = 2f64.sqrt() / nf.sqrt();
        assert!((m11 / nf - 2.0).abs() < 3.0 * sd, "{}", m11 / nf);
        assert!((m22 / nf - 1.0).abs() < 3.0 * sd, "{}", m22 / nf);
        assert_eq!(m12, 0.0);
    }

    #[test]
    fn gaussian_fourth_moments() {
        let s = spec(&[2.0, 1.0]);
        let mut rng = chain_rng(12, 0);
        let n = 1_000_000;
        let sampler = Sampler::new(&s, SamplerKind::Gaussian);
        let mut y = [0.0; 2];
        let (mut cross, mut cross2, mut q, mut q2) = (0.0, 0.0, 0.0, 0.0);
        let (mut c11, mut c22) = (0.0, 0.0);
        for _ in 0..n {
            sampler.fill(&mut rng, &mut y);
            let c = y[0] * y[0] * y[1] * y[1];
            let f = y[0].powi(4);
            cross += c;
            cross2 += c * c;
            q += f;
            q2 += f * f;
            c11 += y[0] * y[0];
            c22 += y[1] * y[1];
        }
        let nf = n as f64;
        let se = |s: f64, s2: f64| ((s2 / nf - (s / nf).powi(2)) / nf).sqrt();
        assert!((cross / nf - 2.0).abs() < 3.0 * se(cross, cross2));
        assert!((q / nf - 12.0).abs() < 3.0 * se(q, q2));
        // Var(Y_i²) = 2λ_i².
        assert!((c11 / nf - 2.0).abs() < 4.0 * (8.0 / nf).sqrt());
        assert!((c22 / nf - 1.0).abs() < 4.0 * (2.0 / nf).sqrt());
    }

    #[test]
    fn rotations_are_orthogonal_and_reproducible() {
        for d in [2, 3, 7] {
            let u = random_rotation(d, &mut chain_rng(5, d as u64)).unwrap();
            assert!(u.orthogonality_defect() <= 1e-10);
            let again = random_rotation(d, &mut chain_rng(5, d as u64)).unwrap();
            assert_eq!(u, again);
        }
        let u = random_rotation(2, &mut chain_rng(6, 0)).unwrap();
        let ue1 = u.apply(&[1.0, 0.0]);
        assert!(((ue1[0].powi(2) + ue1[1].powi(2)).sqrt() - 1.0).abs() <= 1e-12);
        let v = [0.3, -1.2, 2.5];
        let u = random_rotation(3, &mut chain_rng(6, 1)).unwrap();
        let back = u.apply_transpose(&u.apply(&v));
        for (a, b) in back.iter().zip(v) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!(random_rotation(1, &mut chain_rng(0, 0)).is_err());
    }

    #[test]
    fn stationary_trace_sums_tail() {
        assert_eq!(spec(&[2.0, 1.0]).stationary_trace(), 1.0);
        assert_eq!(spec(&[2.0, 1.0, 1.0]).stationary_trace(), 2.0);
    }
}
