//! Shared fixtures for the kernel benchmarks.

use ojadiff::{EigenSpectrum, UnitVector};

/// Geometric spectrum `1, r, r², …` of dimension `d`, with `r = 0.9`.
pub fn geometric_spectrum(d: usize) -> EigenSpectrum {
    EigenSpectrum::new((0..d).map(|i| 0.9f64.powi(i as i32)).collect()).expect("valid spectrum")
}

/// Uniform-weight start `(1, …, 1)/√d`.
pub fn flat_start(d: usize) -> UnitVector {
    UnitVector::new(vec![1.0 / (d as f64).sqrt(); d]).expect("unit vector")
}

/// Dimensions every kernel is measured at.
pub const DIMS: [usize; 3] = [2, 16, 128];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        for d in DIMS {
            assert_eq!(geometric_spectrum(d).dim(), d);
            assert_eq!(flat_start(d).dim(), d);
        }
    }
}
