use ojadiff::ode::{integrate_rk4, logistic_solution, Rk4Run};
use ojadiff::oja::{increment_parts, oja_step, run_chain, sin2_angle};
use ojadiff::rng::chain_rng;
use ojadiff::spectrum::{random_rotation, Sampler};
use ojadiff::{EigenSpectrum, InitPreset, OjaConfig, SamplerKind, UnitVector};
use proptest::prelude::*;
use rand::Rng;

fn random_unit<R: Rng>(rng: &mut R, d: usize) -> UnitVector {
    UnitVector::normalize((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_spec<R: Rng>(rng: &mut R, d: usize) -> EigenSpectrum {
    let mut l: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..10.0)).collect();
    l.sort_by(|a, b| b.total_cmp(a));
    l[0] = l[1] * rng.random_range(1.01..3.0);
    EigenSpectrum::new(l).unwrap()
}

#[test]
fn increment_bounds_over_fuzz_corpus() {
    let mut rng = chain_rng(2718, 0);
    let mut c_rem = 0.0f64;
    let mut c_inc = 0.0f64;
    let mut recon = 0.0f64;
    for _ in 0..100_000 {
        let d = rng.random_range(2..=12);
        let v = random_unit(&mut rng, d);
        let b: f64 = rng.random_range(0.1..50.0);
        // y anywhere in the ball ‖y‖² ≤ B, including its boundary.
        let dir = random_unit(&mut rng, d);
        let r = if rng.random_bool(0.3) { 1.0 } else { rng.random::<f64>().sqrt() };
        let y: Vec<f64> = dir.coords().iter().map(|x| x * r * b.sqrt()).collect();
        let beta = rng.random_range(1e-6..=1.0) / (3.0 * b);
        let parts = increment_parts(&v, &y, beta);
        let next = oja_step(&v, &y, beta).unwrap();
        for k in 0..d {
            c_rem = c_rem.max(parts.remainder[k].abs() / (b * b * beta * beta));
            c_inc = c_inc.max(parts.increment[k].abs() / (b * beta));
            recon = recon.max((v.coords()[k] + parts.main[k] + parts.remainder[k] - next.coords()[k]).abs());
        }
    }
    assert!(recon <= 1e-14, "reconstruction {recon:e}");
    assert!(c_rem <= 4.0, "remainder constant {c_rem}");
    assert!(c_inc <= 3.0, "increment constant {c_inc}");
}

#[test]
fn rotated_chains_share_angle_sequences() {
    let mut rng = chain_rng(31, 0);
    for d in [2, 3, 7, 16] {
        let spec = random_spec(&mut rng, d);
        let sampler = Sampler::new(&spec, SamplerKind::Gaussian);
        let beta = 0.1 / spec.trace();
        let u = random_rotation(d, &mut rng).unwrap();
        assert!(u.orthogonality_defect() < 1e-12);
        let w = random_unit(&mut rng, d);
        let uw = UnitVector::normalize(u.apply(w.coords())).unwrap();
        let mut v = random_unit(&mut rng, d);
        let mut uv = UnitVector::normalize(u.apply(v.coords())).unwrap();
        for _ in 0..2000 {
            let y = sampler.sample(&mut rng);
            v = oja_step(&v, &y, beta).unwrap();
            uv = oja_step(&uv, &u.apply(&y), beta).unwrap();
            assert!((sin2_angle(&v, &w) - sin2_angle(&uv, &uw)).abs() <= 1e-10);
        }
    }
}

#[test]
fn rk4_matches_closed_form_on_random_instances() {
    let mut rng = chain_rng(57, 0);
    for _ in 0..50 {
        let d = rng.random_range(2..=10);
        let spec = random_spec(&mut rng, d);
        let v0 = random_unit(&mut rng, d);
        let t = rng.random_range(0.0..10.0);
        let Rk4Run { state, .. } = integrate_rk4(&spec, &v0, t, 1e-3 / spec.top()).unwrap();
        let exact = logistic_solution(&spec, &v0, t).unwrap();
        for (a, b) in state.coords().iter().zip(exact.coords()) {
            assert!((a - b).abs() <= 1e-8, "d={d} t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn chains_converge_from_generic_starts() {
    let spec = EigenSpectrum::new(vec![3.0, 1.0, 0.5, 0.2]).unwrap();
    let mut converged = 0;
    for seed in 0..50 {
        let cfg = OjaConfig::new(spec.clone(), 1e-3, 30_000, InitPreset::Uniform, seed);
        let t = run_chain(&cfg).unwrap();
        if *t.sin2_angle.last().unwrap() < 0.01 {
            converged += 1;
        }
    }
    assert!(converged >= 48, "{converged}/50");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn step_stays_on_sphere(
        raw in prop::collection::vec(-1.0f64..1.0, 2..10),
        seed in any::<u64>(),
        frac in 1e-4f64..1.0,
    ) {
        prop_assume!(raw.iter().any(|x| x.abs() > 1e-3));
        let d = raw.len();
        let v = UnitVector::normalize(raw).unwrap();
        let mut rng = chain_rng(seed, 0);
        let spec = random_spec(&mut rng, d);
        let beta = frac / (3.0 * spec.trace());
        let y = Sampler::new(&spec, SamplerKind::Bounded).sample(&mut rng);
        let next = oja_step(&v, &y, beta).unwrap();
        let n: f64 = next.coords().iter().map(|x| x * x).sum();
        prop_assert!((n.sqrt() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn closed_form_is_a_unit_vector_with_growing_top_coordinate(
        raw in prop::collection::vec(-1.0f64..1.0, 2..8),
        seed in any::<u64>(),
        t1 in 0.0f64..20.0,
        dt in 0.0f64..20.0,
    ) {
        prop_assume!(raw[0].abs() > 1e-6);
        let d = raw.len();
        let v0 = UnitVector::normalize(raw).unwrap();
        let spec = random_spec(&mut chain_rng(seed, 0), d);
        let a = logistic_solution(&spec, &v0, t1).unwrap();
        let b = logistic_solution(&spec, &v0, t1 + dt).unwrap();
        prop_assert!(b.coords()[0].powi(2) >= a.coords()[0].powi(2) - 1e-12);
    }
}
