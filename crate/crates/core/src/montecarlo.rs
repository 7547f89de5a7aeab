//! Ensembles of independent Oja chains compared against the ODE and SDE limits.
//!
//! Chain `i` of an ensemble draws from stream `i` of the master seed, so the
//! results do not depend on the worker count or completion order: chains
//! run in parallel and are reduced in chain-index order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::export::Table;
use crate::ode::logistic_solution;
use crate::oja::{start_chain, InitPreset, OjaConfig, UnitVector};
use crate::phases::{detect_on_series, phase3_window, predict_crossings, rate_bound_sin2, stepsize_rule};
use crate::phases::{CrossingPrediction, EmpiricalCrossings, PhaseThresholds, PHASE3_FACTOR};
use crate::rng::chain_rng;
use crate::sde::{ou_mean_cov, stationary_sin2, OuSpec};
use crate::spectrum::{EigenSpectrum, SamplerKind};
use crate::stats::{mean_var, quantile_sorted, sorted};

/// An ensemble of chains sharing `base`; `base.seed` is the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub base: OjaConfig,
    pub n_chains: usize,
    /// Rescaled times; `t` is observed at step `⌊t/β⌋`.
    pub t_grid: Vec<f64>,
    /// Worker threads; `None` uses every available core.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl EnsembleConfig {
    pub fn new(base: OjaConfig, n_chains: usize, t_grid: Vec<f64>) -> Self {
        Self {
            base,
            n_chains,
            t_grid,
            workers: None,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    /// Step observed for rescaled time `t`.
    pub fn step_of(&self, t: f64) -> u64 {
        (t / self.base.beta + 1e-9).floor() as u64
    }

    pub fn grid_steps(&self) -> Vec<u64> {
        self.t_grid.iter().map(|&t| self.step_of(t)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.n_chains < 2 {
            return Err(invalid("n_chains", format!("need at least 2 chains, got {}", self.n_chains)));
        }
        check_workers(self.workers)?;
        if self.t_grid.is_empty() {
            return Err(invalid("t_grid", "must not be empty"));
        }
        if let Some(t) = self.t_grid.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(invalid("t_grid", format!("times must be finite and nonnegative, got {t}")));
        }
        if self.t_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("t_grid", "times must be nondecreasing"));
        }
        let last = self.step_of(*self.t_grid.last().unwrap());
        if last > self.base.n_steps {
            return Err(invalid(
                "t_grid",
                format!("last time maps to step {last}, beyond n_steps = {}", self.base.n_steps),
            ));
        }
        Ok(())
    }
}

fn check_workers(workers: Option<usize>) -> Result<()> {
    if workers == Some(0) {
        return Err(invalid("workers", "must be at least 1"));
    }
    Ok(())
}

/// Runs `job(i)` for `i in 0..n` on up to `workers` threads, in index order.
pub(crate) fn run_indexed<T, F>(workers: Option<usize>, n: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    check_workers(workers)?;
    let run = || (0..n as u64).into_par_iter().map(&job).collect::<Result<Vec<T>>>();
    match workers {
        None => run(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Unsupported(format!("cannot start worker pool: {e}")))?
            .install(run),
    }
}

/// Per-chain start and coordinates at each grid step.
struct Snapshots {
    start: UnitVector,
    at: Vec<Vec<f64>>,
}

fn chain_snapshots(base: &OjaConfig, master: u64, stream: u64, steps: &[u64]) -> Result<Snapshots> {
    let mut rng = chain_rng(master, stream);
    let mut chain = start_chain(base, &mut rng)?;
    let start = chain.state();
    let mut at = Vec::with_capacity(steps.len());
    for &s in steps {
        while chain.step() < s {
            chain.advance(&mut rng)?;
        }
        at.push(chain.coords().to_vec());
    }
    Ok(Snapshots { start, at })
}

fn ensemble_snapshots(cfg: &EnsembleConfig) -> Result<Vec<Snapshots>> {
    cfg.validate()?;
    let steps = cfg.grid_steps();
    run_indexed(cfg.workers, cfg.n_chains, |i| chain_snapshots(&cfg.base, cfg.base.seed, i, &steps))
}

/// Ensemble statistics at one grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub t: f64,
    pub step: u64,
    pub mean_v: Vec<f64>,
    pub var_v: Vec<f64>,
    pub se_v: Vec<f64>,
    pub mean_v1_sq: f64,
    pub se_v1_sq: f64,
    pub mean_sin2: f64,
    pub se_sin2: f64,
}

/// Standard errors are sample standard deviations over `√n_chains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_chains: usize,
    pub rows: Vec<GridStats>,
}

fn se(var: f64, n: usize) -> f64 {
    (var / n as f64).sqrt()
}

fn summarize(cfg: &EnsembleConfig, snaps: &[Snapshots]) -> EnsembleSummary {
    let n = snaps.len();
    let d = cfg.base.spec.dim();
    let rows = cfg
        .t_grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mut mean_v = vec![0.0; d];
            let mut var_v = vec![0.0; d];
            let mut se_v = vec![0.0; d];
            for c in 0..d {
                let xs: Vec<f64> = snaps.iter().map(|s| s.at[j][c]).collect();
                let (m, v) = mean_var(&xs);
                mean_v[c] = m;
                var_v[c] = v;
                se_v[c] = se(v, n);
            }
            let v1: Vec<f64> = snaps.iter().map(|s| s.at[j][0] * s.at[j][0]).collect();
            let (m1, var1) = mean_var(&v1);
            let sin2: Vec<f64> = v1.iter().map(|x| (1.0 - x).max(0.0)).collect();
            let (ms, vs) = mean_var(&sin2);
            GridStats {
                t,
                step: cfg.step_of(t),
                mean_v,
                var_v,
                se_v,
                mean_v1_sq: m1.clamp(0.0, 1.0),
                se_v1_sq: se(var1, n),
                mean_sin2: ms,
                se_sin2: se(vs, n),
            }
        })
        .collect();
    EnsembleSummary { n_chains: n, rows }
}

impl EnsembleSummary {
    /// Columns `t, step, mean_v1_sq, se_v1_sq, mean_sin2, se_sin2` then
    /// `mean_v<i>, var_v<i>, se_v<i>` per coordinate.
    pub fn table(&self) -> Table {
        let d = self.rows.first().map_or(0, |r| r.mean_v.len());
        let mut cols: Vec<String> = ["t", "step", "mean_v1_sq", "se_v1_sq", "mean_sin2", "se_sin2"]
            .into_iter()
            .map(String::from)
            .collect();
        for i in 1..=d {
            cols.extend([format!("mean_v{i}"), format!("var_v{i}"), format!("se_v{i}")]);
        }
        let mut t = Table::new(cols);
        for r in &self.rows {
            let mut row = vec![r.t, r.step as f64, r.mean_v1_sq, r.se_v1_sq, r.mean_sin2, r.se_sin2];
            for c in 0..d {
                row.extend([r.mean_v[c], r.var_v[c], r.se_v[c]]);
            }
            t.push(row);
        }
        t
    }
}

/// Runs the ensemble and summarizes it on the time grid.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleSummary> {
    let snaps = ensemble_snapshots(cfg)?;
    Ok(summarize(cfg, &snaps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeRow {
    pub t: f64,
    pub mean_v1_sq: f64,
    pub ode_v1_sq: f64,
    pub abs_diff: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeConvergence {
    pub rows: Vec<OdeRow>,
    pub sup_abs_diff: f64,
    pub summary: EnsembleSummary,
}

impl OdeConvergence {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["t", "mean_v1_sq", "ode_v1_sq", "abs_diff", "se"]);
        for r in &self.rows {
            t.push(vec![r.t, r.mean_v1_sq, r.ode_v1_sq, r.abs_diff, r.se]);
        }
        t
    }
}

/// Mean `v₁²` of the chains against `V₁²(t)` of the ODE limit.
///
/// The ODE is evaluated at the rescaled time `β⌊t/β⌋` of the observed step,
/// averaged over the chains' own starting points.
pub fn ode_convergence_experiment(cfg: &EnsembleConfig) -> Result<OdeConvergence> {
    let snaps = ensemble_snapshots(cfg)?;
    if snaps.iter().any(|s| s.start.coords()[0] == 0.0) {
        return Err(Error::EquatorStart);
    }
    let summary = summarize(cfg, &snaps);
    let mut rows = Vec::with_capacity(summary.rows.len());
    for g in &summary.rows {
        let tau = g.step as f64 * cfg.base.beta;
        let mut ode = 0.0;
        for s in &snaps {
            let v = logistic_solution(&cfg.base.spec, &s.start, tau)?;
            ode += v.coords()[0] * v.coords()[0];
        }
        ode /= snaps.len() as f64;
        rows.push(OdeRow {
            t: g.t,
            mean_v1_sq: g.mean_v1_sq,
            ode_v1_sq: ode,
            abs_diff: (g.mean_v1_sq - ode).abs(),
            se: g.se_v1_sq,
        });
    }
    let sup_abs_diff = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
    Ok(OdeConvergence {
        rows,
        sup_abs_diff,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeRow {
    pub t: f64,
    pub step: u64,
    /// Empirical variance of `β^{-1/2} v_i` for each `i ≠ k`.
    pub emp_var: Vec<f64>,
    pub se_var: Vec<f64>,
    pub ou_var: Vec<f64>,
    /// Largest `|emp − ou| / ou` over coordinates with `ou ≥ β`.
    pub max_rel_dev: Option<f64>,
    pub mean_sin2: f64,
    pub se_sin2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeCovariance {
    pub k: usize,
    /// 1-based indices of the rescaled coordinates.
    pub coords: Vec<usize>,
    pub rows: Vec<SdeRow>,
    pub stationary_sin2: f64,
}

impl SdeCovariance {
    pub fn table(&self) -> Table {
        let mut cols: Vec<String> = vec!["t".into(), "step".into()];
        for i in &self.coords {
            cols.extend([format!("emp_var_{i}"), format!("se_var_{i}"), format!("ou_var_{i}")]);
        }
        cols.extend(["max_rel_dev", "mean_sin2", "se_sin2"].map(String::from));
        let mut t = Table::new(cols);
        for r in &self.rows {
            let mut row = vec![r.t, r.step as f64];
            for c in 0..self.coords.len() {
                row.extend([r.emp_var[c], r.se_var[c], r.ou_var[c]]);
            }
            row.extend([r.max_rel_dev.unwrap_or(f64::NAN), r.mean_sin2, r.se_sin2]);
            t.push(row);
        }
        t
    }
}

/// Rescaled fluctuations `β^{-1/2} v_i`, `i ≠ k`, of chains started at `e_k`
/// against the OU variance.
///
/// Needs the Gaussian sampler: the bounded sampler's atoms have
/// `E[Y_k² Y_i²] = 0`, so its local noise differs from the OU diffusion.
pub fn sde_covariance_experiment(cfg: &EnsembleConfig, k: usize) -> Result<SdeCovariance> {
    let spec = &cfg.base.spec;
    spec.check_index(k)?;
    if cfg.base.sampler != SamplerKind::Gaussian {
        return Err(Error::Unsupported(
            "the OU covariance check needs the gaussian sampler: bounded atoms have E[Y_k^2 Y_i^2] = 0 \
             for i != k, so their fourth moments do not match the OU diffusion coefficient"
                .into(),
        ));
    }
    if cfg.base.init != InitPreset::Saddle(k) {
        return Err(invalid("init", format!("must be saddle({k}) (the chain starts at e_{k})")));
    }
    let snaps = ensemble_snapshots(cfg)?;
    let summary = summarize(cfg, &snaps);
    let ou = OuSpec::new(spec.clone(), k)?;
    let coords = ou.coordinates();
    let zero = vec![0.0; coords.len()];
    let beta = cfg.base.beta;
    let n = snaps.len();
    let rows = summary
        .rows
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let pred = ou_mean_cov(&ou, &zero, g.step as f64 * beta)?;
            let mut emp_var = Vec::with_capacity(coords.len());
            let mut se_var = Vec::with_capacity(coords.len());
            let mut max_rel_dev: Option<f64> = None;
            for (c, &i) in coords.iter().enumerate() {
                let xs: Vec<f64> = snaps.iter().map(|s| s.at[j][i - 1] / beta.sqrt()).collect();
                let (m, v) = mean_var(&xs);
                let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
                emp_var.push(v);
                se_var.push(((m4 - v * v).max(0.0) / n as f64).sqrt());
                if pred.var[c] >= beta {
                    let dev = (v - pred.var[c]).abs() / pred.var[c];
                    max_rel_dev = Some(max_rel_dev.map_or(dev, |d| d.max(dev)));
                }
            }
            Ok(SdeRow {
                t: g.t,
                step: g.step,
                emp_var,
                se_var,
                ou_var: pred.var,
                max_rel_dev,
                mean_sin2: g.mean_sin2,
                se_sin2: g.se_sin2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SdeCovariance {
        k,
        coords,
        rows,
        stationary_sin2: stationary_sin2(spec, beta)?,
    })
}

/// Chains run for `T` steps at `β̄(T)` for each budget `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSampleConfig {
    pub spec: EigenSpectrum,
    pub t_list: Vec<u64>,
    pub n_chains: usize,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default = "default_init")]
    pub init: InitPreset,
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_init() -> InitPreset {
    InitPreset::Uniform
}

impl FiniteSampleConfig {
    pub fn new(spec: EigenSpectrum, t_list: Vec<u64>, n_chains: usize, seed: u64) -> Self {
        Self {
            spec,
            t_list,
            n_chains,
            sampler: SamplerKind::Bounded,
            init: InitPreset::Uniform,
            seed,
            workers: None,
        }
    }

    pub fn with_sampler(mut self, sampler: SamplerKind) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSampleRow {
    pub t_samples: u64,
    pub beta: f64,
    pub mean_sin2: f64,
    pub se: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSample {
    pub rows: Vec<FiniteSampleRow>,
}

impl FiniteSample {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["t_samples", "beta", "mean_sin2", "se", "bound", "ratio"]);
        for r in &self.rows {
            t.push(vec![r.t_samples as f64, r.beta, r.mean_sin2, r.se, r.bound, r.ratio]);
        }
        t
    }
}

/// Empirical `E sin²∠` after `T` steps at `β̄(T)` against the rate bound.
///
/// Budget `j` uses streams `j·n_chains .. (j+1)·n_chains` of the seed.
pub fn finite_sample_experiment(cfg: &FiniteSampleConfig) -> Result<FiniteSample> {
    if cfg.n_chains < 2 {
        return Err(invalid("n_chains", format!("need at least 2 chains, got {}", cfg.n_chains)));
    }
    if cfg.t_list.is_empty() {
        return Err(invalid("t_list", "must not be empty"));
    }
    if let Some(t) = cfg.t_list.iter().find(|t| **t < 100) {
        return Err(invalid("t_list", format!("every budget must be at least 100, got {t}")));
    }
    let rows = cfg
        .t_list
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let beta = stepsize_rule(&cfg.spec, t)?;
            let base = OjaConfig {
                spec: cfg.spec.clone(),
                beta,
                n_steps: t,
                init: cfg.init.clone(),
                seed: cfg.seed,
                sampler: cfg.sampler,
                record_stride: None,
            };
            base.validate()?;
            let offset = j as u64 * cfg.n_chains as u64;
            let finals = run_indexed(cfg.workers, cfg.n_chains, |i| {
                let s = chain_snapshots(&base, cfg.seed, offset + i, &[t])?;
                Ok(crate::oja::sin2_to_e1(&s.at[0]))
            })?;
            let (m, v) = mean_var(&finals);
            let bound = rate_bound_sin2(&cfg.spec, t)?;
            Ok(FiniteSampleRow {
                t_samples: t,
                beta,
                mean_sin2: m,
                se: se(v, finals.len()),
                bound,
                ratio: m / bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FiniteSample { rows })
}

/// Quantiles of `sin²∠` across chains at one recorded step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub step: u64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePortrait {
    pub k: usize,
    pub delta: f64,
    pub predicted: CrossingPrediction,
    pub chains: Vec<EmpiricalCrossings>,
    /// Medians over all chains, counting a missing phase as never reached;
    /// `None` when fewer than half the chains reach it.
    pub median_n1: Option<f64>,
    pub median_n2: Option<f64>,
    pub median_n3: Option<f64>,
    /// Median over chains of the mean `sin²∠` in the final detector window.
    pub terminal_plateau: f64,
    pub stationary_sin2: f64,
    pub profile: Vec<ProfileRow>,
}

fn median_reached(xs: impl Iterator<Item = Option<u64>>) -> Option<f64> {
    let all = sorted(xs.map(|x| x.map_or(f64::INFINITY, |v| v as f64)));
    let m = quantile_sorted(&all, 0.5);
    m.is_finite().then_some(m)
}

impl PhasePortrait {
    /// Columns `step, median_sin2, q25_sin2, q75_sin2`.
    pub fn profile_table(&self) -> Table {
        let mut t = Table::new(["step", "median_sin2", "q25_sin2", "q75_sin2"]);
        for r in &self.profile {
            t.push(vec![r.step as f64, r.median, r.q25, r.q75]);
        }
        t
    }

    /// One row per chain: `chain, n1, n2, n3` with NaN for a phase not reached.
    pub fn chains_table(&self) -> Table {
        let f = |x: Option<u64>| x.map_or(f64::NAN, |v| v as f64);
        let mut t = Table::new(["chain", "n1", "n2", "n3"]);
        for (i, c) in self.chains.iter().enumerate() {
            t.push(vec![i as f64, f(c.n1), f(c.n2), f(c.n3)]);
        }
        t
    }
}

/// Runs `cfg.base.n_steps` steps per chain from near a saddle and measures
/// the three phases on every chain, recorded every `cfg.base.stride()` steps.
/// `cfg.t_grid` is not used.
pub fn phase_portrait_experiment(cfg: &EnsembleConfig, delta: f64) -> Result<PhasePortrait> {
    cfg.base.validate()?;
    let thresholds = PhaseThresholds::new(delta)?;
    if cfg.n_chains < 2 {
        return Err(invalid("n_chains", format!("need at least 2 chains, got {}", cfg.n_chains)));
    }
    let Some(k) = cfg.base.init.saddle_index() else {
        return Err(invalid("init", "must be saddle(k) or near_saddle(k, eps) with k >= 2"));
    };
    let spec = &cfg.base.spec;
    let beta = cfg.base.beta;
    if k < 2 {
        return Err(invalid("init", "the saddle index must be at least 2"));
    }
    let predicted = predict_crossings(spec, beta, delta, k)?;
    let stationary = stationary_sin2(spec, beta)?;
    let window = phase3_window(spec, beta);
    let stride = cfg.base.stride();
    let n_steps = cfg.base.n_steps;
    let times: Vec<u64> = (0..=n_steps / stride).map(|j| j * stride).collect();
    let series = run_indexed(cfg.workers, cfg.n_chains, |i| {
        let mut rng = chain_rng(cfg.base.seed, i);
        let mut chain = start_chain(&cfg.base, &mut rng)?;
        let mut sin2 = Vec::with_capacity(times.len());
        sin2.push(chain.sin2());
        for _ in 0..n_steps {
            chain.advance(&mut rng)?;
            if chain.step() % stride == 0 {
                sin2.push(chain.sin2());
            }
        }
        Ok(sin2)
    })?;
    let target = PHASE3_FACTOR * stationary;
    let chains: Vec<EmpiricalCrossings> = series
        .iter()
        .map(|s| detect_on_series(&times, s, thresholds.delta, window, target))
        .collect();
    let tail_from = times.partition_point(|&t| (t as f64) <= n_steps as f64 - window);
    let tail_from = tail_from.min(times.len() - 1);
    let plateaus = sorted(series.iter().map(|s| {
        let tail = &s[tail_from..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }));
    let profile = times
        .iter()
        .enumerate()
        .map(|(j, &step)| {
            let col = sorted(series.iter().map(|s| s[j]));
            ProfileRow {
                step,
                median: quantile_sorted(&col, 0.5),
                q25: quantile_sorted(&col, 0.25),
                q75: quantile_sorted(&col, 0.75),
            }
        })
        .collect();
    Ok(PhasePortrait {
        k,
        delta,
        predicted,
        median_n1: median_reached(chains.iter().map(|c| c.n1)),
        median_n2: median_reached(chains.iter().map(|c| c.n2)),
        median_n3: median_reached(chains.iter().map(|c| c.n3)),
        chains,
        terminal_plateau: quantile_sorted(&plateaus, 0.5),
        stationary_sin2: stationary,
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(l: &[f64]) -> EigenSpectrum {
        EigenSpectrum::new(l.to_vec()).unwrap()
    }

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
    }

    fn ode_cfg(beta: f64, chains: usize, seed: u64) -> EnsembleConfig {
        let t_grid: Vec<f64> = (1..=10).map(|i| 0.5 * i as f64).collect();
        let n = (5.0 / beta).round() as u64;
        EnsembleConfig::new(OjaConfig::new(spec(&[2.0, 1.0]), beta, n, InitPreset::Tilted(0.25), seed), chains, t_grid)
    }

    #[test]
    fn validation() {
        let mut cfg = ode_cfg(1e-2, 10, 0);
        assert!(cfg.validate().is_ok());
        cfg.t_grid.push(6.0);
        assert!(matches!(cfg.validate(), Err(Error::InvalidParameter { name: "t_grid", .. })));
        let mut cfg = ode_cfg(1e-2, 1, 0);
        assert!(cfg.validate().is_err());
        cfg.n_chains = 4;
        cfg.t_grid = vec![1.0, 0.5];
        assert!(cfg.validate().is_err());
        cfg.t_grid = vec![];
        assert!(cfg.validate().is_err());
        assert!(ode_cfg(1e-2, 4, 0).with_workers(0).validate().is_err());
    }

    #[test]
    fn grid_steps_floor() {
        let cfg = ode_cfg(1e-3, 2, 0);
        assert_eq!(cfg.step_of(0.5), 500);
        assert_eq!(cfg.step_of(0.0005), 0);
        assert_eq!(cfg.step_of(0.0015), 1);
        assert_eq!(cfg.grid_steps().last(), Some(&5000));
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let cfg = ode_cfg(1e-2, 40, 9);
        let a = run_ensemble(&cfg.clone().with_workers(1)).unwrap();
        let b = run_ensemble(&cfg.clone().with_workers(3)).unwrap();
        let c = run_ensemble(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.table().to_csv_string(), c.table().to_csv_string());
    }

    #[test]
    fn summary_invariants() {
        let cfg = ode_cfg(1e-2, 30, 2);
        let s = run_ensemble(&cfg).unwrap();
        assert_eq!(s.n_chains, 30);
        for r in &s.rows {
            assert!((0.0..=1.0).contains(&r.mean_v1_sq));
            assert!((r.mean_sin2 + r.mean_v1_sq - 1.0).abs() < 1e-12);
            for c in 0..2 {
                assert!((r.se_v[c] - (r.var_v[c] / 30.0).sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn e1_is_fixed_for_bounded_sampler() {
        let mut cfg = ode_cfg(1e-2, 20, 5);
        cfg.base.init = InitPreset::Saddle(1);
        let r = ode_convergence_experiment(&cfg).unwrap();
        for row in &r.rows {
            assert_eq!(row.mean_v1_sq, 1.0);
            assert_eq!(row.ode_v1_sq, 1.0);
        }
        assert_eq!(r.sup_abs_diff, 0.0);
    }

    #[test]
    fn equator_start_rejected() {
        let mut cfg = ode_cfg(1e-2, 4, 5);
        cfg.base.init = InitPreset::Saddle(2);
        assert_eq!(ode_convergence_experiment(&cfg).unwrap_err(), Error::EquatorStart);
    }

    #[test]
    fn ode_difference_shrinks_with_beta() {
        let sup: Vec<f64> = [1e-1 / 3.0, 1e-2, 3e-3]
            .iter()
            .map(|&b| ode_convergence_experiment(&ode_cfg(b, 200, 11)).unwrap().sup_abs_diff)
            .collect();
        assert!(sup[0] > sup[1] && sup[1] > sup[2], "{sup:?}");
    }

    #[test]
    fn standard_errors_are_honest() {
        // Two independent seeds: each cell moves by < 4 combined standard
        // errors in at least 99% of cells.
        let mut cfg = ode_cfg(1e-2, 200, 100);
        cfg.base.init = InitPreset::Uniform;
        cfg.base.spec = spec(&[3.0, 2.0, 1.0, 0.5]);
        cfg.t_grid = grid(0.0, 5.0, 25);
        let a = run_ensemble(&cfg).unwrap();
        cfg.base.seed = 101;
        let b = run_ensemble(&cfg).unwrap();
        let mut cells = 0;
        let mut ok = 0;
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            let mut cells_of = vec![(ra.mean_v1_sq, rb.mean_v1_sq, ra.se_v1_sq, rb.se_v1_sq)];
            cells_of.extend((0..4).map(|c| (ra.mean_v[c], rb.mean_v[c], ra.se_v[c], rb.se_v[c])));
            for (x, y, sx, sy) in cells_of {
                cells += 1;
                let s = (sx * sx + sy * sy).sqrt();
                if (x - y).abs() < 4.0 * s || (s == 0.0 && x == y) {
                    ok += 1;
                }
            }
        }
        assert!(ok as f64 >= 0.99 * cells as f64, "{ok}/{cells}");
    }

    #[test]
    fn sde_experiment_preconditions() {
        let base = OjaConfig::new(spec(&[2.0, 1.0]), 1e-3, 1000, InitPreset::Saddle(1), 0);
        let cfg = EnsembleConfig::new(base.clone(), 10, vec![0.0, 1.0]);
        match sde_covariance_experiment(&cfg, 1) {
            Err(Error::Unsupported(msg)) => assert!(msg.contains("fourth moments")),
            other => panic!("{other:?}"),
        }
        let g = EnsembleConfig::new(base.with_sampler(SamplerKind::Gaussian), 10, vec![0.0, 1.0]);
        assert!(matches!(sde_covariance_experiment(&g, 2), Err(Error::InvalidParameter { name: "init", .. })));
        assert!(sde_covariance_experiment(&g, 3).is_err());
    }

    #[test]
    fn sde_variance_at_zero_and_small_beta() {
        let base = OjaConfig::new(spec(&[2.0, 1.0, 0.5]), 1e-3, 1000, InitPreset::Saddle(1), 4)
            .with_sampler(SamplerKind::Gaussian);
        let cfg = EnsembleConfig::new(base, 400, vec![0.0, 1.0]);
        let r = sde_covariance_experiment(&cfg, 1).unwrap();
        assert_eq!(r.coords, [2, 3]);
        assert_eq!(r.rows[0].emp_var, [0.0, 0.0]);
        assert_eq!(r.rows[0].max_rel_dev, None);
        let row = &r.rows[1];
        for c in 0..2 {
            assert!((row.emp_var[c] - row.ou_var[c]).abs() < 4.0 * row.se_var[c] + 0.05 * row.ou_var[c], "{row:?}");
        }
        assert!(row.max_rel_dev.unwrap() < 0.2);
        assert_eq!(r.table().columns.len(), 2 + 6 + 3);
    }

    #[test]
    fn finite_sample_small() {
        let cfg = FiniteSampleConfig::new(spec(&[2.0, 1.0]), vec![200, 2000], 100, 3);
        let r = finite_sample_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows[1].mean_sin2 < r.rows[0].mean_sin2);
        for row in &r.rows {
            assert_eq!(row.beta, stepsize_rule(&cfg.spec, row.t_samples).unwrap());
            assert!((row.ratio - row.mean_sin2 / row.bound).abs() < 1e-15);
        }
        assert!(finite_sample_experiment(&FiniteSampleConfig::new(spec(&[2.0, 1.0]), vec![99], 10, 0)).is_err());
        let again = finite_sample_experiment(&cfg.clone().with_workers(2)).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn bounded_saddle_never_escapes() {
        let base = OjaConfig::new(spec(&[2.0, 1.0]), 1e-3, 5000, InitPreset::Saddle(2), 0);
        let cfg = EnsembleConfig::new(base, 8, vec![]);
        let p = phase_portrait_experiment(&cfg, 0.25).unwrap();
        assert!(p.chains.iter().all(|c| *c == EmpiricalCrossings::default()));
        assert_eq!(p.median_n1, None);
        assert!(p.profile.iter().all(|r| r.median == 1.0));
    }

    #[test]
    fn portrait_needs_saddle_init() {
        let base = OjaConfig::new(spec(&[2.0, 1.0]), 1e-3, 100, InitPreset::Uniform, 0);
        assert!(phase_portrait_experiment(&EnsembleConfig::new(base.clone(), 4, vec![]), 0.25).is_err());
        let mut b1 = base;
        b1.init = InitPreset::Saddle(1);
        assert!(phase_portrait_experiment(&EnsembleConfig::new(b1, 4, vec![]), 0.25).is_err());
    }

    #[test]
    fn portrait_shape() {
        let base = OjaConfig::new(spec(&[2.0, 1.0]), 1e-2, 3000, InitPreset::Saddle(2), 7)
            .with_sampler(SamplerKind::Gaussian)
            .with_record_stride(1);
        let p = phase_portrait_experiment(&EnsembleConfig::new(base, 50, vec![]), 0.25).unwrap();
        assert_eq!(p.profile.len(), 3001);
        assert_eq!(p.profile[0].median, 1.0);
        assert!(p.profile.last().unwrap().median < 0.1);
        assert!(p.median_n1.is_some() && p.median_n2.is_some() && p.median_n3.is_some());
        assert!(p.profile.iter().all(|r| r.q25 <= r.median && r.median <= r.q75));
        assert_eq!(p.chains_table().rows.len(), 50);
    }
}
