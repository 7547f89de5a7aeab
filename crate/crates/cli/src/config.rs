//! JSON config schemas, one per subcommand.
//!
//! Files are parsed into raw structs that reject unknown keys, then checked
//! field by field so every error names the offending key.

use std::fmt;

use ojadiff::montecarlo::FiniteSampleConfig;
use ojadiff::{EigenSpectrum, EnsembleConfig, Error, InitPreset, OjaConfig, SamplerKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// A config problem, tied to the key that caused it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Maps a library validation error onto the config key it came from.
    pub fn from_lib(err: Error) -> Self {
        match err {
            Error::InvalidSpectrum(reason) => Self::new("spec", reason),
            Error::InvalidParameter { name, reason } => Self::new(name, reason),
            Error::DimensionMismatch { expected, got } => {
                Self::new("init", format!("vector has {got} coordinates, spectrum has {expected}"))
            }
            Error::NotUnit { norm } => Self::new("init", format!("vector must be unit norm, got norm {norm}")),
            Error::EquatorStart => Self::new("init", "start lies on the equator (v1 = 0)"),
            Error::Unsupported(reason) => Self::new("sampler", reason),
            other => Self::new("config", other.to_string()),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

type Checked<T> = Result<T, ConfigError>;

pub fn parse<T: DeserializeOwned>(text: &str) -> Checked<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let field = backticked(&msg).unwrap_or("config").to_string();
        ConfigError::new(field, msg)
    })
}

/// First `name` quoted in backticks by a serde message such as
/// "missing field `beta`".
fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

pub fn spectrum(lambdas: &[f64]) -> Checked<EigenSpectrum> {
    EigenSpectrum::new(lambdas.to_vec()).map_err(ConfigError::from_lib)
}

fn lib<T>(r: ojadiff::Result<T>) -> Checked<T> {
    r.map_err(ConfigError::from_lib)
}

fn positive(field: &str, x: f64) -> Checked<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::new(field, format!("must be positive and finite, got {x}")))
    }
}

/// Times either listed explicitly or spread uniformly over `[0, t_end]`.
struct TimeGrid {
    grid: Option<Vec<f64>>,
    t_end: Option<f64>,
    n_points: Option<usize>,
}

impl TimeGrid {
    fn resolve(&self) -> Checked<Vec<f64>> {
        let times = match (&self.grid, self.t_end, self.n_points) {
            (Some(g), None, None) => g.clone(),
            (None, Some(t), n) => {
                let n = n.unwrap_or(101);
                if n < 2 {
                    return Err(ConfigError::new("n_points", "must be at least 2"));
                }
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(ConfigError::new("t_end", format!("must be finite and nonnegative, got {t}")));
                }
                (0..n).map(|i| t * i as f64 / (n - 1) as f64).collect()
            }
            _ => return Err(ConfigError::new("grid", "give either `grid` or `t_end` (with optional `n_points`)")),
        };
        if times.is_empty() {
            return Err(ConfigError::new("grid", "must not be empty"));
        }
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(ConfigError::new("grid", format!("times must be finite and nonnegative, got {t}")));
        }
        Ok(times)
    }
}

/// `run`: a single chain.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub spec: Vec<f64>,
    pub beta: f64,
    pub n_steps: u64,
    pub init: InitPreset,
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub record_stride: Option<u64>,
    #[serde(default = "yes")]
    pub with_coords: bool,
}

fn yes() -> bool {
    true
}

impl RunFile {
    pub fn oja_config(&self) -> Checked<OjaConfig> {
        let cfg = OjaConfig {
            spec: spectrum(&self.spec)?,
            beta: self.beta,
            n_steps: self.n_steps,
            init: self.init.clone(),
            seed: self.seed,
            sampler: self.sampler,
            record_stride: self.record_stride,
        };
        lib(cfg.validate())?;
        Ok(cfg)
    }
}

/// `ode`: the closed-form curve, with optional RK4 check and crossing time.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OdeFile {
    pub spec: Vec<f64>,
    pub init: InitPreset,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub n_points: Option<usize>,
    #[serde(default)]
    pub rk4_dt: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

pub struct OdeJob {
    pub spec: EigenSpectrum,
    pub init: InitPreset,
    pub grid: Vec<f64>,
    pub rk4_dt: Option<f64>,
    pub delta: Option<f64>,
}

impl OdeFile {
    pub fn job(&self) -> Checked<OdeJob> {
        let spec = spectrum(&self.spec)?;
        lib(self.init.validate(spec.dim()))?;
        if let Some(dt) = self.rk4_dt {
            let limit = 1e-2 / spec.top();
            if !(dt > 0.0 && dt <= limit) {
                return Err(ConfigError::new("rk4_dt", format!("must be in (0, {limit}], got {dt}")));
            }
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 0.5) {
                return Err(ConfigError::new("delta", format!("must be in (0, 1/2), got {d}")));
            }
        }
        Ok(OdeJob {
            spec,
            init: self.init.clone(),
            grid: TimeGrid {
                grid: self.grid.clone(),
                t_end: self.t_end,
                n_points: self.n_points,
            }
            .resolve()?,
            rk4_dt: self.rk4_dt,
            delta: self.delta,
        })
    }
}

/// `sde`: one OU path near `e_k`, with optional ensemble moments.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SdeFile {
    pub spec: Vec<f64>,
    pub k: usize,
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub noise: bool,
    #[serde(default)]
    pub paths: Option<usize>,
    #[serde(default)]
    pub moment_times: Option<Vec<f64>>,
}

pub struct SdeJob {
    pub ou: ojadiff::OuSpec,
    pub u0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub paths: Option<usize>,
    pub moment_times: Vec<f64>,
}

impl SdeFile {
    pub fn job(&self) -> Checked<SdeJob> {
        let spec = spectrum(&self.spec)?;
        let limit = ojadiff::sde::max_dt(&spec);
        let mut ou = lib(ojadiff::OuSpec::new(spec, self.k))?;
        if !self.noise {
            ou = ou.without_noise();
        }
        let u0 = self.u0.clone().unwrap_or_else(|| vec![0.0; ou.dim()]);
        if u0.len() != ou.dim() {
            return Err(ConfigError::new("u0", format!("needs {} coordinates, got {}", ou.dim(), u0.len())));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(ConfigError::new("t_end", format!("must be finite and nonnegative, got {}", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt <= limit) {
            return Err(ConfigError::new("dt", format!("must be in (0, {limit}], got {}", self.dt)));
        }
        if let Some(p) = self.paths {
            if p < 2 {
                return Err(ConfigError::new("paths", "need at least 2 paths"));
            }
        }
        let moment_times = self.moment_times.clone().unwrap_or_else(|| vec![self.t_end]);
        if let Some(t) = moment_times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(ConfigError::new("moment_times", format!("must be finite and nonnegative, got {t}")));
        }
        Ok(SdeJob {
            ou,
            u0,
            t_end: self.t_end,
            dt: self.dt,
            paths: self.paths,
            moment_times,
        })
    }
}

/// Optional chain ensemble for `phases`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEnsembleFile {
    pub n_chains: usize,
    pub n_steps: u64,
    pub seed: u64,
    #[serde(default = "gaussian")]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub init: Option<InitPreset>,
    #[serde(default)]
    pub record_stride: Option<u64>,
}

fn gaussian() -> SamplerKind {
    SamplerKind::Gaussian
}

/// `phases`: crossing-time predictions, optionally measured on an ensemble.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PhasesFile {
    pub spec: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
    #[serde(default = "two")]
    pub k: usize,
    #[serde(default)]
    pub ensemble: Option<PhaseEnsembleFile>,
}

fn two() -> usize {
    2
}

pub struct PhasesJob {
    pub spec: EigenSpectrum,
    pub beta: f64,
    pub delta: f64,
    pub k: usize,
    pub ensemble: Option<EnsembleConfig>,
}

impl PhasesFile {
    pub fn job(&self, workers: Option<usize>) -> Checked<PhasesJob> {
        let spec = spectrum(&self.spec)?;
        positive("beta", self.beta)?;
        if self.k < 2 || self.k > spec.dim() {
            return Err(ConfigError::new("k", format!("must be a saddle index in 2..={}, got {}", spec.dim(), self.k)));
        }
        lib(ojadiff::phases::predict_crossings(&spec, self.beta, self.delta, self.k))?;
        let ensemble = match &self.ensemble {
            None => None,
            Some(e) => {
                let base = OjaConfig {
                    spec: spec.clone(),
                    beta: self.beta,
                    n_steps: e.n_steps,
                    init: e.init.clone().unwrap_or(InitPreset::Saddle(self.k)),
                    seed: e.seed,
                    sampler: e.sampler,
                    record_stride: e.record_stride,
                };
                lib(base.validate())?;
                if base.init.saddle_index().is_none_or(|k| k < 2) {
                    return Err(ConfigError::new("init", "must be saddle(k) or near_saddle(k, eps) with k >= 2"));
                }
                if e.n_chains < 2 {
                    return Err(ConfigError::new("n_chains", "need at least 2 chains"));
                }
                Some(EnsembleConfig {
                    base,
                    n_chains: e.n_chains,
                    t_grid: Vec::new(),
                    workers,
                })
            }
        };
        Ok(PhasesJob {
            spec,
            beta: self.beta,
            delta: self.delta,
            k: self.k,
            ensemble,
        })
    }

    pub fn seed_mut(&mut self) -> Option<&mut u64> {
        self.ensemble.as_mut().map(|e| &mut e.seed)
    }
}

/// Chain settings shared by the grid experiments of `mc`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridExperimentFile {
    pub spec: Vec<f64>,
    pub beta: f64,
    pub init: InitPreset,
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerKind,
    pub n_chains: usize,
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub n_steps: Option<u64>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSampleFile {
    pub spec: Vec<f64>,
    pub t_list: Vec<u64>,
    pub n_chains: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default = "uniform")]
    pub init: InitPreset,
}

fn uniform() -> InitPreset {
    InitPreset::Uniform
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitFile {
    pub spec: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
    pub init: InitPreset,
    pub seed: u64,
    pub n_steps: u64,
    pub n_chains: usize,
    #[serde(default = "gaussian")]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub record_stride: Option<u64>,
}

/// `mc`: one ensemble experiment, selected by the `experiment` key.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum McFile {
    Ensemble(GridExperimentFile),
    OdeConvergence(GridExperimentFile),
    SdeCovariance(GridExperimentFile),
    FiniteSample(FiniteSampleFile),
    PhasePortrait(PortraitFile),
}

pub enum McJob {
    Ensemble(EnsembleConfig),
    OdeConvergence(EnsembleConfig),
    SdeCovariance(EnsembleConfig, usize),
    FiniteSample(FiniteSampleConfig),
    PhasePortrait(EnsembleConfig, f64),
}

impl GridExperimentFile {
    fn ensemble(&self, workers: Option<usize>) -> Checked<EnsembleConfig> {
        let spec = spectrum(&self.spec)?;
        positive("beta", self.beta)?;
        let last = self.t_grid.iter().copied().fold(0.0, f64::max);
        let n_steps = self.n_steps.unwrap_or((last / self.beta + 1e-9).floor() as u64);
        let base = OjaConfig {
            spec,
            beta: self.beta,
            n_steps,
            init: self.init.clone(),
            seed: self.seed,
            sampler: self.sampler,
            record_stride: None,
        };
        let cfg = EnsembleConfig {
            base,
            n_chains: self.n_chains,
            t_grid: self.t_grid.clone(),
            workers,
        };
        lib(cfg.validate())?;
        Ok(cfg)
    }
}

impl McFile {
    pub fn name(&self) -> &'static str {
        match self {
            McFile::Ensemble(_) => "ensemble",
            McFile::OdeConvergence(_) => "ode_convergence",
            McFile::SdeCovariance(_) => "sde_covariance",
            McFile::FiniteSample(_) => "finite_sample",
            McFile::PhasePortrait(_) => "phase_portrait",
        }
    }

    pub fn seed_mut(&mut self) -> &mut u64 {
        match self {
            McFile::Ensemble(f) | McFile::OdeConvergence(f) | McFile::SdeCovariance(f) => &mut f.seed,
            McFile::FiniteSample(f) => &mut f.seed,
            McFile::PhasePortrait(f) => &mut f.seed,
        }
    }

    pub fn job(&self, workers: Option<usize>) -> Checked<McJob> {
        match self {
            McFile::Ensemble(f) | McFile::OdeConvergence(f) if f.k.is_some() => {
                Err(ConfigError::new("k", "only used by the sde_covariance experiment"))
            }
            McFile::Ensemble(f) => Ok(McJob::Ensemble(f.ensemble(workers)?)),
            McFile::OdeConvergence(f) => Ok(McJob::OdeConvergence(f.ensemble(workers)?)),
            McFile::SdeCovariance(f) => {
                let cfg = f.ensemble(workers)?;
                let k = f.k.ok_or_else(|| ConfigError::new("k", "required by the sde_covariance experiment"))?;
                Ok(McJob::SdeCovariance(cfg, k))
            }
            McFile::FiniteSample(f) => {
                let spec = spectrum(&f.spec)?;
                lib(f.init.validate(spec.dim()))?;
                if f.n_chains < 2 {
                    return Err(ConfigError::new("n_chains", "need at least 2 chains"));
                }
                if f.t_list.is_empty() || f.t_list.iter().any(|t| *t < 100) {
                    return Err(ConfigError::new("t_list", "must be a nonempty list of budgets, each at least 100"));
                }
                Ok(McJob::FiniteSample(FiniteSampleConfig {
                    spec,
                    t_list: f.t_list.clone(),
                    n_chains: f.n_chains,
                    sampler: f.sampler,
                    init: f.init.clone(),
                    seed: f.seed,
                    workers,
                }))
            }
            McFile::PhasePortrait(f) => {
                let base = OjaConfig {
                    spec: spectrum(&f.spec)?,
                    beta: f.beta,
                    n_steps: f.n_steps,
                    init: f.init.clone(),
                    seed: f.seed,
                    sampler: f.sampler,
                    record_stride: f.record_stride,
                };
                lib(base.validate())?;
                lib(ojadiff::PhaseThresholds::new(f.delta))?;
                if base.init.saddle_index().is_none_or(|k| k < 2) {
                    return Err(ConfigError::new("init", "must be saddle(k) or near_saddle(k, eps) with k >= 2"));
                }
                if f.n_chains < 2 {
                    return Err(ConfigError::new("n_chains", "need at least 2 chains"));
                }
                Ok(McJob::PhasePortrait(
                    EnsembleConfig {
                        base,
                        n_chains: f.n_chains,
                        t_grid: Vec::new(),
                        workers,
                    },
                    f.delta,
                ))
            }
        }
    }
}

/// `rates`: finite-sample formulas at a sample budget.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RatesFile {
    pub spec: Vec<f64>,
    pub t_samples: u64,
    #[serde(default)]
    pub sigma_star2: Option<f64>,
}

pub struct RatesJob {
    pub spec: EigenSpectrum,
    pub t_samples: u64,
    pub sigma_star2: Option<f64>,
}

impl RatesFile {
    pub fn job(&self) -> Checked<RatesJob> {
        let spec = spectrum(&self.spec)?;
        if self.t_samples < 3 {
            return Err(ConfigError::new("t_samples", format!("must be at least 3, got {}", self.t_samples)));
        }
        if let Some(s) = self.sigma_star2 {
            positive("sigma_star2", s)?;
        }
        Ok(RatesJob {
            spec,
            t_samples: self.t_samples,
            sigma_star2: self.sigma_star2,
        })
    }
}
