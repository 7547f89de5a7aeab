//! Subcommand bodies. Each computes all of its outputs in memory so that a
//! failure leaves no files behind.

use std::fmt::Write as _;

use ojadiff::export::{format_float, moment_table, ode_curve_table, ou_path_table, trajectory_table, Table};
use ojadiff::montecarlo::{
    finite_sample_experiment, ode_convergence_experiment, phase_portrait_experiment, run_ensemble,
    sde_covariance_experiment,
};
use ojadiff::ode::{integrate_rk4, ode_crossing_time, ode_curve};
use ojadiff::oja::run_chain;
use ojadiff::phases::{crossing_report, cutoff_ratios, minimax_lower_bound, rate_report, table1_rows};
use ojadiff::rng::chain_rng;
use ojadiff::sde::{ou_ensemble_moments, simulate_ou, stationary_sin2};
use ojadiff::{Error, SampleBound};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, ConfigError, McFile, McJob};

pub enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

/// Library errors caused by the config map to exit code 2, the rest to 1.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::DegenerateStep { .. } | Error::Integration(_) | Error::Io(_) => Failure::Runtime(e.into()),
            other => Failure::Config(ConfigError::from_lib(other)),
        }
    }
}

/// A file to write, relative to the output directory.
pub struct Output {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Output {
    fn csv(name: &str, table: &Table) -> Self {
        Self {
            name: name.into(),
            bytes: table.to_csv_string().into_bytes(),
        }
    }

    fn json(name: &str, value: &impl Serialize) -> Self {
        let mut text = serde_json::to_string_pretty(value).expect("results serialize");
        text.push('\n');
        Self {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }
}

pub struct Outcome {
    pub master_seed: u64,
    /// The config as run, after overrides.
    pub config: serde_json::Value,
    pub outputs: Vec<Output>,
    pub report: String,
    pub plot: String,
}

fn echo(value: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

pub fn run(text: &str, seed: Option<u64>) -> Result<Outcome, Failure> {
    let mut file: config::RunFile = config::parse(text)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let cfg = file.oja_config()?;
    let traj = run_chain(&cfg)?;
    let last = traj.sin2_angle.last().copied().unwrap_or(f64::NAN);
    Ok(Outcome {
        master_seed: file.seed,
        config: echo(&file),
        outputs: vec![Output::csv("trajectory.csv", &trajectory_table(&traj, file.with_coords))],
        report: format!("{} steps, final sin^2 angle {}", cfg.n_steps, format_float(last)),
        plot: plot_script(
            "trajectory.csv",
            "step",
            "sin^2 angle to e1",
            true,
            &[("sin2_angle", "sin2_angle")],
        ),
    })
}

pub fn ode(text: &str, seed: Option<u64>) -> Result<Outcome, Failure> {
    let mut file: config::OdeFile = config::parse(text)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let job = file.job()?;
    let d = job.spec.dim();
    let v0 = job.init.resolve(d, &mut chain_rng(file.seed, 0))?;
    let rows = ode_curve(&job.spec, &v0, &job.grid)?;
    let mut outputs = vec![Output::csv("ode_curve.csv", &ode_curve_table(&rows))];
    let mut summary = json!({ "v0": v0.coords() });
    let mut report = format!("{} grid points", rows.len());
    if let Some(dt) = job.rk4_dt {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=d).map(|i| format!("V{i}_sq")));
        cols.push("max_abs_diff".into());
        let mut table = Table::new(cols);
        let mut worst = 0.0f64;
        for (t, closed) in &rows {
            let run = integrate_rk4(&job.spec, &v0, *t, dt)?;
            let sq: Vec<f64> = run.state.coords().iter().map(|x| x * x).collect();
            let diff = sq.iter().zip(closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(diff);
            let mut row = vec![*t];
            row.extend(sq);
            row.push(diff);
            table.push(row);
        }
        outputs.push(Output::csv("ode_rk4.csv", &table));
        summary["rk4_dt"] = json!(dt);
        summary["rk4_max_abs_diff"] = json!(worst);
        let _ = write!(report, "; RK4 max |diff| {worst:e}");
    }
    if let Some(delta) = job.delta {
        let t = ode_crossing_time(&job.spec, &v0, delta)?;
        summary["delta"] = json!(delta);
        summary["crossing_time"] = json!(t);
        let _ = write!(report, "; V1^2 reaches {} at t = {}", format_float(1.0 - delta), format_float(t));
    }
    outputs.push(Output::json("ode.json", &summary));
    let series: Vec<(String, String)> = (1..=d).map(|i| (format!("V{i}_sq"), format!("V{i}^2"))).collect();
    let series: Vec<(&str, &str)> = series.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    Ok(Outcome {
        master_seed: file.seed,
        config: echo(&file),
        outputs,
        report,
        plot: plot_script("ode_curve.csv", "t", "V_i(t)^2", false, &series),
    })
}

pub fn sde(text: &str, seed: Option<u64>) -> Result<Outcome, Failure> {
    let mut file: config::SdeFile = config::parse(text)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let job = file.job()?;
    let path = simulate_ou(&job.ou, &job.u0, job.t_end, job.dt, file.seed)?;
    let mut outputs = vec![Output::csv("ou_path.csv", &ou_path_table(&job.ou, &path))];
    let mut report = format!("{} path points", path.times.len());
    if let Some(paths) = job.paths {
        let rows = ou_ensemble_moments(&job.ou, &job.u0, job.dt, &job.moment_times, paths, file.seed)?;
        let consistent = rows.iter().filter(|r| r.consistent(5.0)).count();
        let _ = write!(
            report,
            "; ensemble of {paths}: {consistent}/{} times within 5 standard errors of the closed form",
            rows.len()
        );
        outputs.push(Output::csv("ou_moments.csv", &moment_table(&job.ou, &rows)));
    }
    let coords = job.ou.coordinates();
    let names: Vec<String> = coords.iter().map(|i| format!("u{i}")).collect();
    let series: Vec<(&str, &str)> = names.iter().map(|n| (n.as_str(), n.as_str())).collect();
    Ok(Outcome {
        master_seed: file.seed,
        config: echo(&file),
        outputs,
        report,
        plot: plot_script("ou_path.csv", "t", "rescaled coordinate", false, &series),
    })
}

pub fn phases(text: &str, seed: Option<u64>, workers: Option<usize>) -> Result<Outcome, Failure> {
    let mut file: config::PhasesFile = config::parse(text)?;
    if let (Some(s), Some(slot)) = (seed, file.seed_mut()) {
        *slot = s;
    }
    let job = file.job(workers)?;
    let mut report = crossing_report(&job.spec, job.beta, job.delta, job.k)?;
    let (r21, r31) = cutoff_ratios(&job.spec, job.beta, job.delta, job.k)?;
    let stationary = stationary_sin2(&job.spec, job.beta)?;
    let mut outputs = Vec::new();
    let mut ensemble = serde_json::Value::Null;
    let mut plot = String::new();
    if let Some(cfg) = &job.ensemble {
        let p = phase_portrait_experiment(cfg, job.delta)?;
        outputs.push(Output::csv("phase_profile.csv", &p.profile_table()));
        outputs.push(Output::csv("phase_chains.csv", &p.chains_table()));
        let round = |x: Option<f64>| x.map(|v| v.round() as u64);
        report.empirical = Some(ojadiff::EmpiricalCrossings {
            n1: round(p.median_n1),
            n2: round(p.median_n2),
            n3: round(p.median_n3),
        });
        ensemble = json!({
            "n_chains": cfg.n_chains,
            "median_n1": p.median_n1,
            "median_n2": p.median_n2,
            "median_n3": p.median_n3,
            "terminal_plateau": p.terminal_plateau,
        });
        plot = plot_script(
            "phase_profile.csv",
            "step",
            "sin^2 angle to e1",
            true,
            &[("median_sin2", "median"), ("q25_sin2", "25%"), ("q75_sin2", "75%")],
        );
    }
    let summary = json!({
        "report": report,
        "cutoff_ratio_n2_n1": r21,
        "cutoff_ratio_n3_n1": r31,
        "stationary_sin2": stationary,
        "ensemble": ensemble,
    });
    outputs.insert(0, Output::json("phases.json", &summary));
    Ok(Outcome {
        master_seed: file.ensemble.as_ref().map_or(0, |e| e.seed),
        config: echo(&file),
        outputs,
        report: format!("{report}\nN2/N1 = {r21:.4}, N3/N1 = {r31:.4}"),
        plot,
    })
}

pub fn mc(text: &str, seed: Option<u64>, workers: Option<usize>) -> Result<Outcome, Failure> {
    let mut file: McFile = config::parse(text)?;
    if let Some(s) = seed {
        *file.seed_mut() = s;
    }
    let name = file.name();
    let csv_name = format!("mc_{name}.csv");
    let json_name = format!("mc_{name}.json");
    let master_seed = *file.seed_mut();
    let mut outputs = Vec::new();
    let (summary, report, plot) = match file.job(workers)? {
        McJob::Ensemble(cfg) => {
            let s = run_ensemble(&cfg)?;
            outputs.push(Output::csv(&csv_name, &s.table()));
            let plot = plot_script(&csv_name, "t", "mean v1^2", false, &[("mean_v1_sq", "mean v1^2")]);
            (json!({ "n_chains": s.n_chains }), format!("{} grid times", s.rows.len()), plot)
        }
        McJob::OdeConvergence(cfg) => {
            let r = ode_convergence_experiment(&cfg)?;
            outputs.push(Output::csv(&csv_name, &r.table()));
            let plot = plot_script(
                &csv_name,
                "t",
                "v1^2",
                false,
                &[("mean_v1_sq", "chains"), ("ode_v1_sq", "ODE")],
            );
            (
                json!({ "n_chains": cfg.n_chains, "sup_abs_diff": r.sup_abs_diff }),
                format!("sup_t |mean v1^2 - V1^2| = {}", format_float(r.sup_abs_diff)),
                plot,
            )
        }
        McJob::SdeCovariance(cfg, k) => {
            let r = sde_covariance_experiment(&cfg, k)?;
            outputs.push(Output::csv(&csv_name, &r.table()));
            let worst = r.rows.iter().filter_map(|x| x.max_rel_dev).fold(0.0, f64::max);
            let i = r.coords[0];
            let emp = format!("emp_var_{i}");
            let ou = format!("ou_var_{i}");
            let plot = plot_script(&csv_name, "t", "variance", false, &[(&emp, "chains"), (&ou, "OU")]);
            (
                json!({
                    "n_chains": cfg.n_chains,
                    "k": k,
                    "coords": r.coords,
                    "max_rel_dev": worst,
                    "stationary_sin2": r.stationary_sin2,
                }),
                format!("max relative variance deviation {}", format_float(worst)),
                plot,
            )
        }
        McJob::FiniteSample(cfg) => {
            let r = finite_sample_experiment(&cfg)?;
            outputs.push(Output::csv(&csv_name, &r.table()));
            let ratios: Vec<String> = r.rows.iter().map(|x| format!("{:.4}", x.ratio)).collect();
            let plot = plot_script(
                &csv_name,
                "t_samples",
                "E sin^2 angle",
                true,
                &[("mean_sin2", "chains"), ("bound", "bound")],
            );
            (json!({ "rows": r.rows }), format!("empirical/bound ratios {}", ratios.join(", ")), plot)
        }
        McJob::PhasePortrait(cfg, delta) => {
            let p = phase_portrait_experiment(&cfg, delta)?;
            outputs.push(Output::csv(&csv_name, &p.profile_table()));
            outputs.push(Output::csv(&format!("mc_{name}_chains.csv"), &p.chains_table()));
            let plot = plot_script(
                &csv_name,
                "step",
                "sin^2 angle to e1",
                true,
                &[("median_sin2", "median"), ("q25_sin2", "25%"), ("q75_sin2", "75%")],
            );
            (
                json!({
                    "n_chains": cfg.n_chains,
                    "predicted": p.predicted,
                    "median_n1": p.median_n1,
                    "median_n2": p.median_n2,
                    "median_n3": p.median_n3,
                    "terminal_plateau": p.terminal_plateau,
                    "stationary_sin2": p.stationary_sin2,
                }),
                format!(
                    "median N1 {:?}, N2 {:?}, N3 {:?}; terminal plateau {}",
                    p.median_n1,
                    p.median_n2,
                    p.median_n3,
                    format_float(p.terminal_plateau)
                ),
                plot,
            )
        }
    };
    outputs.push(Output::json(&json_name, &summary));
    Ok(Outcome {
        master_seed,
        config: echo(&file),
        outputs,
        report,
        plot,
    })
}

pub fn rates(text: &str, seed: Option<u64>) -> Result<Outcome, Failure> {
    let file: config::RatesFile = config::parse(text)?;
    let job = file.job()?;
    let mut r = rate_report(&job.spec, job.t_samples)?;
    if let Some(s2) = job.sigma_star2 {
        r.sigma_star2 = s2;
        r.minimax_reference = minimax_lower_bound(&job.spec, job.t_samples, s2);
        r.table1_rows = table1_rows(&job.spec, SampleBound::of_bounded_sampler(&job.spec), job.t_samples, s2)?;
    }
    let mut table = String::from("name,value\n");
    for row in &r.table1_rows {
        let _ = writeln!(table, "{},{}", row.name, format_float(row.value));
    }
    Ok(Outcome {
        master_seed: seed.unwrap_or(0),
        config: echo(&file),
        outputs: vec![
            Output::json("rates.json", &r),
            Output {
                name: "table1.csv".into(),
                bytes: table.into_bytes(),
            },
        ],
        report: r.to_string(),
        plot: String::new(),
    })
}

/// A gnuplot script drawing named CSV columns against `x`.
fn plot_script(csv: &str, x: &str, ylabel: &str, log_y: bool, series: &[(&str, &str)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot -p <this file>, run from the output directory");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set datafile columnheaders");
    let _ = writeln!(s, "set xlabel '{x}'");
    let _ = writeln!(s, "set ylabel '{ylabel}'");
    if log_y {
        let _ = writeln!(s, "set logscale y");
    }
    let parts: Vec<String> = series
        .iter()
        .map(|(col, title)| format!("'{csv}' using (column('{x}')):(column('{col}')) with lines title '{title}'"))
        .collect();
    let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    s
}
