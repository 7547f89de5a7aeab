use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const MINIMAL_RUN: &str = r#"{"spec":[2,1],"beta":1e-3,"n_steps":1000,"init":"uniform","seed":7}"#;

fn ojadiff(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ojadiff"));
    cmd.args(args).env_remove("OJA_DIFFUSION_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

/// Writes `config` into `dir` and runs `sub` with `--out dir/out`.
fn run_cmd(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{sub}.json"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ojadiff(&args, &[])
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn run_writes_trajectory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_cmd(dir.path(), "run", MINIMAL_RUN, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let (header, rows) = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(header, ["step", "v1", "v2", "sin2_angle"]);
    assert_eq!(rows.len(), 1001);
    let m = json(&out.join("run.manifest.json"));
    assert_eq!(m["command"], "run");
    assert_eq!(m["master_seed"], 7);
    assert_eq!(m["status"], "complete");
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"], serde_json::json!(["trajectory.csv"]));
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);

    let first = fs::read(out.join("trajectory.csv")).unwrap();
    let again = run_cmd(dir.path(), "run", MINIMAL_RUN, &[]);
    assert!(again.status.success());
    assert_eq!(fs::read(out.join("trajectory.csv")).unwrap(), first);
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_cmd(dir.path(), "run", MINIMAL_RUN, &[]).status.success());
    let base = fs::read(dir.path().join("out/trajectory.csv")).unwrap();
    assert!(run_cmd(dir.path(), "run", MINIMAL_RUN, &["--seed", "8"]).status.success());
    assert_ne!(fs::read(dir.path().join("out/trajectory.csv")).unwrap(), base);
    let m = json(&dir.path().join("out/run.manifest.json"));
    assert_eq!(m["master_seed"], 8);
    assert_eq!(m["config"]["seed"], 8);
}

#[test]
fn invalid_spectrum_is_a_config_error_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_cmd(
        dir.path(),
        "run",
        r#"{"spec":[1,1],"beta":1e-3,"n_steps":1000,"init":"uniform","seed":7}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("eigengap"), "{err}");
    assert!(err.contains("`spec`"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_and_missing_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_cmd(
        dir.path(),
        "run",
        r#"{"spec":[2,1],"beta":1e-3,"n_steps":10,"init":"uniform","seed":7,"stride":2}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`stride`"));
    let o = run_cmd(dir.path(), "rates", r#"{"spec":[2,1]}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`t_samples`"));
    let o = run_cmd(
        dir.path(),
        "run",
        r#"{"spec":[2,1],"beta":0.5,"n_steps":10,"init":"uniform","seed":7}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`beta`"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = ojadiff(&["run", "--config", missing.to_str().unwrap()], &[("OJA_DIFFUSION_OUT", dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rates_reports_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_cmd(dir.path(), "rates", r#"{"spec":[2,1],"t_samples":100000}"#, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&dir.path().join("out/rates.json"));
    let b = r["bound_sin2"].as_f64().unwrap();
    assert!((b - 1.1513e-4).abs() < 1e-8, "{b}");
    assert!(r["note"].as_str().unwrap().contains("up to constants"));
    let table = fs::read_to_string(dir.path().join("out/table1.csv")).unwrap();
    assert!(table.starts_with("name,value\n"));
    assert!(table.contains("oja, diffusion analysis,0.00002\n"), "{table}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("bound_sin2"));
}

#[test]
fn phases_reference_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_cmd(dir.path(), "phases", r#"{"spec":[2,1],"beta":1e-3,"delta":0.25}"#, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&dir.path().join("out/phases.json"));
    let n3 = r["report"]["predicted"]["n3"].as_f64().unwrap();
    assert!((n3 - 2761.0).abs() < 1.0, "{n3}");
    let n2 = r["report"]["predicted"]["n2_high"].as_f64().unwrap();
    assert!((n2 - 1000.0 * 3f64.ln()).abs() < 1e-9);
    assert!(r["ensemble"].is_null());
}

#[test]
fn phases_with_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"spec":[2,1],"beta":1e-2,"delta":0.25,
        "ensemble":{"n_chains":20,"n_steps":2000,"seed":3,"record_stride":1}}"#;
    let o = run_cmd(dir.path(), "phases", cfg, &["--gnuplot-stub", "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let (header, rows) = csv_rows(&out.join("phase_profile.csv"));
    assert_eq!(header, ["step", "median_sin2", "q25_sin2", "q75_sin2"]);
    assert_eq!(rows.len(), 2001);
    assert!(json(&out.join("phases.json"))["ensemble"]["median_n2"].is_number());
    let gp = fs::read_to_string(out.join("phases.gp")).unwrap();
    assert!(gp.contains("phase_profile.csv"));
    assert_eq!(json(&out.join("phases.manifest.json"))["workers"], 2);
}

#[test]
fn ode_curve_hits_the_logistic_value() {
    let dir = tempfile::tempdir().unwrap();
    let t = 9f64.ln() / 2.0;
    let cfg = format!(r#"{{"spec":[2,1],"init":{{"tilted":0.25}},"grid":[0,{t},3],"delta":0.25,"rk4_dt":0.001}}"#);
    let o = run_cmd(dir.path(), "ode", &cfg, &["--gnuplot-stub"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let (header, rows) = csv_rows(&out.join("ode_curve.csv"));
    assert_eq!(header, ["t", "V1_sq", "V2_sq"]);
    assert!((rows[0][1] - 0.25).abs() < 1e-12);
    assert!((rows[1][0] - 1.0986).abs() < 1e-4);
    assert!((rows[1][1] - 0.75).abs() < 1e-9, "{}", rows[1][1]);
    let s = json(&out.join("ode.json"));
    assert!((s["crossing_time"].as_f64().unwrap() - t).abs() < 1e-9);
    assert!(s["rk4_max_abs_diff"].as_f64().unwrap() < 1e-8);
    assert!(out.join("ode.gp").exists());
    assert!(out.join("ode_rk4.csv").exists());
}

#[test]
fn sde_path_and_moments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"spec":[2,1,0.5],"k":1,"t_end":1,"dt":0.001,"seed":5,"paths":200,"moment_times":[0.5,1]}"#;
    let o = run_cmd(dir.path(), "sde", cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let (header, rows) = csv_rows(&out.join("ou_path.csv"));
    assert_eq!(header, ["t", "u2", "u3"]);
    assert_eq!(rows.len(), 1001);
    assert_eq!(rows[0], [0.0, 0.0, 0.0]);
    let (header, rows) = csv_rows(&out.join("ou_moments.csv"));
    assert_eq!(header[1..5], ["mean_2", "var_2", "closed_mean_2", "closed_var_2"]);
    assert_eq!(rows.len(), 2);
    let bad = run_cmd(dir.path(), "sde", r#"{"spec":[2,1],"k":1,"t_end":1,"dt":0.5,"seed":5}"#, &[]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("`dt`"));
}

#[test]
fn mc_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment":"ode_convergence","spec":[2,1],"beta":0.01,"init":{"tilted":0.25},
        "seed":11,"n_chains":50,"t_grid":[0.5,1,2]}"#;
    assert!(run_cmd(dir.path(), "mc", cfg, &["--workers", "1"]).status.success());
    let a = fs::read(dir.path().join("out/mc_ode_convergence.csv")).unwrap();
    assert!(run_cmd(dir.path(), "mc", cfg, &["--workers", "3"]).status.success());
    let b = fs::read(dir.path().join("out/mc_ode_convergence.csv")).unwrap();
    assert_eq!(a, b);
    let s = json(&dir.path().join("out/mc_ode_convergence.json"));
    assert!(s["sup_abs_diff"].as_f64().unwrap() < 0.1);
}

#[test]
fn mc_sde_rejects_bounded_sampler() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment":"sde_covariance","spec":[2,1],"beta":0.001,"init":{"saddle":1},
        "seed":1,"n_chains":10,"t_grid":[0,1],"k":1}"#;
    let o = run_cmd(dir.path(), "mc", cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fourth moments"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn mc_other_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let runs = [
        (
            r#"{"experiment":"sde_covariance","spec":[2,1],"beta":0.001,"init":{"saddle":1},"sampler":"gaussian",
               "seed":1,"n_chains":50,"t_grid":[0,1],"k":1}"#,
            "mc_sde_covariance.csv",
        ),
        (
            r#"{"experiment":"finite_sample","spec":[2,1],"t_list":[100,1000],"n_chains":20,"seed":2}"#,
            "mc_finite_sample.csv",
        ),
        (
            r#"{"experiment":"phase_portrait","spec":[2,1],"beta":0.01,"delta":0.25,"init":{"saddle":2},
               "seed":3,"n_steps":1000,"n_chains":10}"#,
            "mc_phase_portrait.csv",
        ),
        (
            r#"{"experiment":"ensemble","spec":[3,1,0.5],"beta":0.01,"init":"uniform","seed":4,
               "n_chains":10,"t_grid":[0,1]}"#,
            "mc_ensemble.csv",
        ),
    ];
    for (cfg, file) in runs {
        let o = run_cmd(dir.path(), "mc", cfg, &[]);
        assert!(o.status.success(), "{file}: {}", stderr(&o));
        assert!(dir.path().join("out").join(file).exists(), "{file}");
    }
}

#[test]
fn env_var_sets_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rates.json");
    fs::write(&cfg, r#"{"spec":[2,1],"t_samples":1000}"#).unwrap();
    let target = dir.path().join("from_env");
    let o = ojadiff(&["rates", "--config", cfg.to_str().unwrap()], &[("OJA_DIFFUSION_OUT", &target)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("rates.json").exists());
    assert!(target.join("rates.manifest.json").exists());
}

#[test]
fn help_documents_every_key() {
    let keys: [(&str, &[&str]); 6] = [
        ("run", &["spec", "beta", "n_steps", "init", "seed", "sampler", "record_stride", "with_coords"]),
        ("ode", &["spec", "init", "seed", "grid", "t_end", "n_points", "rk4_dt", "delta"]),
        ("sde", &["spec", "k", "u0", "t_end", "dt", "seed", "noise", "paths", "moment_times"]),
        ("phases", &["spec", "beta", "delta", "k", "ensemble", "n_chains", "n_steps", "record_stride"]),
        ("mc", &["experiment", "n_chains", "t_grid", "n_steps", "t_list", "delta", "record_stride"]),
        ("rates", &["spec", "t_samples", "sigma_star2"]),
    ];
    for (sub, want) in keys {
        let o = ojadiff(&[sub, "--help"], &[]);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for k in want {
            assert!(text.contains(k), "{sub} --help lacks {k}");
        }
        for flag in ["--config", "--out", "--seed", "--workers", "--gnuplot-stub", "OJA_DIFFUSION_OUT"] {
            assert!(text.contains(flag), "{sub} --help lacks {flag}");
        }
    }
}
