//! Config reference shown by `--help` and mirrored in docs/config-schema.md.

pub const COMMON: &str = "\
Shared value forms:
  spec      eigenvalues, nonincreasing, positive, with spec[0] > spec[1]
  init      \"uniform\" | {\"saddle\": k} | {\"near_saddle\": {\"k\": k, \"eps\": e}}
            | {\"warm\": delta} (v1^2 = 1 - delta) | {\"tilted\": s} (v1^2 = s)
            | {\"vector\": [..]} (unit vector)
  sampler   \"bounded\" (default; atoms, |Y|^2 = trace) | \"gaussian\"
Indices k are 1-based; k = 1 is the principal direction.";

pub const RUN: &str = "\
Config keys (JSON object):
  spec           required  eigenvalues
  beta           required  step size; at most 1/(3*trace) for the bounded sampler
  n_steps        required  number of Oja steps
  init           required  starting point preset
  seed           required  master seed
  sampler        optional  default \"bounded\"
  record_stride  optional  record every n-th step; default max(1, n_steps/10000)
  with_coords    optional  include v1..vd columns; default true
Writes trajectory.csv (step, v1..vd, sin2_angle).";

pub const ODE: &str = "\
Config keys (JSON object):
  spec       required  eigenvalues
  init       required  starting point preset (random presets use `seed`)
  seed       optional  default 0
  grid       one of    explicit list of times
  t_end      one of    last time of a uniform grid from 0
  n_points   optional  points of the uniform grid; default 101
  rk4_dt     optional  also integrate with RK4 at this step (at most 0.01/spec[0])
  delta      optional  also report the time V1^2 first reaches 1 - delta
Writes ode_curve.csv (t, V1_sq..Vd_sq), ode_rk4.csv when rk4_dt is set, and
ode.json.";

pub const SDE: &str = "\
Config keys (JSON object):
  spec          required  eigenvalues
  k             required  stationary point e_k the OU limit lives at
  u0            optional  start of the d-1 rescaled coordinates; default zeros
  t_end         required  simulated time
  dt            required  Euler-Maruyama step, at most 0.01/max(spec[0], spec[0]-spec[d-1])
  seed          required  seed for the path (and for the ensemble streams)
  noise         optional  default true; false drops the diffusion term
  paths         optional  if set (>= 2), also simulate an ensemble of this size
  moment_times  optional  ensemble summary times; default [t_end]
Writes ou_path.csv (t, u<i>) and, with `paths`, ou_moments.csv
(t, mean_i, var_i, closed_mean_i, closed_var_i).";

pub const PHASES: &str = "\
Config keys (JSON object):
  spec      required  eigenvalues
  beta      required  step size
  delta     required  phase threshold in (0, 1/2)
  k         optional  saddle index the chain escapes from; default 2
  ensemble  optional  measure the phases on simulated chains:
    n_chains       required
    n_steps        required  steps per chain
    seed           required
    sampler        optional  default \"gaussian\"
    init           optional  default {\"saddle\": k}
    record_stride  optional  default max(1, n_steps/10000)
Writes phases.json (predicted N1 quantiles, N2 bounds, N3, cutoff ratios);
with `ensemble` also phase_profile.csv (step, median/quartiles of sin^2)
and phase_chains.csv (per-chain N1, N2, N3).";

pub const MC: &str = "\
Config keys (JSON object), selected by `experiment`:
  experiment = \"ensemble\" | \"ode_convergence\" | \"sde_covariance\":
    spec, beta, init, seed    as for `run`
    sampler                   optional  default \"bounded\"
    n_chains                  required
    t_grid                    required  rescaled times, each read at step floor(t/beta)
    n_steps                   optional  default floor(max(t_grid)/beta)
    k                         sde_covariance only: stationary point (init must be
                              {\"saddle\": k}, sampler must be \"gaussian\")
  experiment = \"finite_sample\":
    spec, seed, n_chains      required
    t_list                    required  sample budgets T (each >= 100); beta = ln T/((l1-l2) T)
    sampler                   optional  default \"bounded\"
    init                      optional  default \"uniform\"
  experiment = \"phase_portrait\":
    spec, beta, delta, init, seed, n_steps, n_chains   required
    sampler                   optional  default \"gaussian\"
    record_stride             optional
Writes mc_<experiment>.csv plus mc_<experiment>.json with summary statistics.";

pub const RATES: &str = "\
Config keys (JSON object):
  spec         required  eigenvalues
  t_samples    required  sample budget T (>= 3)
  sigma_star2  optional  noise level for the minimax reference; default l1*l2/(l1-l2)^2
Writes rates.json and table1.csv. Values are rate formulas with unknown
constants set to 1, so they hold up to constants.";

/// Full reference, as shipped in docs/config-schema.md.
#[cfg(test)]
pub fn markdown() -> String {
    let mut out = String::from("# Config reference\n\nEvery subcommand reads one JSON file given by `--config`.\n\n```text\n");
    out.push_str(COMMON);
    out.push_str("\n```\n");
    for (name, text) in [("run", RUN), ("ode", ODE), ("sde", SDE), ("phases", PHASES), ("mc", MC), ("rates", RATES)] {
        out.push_str(&format!("\n## {name}\n\n```text\n{text}\n```\n"));
    }
    out
}
