use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nnet_core::ctmc_sim::{estimate_costs, pool, simulate_replicates, CostEstimate, SimConfig};
use nnet_core::diffusion::DriftData;
use nnet_core::hjb::{
    extract_markov_control, policy_iteration, saddle_check, solve_constrained, solve_fairness, ConstrainedOptions,
    FairnessOptions, Grid, HjbSolution, PiOptions, StageCost,
};
use nnet_core::lyapunov::{
    bar_beta, search_sdp_beta, verify_diffusion_drift, verify_induced_drift, verify_sdp_drift, write_cases_csv,
    write_reports_csv, ControlFamily, DriftReport,
};
use nnet_core::mdp_oracle::{relative_value_iteration, BoxRule, RviOptions, TruncatedChain};
use nnet_core::model::{fluid_solution, instantiate, SystemInstance};
use nnet_core::policies::{estimate_c0, Concatenated, Induced, MarkovControlField, SchedulingPolicy, Sdp, TablePolicy};
use nnet_core::Exec;

use crate::config::{ExperimentConfig, PolicyKind, Problem};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Core(e.into()))
}

fn rows<const N: usize>(path: &Path, header: [&str; N], body: &[[String; N]]) -> Result<()> {
    let mut w = writer(path)?;
    let io = |e: csv::Error| CliError::Core(e.into());
    w.write_record(header).map_err(io)?;
    for r in body {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn grid(cfg: &ExperimentConfig) -> Result<Grid> {
    Ok(Grid::new(cfg.grid.r, cfg.grid.h)?)
}

fn pi_options(cfg: &ExperimentConfig, exec: Exec) -> PiOptions {
    PiOptions { max_iter: cfg.hjb.max_iter, exec, ..PiOptions::default() }
}

/// Parses and validates the configuration and describes the fluid model.
pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let f = fluid_solution(&cfg.params)?;
    let mut s = String::new();
    let _ = writeln!(s, "configuration valid");
    let _ = writeln!(s, "xi12 = {:?} (pool-2 share serving class 1)", f.xi[0][1]);
    let _ = writeln!(s, "xi22 = {:?} (pool-2 share serving class 2)", f.xi[1][1]);
    let _ = writeln!(s, "fluid center x*: ({:?}, {:?})", f.x_star[0], f.x_star[1]);
    let _ = writeln!(s, "fluid allocation z*: [[{:?}, {:?}], [0, {:?}]]", f.z_star[0][0], f.z_star[0][1], f.z_star[1][1]);
    let _ = writeln!(s, "drift offset: ({:?}, {:?})", f.ell[0], f.ell[1]);
    Ok(s)
}

/// `fluid.csv` with the fluid quantities and `instances.csv` with the
/// finite-n thresholds for every `n` in the list.
pub fn cmd_fluid(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    prepare(out)?;
    let f = fluid_solution(&cfg.params)?;
    let q = [
        ("xi11", f.xi[0][0]),
        ("xi12", f.xi[0][1]),
        ("xi22", f.xi[1][1]),
        ("x1", f.x_star[0]),
        ("x2", f.x_star[1]),
        ("z11", f.z_star[0][0]),
        ("z12", f.z_star[0][1]),
        ("z22", f.z_star[1][1]),
        ("ell1", f.ell[0]),
        ("ell2", f.ell[1]),
    ];
    let body: Vec<[String; 2]> = q.iter().map(|(k, v)| [k.to_string(), fmt(*v)]).collect();
    rows(&out.join("fluid.csv"), ["quantity", "value"], &body)?;
    let mut body = Vec::new();
    for &n in &cfg.n_list {
        let i = instantiate(&cfg.params, n)?;
        let c = i.center();
        body.push([
            n.to_string(),
            i.servers[0].to_string(),
            i.servers[1].to_string(),
            i.n12.to_string(),
            i.n22.to_string(),
            fmt(c[0]),
            fmt(c[1]),
            fmt(estimate_c0(&i)),
        ]);
    }
    rows(&out.join("instances.csv"), ["n", "n1", "n2", "n12", "n22", "center1", "center2", "c0"], &body)
}

/// Solver output beyond the grid fields.
#[derive(Debug, Clone)]
pub struct HjbOutcome {
    pub solution: HjbSolution,
    /// Long-run idleness functionals under the returned policy.
    pub constraint: [f64; 2],
    /// Long-run queue cost under the returned policy.
    pub queue_cost: f64,
    pub extra: Vec<(String, String)>,
}

/// `κ₂ = C₂ min(1, β) 2^{1−k/2}` with `k = max(m, 2)` and `(β, C₂)` from the
/// diffusion drift bound at `β = β̄ₖ`.
pub fn default_kappa2(cfg: &ExperimentConfig, exec: Exec) -> Result<f64> {
    let d = DriftData::new(&cfg.params)?;
    let k = cfg.cost.m.max(2.0);
    let beta = bar_beta(&cfg.params, k);
    let v = &cfg.verify;
    let r = verify_diffusion_drift(&d, k, beta, v.diffusion_box, v.diffusion_step, ControlFamily::ClassOne { s_step: v.s_step }, exec)?;
    Ok(r.c2.max(0.0) * beta.min(1.0) * 2f64.powf(1.0 - k / 2.0))
}

/// Solves the configured problem; writes `value.csv`, `policy.csv`, `report.csv`.
pub fn cmd_hjb(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<HjbOutcome> {
    cfg.validate()?;
    prepare(out)?;
    let g = grid(cfg)?;
    let d = DriftData::new(&cfg.params)?;
    let pi = pi_options(cfg, exec);
    let cost = &cfg.cost;
    let mut extra: Vec<(String, String)> = Vec::new();
    let push = |extra: &mut Vec<(String, String)>, k: &str, v: String| extra.push((k.to_string(), v));
    let solution = match cfg.problem {
        Problem::Unconstrained => {
            push(&mut extra, "problem", "unconstrained".into());
            policy_iteration(&g, &StageCost::unconstrained(cost), &d, None, &pi)?
        }
        Problem::Budget => {
            push(&mut extra, "problem", "budget".into());
            let opts = ConstrainedOptions { pi, tol: cfg.hjb.tol, max_outer: cfg.hjb.max_outer, ..Default::default() };
            let o = solve_constrained(&g, cost, &d, &opts)?;
            push(&mut extra, "lambda1", fmt(o.lambda[0]));
            push(&mut extra, "lambda2", fmt(o.lambda[1]));
            push(&mut extra, "outer_iterations", o.outer_iterations.to_string());
            if !cfg.hjb.saddle_offsets.is_empty() {
                let s = saddle_check(&o, &g, cost, &d, &cfg.hjb.saddle_offsets, &pi)?;
                push(&mut extra, "saddle_left_gap", fmt(s.left_gap));
                push(&mut extra, "saddle_right_gap", fmt(s.right_gap));
                push(&mut extra, "saddle_holds", s.holds(cfg.hjb.tol).to_string());
            }
            o.solution
        }
        Problem::Fairness => {
            push(&mut extra, "problem", "fairness".into());
            let kappa2 = match (cfg.hjb.kappa2, cfg.hjb.eps.is_empty()) {
                (Some(k), _) => k,
                (None, true) => 1.0,
                (None, false) => default_kappa2(cfg, exec)?,
            };
            let opts = FairnessOptions {
                pi,
                tol: cfg.hjb.tol,
                max_outer: cfg.hjb.max_outer,
                eps: cfg.hjb.eps.clone(),
                kappa2,
                ..Default::default()
            };
            let o = solve_fairness(&g, cost, &d, &opts)?;
            push(&mut extra, "lambda", fmt(o.lambda));
            push(&mut extra, "fairness_residual", fmt(o.residual));
            push(&mut extra, "outer_iterations", o.outer_iterations.to_string());
            push(&mut extra, "mixing", opt(o.mixing));
            push(&mut extra, "monotonicity_violated", o.monotonicity_violated.to_string());
            if !o.regularized.is_empty() {
                push(&mut extra, "kappa2", fmt(kappa2));
            }
            for r in &o.regularized {
                push(&mut extra, &format!("eps_{:?}_rho_f", r.eps), fmt(r.rho_f));
                push(&mut extra, &format!("eps_{:?}_lambda", r.eps), fmt(r.lambda));
            }
            push(&mut extra, "extrapolated_rho_f", opt(o.extrapolated_rho_f));
            o.solution
        }
    };
    let constraint = solution.idleness_means(cost);
    let queue_cost = solution.queue_cost_mean(cost);
    push(&mut extra, "pi_r1", fmt(constraint[0]));
    push(&mut extra, "pi_r2", fmt(constraint[1]));
    push(&mut extra, "pi_queue_cost", fmt(queue_cost));
    solution.write_value_csv(&out.join("value.csv"))?;
    solution.write_policy_csv(&out.join("policy.csv"))?;
    let refs: Vec<(&str, String)> = extra.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    solution.write_report_csv(&out.join("report.csv"), &refs)?;
    Ok(HjbOutcome { solution, constraint, queue_cost, extra })
}

fn load_field(path: Option<&PathBuf>) -> Result<MarkovControlField> {
    let p = path.ok_or_else(|| CliError::Config("policy_file is required for this policy".into()))?;
    if !p.exists() {
        return Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "policy file not found")));
    }
    Ok(MarkovControlField::read_csv(p)?)
}

/// Half the smallest JWC radius over the given scales.
pub fn default_radius(cfg: &ExperimentConfig, ns: &[u64]) -> Result<f64> {
    let mut c0 = f64::INFINITY;
    for &n in ns {
        c0 = c0.min(estimate_c0(&instantiate(&cfg.params, n)?));
    }
    Ok(if c0.is_finite() { 0.5 * c0 } else { 0.0 })
}

/// One row of `costs.csv`; `replicate` is `None` for the pooled row.
#[derive(Debug, Clone)]
pub struct CostRow {
    pub n: u64,
    pub replicate: Option<usize>,
    pub estimate: CostEstimate,
    pub events: u64,
}

fn cost_record(r: &CostRow) -> Vec<String> {
    let e = &r.estimate;
    let mut v = vec![
        r.n.to_string(),
        r.replicate.map(|k| k.to_string()).unwrap_or_else(|| "pooled".into()),
        fmt(e.j),
        fmt(e.se_j),
        fmt(e.j_o),
        fmt(e.se_j_o),
        fmt(e.j_c[0]),
        fmt(e.se_j_c[0]),
        fmt(e.j_c[1]),
        fmt(e.se_j_c[1]),
        r.events.to_string(),
    ];
    for (m, se) in e.moments.iter().zip(&e.se_moments) {
        v.push(fmt(*m));
        v.push(fmt(*se));
    }
    v
}

/// Fixed columns, then `moment_k{k}, se_moment_k{k}` per tracked exponent.
fn write_costs(path: &Path, k_list: &[f64], body: &[CostRow]) -> Result<()> {
    let mut w = writer(path)?;
    let io = |e: csv::Error| CliError::Core(e.into());
    let mut header: Vec<String> =
        ["n", "replicate", "j", "se_j", "j_o", "se_j_o", "j_c1", "se_j_c1", "j_c2", "se_j_c2", "events"]
            .map(String::from)
            .to_vec();
    for k in k_list {
        header.push(format!("moment_k{k}"));
        header.push(format!("se_moment_k{k}"));
    }
    w.write_record(&header).map_err(io)?;
    for r in body {
        w.write_record(cost_record(r)).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn sim_config(cfg: &ExperimentConfig, horizon: f64, burn_in: f64) -> SimConfig {
    SimConfig {
        horizon,
        burn_in,
        seed: cfg.seed,
        batches: cfg.simulation.batches,
        k_list: cfg.simulation.k_list.clone(),
        ..SimConfig::default()
    }
}

/// Replicates at one scale plus the pooled estimate, in that order.
pub fn run_replicates(
    inst: &SystemInstance,
    policy: &dyn SchedulingPolicy,
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    replicates: usize,
    exec: Exec,
) -> Result<(Vec<CostRow>, nnet_core::ctmc_sim::TrajectoryStats)> {
    let runs = simulate_replicates(inst, policy, &cfg.cost, sim, replicates.max(1), exec)?;
    let mut out = Vec::with_capacity(runs.len() + 1);
    for (k, r) in runs.iter().enumerate() {
        out.push(CostRow { n: inst.n, replicate: Some(k), estimate: estimate_costs(r, &cfg.cost)?, events: r.events });
    }
    let pooled = pool(&runs).expect("at least one replicate");
    out.push(CostRow { n: inst.n, replicate: None, estimate: estimate_costs(&pooled, &cfg.cost)?, events: pooled.events });
    Ok((out, pooled))
}

/// Replicated simulation under the configured policy for every `n`; writes
/// `costs.csv` and `histogram_n{n}.csv`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<Vec<CostRow>> {
    cfg.validate()?;
    let s = &cfg.simulation;
    let policy: Box<dyn SchedulingPolicy> = match s.policy {
        PolicyKind::Sdp => Box::new(Sdp),
        PolicyKind::Induced => Box::new(Induced::new(load_field(s.policy_file.as_ref())?)),
        PolicyKind::Concatenated => {
            let radius = match s.radius {
                Some(r) => r,
                None => default_radius(cfg, &cfg.n_list)?,
            };
            Box::new(Concatenated::new(load_field(s.policy_file.as_ref())?, radius))
        }
        PolicyKind::Table => {
            let p = s.policy_file.as_ref().ok_or_else(|| CliError::Config("policy_file is required for table".into()))?;
            if !p.exists() {
                return Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "policy file not found")));
            }
            Box::new(TablePolicy::read_csv(p)?)
        }
    };
    prepare(out)?;
    let sim = sim_config(cfg, s.horizon, s.burn_in);
    let mut all = Vec::new();
    for &n in &cfg.n_list {
        let inst = instantiate(&cfg.params, n)?;
        let (r, pooled) = run_replicates(&inst, policy.as_ref(), cfg, &sim, s.replicates, exec)?;
        pooled.write_histogram_csv(&out.join(format!("histogram_n{n}.csv")))?;
        all.extend(r);
    }
    write_costs(&out.join("costs.csv"), &s.k_list, &all)?;
    Ok(all)
}

#[derive(Debug, Clone)]
pub struct OracleRow {
    pub n: u64,
    pub states: usize,
    pub rho: f64,
    pub bounds: (f64, f64),
    pub iterations: usize,
    /// Average cost of the optimal table from a direct stationary solve.
    pub stationary_rho: f64,
    pub table: TablePolicy,
}

/// Exact oracle at one scale.
pub fn run_oracle(cfg: &ExperimentConfig, n: u64, exec: Exec) -> Result<OracleRow> {
    let inst = instantiate(&cfg.params, n)?;
    let m = &cfg.mdp;
    let rule = match m.box_max {
        Some(b) => BoxRule::Fixed(b),
        None => BoxRule::Scaled { width: m.box_width },
    };
    let chain = TruncatedChain::build(&inst, rule.resolve(&inst), &cfg.cost, m.ejwc_radius, exec)?;
    let sol = relative_value_iteration(&chain, &RviOptions { tol: m.tol, exec, ..RviOptions::default() })?;
    let (stationary_rho, _) = chain.policy_average(&sol.policy)?;
    Ok(OracleRow {
        n,
        states: chain.states(),
        rho: sol.rho,
        bounds: sol.bounds,
        iterations: sol.iterations,
        stationary_rho,
        table: chain.policy_table(&sol.policy)?,
    })
}

/// Oracle for every `n` in `mdp.n_list`; writes `mdp.csv` and
/// `policy_table_n{n}.csv`.
pub fn cmd_mdp(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<Vec<OracleRow>> {
    cfg.validate()?;
    prepare(out)?;
    let mut res = Vec::new();
    for &n in &cfg.mdp.n_list {
        let r = run_oracle(cfg, n, exec)?;
        r.table.write_csv(&out.join(format!("policy_table_n{n}.csv")))?;
        res.push(r);
    }
    let body: Vec<[String; 7]> = res
        .iter()
        .map(|r| {
            [
                r.n.to_string(),
                r.states.to_string(),
                fmt(r.rho),
                fmt(r.bounds.0),
                fmt(r.bounds.1),
                r.iterations.to_string(),
                fmt(r.stationary_rho),
            ]
        })
        .collect();
    rows(&out.join("mdp.csv"), ["n", "states", "rho", "rho_lo", "rho_hi", "iterations", "stationary_rho"], &body)?;
    Ok(res)
}

/// Chain drift under static priority, diffusion drift under the class-one
/// controls, and chain drift under the induced policy (skipped without a
/// policy file); writes `drift_reports.csv` and `drift_cases.csv`.
pub fn cmd_verify(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<Vec<DriftReport>> {
    cfg.validate()?;
    prepare(out)?;
    let v = &cfg.verify;
    let d = DriftData::new(&cfg.params)?;
    let bb = bar_beta(&cfg.params, v.k);
    let inst = instantiate(&cfg.params, v.sdp_n)?;
    let sdp = match v.beta {
        Some(b) => verify_sdp_drift(&inst, v.k, b, v.sdp_radius, exec)?,
        None => search_sdp_beta(&inst, v.k, v.sdp_radius, (1.0, 4.0 * bb), v.beta_candidates, exec)?,
    };
    let diff = verify_diffusion_drift(&d, v.k, bb, v.diffusion_box, v.diffusion_step, ControlFamily::ClassOne { s_step: v.s_step }, exec)?;
    let induced = match &v.policy_file {
        Some(p) if p.exists() => {
            let field = MarkovControlField::read_csv(p)?;
            let fd = verify_diffusion_drift(&d, v.k, bb, v.diffusion_box, v.diffusion_step, ControlFamily::Field(&field), exec)?;
            let inst = instantiate(&cfg.params, v.induced_n)?;
            let radius = match v.induced_radius {
                Some(r) => r,
                None => 0.5 * estimate_c0(&inst),
            };
            verify_induced_drift(&inst, &field, v.k, bb, radius, (fd.c1, fd.c2), exec)?
        }
        other => DriftReport {
            target: "induced".into(),
            k: v.k,
            beta: bb,
            c1: f64::NAN,
            c2: f64::NAN,
            worst_margin: f64::NAN,
            argmax: [f64::NAN; 2],
            pass: false,
            points: 0,
            cases: Vec::new(),
            note: match other {
                Some(p) => format!("skipped: {} not found", p.display()),
                None => "skipped: no policy file".into(),
            },
        },
    };
    let reports = vec![sdp, diff, induced];
    write_reports_csv(&reports, &out.join("drift_reports.csv"))?;
    write_cases_csv(&reports, &out.join("drift_cases.csv"))?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: u64,
    /// Pooled cost of the concatenated policy and its standard error.
    pub concat: Option<(f64, f64)>,
    pub oracle: Option<f64>,
    pub rho_star: f64,
}

/// Unconstrained limiting value. The upwind scheme is first order in the
/// grid step, so with `richardson` on the value is `2ϱ(h/2) − ϱ(h)` and the
/// control field comes from the finer grid.
#[derive(Debug, Clone)]
pub struct LimitValue {
    pub rho_star: f64,
    pub rho_h: f64,
    pub rho_half: Option<f64>,
    pub solution: HjbSolution,
}

impl LimitValue {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let body = [
            ["rho_h".to_string(), fmt(self.rho_h)],
            ["rho_half_h".to_string(), opt(self.rho_half)],
            ["rho_star".to_string(), fmt(self.rho_star)],
        ];
        rows(path, ["quantity", "value"], &body)
    }
}

pub fn limit_value(cfg: &ExperimentConfig, exec: Exec) -> Result<LimitValue> {
    let d = DriftData::new(&cfg.params)?;
    let cost = StageCost::unconstrained(&cfg.cost);
    let pi = pi_options(cfg, exec);
    let coarse = policy_iteration(&grid(cfg)?, &cost, &d, None, &pi)?;
    if !cfg.optimality.richardson {
        return Ok(LimitValue { rho_star: coarse.rho, rho_h: coarse.rho, rho_half: None, solution: coarse });
    }
    let h = cfg.grid.h;
    let fine = policy_iteration(&Grid::new(cfg.grid.r, [0.5 * h[0], 0.5 * h[1]])?, &cost, &d, None, &pi)?;
    Ok(LimitValue {
        rho_star: 2.0 * fine.rho - coarse.rho,
        rho_h: coarse.rho,
        rho_half: Some(fine.rho),
        solution: fine,
    })
}

/// Upper side: concatenated policy for `optimality.n_list`. Lower side:
/// exact oracle for `optimality.oracle_n_list`. Writes `convergence.csv`
/// and `convergence_plot.csv` (`x,y,yerr`), plus `limit_value.csv`.
pub fn cmd_optimality(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<Vec<ConvergenceRow>> {
    cfg.validate()?;
    prepare(out)?;
    let o = &cfg.optimality;
    let mut ns: Vec<u64> = o.n_list.iter().chain(&o.oracle_n_list).copied().collect();
    ns.sort_unstable();
    ns.dedup();
    let header = ["n", "j_concat", "se", "rho_oracle", "rho_star"];
    if ns.is_empty() {
        rows::<5>(&out.join("convergence.csv"), header, &[])?;
        rows::<3>(&out.join("convergence_plot.csv"), ["x", "y", "yerr"], &[])?;
        return Ok(Vec::new());
    }
    let limit = limit_value(cfg, exec)?;
    limit.write_csv(&out.join("limit_value.csv"))?;
    let field = extract_markov_control(&limit.solution)?;
    let radius = match o.radius {
        Some(r) => r,
        None => default_radius(cfg, &o.n_list)?,
    };
    let sim = sim_config(cfg, o.horizon, o.burn_in);
    let mut res = Vec::new();
    for n in ns {
        let concat = if o.n_list.contains(&n) {
            let inst = instantiate(&cfg.params, n)?;
            let policy = Concatenated::new(field.clone(), radius);
            let (r, _) = run_replicates(&inst, &policy, cfg, &sim, o.replicates, exec)?;
            let p = &r.last().expect("pooled row").estimate;
            Some((p.j, p.se_j))
        } else {
            None
        };
        let oracle = if o.oracle_n_list.contains(&n) { Some(run_oracle(cfg, n, exec)?.rho) } else { None };
        res.push(ConvergenceRow { n, concat, oracle, rho_star: limit.rho_star });
    }
    let body: Vec<[String; 5]> = res
        .iter()
        .map(|r| [r.n.to_string(), opt(r.concat.map(|c| c.0)), opt(r.concat.map(|c| c.1)), opt(r.oracle), fmt(r.rho_star)])
        .collect();
    rows(&out.join("convergence.csv"), header, &body)?;
    let plot: Vec<[String; 3]> = res
        .iter()
        .filter_map(|r| r.concat.map(|(j, se)| [r.n.to_string(), fmt(j), fmt(se)]))
        .collect();
    rows(&out.join("convergence_plot.csv"), ["x", "y", "yerr"], &plot)?;
    Ok(res)
}
