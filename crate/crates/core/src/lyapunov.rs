//! Numerical Foster–Lyapunov drift checks for `𝒱(x) = |x₁|ᵏ + β|x₂|ᵏ`:
//! the finite-n chain under the static priority rule, the limiting diffusion
//! under a family of controls, and the chain under a diffusion-induced rule.
//!
//! Every check evaluates the drift on a finite box, so a passing report
//! certifies nothing about states outside it.

use std::path::Path;

use crate::ctmc_sim::{event_rates, EventKind};
use crate::diffusion::{drift_b, ControlMap, ControlVector, DriftData};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{diffusion_scale, LimitParams, SystemInstance};
use crate::policies::{fmt, in_action_set, induced_schedule, sdp_schedule, Alloc, ScheduleDecision, State};

/// Smallest β for which the diffusion drift bound is known to hold under
/// every control that keeps the whole queue in class 1.
pub fn bar_beta(p: &LimitParams, k: f64) -> f64 {
    let hi = p.gamma[0].max(p.mu[0][0]).max(p.mu[0][1]);
    let lo = p.gamma[0].min(p.mu[0][0]).min(p.mu[0][1]);
    hi.powf(k + 1.0) / (p.mu[1][1] * lo.powf(k))
}

pub fn lyapunov_value(x: [f64; 2], k: f64, beta: f64) -> f64 {
    x[0].abs().powf(k) + beta * x[1].abs().powf(k)
}

/// Generator of the scaled chain applied to `𝒱` at state `x` with
/// allocation `z`.
pub fn ctmc_drift(x: State, z: Alloc, inst: &SystemInstance, k: f64, beta: f64) -> Result<f64> {
    if !in_action_set(x, z, inst) {
        return Err(Error::InvalidAction { x });
    }
    Ok(drift_of(x, &ScheduleDecision::from_allocation(x, z, inst), inst, k, beta))
}

fn drift_of(x: State, d: &ScheduleDecision, inst: &SystemInstance, k: f64, beta: f64) -> f64 {
    let here = lyapunov_value(diffusion_scale(x, inst), k, beta);
    let rates = event_rates(d, inst);
    EventKind::ALL
        .iter()
        .zip(rates)
        .filter(|(_, r)| *r > 0.0)
        .map(|(e, r)| {
            let j = e.jump();
            let y = diffusion_scale([x[0] + j[0], x[1] + j[1]], inst);
            r * (lyapunov_value(y, k, beta) - here)
        })
        .sum()
}

/// `Σ λᵢ ∂ᵢᵢ𝒱 + b(x,u)·∇𝒱` in closed form.
pub fn diffusion_drift(x: [f64; 2], u: ControlVector, k: f64, beta: f64, d: &DriftData) -> f64 {
    let b = drift_b(x, u, d);
    let w = [1.0, beta];
    (0..2)
        .map(|i| {
            let a = x[i].abs();
            // |x|^(k−2) with the k = 2 convention 0⁰ = 1.
            let curv = if k == 2.0 { 1.0 } else { a.powf(k - 2.0) };
            let grad = k * x[i].signum() * a.powf(k - 1.0);
            w[i] * (d.lambda[i] * k * (k - 1.0) * curv + b[i] * if a == 0.0 { 0.0 } else { grad })
        })
        .sum()
}

/// Region of the state space by thresholds of the static priority rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaseTag {
    /// Both classes beyond their reserved capacity.
    C1,
    /// Neither beyond; class 1 spills into pool 2.
    C2a,
    /// Neither beyond; class 1 fits in pool 1.
    C2b,
    /// Class 1 beyond, class 2 within; total at or above capacity.
    C3a,
    /// Class 1 beyond, class 2 within; total below capacity.
    C3b,
    /// Class 1 within, class 2 beyond; both pools unsaturated by their own class.
    C4a,
    /// Class 1 fits in pool 1, class 2 overflows pool 2.
    C4b,
    /// Class 1 spills over, total below capacity.
    C4c,
    /// Class 1 spills over, total at or above capacity.
    C4d,
}

impl CaseTag {
    pub fn label(self) -> &'static str {
        match self {
            CaseTag::C1 => "1",
            CaseTag::C2a => "2.1",
            CaseTag::C2b => "2.2",
            CaseTag::C3a => "3.1",
            CaseTag::C3b => "3.2",
            CaseTag::C4a => "4.1",
            CaseTag::C4b => "4.2",
            CaseTag::C4c => "4.3",
            CaseTag::C4d => "4.4",
        }
    }
}

pub fn case_tag(x: State, inst: &SystemInstance) -> CaseTag {
    let [n1, n2] = inst.servers;
    let total = x[0] + x[1] >= n1 + n2;
    match (x[0] >= n1 + inst.n12, x[1] >= inst.n22) {
        (true, true) => CaseTag::C1,
        (false, false) if x[0] > n1 => CaseTag::C2a,
        (false, false) => CaseTag::C2b,
        (true, false) if total => CaseTag::C3a,
        (true, false) => CaseTag::C3b,
        (false, true) if x[0] <= n1 && x[1] <= n2 => CaseTag::C4a,
        (false, true) if x[0] <= n1 => CaseTag::C4b,
        (false, true) if !total => CaseTag::C4c,
        (false, true) => CaseTag::C4d,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseWorst {
    pub case: CaseTag,
    pub points: usize,
    pub x: [f64; 2],
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub target: String,
    pub k: f64,
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
    /// `max (drift + C₂𝒱 − C₁)` over the tested points.
    pub worst_margin: f64,
    pub argmax: [f64; 2],
    pub pass: bool,
    pub points: usize,
    /// Worst point per region, for chain checks.
    pub cases: Vec<CaseWorst>,
    pub note: String,
}

struct Sample {
    x: [f64; 2],
    drift: f64,
    v: f64,
    case: Option<CaseTag>,
}

/// Largest `C₂` for which `drift + C₂𝒱 ≤ 0` at every sample outside the
/// core `|x|∞ ≤ core`, and the smallest matching `C₁` over all samples.
fn fit_constants(samples: &[Sample], core: f64) -> (f64, f64) {
    let outer: Vec<&Sample> = samples.iter().filter(|s| s.x[0].abs().max(s.x[1].abs()) > core).collect();
    let c2 = if outer.is_empty() {
        1.0
    } else {
        outer.iter().map(|s| -s.drift / s.v).fold(f64::INFINITY, f64::min)
    };
    let c1 = samples.iter().map(|s| s.drift + c2 * s.v).fold(f64::NEG_INFINITY, f64::max);
    (c1, c2)
}

fn report(target: &str, k: f64, beta: f64, samples: &[Sample], c1: f64, c2: f64, note: String) -> DriftReport {
    let mut worst = (f64::NEG_INFINITY, [0.0; 2]);
    let mut cases: Vec<CaseWorst> = Vec::new();
    for s in samples {
        let m = s.drift + c2 * s.v - c1;
        if m > worst.0 {
            worst = (m, s.x);
        }
        if let Some(c) = s.case {
            match cases.iter_mut().find(|w| w.case == c) {
                Some(w) => {
                    w.points += 1;
                    if m > w.margin {
                        w.margin = m;
                        w.x = s.x;
                    }
                }
                None => cases.push(CaseWorst { case: c, points: 1, x: s.x, margin: m }),
            }
        }
    }
    cases.sort_by_key(|c| c.case);
    DriftReport {
        target: target.to_string(),
        k,
        beta,
        c1,
        c2,
        worst_margin: worst.0,
        argmax: worst.1,
        pass: c2 > 0.0 && worst.0 <= 0.0,
        points: samples.len(),
        cases,
        note,
    }
}

/// Lattice states with `|x̂|∞ ≤ radius`.
fn lattice_box(inst: &SystemInstance, radius: f64) -> Vec<State> {
    let c = inst.center();
    let w = radius * inst.sqrt_n;
    let range = |i: usize| ((c[i] - w).ceil().max(0.0) as i64, (c[i] + w + 1e-9).floor() as i64);
    let (a0, b0) = range(0);
    let (a1, b1) = range(1);
    let mut out = Vec::new();
    for x1 in a0..=b0 {
        for x2 in a1..=b1 {
            out.push([x1, x2]);
        }
    }
    out
}

/// Drift of the static priority rule on `|x̂|∞ ≤ radius`, with constants
/// fitted outside the half-radius core.
pub fn verify_sdp_drift(inst: &SystemInstance, k: f64, beta: f64, radius: f64, exec: Exec) -> Result<DriftReport> {
    check_k(k)?;
    let states = lattice_box(inst, radius);
    if states.is_empty() {
        return Err(Error::BoxEmpty);
    }
    let samples = exec.map(&states, |&x| {
        let xh = diffusion_scale(x, inst);
        Sample {
            x: xh,
            drift: drift_of(x, &sdp_schedule(x, inst), inst, k, beta),
            v: lyapunov_value(xh, k, beta),
            case: Some(case_tag(x, inst)),
        }
    });
    let (c1, c2) = fit_constants(&samples, 0.5 * radius);
    let c44 = samples.iter().filter(|s| s.case == Some(CaseTag::C4d)).count();
    let note = format!("n={} radius={} case4.4_points={}", inst.n, radius, c44);
    Ok(report("sdp", k, beta, &samples, c1, c2, note))
}

/// Runs [`verify_sdp_drift`] for `count` log-spaced β in `[lo, hi]` and keeps
/// the report with the largest `C₂`.
pub fn search_sdp_beta(
    inst: &SystemInstance,
    k: f64,
    radius: f64,
    (lo, hi): (f64, f64),
    count: usize,
    exec: Exec,
) -> Result<DriftReport> {
    let count = count.max(1);
    let mut best: Option<DriftReport> = None;
    for i in 0..count {
        let f = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
        let beta = lo * (hi / lo).powf(f);
        let r = verify_sdp_drift(inst, k, beta, radius, exec)?;
        if best.as_ref().is_none_or(|b| r.c2 > b.c2) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Controls over which the diffusion drift is maximized at each point.
#[derive(Clone, Copy)]
pub enum ControlFamily<'a> {
    /// Whole queue in class 1 (`t = 1`), idleness split on a grid of step `s_step`.
    ClassOne { s_step: f64 },
    /// Both splits on a grid of the given step.
    All { step: f64 },
    /// A fixed stationary Markov control.
    Field(&'a dyn ControlMap),
}

fn grid01(step: f64) -> Vec<f64> {
    let n = (1.0 / step).ceil().max(1.0) as usize;
    (0..=n).map(|i| (i as f64 / n as f64).min(1.0)).collect()
}

/// Worst-case diffusion drift over a control family on the box
/// `[−half_width, half_width]²` with spacing `step`.
pub fn verify_diffusion_drift(
    d: &DriftData,
    k: f64,
    beta: f64,
    half_width: f64,
    step: f64,
    family: ControlFamily<'_>,
    exec: Exec,
) -> Result<DriftReport> {
    check_k(k)?;
    if !(half_width > 0.0 && step > 0.0) {
        return Err(Error::BoxEmpty);
    }
    let n = (half_width / step).round() as i64;
    let step = half_width / n as f64;
    let pts: Vec<[f64; 2]> =
        (-n..=n).flat_map(|i| (-n..=n).map(move |j| [i as f64 * step, j as f64 * step])).collect();
    let controls: Vec<ControlVector> = match family {
        ControlFamily::ClassOne { s_step } => grid01(s_step).into_iter().map(|s| ControlVector { t: 1.0, s }).collect(),
        ControlFamily::All { step } => {
            let g = grid01(step);
            g.iter().flat_map(|&t| g.iter().map(move |&s| ControlVector { t, s })).collect()
        }
        ControlFamily::Field(_) => Vec::new(),
    };
    let samples = exec.map(&pts, |&x| {
        let drift = match family {
            ControlFamily::Field(f) => diffusion_drift(x, f.control(x), k, beta, d),
            _ => controls.iter().map(|u| diffusion_drift(x, *u, k, beta, d)).fold(f64::NEG_INFINITY, f64::max),
        };
        Sample { x, drift, v: lyapunov_value(x, k, beta), case: None }
    });
    let (c1, c2) = fit_constants(&samples, 0.5 * half_width);
    let target = match family {
        ControlFamily::ClassOne { .. } => "diffusion_class_one",
        ControlFamily::All { .. } => "diffusion_all",
        ControlFamily::Field(_) => "diffusion_field",
    };
    let note = format!("box={half_width} step={step}");
    Ok(report(target, k, beta, &samples, c1, c2, note))
}

/// Chain drift under the schedule induced by `v` on the ℓ¹ ball of radius
/// `radius·n` around `n x*`, checked against `C₁' = 2C₁`, `C₂' = C₂/2` from
/// the diffusion bound `(c1, c2)` of the same field.
pub fn verify_induced_drift(
    inst: &SystemInstance,
    v: &dyn ControlMap,
    k: f64,
    beta: f64,
    radius: f64,
    (c1, c2): (f64, f64),
    exec: Exec,
) -> Result<DriftReport> {
    check_k(k)?;
    let c = inst.center();
    let reach = radius * inst.n as f64;
    let states: Vec<State> = lattice_box(inst, reach / inst.sqrt_n)
        .into_iter()
        .filter(|&x| inst.l1_from_center(x) < reach)
        .collect();
    if states.is_empty() {
        return Err(Error::BoxEmpty);
    }
    let samples = exec.map(&states, |&x| -> Result<Sample> {
        let xh = diffusion_scale(x, inst);
        let d = induced_schedule(x, v, inst)?;
        Ok(Sample { x: xh, drift: drift_of(x, &d, inst, k, beta), v: lyapunov_value(xh, k, beta), case: Some(case_tag(x, inst)) })
    });
    let samples: Vec<Sample> = samples.into_iter().collect::<Result<_>>()?;
    let note = format!("n={} l1_radius={} center=({}, {})", inst.n, reach, c[0], c[1]);
    Ok(report("induced", k, beta, &samples, 2.0 * c1, 0.5 * c2, note))
}

fn check_k(k: f64) -> Result<()> {
    if k >= 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("Lyapunov exponent must be at least 2, got {k}")))
    }
}

/// One row per report.
pub fn write_reports_csv(reports: &[DriftReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "target", "k", "beta", "c1", "c2", "worst_margin", "argmax_x1", "argmax_x2", "pass", "points", "note",
    ])?;
    for r in reports {
        w.write_record([
            r.target.clone(),
            fmt(r.k),
            fmt(r.beta),
            fmt(r.c1),
            fmt(r.c2),
            fmt(r.worst_margin),
            fmt(r.argmax[0]),
            fmt(r.argmax[1]),
            r.pass.to_string(),
            r.points.to_string(),
            r.note.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Worst point per region for every report that has region tags.
pub fn write_cases_csv(reports: &[DriftReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["target", "beta", "case", "points", "x1", "x2", "margin"])?;
    for r in reports {
        for c in &r.cases {
            w.write_record([
                r.target.clone(),
                fmt(r.beta),
                c.case.label().to_string(),
                c.points.to_string(),
                fmt(c.x[0]),
                fmt(c.x[1]),
                fmt(c.margin),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::instantiate;

    #[test]
    fn bar_beta_examples() {
        assert_eq!(bar_beta(&LimitParams::ref1(), 2.0), 4.0);
        assert_eq!(bar_beta(&LimitParams::ref2(), 2.0), 8.0);
        assert_eq!(bar_beta(&LimitParams::ref1(), 3.0), 8.0);
    }

    #[test]
    fn center_drift() {
        let inst = instantiate(&LimitParams::ref1(), 100).unwrap();
        let z = sdp_schedule([130, 70], &inst).z;
        assert!((ctmc_drift([130, 70], z, &inst, 2.0, 1.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((ctmc_drift([130, 70], z, &inst, 2.0, 4.0).unwrap() - 8.2).abs() < 1e-12);
        let z = sdp_schedule([230, 170], &inst).z;
        assert!(ctmc_drift([230, 170], z, &inst, 2.0, 1.0).unwrap() < 0.0);
        assert!(ctmc_drift([130, 70], [[0, 0], [0, 0]], &inst, 2.0, 1.0).is_err());
    }

    #[test]
    fn diffusion_drift_examples() {
        let d = DriftData::new(&LimitParams::ref1()).unwrap();
        let u = ControlVector::DEFAULT;
        assert!((diffusion_drift([1.0, 1.0], u, 2.0, 4.0, &d) - 0.2).abs() < 1e-12);
        assert!((diffusion_drift([0.0, 0.0], u, 2.0, 4.0, &d) - 8.2).abs() < 1e-12);
        assert!(diffusion_drift([10.0, 10.0], u, 2.0, 4.0, &d) < 0.0);
    }

    #[test]
    fn case_tags() {
        let inst = instantiate(&LimitParams::ref1(), 100).unwrap();
        // N = (100, 100), N12 = 30, N22 = 70.
        assert_eq!(case_tag([200, 80], &inst), CaseTag::C1);
        assert_eq!(case_tag([110, 50], &inst), CaseTag::C2a);
        assert_eq!(case_tag([90, 50], &inst), CaseTag::C2b);
        assert_eq!(case_tag([150, 60], &inst), CaseTag::C3a);
        assert_eq!(case_tag([130, 20], &inst), CaseTag::C3b);
        assert_eq!(case_tag([90, 80], &inst), CaseTag::C4a);
        assert_eq!(case_tag([90, 120], &inst), CaseTag::C4b);
        assert_eq!(case_tag([110, 75], &inst), CaseTag::C4c);
        assert_eq!(case_tag([120, 90], &inst), CaseTag::C4d);
    }

    #[test]
    fn radius_zero_passes_trivially() {
        let inst = instantiate(&LimitParams::ref1(), 100).unwrap();
        let r = verify_sdp_drift(&inst, 2.0, 1.0, 0.0, Exec::Sequential).unwrap();
        assert!(r.pass);
        assert_eq!(r.points, 1);
        assert!(r.c1 >= 4.0);
    }
}
