use super::solver::{policy_iteration, solution_for_policy, HjbSolution, PiOptions};
use super::{Grid, StageCost};
use crate::diffusion::{ControlVector, DriftData, Regularization};
use crate::error::{Error, Result};
use crate::model::CostSpec;

#[derive(Debug, Clone)]
pub struct FairnessOptions {
    pub pi: PiOptions,
    /// Tolerance on `π(r₁) − θ π(r₂)`.
    pub tol: f64,
    pub max_outer: usize,
    /// Bracket expansion stops beyond this multiplier magnitude.
    pub lambda_cap: f64,
    /// Regularization strengths for the ε-mode, in any order; empty disables it.
    pub eps: Vec<f64>,
    pub kappa2: f64,
}

impl Default for FairnessOptions {
    fn default() -> Self {
        FairnessOptions { pi: PiOptions::default(), tol: 1e-3, max_outer: 200, lambda_cap: 1e6, eps: Vec::new(), kappa2: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedEstimate {
    pub eps: f64,
    pub lambda: f64,
    pub rho_f: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct FairnessOutcome {
    pub solution: HjbSolution,
    pub lambda: f64,
    pub constraint: [f64; 2],
    /// `π(r₁) − θ π(r₂)` at the returned policy.
    pub residual: f64,
    /// Long-run queue cost at the returned policy.
    pub rho_f: f64,
    pub outer_iterations: usize,
    /// Weight on the lower-multiplier policy when the constraint map jumps
    /// and the root is reached by mixing two optimal policies.
    pub mixing: Option<f64>,
    /// Whether any probe contradicted `λ ↦ F(λ)` being non-increasing.
    pub monotonicity_violated: bool,
    pub regularized: Vec<RegularizedEstimate>,
    /// Linear extrapolation to zero regularization from the two smallest ε.
    pub extrapolated_rho_f: Option<f64>,
}

struct Probe {
    lambda: f64,
    f: f64,
    sol: HjbSolution,
}

struct Root {
    sol: HjbSolution,
    lambda: f64,
    f: f64,
    iterations: usize,
    mixing: Option<f64>,
    violated: bool,
}

fn gap(sol: &HjbSolution, cost: &CostSpec) -> f64 {
    let r = sol.idleness_means(cost);
    r[0] - cost.theta * r[1]
}

fn find_root(
    grid: &Grid,
    cost: &CostSpec,
    d: &DriftData,
    reg: Option<Regularization>,
    opts: &FairnessOptions,
) -> Result<Root> {
    let mut seen: Vec<(f64, f64)> = Vec::new();
    let probe = |seen: &mut Vec<(f64, f64)>, lambda: f64, init: Option<&[ControlVector]>| -> Result<Probe> {
        let sol = policy_iteration(grid, &StageCost::fairness(cost, lambda, reg), d, init, &opts.pi)?;
        let f = gap(&sol, cost);
        seen.push((lambda, f));
        Ok(Probe { lambda, f, sol })
    };
    let p0 = probe(&mut seen, 0.0, None)?;
    if p0.f.abs() <= opts.tol {
        return Ok(Root { lambda: 0.0, f: p0.f, sol: p0.sol, iterations: 1, mixing: None, violated: false });
    }
    // F is expected to decrease in λ, so search in the direction of F's sign.
    let dir = p0.f.signum();
    let mut lo = p0;
    let mut step = 1.0;
    let mut hi = loop {
        let p = probe(&mut seen, dir * step, Some(&lo.sol.policy))?;
        if p.f.abs() <= opts.tol {
            let violated = violations(&seen);
            return Ok(Root { lambda: p.lambda, f: p.f, sol: p.sol, iterations: seen.len(), mixing: None, violated });
        }
        if p.f.signum() != dir {
            break p;
        }
        lo = p;
        step *= 2.0;
        if step > opts.lambda_cap {
            let (a, b) = if dir > 0.0 { (0.0, dir * step) } else { (dir * step, 0.0) };
            return Err(Error::BracketNotFound { lo: a, hi: b });
        }
    };
    // `lo` has the sign of F(0), `hi` the opposite one.
    for _ in 0..opts.max_outer {
        let width = (hi.lambda - lo.lambda).abs();
        if width <= 1e-12 * (1.0 + lo.lambda.abs()) {
            break;
        }
        let mid = 0.5 * (lo.lambda + hi.lambda);
        let p = probe(&mut seen, mid, Some(&lo.sol.policy))?;
        if p.f.abs() <= opts.tol {
            let violated = violations(&seen);
            return Ok(Root { lambda: p.lambda, f: p.f, sol: p.sol, iterations: seen.len(), mixing: None, violated });
        }
        if p.f.signum() == dir {
            lo = p;
        } else {
            hi = p;
        }
    }
    let violated = violations(&seen);
    // The constraint map jumps at the bracket: mix the two policies.
    let lambda = 0.5 * (lo.lambda + hi.lambda);
    let stage = StageCost::fairness(cost, lambda, reg);
    let (mut a_lo, mut a_hi) = (0.0, 1.0);
    for _ in 0..opts.max_outer {
        let alpha = 0.5 * (a_lo + a_hi);
        let mixed: Vec<ControlVector> = lo
            .sol
            .policy
            .iter()
            .zip(&hi.sol.policy)
            .map(|(a, b)| ControlVector::new(alpha * a.t + (1.0 - alpha) * b.t, alpha * a.s + (1.0 - alpha) * b.s))
            .collect();
        let sol = solution_for_policy(grid, mixed, &stage, d, opts.pi.exec)?;
        let f = gap(&sol, cost);
        if f.abs() <= opts.tol {
            return Ok(Root { lambda, f, sol, iterations: seen.len() + 1, mixing: Some(alpha), violated });
        }
        // More weight on `lo` moves F toward the sign of F(0).
        if f.signum() == dir {
            a_hi = alpha;
        } else {
            a_lo = alpha;
        }
        if a_hi - a_lo < 1e-12 {
            break;
        }
    }
    Err(Error::MaxOuterIterations(opts.max_outer))
}

/// Pairs of probes where a larger multiplier gave a larger constraint gap.
fn violations(seen: &[(f64, f64)]) -> bool {
    seen.iter().any(|a| seen.iter().any(|b| a.0 < b.0 && a.1 < b.1 - 1e-9))
}

/// Bisection on the fairness multiplier; optionally repeats the solve for the
/// regularized cost at each ε and extrapolates the queue cost to ε = 0.
pub fn solve_fairness(grid: &Grid, cost: &CostSpec, d: &DriftData, opts: &FairnessOptions) -> Result<FairnessOutcome> {
    cost.validate()?;
    cost.validate_fairness()?;
    let root = find_root(grid, cost, d, None, opts)?;
    let mut regularized = Vec::new();
    let mut eps = opts.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    for &e in &eps {
        let reg = Regularization { eps: e, kappa2: opts.kappa2 };
        let r = find_root(grid, cost, d, Some(reg), opts)?;
        regularized.push(RegularizedEstimate {
            eps: e,
            lambda: r.lambda,
            rho_f: r.sol.queue_cost_mean(cost),
            residual: r.f,
        });
    }
    let extrapolated_rho_f = match regularized.as_slice() {
        [.., a, b] if a.eps != b.eps => Some(b.rho_f - b.eps * (a.rho_f - b.rho_f) / (a.eps - b.eps)),
        _ => None,
    };
    Ok(FairnessOutcome {
        constraint: root.sol.idleness_means(cost),
        rho_f: root.sol.queue_cost_mean(cost),
        residual: root.f,
        lambda: root.lambda,
        outer_iterations: root.iterations,
        mixing: root.mixing,
        monotonicity_violated: root.violated,
        solution: root.sol,
        regularized,
        extrapolated_rho_f,
    })
}
