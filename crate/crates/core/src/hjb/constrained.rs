use super::solver::{policy_iteration, HjbSolution, PiOptions};
use super::{Grid, StageCost};
use crate::diffusion::DriftData;
use crate::error::{Error, Result};
use crate::model::CostSpec;

#[derive(Debug, Clone, Copy)]
pub struct ConstrainedOptions {
    pub pi: PiOptions,
    /// Feasibility and complementary-slackness tolerance.
    pub tol: f64,
    pub max_outer: usize,
    /// Base step, divided by `max(1, δⱼ)·√k` at outer step `k`.
    pub step: f64,
    /// Multipliers beyond this are taken as divergence.
    pub lambda_cap: f64,
}

impl Default for ConstrainedOptions {
    fn default() -> Self {
        ConstrainedOptions { pi: PiOptions::default(), tol: 1e-3, max_outer: 500, step: 1.0, lambda_cap: 1e6 }
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedOutcome {
    pub solution: HjbSolution,
    pub lambda: [f64; 2],
    /// Long-run idleness functionals under the final policy.
    pub constraint: [f64; 2],
    /// Long-run queue cost under the final policy.
    pub rho_c: f64,
    pub outer_iterations: usize,
}

fn converged(lam: [f64; 2], r: [f64; 2], delta: [f64; 2], tol: f64) -> bool {
    (0..2).all(|j| {
        let gap = r[j] - delta[j];
        let feasible = if lam[j] > 0.0 { gap.abs() <= tol } else { gap <= tol };
        feasible && (lam[j] * gap).abs() <= tol
    })
}

/// Lower bounds on the achievable idleness combinations; a budget below
/// any of them cannot be met by any stationary control.
fn feasibility_certificate(grid: &Grid, cost: &CostSpec, d: &DriftData, opts: &PiOptions) -> Result<()> {
    for w in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
        let c = StageCost { xi: [0.0; 2], w, offset: 0.0, ..StageCost::budget(cost, w) };
        let sol = policy_iteration(grid, &c, d, None, opts)?;
        let need = w[0] * cost.delta[0] + w[1] * cost.delta[1];
        if sol.rho > need + 1e-9 * (1.0 + need) {
            return Err(Error::InfeasibleBudget(format!(
                "minimal long-run idleness along ({}, {}) is {} > {}",
                w[0], w[1], sol.rho, need
            )));
        }
    }
    Ok(())
}

/// Projected subgradient ascent on the multipliers of the idleness-budget
/// problem.
pub fn solve_constrained(
    grid: &Grid,
    cost: &CostSpec,
    d: &DriftData,
    opts: &ConstrainedOptions,
) -> Result<ConstrainedOutcome> {
    cost.validate()?;
    let delta = cost.delta;
    let mut lam = [0.0; 2];
    let mut sol = policy_iteration(grid, &StageCost::budget(cost, lam), d, None, &opts.pi)?;
    let mut r = sol.idleness_means(cost);
    if r[0] <= delta[0] && r[1] <= delta[1] {
        return Ok(ConstrainedOutcome { rho_c: sol.queue_cost_mean(cost), solution: sol, lambda: lam, constraint: r, outer_iterations: 0 });
    }
    feasibility_certificate(grid, cost, d, &opts.pi)?;
    for k in 1..=opts.max_outer {
        for j in 0..2 {
            let a = opts.step / (delta[j].max(1.0) * (k as f64).sqrt());
            lam[j] = (lam[j] + a * (r[j] - delta[j])).max(0.0);
        }
        if lam.iter().any(|l| *l > opts.lambda_cap) {
            return Err(Error::InfeasibleBudget(format!(
                "multipliers ({}, {}) exceeded {} with idleness ({}, {})",
                lam[0], lam[1], opts.lambda_cap, r[0], r[1]
            )));
        }
        sol = policy_iteration(grid, &StageCost::budget(cost, lam), d, Some(&sol.policy), &opts.pi)?;
        r = sol.idleness_means(cost);
        if converged(lam, r, delta, opts.tol) {
            return Ok(ConstrainedOutcome { rho_c: sol.queue_cost_mean(cost), solution: sol, lambda: lam, constraint: r, outer_iterations: k });
        }
    }
    Err(Error::MaxOuterIterations(opts.max_outer))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleCheck {
    /// `max over λ of π*(g_λ) − π*(g_λ*)`; nonpositive at a saddle.
    pub left_gap: f64,
    /// `max over λ of π*(g_λ*) − π_λ(g_λ*)`; nonpositive at a saddle.
    pub right_gap: f64,
    pub points: usize,
}

impl SaddleCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.left_gap <= tol && self.right_gap <= tol
    }
}

/// Checks both saddle inequalities on the grid `λ* + offsets × offsets`,
/// projected onto the nonnegative quadrant.
pub fn saddle_check(
    out: &ConstrainedOutcome,
    grid: &Grid,
    cost: &CostSpec,
    d: &DriftData,
    offsets: &[f64],
    opts: &PiOptions,
) -> Result<SaddleCheck> {
    let star = &out.solution;
    let g_star = StageCost::budget(cost, out.lambda);
    let base = star.pi_expectation(|x, u| g_star.eval(x, u));
    let mut check = SaddleCheck { left_gap: f64::NEG_INFINITY, right_gap: f64::NEG_INFINITY, points: 0 };
    for &a in offsets {
        for &b in offsets {
            let lam = [(out.lambda[0] + a).max(0.0), (out.lambda[1] + b).max(0.0)];
            let g = StageCost::budget(cost, lam);
            check.left_gap = check.left_gap.max(star.pi_expectation(|x, u| g.eval(x, u)) - base);
            let other = policy_iteration(grid, &g, d, Some(&star.policy), opts)?;
            let alt = other.pi_expectation(|x, u| g_star.eval(x, u));
            check.right_gap = check.right_gap.max(base - alt);
            check.points += 1;
        }
    }
    Ok(check)
}
