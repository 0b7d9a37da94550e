use std::path::Path;

use super::{discrete_hamiltonian, discretize_row, Grid, StageCost};
use crate::diffusion::{constraint_costs_rj, running_cost_ro, ControlVector, DriftData};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{BorderedLu, BorderedPattern};
use crate::model::CostSpec;
use crate::policies::{fmt, MarkovControlField};

#[derive(Debug, Clone, Copy)]
pub struct PiOptions {
    pub max_iter: usize,
    /// Stop once successive ergodic values differ by less than this...
    pub rho_tol: f64,
    /// ...and the improvement residual is below this.
    pub residual_tol: f64,
    pub exec: Exec,
}

impl Default for PiOptions {
    fn default() -> Self {
        PiOptions { max_iter: 100, rho_tol: 1e-10, residual_tol: 1e-8, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub rho: f64,
    /// `max |min_u (L^u V + c_u) − ρ|` over interior nodes.
    pub residual: f64,
    pub rho_history: Vec<f64>,
    /// Whether the ergodic values never increased between iterations.
    pub rho_monotone: bool,
}

/// Grid values of the relative value function, zero at the origin.
pub type ValueField = Vec<f64>;
/// Grid controls in node order.
pub type PolicyField = Vec<ControlVector>;

#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub grid: Grid,
    pub rho: f64,
    pub value: ValueField,
    pub policy: PolicyField,
    /// Invariant probabilities of the discretized generator under `policy`.
    pub pi: Vec<f64>,
    pub report: SolveReport,
}

/// Factorizes discrete generators on a fixed grid, reusing the symbolic
/// analysis across policies.
pub(crate) struct Evaluator<'a> {
    grid: &'a Grid,
    d: &'a DriftData,
    pattern: BorderedPattern,
}

impl<'a> Evaluator<'a> {
    pub fn new(grid: &'a Grid, d: &'a DriftData) -> Result<Self> {
        let mut pat = Vec::with_capacity(5 * grid.len());
        for k in 0..grid.len() {
            pat.push((k, k));
            for nb in grid.neighbors(k) {
                pat.push((k, nb));
            }
        }
        let pattern = BorderedPattern::new(grid.len(), grid.origin(), &pat).map_err(Error::SingularEvaluation)?;
        Ok(Evaluator { grid, d, pattern })
    }

    pub fn factor(&self, policy: &[ControlVector]) -> Result<BorderedLu> {
        let mut vals = Vec::with_capacity(5 * self.grid.len());
        for (k, u) in policy.iter().enumerate() {
            let row = discretize_row(k, *u, self.grid, self.d)?;
            vals.push(row.diag);
            vals.extend_from_slice(&row.weights);
        }
        self.pattern.factor(&vals).map_err(Error::SingularEvaluation)
    }
}

fn check_policy(grid: &Grid, policy: &[ControlVector]) -> Result<()> {
    if policy.len() != grid.len() {
        return Err(Error::InvalidParameter(format!(
            "policy has {} nodes, grid has {}",
            policy.len(),
            grid.len()
        )));
    }
    Ok(())
}

fn normalize(pi: Vec<f64>) -> Result<Vec<f64>> {
    let lo = pi.iter().cloned().fold(0.0, f64::min);
    let total: f64 = pi.iter().sum();
    if !(total > 0.0) || lo < -1e-9 * total {
        return Err(Error::SingularAdjoint(format!("invariant vector has mass {total} and minimum {lo}")));
    }
    Ok(pi.into_iter().map(|p| p.max(0.0) / total).collect())
}

/// Ergodic value and relative value of a fixed grid policy.
pub fn evaluate_policy(
    grid: &Grid,
    policy: &[ControlVector],
    cost: &StageCost,
    d: &DriftData,
) -> Result<(f64, ValueField)> {
    check_policy(grid, policy)?;
    let lu = Evaluator::new(grid, d)?.factor(policy)?;
    let c: Vec<f64> = policy.iter().enumerate().map(|(k, u)| cost.eval(grid.point(k), *u)).collect();
    lu.solve_value(&c).map_err(Error::SingularEvaluation)
}

/// Invariant probabilities of the discretized generator of a grid policy.
pub fn stationary_distribution(grid: &Grid, policy: &[ControlVector], d: &DriftData) -> Result<Vec<f64>> {
    check_policy(grid, policy)?;
    let lu = Evaluator::new(grid, d)?.factor(policy)?;
    normalize(lu.stationary().map_err(Error::SingularAdjoint)?)
}

/// Howard policy iteration on the discretized ergodic HJB equation.
pub fn policy_iteration(
    grid: &Grid,
    cost: &StageCost,
    d: &DriftData,
    init: Option<&[ControlVector]>,
    opts: &PiOptions,
) -> Result<HjbSolution> {
    let mut policy: Vec<ControlVector> = match init {
        Some(p) => {
            check_policy(grid, p)?;
            p.to_vec()
        }
        None => vec![ControlVector::DEFAULT; grid.len()],
    };
    let ev = Evaluator::new(grid, d)?;
    let mut history: Vec<f64> = Vec::new();
    let mut monotone = true;
    for it in 1..=opts.max_iter {
        let lu = ev.factor(&policy)?;
        let c: Vec<f64> = policy.iter().enumerate().map(|(k, u)| cost.eval(grid.point(k), *u)).collect();
        let (rho, v) = lu.solve_value(&c).map_err(Error::SingularEvaluation)?;
        if let Some(&prev) = history.last() {
            if rho > prev + 1e-9 * (1.0 + prev.abs()) {
                monotone = false;
            }
        }
        let improved = opts.exec.map_range(grid.len(), |k| discrete_hamiltonian(k, &v, grid, cost, d, Some(policy[k])));
        let residual = improved
            .iter()
            .enumerate()
            .filter(|(k, _)| grid.is_interior(*k))
            .map(|(_, (_, h))| (h - rho).abs())
            .fold(0.0, f64::max);
        let changed = improved.iter().zip(&policy).any(|((u, _), p)| u != p);
        let drho = history.last().map_or(f64::INFINITY, |p| (rho - p).abs());
        history.push(rho);
        if !changed || (drho < opts.rho_tol && residual < opts.residual_tol) {
            let pi = normalize(lu.stationary().map_err(Error::SingularAdjoint)?)?;
            return Ok(HjbSolution {
                grid: *grid,
                rho,
                value: v,
                policy,
                pi,
                report: SolveReport { iterations: it, rho, residual, rho_history: history, rho_monotone: monotone },
            });
        }
        policy = improved.into_iter().map(|(u, _)| u).collect();
    }
    Err(Error::MaxIterations(opts.max_iter))
}

/// Evaluate a fixed grid policy and package it like a solver result; the
/// residual measures how far the policy is from satisfying the HJB equation.
pub(crate) fn solution_for_policy(
    grid: &Grid,
    policy: Vec<ControlVector>,
    cost: &StageCost,
    d: &DriftData,
    exec: Exec,
) -> Result<HjbSolution> {
    check_policy(grid, &policy)?;
    let lu = Evaluator::new(grid, d)?.factor(&policy)?;
    let c: Vec<f64> = policy.iter().enumerate().map(|(k, u)| cost.eval(grid.point(k), *u)).collect();
    let (rho, v) = lu.solve_value(&c).map_err(Error::SingularEvaluation)?;
    let pi = normalize(lu.stationary().map_err(Error::SingularAdjoint)?)?;
    let residual = exec
        .map_range(grid.len(), |k| {
            if grid.is_interior(k) {
                (discrete_hamiltonian(k, &v, grid, cost, d, None).1 - rho).abs()
            } else {
                0.0
            }
        })
        .into_iter()
        .fold(0.0, f64::max);
    Ok(HjbSolution {
        grid: *grid,
        rho,
        value: v,
        policy,
        pi,
        report: SolveReport { iterations: 0, rho, residual, rho_history: vec![rho], rho_monotone: true },
    })
}

/// Bilinear interpolant of the grid policy.
pub fn extract_markov_control(sol: &HjbSolution) -> Result<MarkovControlField> {
    let g = &sol.grid;
    MarkovControlField::new([-g.r[0], -g.r[1]], g.h, g.nodes, sol.policy.clone())
}

impl HjbSolution {
    /// Probability of a set of grid nodes under the invariant measure.
    pub fn pi_mass(&self, mut pred: impl FnMut([f64; 2]) -> bool) -> f64 {
        (0..self.grid.len()).filter(|&k| pred(self.grid.point(k))).map(|k| self.pi[k]).sum()
    }

    /// `Σ π(x) f(x, u(x))` over the grid.
    pub fn pi_expectation(&self, f: impl Fn([f64; 2], ControlVector) -> f64) -> f64 {
        (0..self.grid.len()).map(|k| self.pi[k] * f(self.grid.point(k), self.policy[k])).sum()
    }

    /// Long-run averages of the two idleness functionals.
    pub fn idleness_means(&self, cost: &CostSpec) -> [f64; 2] {
        let r1 = self.pi_expectation(|x, u| constraint_costs_rj(x, u, cost)[0]);
        let r2 = self.pi_expectation(|x, u| constraint_costs_rj(x, u, cost)[1]);
        [r1, r2]
    }

    /// Long-run average queue cost.
    pub fn queue_cost_mean(&self, cost: &CostSpec) -> f64 {
        self.pi_expectation(|x, u| running_cost_ro(x, u, cost))
    }

    pub fn write_value_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x1", "x2", "value", "pi"])?;
        for k in 0..self.grid.len() {
            let x = self.grid.point(k);
            w.write_record([fmt(x[0]), fmt(x[1]), fmt(self.value[k]), fmt(self.pi[k])])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_policy_csv(&self, path: &Path) -> Result<()> {
        extract_markov_control(self)?.write_csv(path)
    }

    /// `key,value` rows; `extra` entries are appended after the solver's.
    pub fn write_report_csv(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["key", "value"])?;
        let r = &self.report;
        let rows = [
            ("rho", fmt(self.rho)),
            ("iterations", r.iterations.to_string()),
            ("residual", fmt(r.residual)),
            ("rho_monotone", r.rho_monotone.to_string()),
            ("nodes", self.grid.len().to_string()),
            ("h1", fmt(self.grid.h[0])),
            ("h2", fmt(self.grid.h[1])),
            ("r1", fmt(self.grid.r[0])),
            ("r2", fmt(self.grid.r[1])),
        ];
        for (k, v) in rows.iter().map(|(k, v)| (*k, v.clone())).chain(extra.iter().cloned()) {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LimitParams;

    fn ref1() -> DriftData {
        DriftData::new(&LimitParams::ref1()).unwrap()
    }

    #[test]
    fn zero_cost_has_zero_value() {
        let g = Grid::square(2.0, 0.25).unwrap();
        let d = ref1();
        let c = StageCost::unconstrained(&CostSpec { xi: [0.0; 2], ..CostSpec::default() });
        assert!(c.is_zero());
        let sol = policy_iteration(&g, &c, &d, None, &PiOptions::default()).unwrap();
        assert!(sol.rho.abs() < 1e-12);
        assert!(sol.value.iter().all(|v| v.abs() < 1e-9));
        assert!(sol.policy.iter().all(|u| *u == ControlVector::DEFAULT));
    }

    #[test]
    fn pi_is_a_probability_and_annihilates_generator() {
        let g = Grid::square(2.0, 0.25).unwrap();
        let d = ref1();
        let pol = vec![ControlVector::new(0.4, 0.3); g.len()];
        let pi = stationary_distribution(&g, &pol, &d).unwrap();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut flux = vec![0.0; g.len()];
        for k in 0..g.len() {
            let r = discretize_row(k, pol[k], &g, &d).unwrap();
            flux[k] += pi[k] * r.diag;
            for a in 0..4 {
                flux[r.neighbors[a]] += pi[k] * r.weights[a];
            }
        }
        assert!(flux.iter().all(|f| f.abs() < 1e-10));
    }

    #[test]
    fn ergodic_value_equals_pi_cost() {
        let g = Grid::square(2.0, 0.25).unwrap();
        let d = ref1();
        let c = StageCost::unconstrained(&CostSpec::default());
        let sol = policy_iteration(&g, &c, &d, None, &PiOptions::default()).unwrap();
        let avg = sol.pi_expectation(|x, u| c.eval(x, u));
        assert!((avg - sol.rho).abs() < 1e-9 * (1.0 + sol.rho));
        assert!(sol.report.rho_monotone);
        let (rho, _) = evaluate_policy(&g, &vec![ControlVector::DEFAULT; g.len()], &c, &d).unwrap();
        assert!(sol.rho <= rho + 1e-12);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let g = Grid::square(2.0, 0.25).unwrap();
        let d = ref1();
        let c = StageCost::unconstrained(&CostSpec { xi: [2.0, 1.0], m: 2.0, ..CostSpec::default() });
        let a = policy_iteration(&g, &c, &d, None, &PiOptions { exec: Exec::Sequential, ..Default::default() }).unwrap();
        let b = policy_iteration(&g, &c, &d, None, &PiOptions::default()).unwrap();
        assert_eq!(a.rho, b.rho);
        assert_eq!(a.policy, b.policy);
    }
}
