//! Exact average-cost optimization of the finite-n chain on a truncated box
//! by relative value iteration on the uniformized chain.
//!
//! Arrivals that would leave the box are rejected, which keeps the truncated
//! process a proper chain.

use crate::ctmc_sim::{event_rates, EventKind};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::BorderedPattern;
use crate::model::{instantiate, CostSpec, LimitParams, SystemInstance};
use crate::policies::{enumerate_action_set, Alloc, ScheduleDecision, State, TablePolicy};

/// Largest number of states a chain may have.
pub const MAX_STATES: usize = 1_000_000;

/// How the truncation box is chosen for an instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoxRule {
    Fixed([i64; 2]),
    /// `maxᵢ = ⌈n x*ᵢ + width √n⌉`.
    Scaled { width: f64 },
}

impl BoxRule {
    pub fn resolve(&self, inst: &SystemInstance) -> [i64; 2] {
        match *self {
            BoxRule::Fixed(m) => m,
            BoxRule::Scaled { width } => {
                let c = inst.center();
                [(c[0] + width * inst.sqrt_n).ceil() as i64, (c[1] + width * inst.sqrt_n).ceil() as i64]
            }
        }
    }
}

/// Admissible allocations at `x`; inside the ℓ¹ ball of radius `radius·n`
/// around `n x*` only jointly work-conserving ones are kept.
pub fn enumerate_actions(x: State, inst: &SystemInstance, ejwc_radius: Option<f64>) -> Result<Vec<ScheduleDecision>> {
    let mut acts = enumerate_action_set(x, inst);
    if let Some(r) = ejwc_radius {
        if inst.l1_from_center(x) < r * inst.n as f64 {
            acts.retain(|d| d.is_jointly_work_conserving());
        }
    }
    if acts.is_empty() {
        return Err(Error::EmptyActionSet { x });
    }
    Ok(acts)
}

/// One uniformized action: per-step cost, the jumps that leave the state,
/// and the allocation that produced them.
#[derive(Debug, Clone)]
struct Action {
    z: Alloc,
    cost: f64,
    targets: [u32; 7],
    probs: [f64; 7],
}

pub struct TruncatedChain {
    pub inst: SystemInstance,
    pub max: [i64; 2],
    /// Uniformization constant.
    pub rate_bound: f64,
    offsets: Vec<usize>,
    actions: Vec<Action>,
}

impl TruncatedChain {
    pub fn build(inst: &SystemInstance, max: [i64; 2], cost: &CostSpec, ejwc_radius: Option<f64>, exec: Exec) -> Result<Self> {
        if max[0] < 0 || max[1] < 0 {
            return Err(Error::BoxEmpty);
        }
        let count = (max[0] as u128 + 1) * (max[1] as u128 + 1);
        if count > MAX_STATES as u128 {
            return Err(Error::BoxTooLarge(count.min(usize::MAX as u128) as usize));
        }
        let [n1, n2] = inst.servers;
        let rate_bound = inst.lambda[0]
            + inst.lambda[1]
            + (inst.mu[0][0] * n1 as f64)
            + (inst.mu[0][1] + inst.mu[1][1]) * n2 as f64
            + inst.gamma[0] * max[0] as f64
            + inst.gamma[1] * max[1] as f64;
        let states = count as usize;
        let width = max[0] + 1;
        let per_state = exec.map_range(states, |k| -> Result<Vec<Action>> {
            let x = [k as i64 % width, k as i64 / width];
            let acts = enumerate_actions(x, inst, ejwc_radius)?;
            Ok(acts
                .iter()
                .map(|d| {
                    let rates = event_rates(d, inst);
                    let mut targets = [k as u32; 7];
                    let mut probs = [0.0; 7];
                    for (e, (kind, r)) in EventKind::ALL.iter().zip(rates).enumerate() {
                        let j = kind.jump();
                        let y = [x[0] + j[0], x[1] + j[1]];
                        if r > 0.0 && y[0] <= max[0] && y[1] <= max[1] && y[0] >= 0 && y[1] >= 0 {
                            targets[e] = (y[1] * width + y[0]) as u32;
                            probs[e] = r / rate_bound;
                        }
                    }
                    let qh = [d.q[0] as f64 / inst.sqrt_n, d.q[1] as f64 / inst.sqrt_n];
                    let yh = [d.y[0] as f64 / inst.sqrt_n, d.y[1] as f64 / inst.sqrt_n];
                    Action { z: d.z, cost: cost.stage_cost(qh, yh) / rate_bound, targets, probs }
                })
                .collect())
        });
        let mut offsets = Vec::with_capacity(states + 1);
        let mut actions = Vec::new();
        offsets.push(0);
        for a in per_state {
            actions.extend(a?);
            offsets.push(actions.len());
        }
        Ok(TruncatedChain { inst: inst.clone(), max, rate_bound, offsets, actions })
    }

    pub fn states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn index(&self, x: State) -> usize {
        (x[1] * (self.max[0] + 1) + x[0]) as usize
    }

    pub fn state(&self, k: usize) -> State {
        let w = self.max[0] + 1;
        [k as i64 % w, k as i64 / w]
    }

    pub fn action_count(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }

    /// Transition probabilities of action `a` at state `k`, self-loop last.
    pub fn transitions(&self, k: usize, a: usize) -> Vec<(usize, f64)> {
        let act = &self.actions[self.offsets[k] + a];
        let mut out: Vec<(usize, f64)> =
            act.targets.iter().zip(act.probs).filter(|(_, p)| *p > 0.0).map(|(t, p)| (*t as usize, p)).collect();
        let stay = 1.0 - act.probs.iter().sum::<f64>();
        out.push((k, stay));
        out
    }

    fn backup(&self, k: usize, h: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (a, act) in self.actions[self.offsets[k]..self.offsets[k + 1]].iter().enumerate() {
            let mut stay = 1.0;
            let mut v = act.cost;
            for (t, p) in act.targets.iter().zip(act.probs) {
                v += p * h[*t as usize];
                stay -= p;
            }
            v += stay * h[k];
            if v < best.0 {
                best = (v, a);
            }
        }
        best
    }

    /// State nearest the fluid center, clamped into the box.
    fn reference(&self) -> usize {
        let c = self.inst.center();
        let x = [(c[0].round() as i64).clamp(0, self.max[0]), (c[1].round() as i64).clamp(0, self.max[1])];
        self.index(x)
    }

    /// Allocation table for `policy` (action index per state).
    pub fn policy_table(&self, policy: &[usize]) -> Result<TablePolicy> {
        let table = (0..self.states()).map(|k| self.actions[self.offsets[k] + policy[k]].z).collect();
        TablePolicy::new(self.max, table)
    }

    /// Long-run average cost and invariant probabilities of a fixed policy,
    /// from a direct sparse solve of its generator.
    pub fn policy_average(&self, policy: &[usize]) -> Result<(f64, Vec<f64>)> {
        let n = self.states();
        let mut pattern = Vec::with_capacity(8 * n);
        let mut values = Vec::with_capacity(8 * n);
        let mut cost = Vec::with_capacity(n);
        for (k, &a) in policy.iter().enumerate() {
            let act = &self.actions[self.offsets[k] + a];
            let mut out = 0.0;
            for (t, p) in act.targets.iter().zip(act.probs) {
                let t = *t as usize;
                if p > 0.0 && t != k {
                    pattern.push((k, t));
                    values.push(p * self.rate_bound);
                    out += p * self.rate_bound;
                }
            }
            pattern.push((k, k));
            values.push(-out);
            cost.push(act.cost * self.rate_bound);
        }
        let lu = BorderedPattern::new(n, self.reference(), &pattern)
            .and_then(|p| p.factor(&values))
            .map_err(Error::SingularEvaluation)?;
        let (rho, _) = lu.solve_value(&cost).map_err(Error::SingularEvaluation)?;
        let pi = lu.stationary().map_err(Error::SingularAdjoint)?;
        Ok((rho, pi))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RviOptions {
    /// Span tolerance on the time-average scale.
    pub tol: f64,
    pub max_iter: usize,
    pub exec: Exec,
}

impl Default for RviOptions {
    fn default() -> Self {
        RviOptions { tol: 1e-9, max_iter: 2_000_000, exec: Exec::default() }
    }
}

#[derive(Debug, Clone)]
pub struct RviSolution {
    /// Optimal long-run average cost per unit time.
    pub rho: f64,
    /// Lower and upper bounds on `rho` from the last sweep.
    pub bounds: (f64, f64),
    /// Relative values, zero at the state nearest the fluid center.
    pub values: Vec<f64>,
    /// Minimizing action index per state.
    pub policy: Vec<usize>,
    pub iterations: usize,
}

pub fn relative_value_iteration(chain: &TruncatedChain, opts: &RviOptions) -> Result<RviSolution> {
    let n = chain.states();
    let anchor = chain.reference();
    let mut h = vec![0.0; n];
    for it in 1..=opts.max_iter {
        let next = opts.exec.map_range(n, |k| chain.backup(k, &h));
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (k, (v, _)) in next.iter().enumerate() {
            let d = v - h[k];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let span = (hi - lo) * chain.rate_bound;
        if !span.is_finite() {
            return Err(Error::NonConvergentSpan(span));
        }
        let g = next[anchor].0;
        let done = span < opts.tol;
        let policy: Option<Vec<usize>> = done.then(|| next.iter().map(|(_, a)| *a).collect());
        for (k, (v, _)) in next.into_iter().enumerate() {
            h[k] = v - g;
        }
        if let Some(policy) = policy {
            let r = chain.rate_bound;
            return Ok(RviSolution {
                rho: 0.5 * (lo + hi) * r,
                bounds: (lo * r, hi * r),
                values: h,
                policy,
                iterations: it,
            });
        }
    }
    Err(Error::MaxIterations(opts.max_iter))
}

/// Oracle values for a list of scales, one row per `n`.
pub fn lower_bound_curve(
    p: &LimitParams,
    ns: &[u64],
    cost: &CostSpec,
    rule: BoxRule,
    ejwc_radius: Option<f64>,
    opts: &RviOptions,
) -> Result<Vec<(u64, f64)>> {
    ns.iter()
        .map(|&n| {
            let inst = instantiate(p, n)?;
            let chain = TruncatedChain::build(&inst, rule.resolve(&inst), cost, ejwc_radius, opts.exec)?;
            Ok((n, relative_value_iteration(&chain, opts)?.rho))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(n: u64) -> SystemInstance {
        instantiate(&LimitParams::ref1(), n).unwrap()
    }

    #[test]
    fn small_action_sets() {
        let i = inst(2);
        assert_eq!((i.servers, i.n12, i.n22), ([2, 2], 0, 2));
        let a = enumerate_actions([0, 0], &i, None).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].z, [[0; 2]; 2]);
        // Pool 1 may idle a server when class 1 has no queue.
        let a = enumerate_actions([3, 0], &i, None).unwrap();
        let mut z: Vec<Alloc> = a.iter().map(|d| d.z).collect();
        z.sort();
        assert_eq!(z, vec![[[1, 2], [0, 0]], [[2, 1], [0, 0]]]);
        assert_eq!(crate::policies::enumerate_action_set_brute([3, 0], &i).len(), 2);
        let a = enumerate_actions([0, 3], &i, None).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].z, a[0].q, a[0].y), ([[0, 0], [0, 2]], [0, 1], [2, 0]));
    }

    #[test]
    fn probabilities_are_stochastic() {
        let i = inst(3);
        let chain = TruncatedChain::build(&i, [12, 10], &CostSpec::default(), None, Exec::Sequential).unwrap();
        for k in 0..chain.states() {
            for a in 0..chain.action_count(k) {
                let t = chain.transitions(k, a);
                assert!(t.iter().all(|(_, p)| *p >= 0.0));
                assert!((t.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_cost_has_zero_average() {
        let i = inst(3);
        let cost = CostSpec { xi: [0.0; 2], ..CostSpec::default() };
        let chain = TruncatedChain::build(&i, [12, 10], &cost, None, Exec::Sequential).unwrap();
        let sol = relative_value_iteration(&chain, &RviOptions::default()).unwrap();
        assert_eq!(sol.rho, 0.0);
    }

    #[test]
    fn rvi_matches_stationary_solve() {
        let i = inst(3);
        let chain = TruncatedChain::build(&i, [16, 12], &CostSpec::default(), None, Exec::default()).unwrap();
        let sol = relative_value_iteration(&chain, &RviOptions::default()).unwrap();
        let (rho, pi) = chain.policy_average(&sol.policy).unwrap();
        assert!((rho - sol.rho).abs() < 1e-8, "{rho} vs {}", sol.rho);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(sol.bounds.0 <= sol.rho && sol.rho <= sol.bounds.1);
    }

    #[test]
    fn restricting_actions_cannot_help() {
        let i = inst(4);
        let chain = TruncatedChain::build(&i, [18, 14], &CostSpec::default(), None, Exec::default()).unwrap();
        let full = relative_value_iteration(&chain, &RviOptions::default()).unwrap();
        let chain = TruncatedChain::build(&i, [18, 14], &CostSpec::default(), Some(0.2), Exec::default()).unwrap();
        let ejwc = relative_value_iteration(&chain, &RviOptions::default()).unwrap();
        assert!(ejwc.rho >= full.rho - 1e-9);
    }

    #[test]
    fn oversized_box_is_rejected() {
        let i = inst(3);
        assert!(matches!(
            TruncatedChain::build(&i, [5000, 5000], &CostSpec::default(), None, Exec::Sequential),
            Err(Error::BoxTooLarge(_))
        ));
    }
}
