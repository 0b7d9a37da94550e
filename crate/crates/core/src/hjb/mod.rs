//! Finite-difference solver for the ergodic HJB equations of the limiting
//! diffusion: unconstrained, idleness-budget and fairness variants.
//!
//! The generator `Σ λᵢ ∂ᵢᵢ + b·∇` is discretized by upwinding on a uniform
//! grid over `[-R1, R1] × [-R2, R2]`. Edge nodes reflect through a ghost
//! node, which keeps the scheme monotone for any drift.

mod constrained;
mod fairness;
mod solver;

pub use constrained::{saddle_check, solve_constrained, ConstrainedOptions, ConstrainedOutcome, SaddleCheck};
pub use fairness::{solve_fairness, FairnessOptions, FairnessOutcome, RegularizedEstimate};
pub use solver::{
    evaluate_policy, extract_markov_control, policy_iteration, stationary_distribution, HjbSolution, PiOptions,
    PolicyField, SolveReport, ValueField,
};

use crate::diffusion::{drift_b, excess_parts, ControlVector, DriftData, Regularization};
use crate::error::{Error, Result};
use crate::model::{powr, CostSpec};

/// Uniform grid whose origin is a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub r: [f64; 2],
    pub h: [f64; 2],
    /// Nodes per axis, `2·R/h + 1`.
    pub nodes: [usize; 2],
}

impl Grid {
    pub fn new(r: [f64; 2], h: [f64; 2]) -> Result<Self> {
        let mut nodes = [0; 2];
        for k in 0..2 {
            if !(r[k] > 0.0 && h[k] > 0.0 && h[k] <= r[k]) {
                return Err(Error::InvalidGrid(format!("need 0 < h <= R, got R = {}, h = {}", r[k], h[k])));
            }
            let half = (r[k] / h[k]).round();
            if (half * h[k] - r[k]).abs() > 1e-9 * r[k] {
                return Err(Error::InvalidGrid(format!("R = {} is not a multiple of h = {}", r[k], h[k])));
            }
            nodes[k] = 2 * half as usize + 1;
        }
        Ok(Grid { r, h, nodes })
    }

    pub fn square(r: f64, h: f64) -> Result<Self> {
        Self::new([r, r], [h, h])
    }

    pub fn len(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nodes[0] + i
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nodes[0], k / self.nodes[0])
    }

    pub fn point(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.coords(k);
        [-self.r[0] + i as f64 * self.h[0], -self.r[1] + j as f64 * self.h[1]]
    }

    pub fn origin(&self) -> usize {
        self.index(self.nodes[0] / 2, self.nodes[1] / 2)
    }

    pub fn is_interior(&self, k: usize) -> bool {
        let (i, j) = self.coords(k);
        i > 0 && j > 0 && i + 1 < self.nodes[0] && j + 1 < self.nodes[1]
    }

    /// Neighbor indices `[−e1, +e1, −e2, +e2]`; off-grid neighbors are
    /// reflected onto the opposite side.
    pub fn neighbors(&self, k: usize) -> [usize; 4] {
        let (i, j) = self.coords(k);
        let (n0, n1) = (self.nodes[0], self.nodes[1]);
        let im = if i > 0 { i - 1 } else { i + 1 };
        let ip = if i + 1 < n0 { i + 1 } else { i - 1 };
        let jm = if j > 0 { j - 1 } else { j + 1 };
        let jp = if j + 1 < n1 { j + 1 } else { j - 1 };
        [self.index(im, j), self.index(ip, j), self.index(i, jm), self.index(i, jp)]
    }
}

/// Running cost seen by the HJB solver: queue cost, idleness cost, weighted
/// idleness functionals, a constant and an optional coercive term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageCost {
    pub xi: [f64; 2],
    pub zeta: [f64; 2],
    pub m: f64,
    /// Weights on the two idleness functionals.
    pub w: [f64; 2],
    pub m_tilde: f64,
    pub offset: f64,
    pub reg: Option<Regularization>,
}

impl StageCost {
    /// Queue plus idleness cost.
    pub fn unconstrained(c: &CostSpec) -> Self {
        StageCost { xi: c.xi, zeta: c.zeta, m: c.m, w: [0.0; 2], m_tilde: c.m_tilde, offset: 0.0, reg: None }
    }

    /// Lagrangian of the budget problem at multipliers `lam`.
    pub fn budget(c: &CostSpec, lam: [f64; 2]) -> Self {
        StageCost {
            xi: c.xi,
            zeta: [0.0; 2],
            m: c.m,
            w: lam,
            m_tilde: c.m_tilde,
            offset: -(lam[0] * c.delta[0] + lam[1] * c.delta[1]),
            reg: None,
        }
    }

    /// Lagrangian of the fairness problem at multiplier `lam`.
    pub fn fairness(c: &CostSpec, lam: f64, reg: Option<Regularization>) -> Self {
        StageCost {
            xi: c.xi,
            zeta: [0.0; 2],
            m: c.m,
            w: [lam, -lam * c.theta],
            m_tilde: c.m_tilde,
            offset: 0.0,
            reg,
        }
    }

    /// Queue cost only (the objective of the constrained problems).
    pub fn queue_only(c: &CostSpec) -> Self {
        StageCost { zeta: [0.0; 2], ..Self::unconstrained(c) }
    }

    pub fn is_zero(&self) -> bool {
        self.xi == [0.0; 2] && self.zeta == [0.0; 2] && self.w == [0.0; 2] && self.offset == 0.0 && self.reg.is_none()
    }

    /// Terms in `t` for excess `ep`.
    fn t_terms(&self, ep: f64) -> [Term; 2] {
        let a = powr(ep, self.m);
        [Term::fwd(self.xi[0] * a, self.m), Term::rev(self.xi[1] * a, self.m)]
    }

    /// Terms in `s` for shortage `em`.
    fn s_terms(&self, em: f64) -> [Term; 4] {
        let a = powr(em, self.m);
        let b = powr(em, self.m_tilde);
        [
            Term::fwd(self.zeta[0] * a, self.m),
            Term::rev(self.zeta[1] * a, self.m),
            Term::fwd(self.w[0] * b, self.m_tilde),
            Term::rev(self.w[1] * b, self.m_tilde),
        ]
    }

    fn x_part(&self, x: [f64; 2]) -> f64 {
        self.offset + self.reg.map_or(0.0, |r| r.value(x, self.m))
    }

    pub fn eval(&self, x: [f64; 2], u: ControlVector) -> f64 {
        let (ep, em) = excess_parts(x);
        let mut c = self.x_part(x);
        if ep > 0.0 {
            c += eval_terms(&self.t_terms(ep), u.t);
        }
        if em > 0.0 {
            c += eval_terms(&self.s_terms(em), u.s);
        }
        c
    }
}

/// `coef · θ^exp` or `coef · (1−θ)^exp`.
#[derive(Debug, Clone, Copy)]
struct Term {
    coef: f64,
    exp: f64,
    rev: bool,
}

impl Term {
    fn fwd(coef: f64, exp: f64) -> Self {
        Term { coef, exp, rev: false }
    }
    fn rev(coef: f64, exp: f64) -> Self {
        Term { coef, exp, rev: true }
    }
    fn eval(&self, th: f64) -> f64 {
        if self.coef == 0.0 {
            return 0.0;
        }
        let b = if self.rev { 1.0 - th } else { th };
        self.coef * powr(b.max(0.0), self.exp)
    }
}

fn eval_terms(terms: &[Term], th: f64) -> f64 {
    terms.iter().map(|t| t.eval(th)).sum()
}

const GOLDEN_TOL: f64 = 1e-10;

/// Minimize `lin·θ + Σ terms(θ)` over `[lo, hi]`.
///
/// Exponents in {1, 2} give a quadratic solved exactly. Otherwise convex
/// sums use golden section, and sums with negative weights a coarse scan
/// refined by golden section.
fn minimize_scalar(lin: f64, terms: &[Term], lo: f64, hi: f64) -> (f64, f64) {
    let phi = |th: f64| lin * th + eval_terms(terms, th);
    let mut cands = vec![lo, hi];
    let active: Vec<&Term> = terms.iter().filter(|t| t.coef != 0.0).collect();
    if active.iter().all(|t| t.exp == 1.0 || t.exp == 2.0) {
        let (mut a2, mut a1) = (0.0, lin);
        for t in &active {
            match (t.exp == 2.0, t.rev) {
                (false, false) => a1 += t.coef,
                (false, true) => a1 -= t.coef,
                (true, false) => a2 += t.coef,
                (true, true) => {
                    a2 += t.coef;
                    a1 -= 2.0 * t.coef;
                }
            }
        }
        if a2 > 0.0 {
            cands.push((-a1 / (2.0 * a2)).clamp(lo, hi));
        }
    } else if active.iter().all(|t| t.coef >= 0.0) {
        cands.push(golden(&phi, lo, hi));
    } else {
        let n = 64;
        let step = (hi - lo) / n as f64;
        let best = (0..=n)
            .map(|k| lo + k as f64 * step)
            .min_by(|a, b| phi(*a).total_cmp(&phi(*b)))
            .unwrap_or(lo);
        cands.push(golden(&phi, (best - step).max(lo), (best + step).min(hi)));
    }
    let mut best = (lo, phi(lo));
    for &c in &cands {
        let v = phi(c);
        if v < best.1 {
            best = (c, v);
        }
    }
    best
}

fn golden(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Which scalar the control enters at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Active {
    None,
    T(f64),
    S(f64),
}

fn active(x: [f64; 2]) -> Active {
    let (ep, em) = excess_parts(x);
    if ep > 0.0 {
        Active::T(ep)
    } else if em > 0.0 {
        Active::S(em)
    } else {
        Active::None
    }
}

fn with_scalar(a: Active, th: f64) -> ControlVector {
    match a {
        Active::T(_) => ControlVector { t: th, s: ControlVector::DEFAULT.s },
        Active::S(_) => ControlVector { t: ControlVector::DEFAULT.t, s: th },
        Active::None => ControlVector::DEFAULT,
    }
}

fn default_scalar(a: Active) -> f64 {
    match a {
        Active::S(_) => ControlVector::DEFAULT.s,
        _ => ControlVector::DEFAULT.t,
    }
}

/// Relative tie tolerance for control selection.
const TIE_TOL: f64 = 1e-12;

/// Minimize over the control set a function that is affine in the drift
/// plus the stage cost. `slopes[i]` gives the derivative factor multiplying
/// `b_i` when `b_i > 0` (first) or `b_i < 0` (second); equal factors mean no
/// upwinding.
fn minimize_control(
    x: [f64; 2],
    slopes: [[f64; 2]; 2],
    cost: &StageCost,
    d: &DriftData,
    prefer: Option<ControlVector>,
) -> (ControlVector, f64) {
    let act = active(x);
    let value = |u: ControlVector| -> f64 {
        let b = drift_b(x, u, d);
        let mut v = cost.eval(x, u);
        for i in 0..2 {
            v += b[i] * if b[i] > 0.0 { slopes[i][0] } else { slopes[i][1] };
        }
        v
    };
    if act == Active::None {
        let u = ControlVector::DEFAULT;
        return (u, value(u));
    }
    let b0 = drift_b(x, with_scalar(act, 0.0), d);
    let b1 = drift_b(x, with_scalar(act, 1.0), d);
    let alpha = b0;
    let beta = [b1[0] - b0[0], b1[1] - b0[1]];
    let mut cuts = vec![0.0, 1.0];
    for i in 0..2 {
        if beta[i] != 0.0 && slopes[i][0] != slopes[i][1] {
            let c = -alpha[i] / beta[i];
            if c > 0.0 && c < 1.0 {
                cuts.push(c);
            }
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    let terms: Vec<Term> = match act {
        Active::T(ep) => cost.t_terms(ep).to_vec(),
        Active::S(em) => cost.s_terms(em).to_vec(),
        Active::None => unreachable!(),
    };
    let mut best = (default_scalar(act), f64::INFINITY);
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let mut lin = 0.0;
        for i in 0..2 {
            let bm = alpha[i] + beta[i] * mid;
            let sl = if bm > 0.0 { slopes[i][0] } else { slopes[i][1] };
            lin += beta[i] * sl;
        }
        let (th, _) = minimize_scalar(lin, &terms, lo, hi);
        let v = value(with_scalar(act, th));
        if v < best.1 {
            best = (th, v);
        }
    }
    let tol = TIE_TOL * (1.0 + best.1.abs());
    let def = with_scalar(act, default_scalar(act));
    let vd = value(def);
    if vd <= best.1 + tol {
        return (def, vd);
    }
    if let Some(p) = prefer {
        let p = with_scalar(act, if matches!(act, Active::T(_)) { p.t } else { p.s });
        let vp = value(p);
        if vp <= best.1 + tol {
            return (p, vp);
        }
    }
    (with_scalar(act, best.0), best.1)
}

/// `min over u of b(x,u)·p + cost(x,u)` with its minimizer; ties go to the
/// default control.
pub fn hamiltonian_min(x: [f64; 2], p: [f64; 2], cost: &StageCost, d: &DriftData) -> (ControlVector, f64) {
    minimize_control(x, [[p[0], p[0]], [p[1], p[1]]], cost, d, None)
}

/// Weights of one generator row: `[−e1, +e1, −e2, +e2]` neighbors as given
/// by [`Grid::neighbors`] and the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowWeights {
    pub neighbors: [usize; 4],
    pub weights: [f64; 4],
    pub diag: f64,
}

pub fn discretize_row(k: usize, u: ControlVector, grid: &Grid, d: &DriftData) -> Result<RowWeights> {
    let x = grid.point(k);
    let b = drift_b(x, u, d);
    let (i, j) = grid.coords(k);
    let idx = [i, j];
    let mut weights = [0.0; 4];
    for a in 0..2 {
        let h = grid.h[a];
        let diff = d.lambda[a] / (h * h);
        let mut wm = diff + (-b[a]).max(0.0) / h;
        let mut wp = diff + b[a].max(0.0) / h;
        // Reflect through the ghost node at an edge.
        if idx[a] == 0 {
            wp += wm;
            wm = 0.0;
        } else if idx[a] + 1 == grid.nodes[a] {
            wm += wp;
            wp = 0.0;
        }
        weights[2 * a] = wm;
        weights[2 * a + 1] = wp;
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::NonMonotone { i, j });
    }
    Ok(RowWeights { neighbors: grid.neighbors(k), weights, diag: -weights.iter().sum::<f64>() })
}

/// Slopes for [`minimize_control`] from a grid function at node `k`, and the
/// second-difference part of the operator.
fn discrete_slopes(k: usize, v: &[f64], grid: &Grid, d: &DriftData) -> ([[f64; 2]; 2], f64) {
    let (i, j) = grid.coords(k);
    let idx = [i, j];
    let nb = grid.neighbors(k);
    let vk = v[k];
    let mut slopes = [[0.0; 2]; 2];
    let mut second = 0.0;
    for a in 0..2 {
        let h = grid.h[a];
        let (vm, vp) = (v[nb[2 * a]], v[nb[2 * a + 1]]);
        let dp = (vp - vk) / h;
        let dm = (vk - vm) / h;
        slopes[a] = if idx[a] == 0 {
            [dp, -dp]
        } else if idx[a] + 1 == grid.nodes[a] {
            [-dm, dm]
        } else {
            [dp, dm]
        };
        second += d.lambda[a] * (vp - 2.0 * vk + vm) / (h * h);
    }
    (slopes, second)
}

/// `min over u of [L^u V + c_u](x_k)` on the grid, with its minimizer.
pub fn discrete_hamiltonian(
    k: usize,
    v: &[f64],
    grid: &Grid,
    cost: &StageCost,
    d: &DriftData,
    prefer: Option<ControlVector>,
) -> (ControlVector, f64) {
    let (slopes, second) = discrete_slopes(k, v, grid, d);
    let (u, val) = minimize_control(grid.point(k), slopes, cost, d, prefer);
    (u, val + second)
}

/// `[L^u V + c_u](x_k)` for a given control.
pub fn discrete_operator(k: usize, u: ControlVector, v: &[f64], grid: &Grid, cost: &StageCost, d: &DriftData) -> f64 {
    let (slopes, second) = discrete_slopes(k, v, grid, d);
    let b = drift_b(grid.point(k), u, d);
    let mut val = second + cost.eval(grid.point(k), u);
    for a in 0..2 {
        val += b[a] * if b[a] > 0.0 { slopes[a][0] } else { slopes[a][1] };
    }
    val
}
