//! Scheduling maps for the N-network.
//!
//! A schedule is an allocation `z` (class × pool, `z[1][0] = 0`) from which
//! queues `q` and idle servers `y` follow by the balance equations.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::diffusion::{ControlMap, ControlVector};
use crate::error::{Error, Result};
use crate::model::{diffusion_scale, SystemInstance};

pub type State = [i64; 2];
pub type Alloc = [[i64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScheduleDecision {
    pub z: Alloc,
    pub q: [i64; 2],
    pub y: [i64; 2],
}

impl ScheduleDecision {
    /// Queues and idleness implied by `z` at state `x`; may be negative for
    /// an inadmissible `z`.
    pub fn from_allocation(x: State, z: Alloc, inst: &SystemInstance) -> Self {
        let q = [x[0] - z[0][0] - z[0][1], x[1] - z[1][1] - z[1][0]];
        let y = [inst.servers[0] - z[0][0] - z[1][0], inst.servers[1] - z[0][1] - z[1][1]];
        ScheduleDecision { z, q, y }
    }

    pub fn is_work_conserving(&self) -> bool {
        self.q[0].min(self.y[0]) == 0 && self.q[0].min(self.y[1]) == 0 && self.q[1].min(self.y[1]) == 0
    }

    /// No queue and idleness at the same time anywhere in the system.
    pub fn is_jointly_work_conserving(&self) -> bool {
        (self.q[0] + self.q[1]).min(self.y[0] + self.y[1]) == 0
    }
}

pub fn in_action_set(x: State, z: Alloc, inst: &SystemInstance) -> bool {
    if z[1][0] != 0 || z.iter().flatten().any(|&v| v < 0) {
        return false;
    }
    let d = ScheduleDecision::from_allocation(x, z, inst);
    if d.q.iter().chain(&d.y).any(|&v| v < 0) {
        return false;
    }
    d.q[0].min(d.y[0] + d.y[1]) == 0 && d.q[1].min(d.y[1]) == 0
}

/// Static priority: class 1 to pool 1, then the pool-2 split by reservation.
pub fn sdp_schedule(x: State, inst: &SystemInstance) -> ScheduleDecision {
    let [n1, n2] = inst.servers;
    let over1 = (x[0] - n1).max(0);
    let z11 = x[0].min(n1);
    let z12 = if x[1] >= inst.n22 { over1.min(inst.n12) } else { over1.min(n2 - x[1]) };
    let z22 = if x[0] >= n1 + inst.n12 { x[1].min(inst.n22) } else { x[1].min(n2 - over1) };
    ScheduleDecision::from_allocation(x, [[z11, z12], [0, z22]], inst)
}

/// All admissible allocations by exhaustive search.
pub fn enumerate_action_set_brute(x: State, inst: &SystemInstance) -> Vec<ScheduleDecision> {
    let [n1, n2] = inst.servers;
    let mut out = Vec::new();
    for z11 in 0..=x[0].min(n1) {
        for z12 in 0..=(x[0] - z11).min(n2) {
            for z22 in 0..=x[1].min(n2 - z12) {
                let z = [[z11, z12], [0, z22]];
                if in_action_set(x, z, inst) {
                    out.push(ScheduleDecision::from_allocation(x, z, inst));
                }
            }
        }
    }
    out
}

/// All admissible allocations, enumerated without rejection.
///
/// Idle pool-1 servers force an empty class-1 queue, which fixes `z12`; the
/// class-2 assignment is then forced by `q2 ∧ y2 = 0`. Only with pool 1 full
/// is `z12` free.
pub fn enumerate_action_set(x: State, inst: &SystemInstance) -> Vec<ScheduleDecision> {
    let [n1, n2] = inst.servers;
    let mut out = Vec::new();
    let mut push = |z11: i64, z12: i64, z22: i64| {
        let z = [[z11, z12], [0, z22]];
        debug_assert!(in_action_set(x, z, inst));
        out.push(ScheduleDecision::from_allocation(x, z, inst));
    };
    for z11 in 0..=x[0].min(n1) {
        if z11 < n1 {
            let z12 = x[0] - z11;
            if z12 > n2 {
                continue;
            }
            push(z11, z12, x[1].min(n2 - z12));
        } else {
            for z12 in 0..=(x[0] - n1).min(n2) {
                if x[0] - n1 - z12 > 0 {
                    // Class 1 waits, so pool 2 must be full.
                    if n2 - z12 <= x[1] {
                        push(z11, z12, n2 - z12);
                    }
                } else {
                    push(z11, z12, x[1].min(n2 - z12));
                }
            }
        }
    }
    out
}

/// Whether some admissible allocation leaves no queue or no idleness.
pub fn jwc_holds(x: State, inst: &SystemInstance) -> bool {
    let ex = x[0] + x[1];
    if ex >= inst.total_servers() {
        x[0] >= inst.servers[0]
    } else {
        x[1] <= inst.servers[1]
    }
}

pub fn jwc_holds_brute(x: State, inst: &SystemInstance) -> bool {
    enumerate_action_set_brute(x, inst).iter().any(|d| d.is_jointly_work_conserving())
}

/// Allocation filling pool 1 first up to `N1 − y1` and giving class 2 all of
/// its non-queued jobs.
pub fn jwc_rectangle(x: State, q: [i64; 2], y: [i64; 2], inst: &SystemInstance) -> Result<Alloc> {
    let [n1, n2] = inst.servers;
    let pre = |m: &str| Err(Error::PreconditionViolation(m.to_string()));
    if q.iter().chain(&y).any(|&v| v < 0) {
        return pre("negative queue or idleness");
    }
    if (q[0] + q[1]).min(y[0] + y[1]) != 0 {
        return pre("queues and idleness both positive");
    }
    if q[0] > x[0] || q[1] > x[1] || y[0] > n1 || y[1] > n2 {
        return pre("q must not exceed x and y must not exceed N");
    }
    let served = x[0] + x[1] - q[0] - q[1];
    if served != n1 + n2 - y[0] - y[1] || served < 0 {
        return pre("e·(x − q) must equal e·(N − y) and be nonnegative");
    }
    let z11 = n1 - y[0];
    let z12 = x[0] - q[0] - z11;
    if z12 < 0 {
        return Err(Error::InfeasibleRectangle { x, z12 });
    }
    Ok([[z11, z12], [0, x[1] - q[1]]])
}

/// `(⌊v1⌋, e·v − ⌊v1⌋)` for a vector with integer total.
pub fn rounding_map(v: [f64; 2]) -> Result<[i64; 2]> {
    let total = v[0] + v[1];
    let rounded = total.round();
    if (total - rounded).abs() > 1e-9 || v[0] < 0.0 || v[1] < 0.0 {
        return Err(Error::NonIntegerSum(total));
    }
    let total = rounded as i64;
    let first = (v[0].floor() as i64).clamp(0, total);
    Ok([first, total - first])
}

/// Split an integer total by fraction `frac` for the first component.
fn split_total(total: i64, frac: f64) -> [i64; 2] {
    let first = ((total as f64 * frac).floor() as i64).clamp(0, total);
    [first, total - first]
}

/// Grid-sampled Markov control over a box in scaled-state space, read
/// through bilinear interpolation clamped to the box.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovControlField {
    pub lo: [f64; 2],
    pub h: [f64; 2],
    pub nodes: [usize; 2],
    /// Node `(i, j)` at index `j * nodes[0] + i`.
    pub values: Vec<ControlVector>,
}

impl MarkovControlField {
    pub fn new(lo: [f64; 2], h: [f64; 2], nodes: [usize; 2], values: Vec<ControlVector>) -> Result<Self> {
        if nodes[0] == 0 || nodes[1] == 0 || values.len() != nodes[0] * nodes[1] {
            return Err(Error::InvalidGrid("value count does not match the node grid".into()));
        }
        if values.iter().any(|u| !(0.0..=1.0).contains(&u.t) || !(0.0..=1.0).contains(&u.s)) {
            return Err(Error::InvalidGrid("controls must lie in [0,1]²".into()));
        }
        if h.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidGrid("spacing must be positive".into()));
        }
        Ok(MarkovControlField { lo, h, nodes, values })
    }

    pub fn constant(u: ControlVector) -> Self {
        MarkovControlField { lo: [0.0, 0.0], h: [1.0, 1.0], nodes: [1, 1], values: vec![u] }
    }

    pub fn node_point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.lo[0] + i as f64 * self.h[0], self.lo[1] + j as f64 * self.h[1]]
    }

    pub fn at_node(&self, i: usize, j: usize) -> ControlVector {
        self.values[j * self.nodes[0] + i]
    }

    fn axis(&self, k: usize, x: f64) -> (usize, usize, f64) {
        let n = self.nodes[k];
        if n == 1 {
            return (0, 0, 0.0);
        }
        let r = ((x - self.lo[k]) / self.h[k]).clamp(0.0, (n - 1) as f64);
        let i = (r.floor() as usize).min(n - 2);
        (i, i + 1, r - i as f64)
    }

    pub fn eval(&self, x: [f64; 2]) -> ControlVector {
        let (i0, i1, a) = self.axis(0, x[0]);
        let (j0, j1, b) = self.axis(1, x[1]);
        let w = [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b];
        let c = [self.at_node(i0, j0), self.at_node(i1, j0), self.at_node(i0, j1), self.at_node(i1, j1)];
        let mut t = 0.0;
        let mut s = 0.0;
        for k in 0..4 {
            if w[k] != 0.0 {
                t += w[k] * c[k].t;
                s += w[k] * c[k].s;
            }
        }
        ControlVector::new(t, s)
    }

    /// Rows `x1,x2,t,s`, x1 fastest.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x1", "x2", "t", "s"])?;
        for j in 0..self.nodes[1] {
            for i in 0..self.nodes[0] {
                let p = self.node_point(i, j);
                let u = self.at_node(i, j);
                w.write_record([fmt(p[0]), fmt(p[1]), fmt(u.t), fmt(u.s)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows: Vec<[f64; 4]> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut row = [0.0; 4];
            for (k, v) in row.iter_mut().enumerate() {
                let field = rec.get(k).ok_or_else(|| Error::Parse(format!("missing column {k}")))?;
                *v = field.trim().parse().map_err(|_| Error::Parse(format!("bad number '{field}'")))?;
            }
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    fn from_rows(rows: &[[f64; 4]]) -> Result<Self> {
        let axis = |k: usize| -> Vec<f64> {
            let mut v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
            v
        };
        let (a0, a1) = (axis(0), axis(1));
        if a0.is_empty() || a0.len() * a1.len() != rows.len() {
            return Err(Error::InvalidGrid("rows do not form a complete rectangular grid".into()));
        }
        let step = |a: &[f64]| if a.len() > 1 { (a[a.len() - 1] - a[0]) / (a.len() - 1) as f64 } else { 1.0 };
        let h = [step(&a0), step(&a1)];
        let lo = [a0[0], a1[0]];
        let nodes = [a0.len(), a1.len()];
        let mut values = vec![ControlVector::DEFAULT; rows.len()];
        let mut seen = vec![false; rows.len()];
        for r in rows {
            let i = ((r[0] - lo[0]) / h[0]).round() as usize;
            let j = ((r[1] - lo[1]) / h[1]).round() as usize;
            if i >= nodes[0] || j >= nodes[1] || seen[j * nodes[0] + i] {
                return Err(Error::InvalidGrid("grid is not uniform".into()));
            }
            seen[j * nodes[0] + i] = true;
            values[j * nodes[0] + i] = ControlVector { t: r[2], s: r[3] };
        }
        Self::new(lo, h, nodes, values)
    }
}

impl ControlMap for MarkovControlField {
    fn control(&self, x: [f64; 2]) -> ControlVector {
        self.eval(x)
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Schedule induced by a diffusion control: the excess `e·x − e·N` is split
/// into queues by `u^c`, a shortage into idle servers by `u^s`.
pub fn induced_schedule(x: State, v: &dyn ControlMap, inst: &SystemInstance) -> Result<ScheduleDecision> {
    let excess = x[0] + x[1] - inst.total_servers();
    let u = v.control(diffusion_scale(x, inst));
    let (q, y) = if excess > 0 {
        (split_total(excess, u.t), [0, 0])
    } else {
        ([0, 0], split_total(-excess, u.s))
    };
    let z = jwc_rectangle(x, q, y, inst)?;
    Ok(ScheduleDecision { z, q, y })
}

/// Induced schedule inside the ℓ¹ ball of radius `radius·n` around `n x*`,
/// static priority outside (and on any induced failure).
pub fn concatenated_schedule(
    x: State,
    v: &dyn ControlMap,
    radius: f64,
    inst: &SystemInstance,
) -> ScheduleDecision {
    if inst.l1_from_center(x) <= radius * inst.n as f64 {
        if let Ok(d) = induced_schedule(x, v, inst) {
            return d;
        }
    }
    sdp_schedule(x, inst)
}

/// Fractions of queue and idleness per class/pool, with fixed defaults
/// when empty.
pub fn control_readout(d: &ScheduleDecision) -> ControlVector {
    let eq = d.q[0] + d.q[1];
    let ey = d.y[0] + d.y[1];
    let t = if eq > 0 { d.q[0] as f64 / eq as f64 } else { 1.0 };
    let s = if ey > 0 { d.y[0] as f64 / ey as f64 } else { 0.0 };
    ControlVector { t, s }
}

/// Largest ℓ¹ radius (as a multiple of `n`) around `n x*` inside which joint
/// work conservation holds and the induced schedule is admissible for every
/// control. Checking the four corner controls suffices since the rectangle
/// constraints are monotone in `t` and `s`.
pub fn estimate_c0(inst: &SystemInstance) -> f64 {
    let c = inst.center();
    let reach = (c[0] + c[1]).ceil() as i64 + 2;
    let corners = [
        ControlVector { t: 0.0, s: 0.0 },
        ControlVector { t: 0.0, s: 1.0 },
        ControlVector { t: 1.0, s: 0.0 },
        ControlVector { t: 1.0, s: 1.0 },
    ];
    let mut best = f64::INFINITY;
    let x1lo = (c[0].floor() as i64 - reach).max(0);
    let x2lo = (c[1].floor() as i64 - reach).max(0);
    for x1 in x1lo..=c[0].ceil() as i64 + reach {
        for x2 in x2lo..=c[1].ceil() as i64 + reach {
            let x = [x1, x2];
            let dist = inst.l1_from_center(x);
            if dist >= best {
                continue;
            }
            let bad = !jwc_holds(x, inst)
                || corners.iter().any(|u| induced_schedule(x, u, inst).is_err());
            if bad {
                best = dist;
            }
        }
    }
    // Open ball: every point strictly closer than the nearest bad one is good.
    best * (1.0 - 1e-12) / inst.n as f64
}

/// A stationary scheduling rule.
pub trait SchedulingPolicy: Sync {
    fn decide(&self, x: State, inst: &SystemInstance) -> ScheduleDecision;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sdp;

impl SchedulingPolicy for Sdp {
    fn decide(&self, x: State, inst: &SystemInstance) -> ScheduleDecision {
        sdp_schedule(x, inst)
    }
}

/// Induced schedule with static priority when it is inadmissible.
pub struct Induced<C: ControlMap> {
    pub field: C,
    fallbacks: AtomicU64,
}

impl<C: ControlMap> Induced<C> {
    pub fn new(field: C) -> Self {
        Induced { field, fallbacks: AtomicU64::new(0) }
    }

    pub fn fallbacks(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }
}

impl<C: ControlMap> SchedulingPolicy for Induced<C> {
    fn decide(&self, x: State, inst: &SystemInstance) -> ScheduleDecision {
        induced_schedule(x, &self.field, inst).unwrap_or_else(|_| {
            self.fallbacks.fetch_add(1, Ordering::Relaxed);
            sdp_schedule(x, inst)
        })
    }
}

pub struct Concatenated<C: ControlMap> {
    pub field: C,
    pub radius: f64,
    fallbacks: AtomicU64,
}

impl<C: ControlMap> Concatenated<C> {
    pub fn new(field: C, radius: f64) -> Self {
        Concatenated { field, radius, fallbacks: AtomicU64::new(0) }
    }

    /// Ball states where the induced schedule was inadmissible.
    pub fn fallbacks(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }
}

impl<C: ControlMap> SchedulingPolicy for Concatenated<C> {
    fn decide(&self, x: State, inst: &SystemInstance) -> ScheduleDecision {
        if inst.l1_from_center(x) <= self.radius * inst.n as f64 {
            match induced_schedule(x, &self.field, inst) {
                Ok(d) => return d,
                Err(_) => {
                    self.fallbacks.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        sdp_schedule(x, inst)
    }
}

/// Allocation table over a box `[0, max1] × [0, max2]`, static priority
/// outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePolicy {
    pub max: [i64; 2],
    pub table: Vec<Alloc>,
}

impl TablePolicy {
    pub fn new(max: [i64; 2], table: Vec<Alloc>) -> Result<Self> {
        if table.len() != ((max[0] + 1) * (max[1] + 1)) as usize {
            return Err(Error::InvalidGrid("table size does not match box".into()));
        }
        Ok(TablePolicy { max, table })
    }

    fn index(&self, x: State) -> Option<usize> {
        if x[0] < 0 || x[1] < 0 || x[0] > self.max[0] || x[1] > self.max[1] {
            return None;
        }
        Some((x[1] * (self.max[0] + 1) + x[0]) as usize)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x1", "x2", "z11", "z12", "z22"])?;
        for x2 in 0..=self.max[1] {
            for x1 in 0..=self.max[0] {
                let z = self.table[self.index([x1, x2]).unwrap()];
                w.write_record([x1, x2, z[0][0], z[0][1], z[1][1]].map(|v| v.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut row = [0i64; 5];
            for (k, v) in row.iter_mut().enumerate() {
                let field = rec.get(k).ok_or_else(|| Error::Parse(format!("missing column {k}")))?;
                *v = field.trim().parse().map_err(|_| Error::Parse(format!("bad integer '{field}'")))?;
            }
            rows.push(row);
        }
        let max = [
            rows.iter().map(|r| r[0]).max().unwrap_or(-1),
            rows.iter().map(|r| r[1]).max().unwrap_or(-1),
        ];
        if max[0] < 0 || rows.len() as i64 != (max[0] + 1) * (max[1] + 1) {
            return Err(Error::InvalidGrid("policy table is not a complete box".into()));
        }
        let mut table = vec![[[0; 2]; 2]; rows.len()];
        for r in rows {
            if r[0] < 0 || r[1] < 0 {
                return Err(Error::InvalidGrid("negative state in policy table".into()));
            }
            table[(r[1] * (max[0] + 1) + r[0]) as usize] = [[r[2], r[3]], [0, r[4]]];
        }
        Self::new(max, table)
    }
}

impl SchedulingPolicy for TablePolicy {
    fn decide(&self, x: State, inst: &SystemInstance) -> ScheduleDecision {
        match self.index(x) {
            Some(k) => ScheduleDecision::from_allocation(x, self.table[k], inst),
            None => sdp_schedule(x, inst),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{instantiate, LimitParams};

    fn inst(n: u64) -> SystemInstance {
        instantiate(&LimitParams::ref1(), n).unwrap()
    }

    fn dec(z: Alloc, q: [i64; 2], y: [i64; 2]) -> ScheduleDecision {
        ScheduleDecision { z, q, y }
    }

    #[test]
    fn sdp_cases() {
        let i = inst(100);
        assert_eq!(sdp_schedule([135, 75], &i), dec([[100, 30], [0, 70]], [5, 5], [0, 0]));
        assert_eq!(sdp_schedule([80, 50], &i), dec([[80, 0], [0, 50]], [0, 0], [20, 50]));
        assert_eq!(sdp_schedule([120, 90], &i), dec([[100, 20], [0, 80]], [0, 10], [0, 0]));
        assert_eq!(sdp_schedule([140, 40], &i), dec([[100, 40], [0, 40]], [0, 0], [0, 20]));
    }

    #[test]
    fn action_set_examples() {
        let i = inst(100);
        assert!(in_action_set([135, 75], [[100, 30], [0, 70]], &i));
        assert!(!in_action_set([80, 50], [[79, 0], [0, 50]], &i));
        assert!(!in_action_set([135, 75], [[100, 30], [1, 70]], &i));
    }

    #[test]
    fn jwc_examples() {
        let i = inst(100);
        assert!(jwc_holds([130, 70], &i));
        assert!(jwc_holds([250, 0], &i));
        assert!(!jwc_holds([0, 250], &i));
    }

    #[test]
    fn rectangle_examples() {
        let i = inst(100);
        assert_eq!(jwc_rectangle([135, 75], [10, 0], [0, 0], &i).unwrap(), [[100, 25], [0, 75]]);
        assert_eq!(jwc_rectangle([130, 70], [0, 0], [0, 0], &i).unwrap(), [[100, 30], [0, 70]]);
        assert_eq!(jwc_rectangle([90, 60], [0, 0], [10, 40], &i).unwrap(), [[90, 0], [0, 60]]);
        assert!(matches!(
            jwc_rectangle([135, 75], [5, 0], [0, 0], &i),
            Err(Error::PreconditionViolation(_))
        ));
        assert!(matches!(
            jwc_rectangle([50, 100], [0, 0], [0, 50], &i),
            Err(Error::InfeasibleRectangle { .. })
        ));
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(rounding_map([2.4, 0.6]).unwrap(), [2, 1]);
        assert_eq!(rounding_map([0.0, 0.0]).unwrap(), [0, 0]);
        assert_eq!(rounding_map([3.7, 1.3]).unwrap(), [3, 2]);
        assert!(matches!(rounding_map([0.5, 0.2]), Err(Error::NonIntegerSum(_))));
    }

    #[test]
    fn induced_examples() {
        let i = inst(100);
        let v = ControlVector::DEFAULT;
        assert_eq!(induced_schedule([135, 75], &v, &i).unwrap(), dec([[100, 25], [0, 75]], [10, 0], [0, 0]));
        assert_eq!(induced_schedule([125, 65], &v, &i).unwrap(), dec([[100, 25], [0, 65]], [0, 0], [0, 10]));
        assert_eq!(induced_schedule([130, 70], &v, &i).unwrap(), dec([[100, 30], [0, 70]], [0, 0], [0, 0]));
    }

    #[test]
    fn concatenated_examples() {
        let i = inst(100);
        let v = ControlVector::DEFAULT;
        let ind = induced_schedule([135, 75], &v, &i).unwrap();
        assert_eq!(concatenated_schedule([135, 75], &v, 0.2, &i), ind);
        assert_eq!(concatenated_schedule([160, 80], &v, 0.2, &i), sdp_schedule([160, 80], &i));
        let c = concatenated_schedule([130, 70], &v, 0.2, &i);
        assert_eq!((c.q, c.y), ([0, 0], [0, 0]));
    }

    #[test]
    fn readout_examples() {
        let z = [[0; 2]; 2];
        assert_eq!(control_readout(&dec(z, [2, 3], [0, 0])), ControlVector { t: 0.4, s: 0.0 });
        assert_eq!(control_readout(&dec(z, [0, 0], [5, 0])), ControlVector { t: 1.0, s: 1.0 });
        assert_eq!(control_readout(&dec(z, [0, 0], [0, 0])), ControlVector::DEFAULT);
    }

    #[test]
    fn c0_limits_to_fluid_slack() {
        // Nearest bad state sits just below N1 in the first coordinate.
        let c = estimate_c0(&inst(100));
        assert!((c - 0.31).abs() < 1e-9, "{c}");
        // Center (6.5, 3.5); nearest bad state (4, 3) is 3 away.
        let c5 = estimate_c0(&inst(5));
        assert!((c5 - 0.6).abs() < 1e-9, "{c5}");
    }

    #[test]
    fn field_interpolation() {
        let vals = vec![
            ControlVector { t: 0.0, s: 0.0 },
            ControlVector { t: 1.0, s: 0.0 },
            ControlVector { t: 0.0, s: 1.0 },
            ControlVector { t: 1.0, s: 1.0 },
        ];
        let f = MarkovControlField::new([-1.0, -1.0], [2.0, 2.0], [2, 2], vals).unwrap();
        assert_eq!(f.eval([0.0, 0.0]), ControlVector { t: 0.5, s: 0.5 });
        assert_eq!(f.eval([5.0, -5.0]), ControlVector { t: 1.0, s: 0.0 });
        assert_eq!(f.eval([1.0, 1.0]), f.at_node(1, 1));
    }
}
