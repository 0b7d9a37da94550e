//! The limiting controlled diffusion: drift, running costs, Lagrangians and
//! Euler–Maruyama ergodic averages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fluid_solution, powr, CostSpec, LimitParams};
use crate::stats::{BatchIntegrals, MIN_BATCHES};

/// A point of the control set: `u^c = (t, 1−t)` splits the excess over the
/// queues, `u^s = (s, 1−s)` splits the shortage over the idle pools.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub t: f64,
    pub s: f64,
}

impl ControlVector {
    /// Class 1 queues first, pool 2 idles first.
    pub const DEFAULT: ControlVector = ControlVector { t: 1.0, s: 0.0 };

    pub fn new(t: f64, s: f64) -> Self {
        ControlVector { t: t.clamp(0.0, 1.0), s: s.clamp(0.0, 1.0) }
    }

    pub fn uc(&self) -> [f64; 2] {
        [self.t, 1.0 - self.t]
    }

    pub fn us(&self) -> [f64; 2] {
        [self.s, 1.0 - self.s]
    }
}

/// Anything that maps a scaled state to a control.
pub trait ControlMap: Sync {
    fn control(&self, x: [f64; 2]) -> ControlVector;
}

impl ControlMap for ControlVector {
    fn control(&self, _: [f64; 2]) -> ControlVector {
        *self
    }
}

impl<F: Fn([f64; 2]) -> ControlVector + Sync> ControlMap for F {
    fn control(&self, x: [f64; 2]) -> ControlVector {
        self(x)
    }
}

/// Coefficients of the limiting drift and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftData {
    /// Diagonal of `B1 = diag(μ12, μ22)`.
    pub b1: [f64; 2],
    /// Diagonal of `B2 = diag(μ11 − μ12, 0)`.
    pub b2: [f64; 2],
    pub gamma: [f64; 2],
    pub ell: [f64; 2],
    /// Arrival rates; the noise is `diag(√(2λ))`.
    pub lambda: [f64; 2],
}

impl DriftData {
    pub fn new(p: &LimitParams) -> Result<Self> {
        let f = fluid_solution(p)?;
        Ok(DriftData {
            b1: [p.mu[0][1], p.mu[1][1]],
            b2: [p.mu[0][0] - p.mu[0][1], 0.0],
            gamma: p.gamma,
            ell: f.ell,
            lambda: p.lambda,
        })
    }

    pub fn sigma(&self) -> [f64; 2] {
        [(2.0 * self.lambda[0]).sqrt(), (2.0 * self.lambda[1]).sqrt()]
    }
}

/// Positive and negative parts of `e·x`.
#[inline]
pub fn excess_parts(x: [f64; 2]) -> (f64, f64) {
    let e = x[0] + x[1];
    (e.max(0.0), (-e).max(0.0))
}

pub fn drift_b(x: [f64; 2], u: ControlVector, d: &DriftData) -> [f64; 2] {
    let (ep, em) = excess_parts(x);
    let uc = u.uc();
    let us = u.us();
    let mut b = [0.0; 2];
    for i in 0..2 {
        b[i] = -d.b1[i] * (x[i] - ep * uc[i]) + em * d.b2[i] * us[i] - ep * d.gamma[i] * uc[i]
            + d.ell[i];
    }
    b
}

/// Queue cost plus idleness cost.
pub fn running_cost_r(x: [f64; 2], u: ControlVector, cost: &CostSpec) -> f64 {
    let (_, em) = excess_parts(x);
    let mut r = running_cost_ro(x, u, cost);
    if em > 0.0 {
        r += powr(em, cost.m)
            * (cost.zeta[0] * powr(u.s, cost.m) + cost.zeta[1] * powr(1.0 - u.s, cost.m));
    }
    r
}

/// Running cost without the idleness part.
pub fn running_cost_ro(x: [f64; 2], u: ControlVector, cost: &CostSpec) -> f64 {
    let (ep, _) = excess_parts(x);
    if ep == 0.0 {
        return 0.0;
    }
    powr(ep, cost.m) * (cost.xi[0] * powr(u.t, cost.m) + cost.xi[1] * powr(1.0 - u.t, cost.m))
}

/// Idleness functionals of the two pools.
pub fn constraint_costs_rj(x: [f64; 2], u: ControlVector, cost: &CostSpec) -> [f64; 2] {
    let (_, em) = excess_parts(x);
    if em == 0.0 {
        return [0.0, 0.0];
    }
    [powr(em * u.s, cost.m_tilde), powr(em * (1.0 - u.s), cost.m_tilde)]
}

/// Lagrangian of the budget-constrained problem.
pub fn lagrangian_g(x: [f64; 2], u: ControlVector, cost: &CostSpec, lam: [f64; 2]) -> f64 {
    let r = constraint_costs_rj(x, u, cost);
    running_cost_ro(x, u, cost) + lam[0] * (r[0] - cost.delta[0]) + lam[1] * (r[1] - cost.delta[1])
}

/// Coercive term `ε κ₂ |x|^m` added to the fairness Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub eps: f64,
    pub kappa2: f64,
}

impl Regularization {
    pub fn value(&self, x: [f64; 2], m: f64) -> f64 {
        self.eps * self.kappa2 * powr(x[0].hypot(x[1]), m)
    }
}

/// Lagrangian of the fairness problem.
pub fn lagrangian_h(
    x: [f64; 2],
    u: ControlVector,
    cost: &CostSpec,
    lam: f64,
    reg: Option<Regularization>,
) -> f64 {
    let r = constraint_costs_rj(x, u, cost);
    let mut h = running_cost_ro(x, u, cost) + lam * (r[0] - cost.theta * r[1]);
    if let Some(reg) = reg {
        h += reg.value(x, cost.m);
    }
    h
}

/// One Euler–Maruyama step with standard normal increment `z`.
pub fn em_step(x: [f64; 2], v: &dyn ControlMap, dt: f64, d: &DriftData, z: [f64; 2]) -> [f64; 2] {
    let b = drift_b(x, v.control(x), d);
    let sig = d.sigma();
    let sq = dt.sqrt();
    [x[0] + b[0] * dt + sig[0] * sq * z[0], x[1] + b[1] * dt + sig[1] * sq * z[1]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub horizon: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub batches: usize,
    pub x0: [f64; 2],
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            horizon: 1e4,
            dt: 1e-3,
            burn_in: 1e2,
            seed: 1,
            batches: MIN_BATCHES,
            x0: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

pub type Functional<'a> = &'a (dyn Fn([f64; 2], ControlVector) -> f64 + Sync);

/// Batch integrals of several functionals along one path. Replicates merge
/// with [`BatchIntegrals::merge`].
pub fn ergodic_integrals_mc(
    v: &dyn ControlMap,
    functionals: &[Functional<'_>],
    d: &DriftData,
    cfg: &McConfig,
) -> Result<BatchIntegrals> {
    if !(cfg.horizon > cfg.burn_in) || !(cfg.dt > 0.0) {
        return Err(Error::DegenerateHorizon { horizon: cfg.horizon, burn_in: cfg.burn_in });
    }
    if cfg.batches < MIN_BATCHES {
        return Err(Error::InsufficientBatches { got: cfg.batches, need: MIN_BATCHES });
    }
    let steps = ((cfg.horizon - cfg.burn_in) / cfg.dt).round() as usize;
    if steps < cfg.batches {
        return Err(Error::InsufficientBatches { got: steps, need: cfg.batches });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sig = d.sigma();
    let sq = cfg.dt.sqrt();
    let advance = |x: [f64; 2], u: ControlVector, rng: &mut ChaCha8Rng| -> [f64; 2] {
        let b = drift_b(x, u, d);
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        [x[0] + b[0] * cfg.dt + sig[0] * sq * z0, x[1] + b[1] * cfg.dt + sig[1] * sq * z1]
    };
    let mut x = cfg.x0;
    for _ in 0..(cfg.burn_in / cfg.dt).round() as usize {
        x = advance(x, v.control(x), &mut rng);
    }
    let span = steps as f64 * cfg.dt;
    let mut acc = BatchIntegrals::new(0.0, span, cfg.batches, functionals.len());
    let mut vals = vec![0.0; functionals.len()];
    for k in 0..steps {
        let u = v.control(x);
        for (o, f) in vals.iter_mut().zip(functionals) {
            *o = f(x, u);
        }
        let t = k as f64 * cfg.dt;
        acc.add(t, t + cfg.dt, &vals);
        x = advance(x, u, &mut rng);
    }
    Ok(acc)
}

/// Long-run average of `functional` under the Markov control `v`.
pub fn ergodic_cost_mc(
    v: &dyn ControlMap,
    functional: Functional<'_>,
    d: &DriftData,
    cfg: &McConfig,
) -> Result<McEstimate> {
    let acc = ergodic_integrals_mc(v, &[functional], d, cfg)?;
    Ok(McEstimate { mean: acc.mean(0), std_error: acc.std_error(0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ref1() -> DriftData {
        DriftData::new(&LimitParams::ref1()).unwrap()
    }

    #[test]
    fn drift_examples() {
        let d = ref1();
        assert_eq!(drift_b([1.0, 1.0], ControlVector::DEFAULT, &d), [0.0, -1.0]);
        assert_eq!(drift_b([-1.0, -1.0], ControlVector::new(0.3, 0.0), &d), [1.0, 1.0]);
        assert_eq!(drift_b([0.0, 0.0], ControlVector::new(0.2, 0.9), &d), [0.0, 0.0]);
        let d2 = DriftData::new(&LimitParams::ref2()).unwrap();
        assert_eq!(drift_b([-1.0, -1.0], ControlVector::new(0.4, 1.0), &d2), [3.0, 1.0]);
    }

    #[test]
    fn cost_examples() {
        let c = CostSpec { xi: [3.0, 1.0], ..CostSpec::default() };
        assert_eq!(running_cost_r([1.0, 1.0], ControlVector::new(0.0, 0.0), &c), 2.0);
        let c = CostSpec { zeta: [1.0, 1.0], m: 2.0, ..CostSpec::default() };
        assert_eq!(running_cost_r([-1.0, -1.0], ControlVector::new(1.0, 0.5), &c), 2.0);
        assert_eq!(running_cost_r([0.0, 0.0], ControlVector::new(0.4, 0.5), &c), 0.0);

        let c = CostSpec::default();
        assert_eq!(constraint_costs_rj([-2.0, 0.0], ControlVector::new(1.0, 0.5), &c), [1.0, 1.0]);
        assert_eq!(constraint_costs_rj([1.0, 1.0], ControlVector::new(1.0, 0.5), &c), [0.0, 0.0]);
        let c2 = CostSpec { m_tilde: 2.0, ..CostSpec::default() };
        assert_eq!(constraint_costs_rj([-3.0, 0.0], ControlVector::new(1.0, 1.0), &c2), [9.0, 0.0]);

        let c = CostSpec { delta: [0.5, 0.5], ..CostSpec::default() };
        assert_eq!(lagrangian_g([0.0, 0.0], ControlVector::DEFAULT, &c, [1.0, 1.0]), -1.0);
        assert_eq!(lagrangian_g([-2.0, 0.0], ControlVector::new(1.0, 0.5), &c, [2.0, 0.0]), 1.0);
        let x = [1.5, -0.2];
        let u = ControlVector::new(0.3, 0.6);
        assert_eq!(lagrangian_g(x, u, &c, [0.0, 0.0]), running_cost_ro(x, u, &c));
        assert_eq!(lagrangian_h(x, u, &c, 0.0, None), running_cost_ro(x, u, &c));
        assert_eq!(lagrangian_h([-2.0, 0.0], ControlVector::new(1.0, 1.0), &c, 1.0, None), 2.0);
        let reg = Some(Regularization { eps: 0.1, kappa2: 3.0 });
        assert_eq!(lagrangian_h([0.0, 0.0], ControlVector::DEFAULT, &c, 1.0, reg), 0.0);
    }

    #[test]
    fn em_examples() {
        let d = ref1();
        let v = ControlVector::DEFAULT;
        let x = em_step([1.0, 1.0], &v, 0.01, &d, [0.0, 0.0]);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 0.99).abs() < 1e-15);
        assert_eq!(em_step([0.3, 0.4], &v, 0.0, &d, [1.0, -1.0]), [0.3, 0.4]);
        assert_eq!(em_step([0.0, 0.0], &v, 0.1, &d, [0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn mc_constant_functional() {
        let d = ref1();
        let cfg = McConfig { horizon: 50.0, burn_in: 1.0, dt: 1e-2, ..McConfig::default() };
        let est = ergodic_cost_mc(&ControlVector::DEFAULT, &|_, _| 1.0, &d, &cfg).unwrap();
        assert!((est.mean - 1.0).abs() < 1e-12);
        assert!(est.std_error.abs() < 1e-12);
        let bad = McConfig { horizon: 1.0, burn_in: 1.0, ..cfg };
        assert!(ergodic_cost_mc(&ControlVector::DEFAULT, &|_, _| 1.0, &d, &bad).is_err());
    }
}
