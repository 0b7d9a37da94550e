//! Rate parameters, fluid quantities, finite-n instances and cost records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];

/// Relative tolerance of the resource-pooling identity.
pub const POOLING_TOL: f64 = 1e-12;

/// First- and second-order rate parameters of the limiting regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitParams {
    pub lambda: [f64; 2],
    #[serde(default)]
    pub lambda_hat: [f64; 2],
    /// `mu[i][j]`: rate at which pool `j` serves class `i`; `mu[1][0]` must be 0.
    pub mu: Mat2,
    #[serde(default)]
    pub mu_hat: Mat2,
    pub gamma: [f64; 2],
    pub nu: [f64; 2],
}

impl LimitParams {
    /// Unit service rates, equal abandonment, unit pools.
    pub fn ref1() -> Self {
        LimitParams {
            lambda: [1.3, 0.7],
            lambda_hat: [0.0, 0.0],
            mu: [[1.0, 1.0], [0.0, 1.0]],
            mu_hat: [[0.0; 2]; 2],
            gamma: [0.5, 0.5],
            nu: [1.0, 1.0],
        }
    }

    /// Faster dedicated service for class 1, pool 2 twice as large.
    pub fn ref2() -> Self {
        LimitParams {
            lambda: [3.0, 1.0],
            lambda_hat: [0.0, 0.0],
            mu: [[2.0, 1.0], [0.0, 1.0]],
            mu_hat: [[0.0; 2]; 2],
            gamma: [1.0, 1.0],
            nu: [1.0, 2.0],
        }
    }

    pub fn pooling_lhs(&self) -> f64 {
        (self.lambda[0] - self.mu[0][0] * self.nu[0]) / (self.mu[0][1] * self.nu[1])
            + self.lambda[1] / (self.mu[1][1] * self.nu[1])
    }
}

pub fn validate_limit_params(p: &LimitParams) -> Result<()> {
    let all = p
        .lambda
        .iter()
        .chain(&p.lambda_hat)
        .chain(p.mu.iter().flatten())
        .chain(p.mu_hat.iter().flatten())
        .chain(&p.gamma)
        .chain(&p.nu);
    if all.clone().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite rate parameter".into()));
    }
    for (v, name) in [
        (p.lambda[0], "lambda1"),
        (p.lambda[1], "lambda2"),
        (p.mu[0][0], "mu11"),
        (p.mu[0][1], "mu12"),
        (p.mu[1][1], "mu22"),
        (p.nu[0], "nu1"),
        (p.nu[1], "nu2"),
    ] {
        if v <= 0.0 {
            return Err(Error::NonpositiveRate(name));
        }
    }
    if p.gamma.iter().any(|&g| g < 0.0) {
        return Err(Error::InvalidParameter("abandonment rates must be nonnegative".into()));
    }
    if p.mu[1][0] != 0.0 || p.mu_hat[1][0] != 0.0 {
        return Err(Error::InvalidParameter(
            "pool 1 cannot serve class 2: mu21 and mu_hat21 must be 0".into(),
        ));
    }
    let capacity = p.mu[0][0] * p.nu[0];
    if p.lambda[0] <= capacity {
        return Err(Error::OverloadViolation { lambda1: p.lambda[0], capacity });
    }
    let residual = p.pooling_lhs() - 1.0;
    if residual.abs() > POOLING_TOL {
        return Err(Error::PoolingViolation { residual });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidSolution {
    /// Steady-state fractions of pool `j` serving class `i`.
    pub xi: Mat2,
    pub x_star: [f64; 2],
    pub z_star: Mat2,
    /// Constant drift term of the limiting diffusion.
    pub ell: [f64; 2],
}

pub fn fluid_solution(p: &LimitParams) -> Result<FluidSolution> {
    validate_limit_params(p)?;
    let xi12 = (p.lambda[0] - p.mu[0][0] * p.nu[0]) / (p.mu[0][1] * p.nu[1]);
    let xi22 = p.lambda[1] / (p.mu[1][1] * p.nu[1]);
    let xi = [[1.0, xi12], [0.0, xi22]];
    let x_star = [p.nu[0] + xi12 * p.nu[1], xi22 * p.nu[1]];
    let z_star = [[p.nu[0], xi12 * p.nu[1]], [0.0, xi22 * p.nu[1]]];
    let ell = [
        p.lambda_hat[0] - p.mu_hat[0][0] * z_star[0][0] - p.mu_hat[0][1] * z_star[0][1],
        p.lambda_hat[1] - p.mu_hat[1][1] * z_star[1][1],
    ];
    Ok(FluidSolution { xi, x_star, z_star, ell })
}

/// The n-th system of the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance {
    pub n: u64,
    pub sqrt_n: f64,
    pub lambda: [f64; 2],
    pub mu: Mat2,
    pub gamma: [f64; 2],
    /// Servers per pool.
    pub servers: [i64; 2],
    /// Pool-2 servers nominally reserved for class 1.
    pub n12: i64,
    pub n22: i64,
    pub ell_n: [f64; 2],
    pub fluid: FluidSolution,
    pub params: LimitParams,
}

pub fn instantiate(p: &LimitParams, n: u64) -> Result<SystemInstance> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let fluid = fluid_solution(p)?;
    let nf = n as f64;
    let sqrt_n = nf.sqrt();
    let lambda = [
        nf * p.lambda[0] + sqrt_n * p.lambda_hat[0],
        nf * p.lambda[1] + sqrt_n * p.lambda_hat[1],
    ];
    let mut mu = [[0.0; 2]; 2];
    for (i, j) in [(0, 0), (0, 1), (1, 1)] {
        mu[i][j] = p.mu[i][j] + p.mu_hat[i][j] / sqrt_n;
    }
    for (v, name) in [
        (lambda[0], "lambda1"),
        (lambda[1], "lambda2"),
        (mu[0][0], "mu11"),
        (mu[0][1], "mu12"),
        (mu[1][1], "mu22"),
    ] {
        if v <= 0.0 {
            return Err(Error::NegativeRate { name, value: v, n });
        }
    }
    let servers = [(nf * p.nu[0]).round() as i64, (nf * p.nu[1]).round() as i64];
    if servers.iter().any(|&s| s < 1) {
        return Err(Error::InvalidParameter(format!("n = {n} leaves a pool without servers")));
    }
    // Guard against representation error in xi12 (0.3 * 100 = 30.000000000000004).
    let n12 = ((fluid.xi[0][1] * servers[1] as f64) + 1e-9).floor() as i64;
    let n12 = n12.clamp(0, servers[1]);
    let n22 = servers[1] - n12;
    let z = &fluid.z_star;
    let ell_n = [
        (lambda[0] - mu[0][0] * z[0][0] * nf - mu[0][1] * z[0][1] * nf) / sqrt_n,
        (lambda[1] - mu[1][1] * z[1][1] * nf) / sqrt_n,
    ];
    Ok(SystemInstance {
        n,
        sqrt_n,
        lambda,
        mu,
        gamma: p.gamma,
        servers,
        n12,
        n22,
        ell_n,
        fluid,
        params: p.clone(),
    })
}

impl SystemInstance {
    /// Fluid center `n x*`.
    pub fn center(&self) -> [f64; 2] {
        let nf = self.n as f64;
        [nf * self.fluid.x_star[0], nf * self.fluid.x_star[1]]
    }

    pub fn total_servers(&self) -> i64 {
        self.servers[0] + self.servers[1]
    }

    /// `‖x − n x*‖₁`.
    pub fn l1_from_center(&self, x: [i64; 2]) -> f64 {
        let c = self.center();
        (x[0] as f64 - c[0]).abs() + (x[1] as f64 - c[1]).abs()
    }
}

/// `(x − n x*) / √n`.
pub fn diffusion_scale(x: [i64; 2], inst: &SystemInstance) -> [f64; 2] {
    let c = inst.center();
    [
        (x[0] as f64 - c[0]) / inst.sqrt_n,
        (x[1] as f64 - c[1]) / inst.sqrt_n,
    ]
}

/// Cost weights, exponents and constraint levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSpec {
    /// Queue-cost weights.
    pub xi: [f64; 2],
    /// Idleness-cost weights.
    pub zeta: [f64; 2],
    pub m: f64,
    /// Exponent of the idleness constraint functionals.
    pub m_tilde: f64,
    /// Idleness budgets.
    pub delta: [f64; 2],
    /// Target ratio of pool-1 to pool-2 idleness.
    pub theta: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            xi: [1.0, 1.0],
            zeta: [0.0, 0.0],
            m: 1.0,
            m_tilde: 1.0,
            delta: [1.0, 1.0],
            theta: 1.0,
        }
    }
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !self.xi.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return bad("queue-cost weights must be positive");
        }
        if !self.zeta.iter().all(|&v| v >= 0.0 && v.is_finite()) {
            return bad("idleness-cost weights must be nonnegative");
        }
        if !(self.m >= 1.0 && self.m.is_finite()) || !(self.m_tilde >= 1.0 && self.m_tilde.is_finite()) {
            return bad("cost exponents must be at least 1");
        }
        if !self.delta.iter().all(|&v| v > 0.0) {
            return bad("idleness budgets must be positive");
        }
        if !(self.theta > 0.0) {
            return bad("fairness ratio must be positive");
        }
        Ok(())
    }

    /// Extra requirement of the fairness problem.
    pub fn validate_fairness(&self) -> Result<()> {
        self.validate()?;
        if self.m_tilde >= self.m {
            return Err(Error::InvalidParameter(
                "fairness problem needs m_tilde < m".into(),
            ));
        }
        Ok(())
    }

    /// Same weights without the idleness terms.
    pub fn queue_only(&self) -> CostSpec {
        CostSpec { zeta: [0.0, 0.0], ..self.clone() }
    }

    /// Diffusion-scaled stage cost of queues `qh` and idleness `yh`.
    pub fn stage_cost(&self, qh: [f64; 2], yh: [f64; 2]) -> f64 {
        self.xi[0] * powr(qh[0], self.m)
            + self.xi[1] * powr(qh[1], self.m)
            + self.zeta[0] * powr(yh[0], self.m)
            + self.zeta[1] * powr(yh[1], self.m)
    }
}

/// `x^p` for `x ≥ 0`, exact at the common exponents.
#[inline]
pub fn powr(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else if x == 0.0 {
        0.0
    } else {
        x.powf(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_fluid_values() {
        let f = fluid_solution(&LimitParams::ref1()).unwrap();
        assert!((f.xi[0][1] - 0.3).abs() < 1e-15 && (f.xi[1][1] - 0.7).abs() < 1e-15);
        assert!((f.x_star[0] - 1.3).abs() < 1e-15 && (f.x_star[1] - 0.7).abs() < 1e-15);
        assert_eq!(f.ell, [0.0, 0.0]);
        let f = fluid_solution(&LimitParams::ref2()).unwrap();
        assert_eq!(f.xi, [[1.0, 0.5], [0.0, 0.5]]);
        assert_eq!(f.x_star, [2.0, 1.0]);
        assert_eq!(f.z_star, [[1.0, 1.0], [0.0, 1.0]]);
        let mut p = LimitParams::ref1();
        p.lambda_hat = [1.0, -1.0];
        assert_eq!(fluid_solution(&p).unwrap().ell, [1.0, -1.0]);
    }

    #[test]
    fn validation_errors() {
        let mut p = LimitParams::ref1();
        p.lambda[0] = 1.0;
        assert!(matches!(validate_limit_params(&p), Err(Error::OverloadViolation { .. })));
        let mut p = LimitParams::ref1();
        p.lambda[1] = 0.71;
        assert!(matches!(validate_limit_params(&p), Err(Error::PoolingViolation { .. })));
        let mut p = LimitParams::ref1();
        p.mu[0][1] = 0.0;
        assert!(matches!(validate_limit_params(&p), Err(Error::NonpositiveRate("mu12"))));
    }

    #[test]
    fn instances() {
        let i = instantiate(&LimitParams::ref1(), 100).unwrap();
        assert_eq!(i.lambda, [130.0, 70.0]);
        assert_eq!(i.servers, [100, 100]);
        assert_eq!((i.n12, i.n22), (30, 70));
        assert!(i.ell_n[0].abs() < 1e-12 && i.ell_n[1].abs() < 1e-12);
        let i = instantiate(&LimitParams::ref2(), 100).unwrap();
        assert_eq!(i.lambda, [300.0, 100.0]);
        assert_eq!(i.servers, [100, 200]);
        assert_eq!((i.n12, i.n22), (100, 100));
        let mut p = LimitParams::ref1();
        p.lambda_hat = [-200.0, 0.0];
        assert!(matches!(instantiate(&p, 100), Err(Error::NegativeRate { name: "lambda1", .. })));
    }

    #[test]
    fn scaling() {
        let i = instantiate(&LimitParams::ref1(), 100).unwrap();
        let close = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12;
        assert!(close(diffusion_scale([130, 70], &i), [0.0, 0.0]));
        assert!(close(diffusion_scale([140, 60], &i), [1.0, -1.0]));
        assert!(close(diffusion_scale([0, 0], &i), [-13.0, -7.0]));
    }

    #[test]
    fn cost_spec_checks() {
        let c = CostSpec::default();
        c.validate().unwrap();
        assert!(c.validate_fairness().is_err());
        let c = CostSpec { m: 2.0, ..CostSpec::default() };
        c.validate_fairness().unwrap();
        assert_eq!(c.stage_cost([1.0, 2.0], [3.0, 0.0]), 5.0);
    }
}
