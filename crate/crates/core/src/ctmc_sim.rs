//! Event-driven simulation of the N-network under a stationary policy.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::diffusion::ControlVector;
use crate::error::{Error, Result};
use crate::model::{diffusion_scale, powr, CostSpec, SystemInstance};
use crate::policies::{control_readout, fmt, ScheduleDecision, SchedulingPolicy, State};
use crate::stats::{BatchIntegrals, MIN_BATCHES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival1,
    Arrival2,
    /// Class-1 completion in pool 1.
    Service11,
    /// Class-1 completion in pool 2.
    Service12,
    Service22,
    Abandon1,
    Abandon2,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::Arrival1,
        EventKind::Arrival2,
        EventKind::Service11,
        EventKind::Service12,
        EventKind::Service22,
        EventKind::Abandon1,
        EventKind::Abandon2,
    ];

    pub fn jump(self) -> [i64; 2] {
        match self {
            EventKind::Arrival1 => [1, 0],
            EventKind::Arrival2 => [0, 1],
            EventKind::Service11 | EventKind::Service12 | EventKind::Abandon1 => [-1, 0],
            EventKind::Service22 | EventKind::Abandon2 => [0, -1],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EventKind::Arrival1 => "arrival1",
            EventKind::Arrival2 => "arrival2",
            EventKind::Service11 => "service11",
            EventKind::Service12 => "service12",
            EventKind::Service22 => "service22",
            EventKind::Abandon1 => "abandon1",
            EventKind::Abandon2 => "abandon2",
        }
    }
}

/// Rates of the seven event streams, in [`EventKind::ALL`] order.
pub fn event_rates(d: &ScheduleDecision, inst: &SystemInstance) -> [f64; 7] {
    [
        inst.lambda[0],
        inst.lambda[1],
        inst.mu[0][0] * d.z[0][0] as f64,
        inst.mu[0][1] * d.z[0][1] as f64,
        inst.mu[1][1] * d.z[1][1] as f64,
        inst.gamma[0] * d.q[0] as f64,
        inst.gamma[1] * d.q[1] as f64,
    ]
}

pub fn total_rate(d: &ScheduleDecision, inst: &SystemInstance) -> f64 {
    event_rates(d, inst).iter().sum()
}

pub struct SimState {
    pub t: f64,
    pub x: State,
    pub decision: ScheduleDecision,
    pub rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(x: State, seed: u64, policy: &dyn SchedulingPolicy, inst: &SystemInstance) -> Self {
        SimState {
            t: 0.0,
            x,
            decision: policy.decide(x, inst),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Holding time and next event, without applying it.
    fn draw(&mut self, inst: &SystemInstance) -> Result<(f64, EventKind)> {
        let rates = event_rates(&self.decision, inst);
        let total: f64 = rates.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroTotalRate { x: self.x });
        }
        let e: f64 = Exp1.sample(&mut self.rng);
        let mut u = self.rng.random::<f64>() * total;
        let mut kind = EventKind::Arrival1;
        for (k, r) in EventKind::ALL.iter().zip(rates) {
            if r > 0.0 {
                kind = *k;
                if u < r {
                    break;
                }
                u -= r;
            }
        }
        Ok((e / total, kind))
    }

    fn apply(&mut self, dt: f64, kind: EventKind, policy: &dyn SchedulingPolicy, inst: &SystemInstance) {
        let j = kind.jump();
        self.t += dt;
        self.x = [self.x[0] + j[0], self.x[1] + j[1]];
        self.decision = policy.decide(self.x, inst);
        debug_assert!(balance_holds(self.x, &self.decision, inst), "balance broken at {:?}", self.x);
    }

    /// Advance one event.
    pub fn step(&mut self, policy: &dyn SchedulingPolicy, inst: &SystemInstance) -> Result<EventKind> {
        let (dt, kind) = self.draw(inst)?;
        self.apply(dt, kind, policy, inst);
        Ok(kind)
    }
}

/// Balance equations with all counts nonnegative.
pub fn balance_holds(x: State, d: &ScheduleDecision, inst: &SystemInstance) -> bool {
    x[0] == d.q[0] + d.z[0][0] + d.z[0][1]
        && x[1] == d.q[1] + d.z[1][1]
        && d.y[0] == inst.servers[0] - d.z[0][0]
        && d.y[1] == inst.servers[1] - d.z[0][1] - d.z[1][1]
        && d.z[1][0] == 0
        && d.q.iter().chain(&d.y).chain(d.z.iter().flatten()).all(|&v| v >= 0)
}

/// Binning of the occupation measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    /// Scaled-state box `[-half_width, half_width]²`.
    pub half_width: f64,
    pub bin: f64,
    pub u_bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec { half_width: 8.0, bin: 0.25, u_bins: 10 }
    }
}

/// Time spent per (scaled-state bin, control bin) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupation {
    pub spec: HistogramSpec,
    pub x_bins: usize,
    pub mass: Vec<f64>,
    pub overflow: f64,
}

impl Occupation {
    pub fn new(spec: HistogramSpec) -> Self {
        let x_bins = ((2.0 * spec.half_width / spec.bin).round() as usize).max(1);
        let cells = x_bins * x_bins * spec.u_bins * spec.u_bins;
        Occupation { spec, x_bins, mass: vec![0.0; cells], overflow: 0.0 }
    }

    fn bin_x(&self, v: f64) -> Option<usize> {
        let r = (v + self.spec.half_width) / self.spec.bin;
        if r < 0.0 || r >= self.x_bins as f64 {
            None
        } else {
            Some(r as usize)
        }
    }

    fn bin_u(&self, v: f64) -> usize {
        ((v * self.spec.u_bins as f64) as usize).min(self.spec.u_bins - 1)
    }

    pub fn cell(&self, xh: [f64; 2], u: ControlVector) -> Option<usize> {
        let (i, j) = (self.bin_x(xh[0])?, self.bin_x(xh[1])?);
        let (a, b) = (self.bin_u(u.t), self.bin_u(u.s));
        let ub = self.spec.u_bins;
        Some(((j * self.x_bins + i) * ub + b) * ub + a)
    }

    pub fn add(&mut self, xh: [f64; 2], u: ControlVector, w: f64) {
        match self.cell(xh, u) {
            Some(c) => self.mass[c] += w,
            None => self.overflow += w,
        }
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.overflow
    }

    pub fn merge(&mut self, other: &Occupation) {
        assert_eq!(self.mass.len(), other.mass.len(), "histogram shape mismatch");
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        self.overflow += other.overflow;
    }

    /// Center of cell `c` as `(x̂1, x̂2, t, s)`.
    pub fn cell_center(&self, c: usize) -> [f64; 4] {
        let ub = self.spec.u_bins;
        let a = c % ub;
        let b = (c / ub) % ub;
        let xi = c / (ub * ub);
        let (i, j) = (xi % self.x_bins, xi / self.x_bins);
        let xc = |k: usize| -self.spec.half_width + (k as f64 + 0.5) * self.spec.bin;
        let uc = |k: usize| (k as f64 + 0.5) / ub as f64;
        [xc(i), xc(j), uc(a), uc(b)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub batches: usize,
    /// Exponents of the tracked `|x̂|^k` moments.
    pub k_list: Vec<f64>,
    pub histogram: HistogramSpec,
    /// Start state; `round(n x*)` when absent.
    pub x0: Option<State>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 1e4,
            burn_in: 1e3,
            seed: 1,
            batches: MIN_BATCHES,
            k_list: vec![2.0],
            histogram: HistogramSpec::default(),
            x0: None,
        }
    }
}

/// Integral channels; `|x̂|^k` channels follow at [`ch::K0`].
pub mod ch {
    pub const Q1: usize = 0;
    pub const Q2: usize = 1;
    pub const Y1: usize = 2;
    pub const Y2: usize = 3;
    pub const YT1: usize = 4;
    pub const YT2: usize = 5;
    pub const X1: usize = 6;
    pub const X2: usize = 7;
    pub const X11: usize = 8;
    pub const X22: usize = 9;
    pub const X12: usize = 10;
    pub const T: usize = 11;
    pub const S: usize = 12;
    pub const K0: usize = 13;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub horizon: f64,
    pub burn_in: f64,
    /// Exponents the channels were recorded with.
    pub m: f64,
    pub m_tilde: f64,
    pub k_list: Vec<f64>,
    pub integrals: BatchIntegrals,
    pub occupation: Occupation,
    pub events: u64,
    pub replicates: usize,
}

impl TrajectoryStats {
    /// Pool another replicate (integrals and histograms add).
    pub fn merge(&mut self, other: &TrajectoryStats) {
        assert!(self.m == other.m && self.m_tilde == other.m_tilde && self.k_list == other.k_list);
        self.integrals.merge(&other.integrals);
        self.occupation.merge(&other.occupation);
        self.events += other.events;
        self.replicates += other.replicates;
    }

    /// Observed time after burn-in, summed over replicates.
    pub fn observed_time(&self) -> f64 {
        self.integrals.span()
    }

    /// Summary rows `quantity,mean,std_error`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["quantity", "mean", "std_error"])?;
        let g = &self.integrals;
        let mut names: Vec<String> = ["q1^m", "q2^m", "y1^m", "y2^m", "y1^mt", "y2^mt", "x1", "x2", "x1^2", "x2^2", "x1x2", "t", "s"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(self.k_list.iter().map(|k| format!("|x|^{k}")));
        for (c, name) in names.iter().enumerate() {
            w.write_record([name.clone(), fmt(g.mean(c)), fmt(g.std_error(c))])?;
        }
        w.write_record(["events".into(), self.events.to_string(), String::new()])?;
        w.write_record(["observed_time".into(), fmt(self.observed_time()), String::new()])?;
        w.flush()?;
        Ok(())
    }

    /// Nonempty histogram cells `x1,x2,t,s,mass` (cell centers).
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x1", "x2", "t", "s", "mass"])?;
        for (c, &m) in self.occupation.mass.iter().enumerate() {
            if m > 0.0 {
                let p = self.occupation.cell_center(c);
                w.write_record([fmt(p[0]), fmt(p[1]), fmt(p[2]), fmt(p[3]), fmt(m)])?;
            }
        }
        w.write_record(["overflow".into(), String::new(), String::new(), String::new(), fmt(self.occupation.overflow)])?;
        w.flush()?;
        Ok(())
    }
}

pub fn simulate(
    inst: &SystemInstance,
    policy: &dyn SchedulingPolicy,
    cost: &CostSpec,
    cfg: &SimConfig,
) -> Result<TrajectoryStats> {
    simulate_with_log(inst, policy, cost, cfg, None)
}

/// [`simulate`] with an optional `t,x1,x2,event` log.
pub fn simulate_with_log(
    inst: &SystemInstance,
    policy: &dyn SchedulingPolicy,
    cost: &CostSpec,
    cfg: &SimConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrajectoryStats> {
    if !(cfg.horizon > cfg.burn_in) || cfg.burn_in < 0.0 {
        return Err(Error::DegenerateHorizon { horizon: cfg.horizon, burn_in: cfg.burn_in });
    }
    if cfg.batches < MIN_BATCHES {
        return Err(Error::InsufficientBatches { got: cfg.batches, need: MIN_BATCHES });
    }
    let c = inst.center();
    let x0 = cfg.x0.unwrap_or([c[0].round() as i64, c[1].round() as i64]);
    let mut st = SimState::new(x0, cfg.seed, policy, inst);
    let channels = ch::K0 + cfg.k_list.len();
    let mut integrals = BatchIntegrals::new(cfg.burn_in, cfg.horizon, cfg.batches, channels);
    let mut occupation = Occupation::new(cfg.histogram);
    let mut vals = vec![0.0; channels];
    let sn = inst.sqrt_n;
    let mut events = 0u64;
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "t,x1,x2,event")?;
    }
    loop {
        let (dt, kind) = st.draw(inst)?;
        let t1 = (st.t + dt).min(cfg.horizon);
        if t1 > cfg.burn_in {
            let d = &st.decision;
            let xh = diffusion_scale(st.x, inst);
            let u = control_readout(d);
            let qh = [d.q[0] as f64 / sn, d.q[1] as f64 / sn];
            let yh = [d.y[0] as f64 / sn, d.y[1] as f64 / sn];
            vals[ch::Q1] = powr(qh[0], cost.m);
            vals[ch::Q2] = powr(qh[1], cost.m);
            vals[ch::Y1] = powr(yh[0], cost.m);
            vals[ch::Y2] = powr(yh[1], cost.m);
            vals[ch::YT1] = powr(yh[0], cost.m_tilde);
            vals[ch::YT2] = powr(yh[1], cost.m_tilde);
            vals[ch::X1] = xh[0];
            vals[ch::X2] = xh[1];
            vals[ch::X11] = xh[0] * xh[0];
            vals[ch::X22] = xh[1] * xh[1];
            vals[ch::X12] = xh[0] * xh[1];
            vals[ch::T] = u.t;
            vals[ch::S] = u.s;
            let norm = xh[0].hypot(xh[1]);
            for (o, &k) in vals[ch::K0..].iter_mut().zip(&cfg.k_list) {
                *o = powr(norm, k);
            }
            let t0 = st.t.max(cfg.burn_in);
            integrals.add(t0, t1, &vals);
            occupation.add(xh, u, t1 - t0);
        }
        if st.t + dt >= cfg.horizon {
            break;
        }
        st.apply(dt, kind, policy, inst);
        events += 1;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{},{},{},{}", st.t, st.x[0], st.x[1], kind.label())?;
        }
    }
    Ok(TrajectoryStats {
        horizon: cfg.horizon,
        burn_in: cfg.burn_in,
        m: cost.m,
        m_tilde: cost.m_tilde,
        k_list: cfg.k_list.clone(),
        integrals,
        occupation,
        events,
        replicates: 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    /// Queue plus idleness cost.
    pub j: f64,
    /// Queue cost only.
    pub j_o: f64,
    /// Idleness functionals per pool.
    pub j_c: [f64; 2],
    /// Time averages of `|x̂|^k`, in `k_list` order.
    pub moments: Vec<f64>,
    pub se_j: f64,
    pub se_j_o: f64,
    pub se_j_c: [f64; 2],
    pub se_moments: Vec<f64>,
}

/// Weighted channel combination with its batch-means standard error.
fn combo(g: &BatchIntegrals, w: &[(usize, f64)]) -> (f64, f64) {
    let nb = g.batches();
    let cols: Vec<(Vec<f64>, f64)> = w.iter().map(|&(c, a)| (g.batch_means(c), a)).collect();
    let series: Vec<f64> = (0..nb)
        .map(|k| cols.iter().map(|(v, a)| a * v[k]).sum())
        .collect();
    let mean = series.iter().sum::<f64>() / nb as f64;
    if nb < 2 {
        return (mean, f64::NAN);
    }
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nb as f64 - 1.0);
    (mean, (var / nb as f64).sqrt())
}

pub fn estimate_costs(stats: &TrajectoryStats, cost: &CostSpec) -> Result<CostEstimate> {
    let g = &stats.integrals;
    if g.batches() < MIN_BATCHES {
        return Err(Error::InsufficientBatches { got: g.batches(), need: MIN_BATCHES });
    }
    if cost.m != stats.m || cost.m_tilde != stats.m_tilde {
        return Err(Error::InvalidParameter("cost exponents differ from the simulated ones".into()));
    }
    let queue = [(ch::Q1, cost.xi[0]), (ch::Q2, cost.xi[1])];
    let all = [queue[0], queue[1], (ch::Y1, cost.zeta[0]), (ch::Y2, cost.zeta[1])];
    let (j, se_j) = combo(g, &all);
    let (j_o, se_j_o) = combo(g, &queue);
    let (c1, se1) = combo(g, &[(ch::YT1, 1.0)]);
    let (c2, se2) = combo(g, &[(ch::YT2, 1.0)]);
    let ks = ch::K0..ch::K0 + stats.k_list.len();
    Ok(CostEstimate {
        j,
        j_o,
        j_c: [c1, c2],
        moments: ks.clone().map(|c| g.mean(c)).collect(),
        se_j,
        se_j_o,
        se_j_c: [se1, se2],
        se_moments: ks.map(|c| g.std_error(c)).collect(),
    })
}

/// Moments of the occupation measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub mean: [f64; 2],
    /// `E[x̂1²], E[x̂2²], E[x̂1 x̂2]`.
    pub second: [f64; 3],
    pub u_mean: ControlVector,
    pub se_mean: [f64; 2],
    pub se_second: [f64; 3],
}

/// Moments are taken from exact time integrals rather than bin centers, so
/// they match the occupation measure before binning.
pub fn empirical_moments(stats: &TrajectoryStats) -> EmpiricalMoments {
    let g = &stats.integrals;
    EmpiricalMoments {
        mean: [g.mean(ch::X1), g.mean(ch::X2)],
        second: [g.mean(ch::X11), g.mean(ch::X22), g.mean(ch::X12)],
        u_mean: ControlVector { t: g.mean(ch::T), s: g.mean(ch::S) },
        se_mean: [g.std_error(ch::X1), g.std_error(ch::X2)],
        se_second: [g.std_error(ch::X11), g.std_error(ch::X22), g.std_error(ch::X12)],
    }
}

/// Replicates `seed, seed+1, …` run through `exec` and pooled in order.
pub fn simulate_replicates(
    inst: &SystemInstance,
    policy: &dyn SchedulingPolicy,
    cost: &CostSpec,
    cfg: &SimConfig,
    replicates: usize,
    exec: crate::Exec,
) -> Result<Vec<TrajectoryStats>> {
    exec.map_range(replicates, |r| {
        let c = SimConfig { seed: cfg.seed + r as u64, ..cfg.clone() };
        simulate(inst, policy, cost, &c)
    })
    .into_iter()
    .collect()
}

pub fn pool(runs: &[TrajectoryStats]) -> Option<TrajectoryStats> {
    let mut it = runs.iter();
    let mut acc = it.next()?.clone();
    for r in it {
        acc.merge(r);
    }
    Some(acc)
}
