//! Parallel against sequential execution on the three data-parallel hot spots:
//! independent simulation replicates, drift sweeps and policy improvement.
//!
//! Build with `--no-default-features` to see both modes fall back to the
//! sequential path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nnet_core::ctmc_sim::{simulate_replicates, SimConfig};
use nnet_core::diffusion::DriftData;
use nnet_core::hjb::{policy_iteration, Grid, PiOptions, StageCost};
use nnet_core::lyapunov::verify_sdp_drift;
use nnet_core::model::{instantiate, CostSpec, LimitParams};
use nnet_core::policies::Sdp;
use nnet_core::Exec;

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn replicates(c: &mut Criterion) {
    let inst = instantiate(&LimitParams::ref1(), 100).unwrap();
    let cost = CostSpec::default();
    let cfg = SimConfig { horizon: 50.0, burn_in: 5.0, ..SimConfig::default() };
    let mut g = c.benchmark_group("replicates");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, 8), |b| {
            b.iter(|| simulate_replicates(&inst, &Sdp, &cost, black_box(&cfg), 8, exec).unwrap())
        });
    }
    g.finish();
}

fn drift_sweep(c: &mut Criterion) {
    let inst = instantiate(&LimitParams::ref1(), 100).unwrap();
    let mut g = c.benchmark_group("sdp_drift");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, 20), |b| {
            b.iter(|| verify_sdp_drift(&inst, 2.0, black_box(4.0), 20.0, exec).unwrap())
        });
    }
    g.finish();
}

fn hjb(c: &mut Criterion) {
    let d = DriftData::new(&LimitParams::ref1()).unwrap();
    let grid = Grid::square(4.0, 0.1).unwrap();
    let cost = StageCost::unconstrained(&CostSpec::default());
    let mut g = c.benchmark_group("policy_iteration");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = PiOptions { exec, ..PiOptions::default() };
        g.bench_function(BenchmarkId::new(name, grid.len()), |b| {
            b.iter(|| policy_iteration(&grid, black_box(&cost), &d, None, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, replicates, drift_sweep, hjb);
criterion_main!(benches);
