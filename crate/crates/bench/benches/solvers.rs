use criterion::{criterion_group, criterion_main, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use voltvar_core::conic::IpmOptions;
use voltvar_core::feeder::downstream_order;
use voltvar_core::opf::{solve_opf_with, OpfConfig};
use voltvar_core::powerflow::{solve_powerflow_with, SweepOptions};
use voltvar_core::regression::{
    feature_row, standardize, stepwise_select, FeatureMatrix, StepwiseConfig, FEATURE_NAMES,
    N_FEATURES,
};
use voltvar_core::scenario::{generate_synthetic, ScenarioSet, SynthConfig};
use voltvar_core::synth::{generate_feeder, SynthFeederConfig};

fn default_case() -> (voltvar_core::feeder::FeederModel, ScenarioSet) {
    let model = generate_feeder(&SynthFeederConfig::default()).unwrap();
    let scen = generate_synthetic(
        &model,
        &SynthConfig {
            days: 1,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    (model, scen)
}

fn bench_powerflow(c: &mut Criterion) {
    let (model, scen) = default_case();
    let topo = downstream_order(&model).unwrap();
    // 12:00, the heaviest reverse-flow step of the day
    let inj = scen.injections_at(48);
    let opts = SweepOptions::default();
    c.bench_function("powerflow_sweep_129_bus", |b| {
        b.iter(|| solve_powerflow_with(&model, &topo, &inj, 1.0, &opts).unwrap())
    });
}

fn bench_opf(c: &mut Criterion) {
    let (model, scen) = default_case();
    let topo = downstream_order(&model).unwrap();
    let inj = scen.injections_at(48);
    let cfg = OpfConfig::default();
    let opts = IpmOptions::default();
    c.bench_function("opf_solve_129_bus", |b| {
        b.iter(|| solve_opf_with(&model, &topo, &inj, &cfg, &opts).unwrap())
    });
}

fn bench_stepwise(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9001);
    let n = 2592;
    let mut phi = Vec::with_capacity(n * N_FEATURES);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row = feature_row(
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.5),
            rng.random_range(0.3..1.5),
        );
        y.push(0.4 + 0.9 * row[0] + 0.7 * row[2] - 0.5 * row[4] + 0.35 * row[6]
            - 0.25 * row[8]
            + rng.random_range(-0.002..0.002));
        phi.extend_from_slice(&row);
    }
    let fm = FeatureMatrix {
        phi,
        y,
        n_samples: n,
        n_features: N_FEATURES,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let cfg = StepwiseConfig::default();
    c.bench_function("stepwise_fit_2592_samples", |b| {
        b.iter(|| {
            let (std_fm, _) = standardize(&fm).unwrap();
            stepwise_select(&std_fm, &cfg).unwrap()
        })
    });
}

criterion_group!(benches, bench_powerflow, bench_opf, bench_stepwise);
criterion_main!(benches);
