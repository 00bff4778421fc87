use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use leaklab::analytic_init::{check_world, PerturbationGrid};
use leaklab::nn::{Mlp, Tape};
use leaklab::rng::seeded;
use leaklab::sampler::{sample, SamplerConfig};
use leaklab::train::{draw_items, feature_map, loss_and_gradient, TrainConfig};
use leaklab::{Denoiser, ExactDenoiser, GaussianWorld, LeakyDenoiser, NoiseSchedule};

fn denoisers(c: &mut Criterion) {
    let world = GaussianWorld::default();
    let schedule = NoiseSchedule::vp_default();
    let exact = ExactDenoiser::conditional(&world);
    let x = world.sample_video(&mut seeded(0));
    let y = x.frame(0).to_vec();
    c.bench_function("exact_predict_x0", |b| {
        b.iter(|| exact.predict_x0(black_box(&x), &y, 0.5, &schedule).unwrap())
    });
    let leaky = LeakyDenoiser::new(&world, 0.8, 4.0).unwrap();
    let config = SamplerConfig::standard(1.0, 50);
    c.bench_function("ddim_chain_50_steps_leaky", |b| {
        b.iter(|| sample(&leaky, black_box(&y), &config, &schedule, &mut seeded(1)).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let world = GaussianWorld::default();
    let schedule = NoiseSchedule::vp_default();
    let config = TrainConfig::default();
    let features = feature_map(&world, &config);
    let mlp = Mlp::init(&[features.input_dim(), 64, 64, features.output_dim()], &mut seeded(2));
    let input = vec![0.1; features.input_dim()];
    let mut tape = Tape::default();
    c.bench_function("mlp_forward_h64", |b| b.iter(|| mlp.forward(black_box(&input), &mut tape)[0]));
    let batch = draw_items(&world, &config.motion, 64, &mut seeded(3));
    c.bench_function("loss_and_gradient_batch64", |b| {
        b.iter(|| loss_and_gradient(&mlp, black_box(&batch), &features, &schedule, &config, &mut seeded(4)).unwrap())
    });
}

fn optimality(c: &mut Criterion) {
    let world = GaussianWorld::default();
    let schedule = NoiseSchedule::vp_default();
    let grid = PerturbationGrid::standard();
    c.bench_function("optimality_grid_9x9", |b| b.iter(|| check_world(&world, &schedule, black_box(0.9), &grid).unwrap()));
}

criterion_group!(benches, denoisers, network, optimality);
criterion_main!(benches);
