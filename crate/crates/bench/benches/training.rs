use anycostfl::aggregate::{aio_aggregate, AggregationWeights};
use anycostfl::model::local_train;
use anycostfl::rng::{self, Purpose};
use anycostfl::strategy::solve_strategy;
use anycostfl::{Budget, Simulation, UpdateMask};
use anycostfl_bench::{gaussian_update, small_config};
use criterion::{criterion_group, criterion_main, Criterion};

fn training(c: &mut Criterion) {
    let config = small_config(1);
    let sim = Simulation::new(&config).unwrap();
    let t = &config.training;

    c.bench_function("local_train/one_epoch", |b| {
        let mut rng = rng::stream(1, Purpose::Train, 0, 0);
        b.iter(|| local_train(sim.model(), &sim.shards()[0], 1, t.learning_rate, t.batch_size, &mut rng).unwrap())
    });

    let task = config.task_profile();
    let budget = Budget {
        t_max: 10.0,
        e_max: 5.0,
        alpha_min: 0.25,
        beta_min: 1e-4,
        beta_max: 1.0 / 15.0,
        f_min: 1e8,
        f_max: 2e9,
    };
    c.bench_function("solve_strategy/20_devices", |b| {
        b.iter(|| {
            for d in sim.devices() {
                solve_strategy(d, &task, &budget, 2e6).unwrap();
            }
        })
    });

    let shapes = [(256, 255), (256, 256), (10, 256)];
    let updates: Vec<_> = (0..20).map(|i| gaussian_update(&shapes, i)).collect();
    let masks = vec![UpdateMask::full(&shapes); 20];
    let weights = AggregationWeights::normalized(vec![1.0; 20]).unwrap();
    c.bench_function("aio_aggregate/20x134k", |b| {
        b.iter(|| aio_aggregate(&updates, &masks, &weights).unwrap())
    });

    c.bench_function("round/20_devices", |b| {
        b.iter_batched(
            || Simulation::new(&config).unwrap(),
            |mut s| s.step().unwrap(),
            criterion::BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, training);
criterion_main!(benches);
