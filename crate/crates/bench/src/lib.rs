//! Fixtures shared by the criterion benches.

use anycostfl::config::{DatasetSpec, ExperimentConfig};
use anycostfl::rng::{self, Purpose};
use anycostfl::sysmodel::SyntheticSpec;
use anycostfl::GradientUpdate;
use rand_distr::{Distribution, Normal};

/// Gaussian update with the given layer shapes.
pub fn gaussian_update(shapes: &[(usize, usize)], seed: u64) -> GradientUpdate {
    let mut rng = rng::stream(seed, Purpose::Data, 0, 0);
    let normal = Normal::new(0.0f32, 1.0).expect("valid std");
    let mut u = GradientUpdate::zeros_like(shapes, 0.1);
    for layer in &mut u.layers {
        for v in &mut layer.data {
            *v = normal.sample(&mut rng);
        }
    }
    u
}

/// Small synthetic experiment: 20 devices, 3 classes.
pub fn small_config(rounds: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig { seed: Some(1), devices: 20, rounds, ..ExperimentConfig::default() };
    c.dataset = DatasetSpec::Synthetic(SyntheticSpec::default());
    c.training.batch_size = 16;
    c.task.workload_per_sample = 8e7;
    c.task.update_bits = 4e8;
    c
}
