#![allow(dead_code)]

use vsod_core::syndata::{generate_dataset, DatasetConfig, Sample, SceneConfig};
use vsod_harness::TrainConfig;

/// Small enough for a training step to take a few milliseconds.
pub fn tiny_config(steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 2,
        input_size: 32,
        max_steps: steps,
        base_channels: 4,
        width_multipliers: [1, 1, 2, 2, 2],
        ..TrainConfig::default()
    }
}

pub fn samples(seed: u64, sequences: usize, side: usize) -> Vec<Sample> {
    let cfg = DatasetConfig {
        scene: SceneConfig {
            height: side,
            width: side,
            frames: 4,
            min_size: 4.0,
            max_size: 8.0,
            ..SceneConfig::default()
        },
        sequences,
        seed,
        ..DatasetConfig::default()
    };
    generate_dataset(&cfg).unwrap().into_iter().flat_map(|s| s.samples).collect()
}
