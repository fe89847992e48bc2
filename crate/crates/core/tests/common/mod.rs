#![allow(dead_code)]

use mpcgen::channel::{LinkChannel, MpcPath, NormStats};
use mpcgen::dataset::{build_dataset, Dataset, DatasetConfig};
use mpcgen::scene::{generate_scene, SceneConfig};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// A link with 1..=capacity active paths, delays in 50 ns..3 µs and powers over ~60 dB.
pub fn random_link(rng: &mut ChaCha8Rng, capacity: usize) -> LinkChannel {
    let n = rng.random_range(1..=capacity);
    let paths: Vec<MpcPath> = (0..n)
        .map(|_| {
            let amp = 10f64.powf(rng.random_range(-8.0..-3.0));
            let phase = rng.random_range(-PI..PI);
            MpcPath::active(
                Complex64::from_polar(amp, phase),
                rng.random_range(50e-9..3e-6),
                (rng.random_range(-PI..PI), rng.random_range(0.05..PI - 0.05)),
                (rng.random_range(-PI..PI), rng.random_range(0.05..PI - 0.05)),
            )
        })
        .collect();
    let tx = [rng.random_range(0.0..500.0), rng.random_range(0.0..500.0), rng.random_range(10.0..60.0)];
    let rx = [rng.random_range(0.0..500.0), rng.random_range(0.0..500.0), 1.5];
    LinkChannel::from_paths(paths, capacity, tx, rx).unwrap()
}

pub fn stats() -> NormStats {
    NormStats::new(6.6, 0.6, -95.0, 9.0, 1e-6).unwrap()
}

/// A scene and dataset small enough for tests: coarse RX grid, low resolution.
pub fn small_dataset(seed: u64, pitch: f64) -> Dataset {
    let scene_cfg = SceneConfig { seed, ..Default::default() };
    let scene = generate_scene(&scene_cfg).unwrap();
    let cfg = DatasetConfig { rx_pitch_m: pitch, n_tx_sites: 0, ..Default::default() };
    build_dataset(&scene, scene_cfg.digest(), &cfg).unwrap().0
}
