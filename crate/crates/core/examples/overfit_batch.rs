//! Trains the desk model on a single fixed batch and reports how far each
//! reconstruction loss falls. A quick check that the model can memorize.
//!
//! cargo run --release --example overfit_batch -- [train-config.json]

use mpcgen::dataset::{build_dataset, DatasetConfig, DatasetRecord};
use mpcgen::model::{ModelConfig, TrainConfig, TrainData, Trainer, TASK_NAMES};
use mpcgen::scene::{generate_scene, SceneConfig};

fn main() -> anyhow::Result<()> {
    let tcfg: TrainConfig = match std::env::args().nth(1) {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainConfig { steps: 500, lr_peak: 3e-3, lr_warmup: 20, lr_min_ratio: 0.1, ..TrainConfig::desk() },
    };
    let mcfg = ModelConfig { dropout: 0.0, ..ModelConfig::desk() };
    let scene_cfg = SceneConfig { seed: 42, ..Default::default() };
    let scene = generate_scene(&scene_cfg)?;
    let cfg = DatasetConfig { rx_pitch_m: 48.0, n_tx_sites: 0, ..Default::default() };
    let ds = build_dataset(&scene, scene_cfg.digest(), &cfg)?.0;
    let data = TrainData::new(&mcfg, &ds)?;
    let batch: Vec<&DatasetRecord> = data.records.iter().take(32).copied().collect();

    let mut tr = Trainer::new(&mcfg, &tcfg, ds.header.stats.clone())?;
    let mut logs = Vec::new();
    for step in 0..tcfg.steps {
        let log = tr.step_on(&data.heightmap, &batch)?;
        if step % 50 == 0 {
            println!("{step:>4} total {:.3} kl {:.2} presence {:.2e} delay {:.2e}", log.total, log.kl, log.losses[0], log.losses[5]);
        }
        logs.push(log);
    }
    let tail = &logs[logs.len() - 10..];
    for (k, name) in TASK_NAMES.iter().enumerate() {
        let end = tail.iter().map(|l| l.losses[k]).sum::<f64>() / tail.len() as f64;
        println!("{name:>8}: {:.3e} -> {:.3e} ({:.1}x)", logs[0].losses[k], end, logs[0].losses[k] / end);
    }
    Ok(())
}
