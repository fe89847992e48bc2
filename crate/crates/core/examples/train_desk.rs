//! Trains the desk-scale model on a dataset file and writes a checkpoint.
//!
//! `cargo run --release --example train_desk -- <dataset.mpcd> [steps] [out.mpck]`

use std::path::PathBuf;
use std::time::Instant;

use mpcgen::dataset::read_dataset;
use mpcgen::model::{save_checkpoint, ModelConfig, TrainConfig, TrainData, Trainer, TASK_NAMES};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "scene.mpcd".into()));
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let out = args.next().map(PathBuf::from);

    let ds = read_dataset(&path)?;
    let model_cfg = ModelConfig::desk();
    let train_cfg = TrainConfig {
        steps,
        ..TrainConfig::desk()
    };
    let data = TrainData::new(&model_cfg, &ds)?;
    let mut trainer = Trainer::new(&model_cfg, &train_cfg, ds.header.stats.clone())?;
    println!(
        "{} parameters, {} training links",
        trainer.params.count_scalars(),
        data.records.len()
    );
    let start = Instant::now();
    trainer.run(&data, |log| {
        if log.step % 50 == 0 || log.step + 1 == steps {
            let losses: Vec<String> = TASK_NAMES
                .iter()
                .zip(log.losses)
                .map(|(n, l)| format!("{n}={l:.4}"))
                .collect();
            println!(
                "step {:>5} total={:.4} kl={:.3} sigma_presence={:.2e} {}",
                log.step,
                log.total,
                log.kl,
                log.sigma[0],
                losses.join(" ")
            );
        }
    })?;
    let secs = start.elapsed().as_secs_f64();
    println!("{steps} steps in {secs:.1}s ({:.1} ms/step)", 1e3 * secs / steps as f64);
    if let Some(out) = out {
        save_checkpoint(&trainer, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
