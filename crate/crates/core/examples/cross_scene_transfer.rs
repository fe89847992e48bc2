//! Builds two cities with different height distributions, trains a short
//! model on each and prints the 2×2 received-power transfer matrix.
//!
//! cargo run --release --example cross_scene_transfer -- [steps]

use mpcgen::dataset::{build_dataset, DatasetConfig, Split};
use mpcgen::metrics::EvalOptions;
use mpcgen::model::{GenerateOptions, ModelConfig, TrainConfig, TrainData, Trainer};
use mpcgen::pipeline::{evaluate_split, transfer_matrix};
use mpcgen::scene::{generate_scene, SceneConfig};

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(400);
    let scenes = [
        ("low", SceneConfig { height_range: [6.0, 14.0], seed: 11, ..Default::default() }),
        ("tall", SceneConfig { height_range: [40.0, 90.0], seed: 12, ..Default::default() }),
    ];
    let ds_cfg = DatasetConfig { rx_pitch_m: 24.0, n_tx_sites: 0, ..Default::default() };
    let mcfg = ModelConfig::desk();
    let tcfg = TrainConfig { steps, ..TrainConfig::desk() };

    let mut datasets = Vec::new();
    let mut trainers = Vec::new();
    for (name, cfg) in &scenes {
        let scene = generate_scene(cfg)?;
        let (ds, _, _) = build_dataset(&scene, cfg.digest(), &ds_cfg)?;
        let mut tr = Trainer::new(&mcfg, &tcfg, ds.header.stats.clone())?;
        tr.run(&TrainData::new(&mcfg, &ds)?, |_| {})?;
        println!("{name}: {} links, trained {steps} steps", ds.records.len());
        datasets.push(ds);
        trainers.push(tr);
    }

    let (gen, eval) = (GenerateOptions::default(), EvalOptions::default());
    let models: Vec<(String, &Trainer)> = scenes.iter().map(|s| s.0.to_string()).zip(&trainers).collect();
    let dsets: Vec<_> = scenes.iter().map(|s| s.0.to_string()).zip(&datasets).collect();
    let m = transfer_matrix(&models, &dsets, 1, &gen, &eval)?;
    let prx = m.metric("rx_power_mae_db").expect("known metric");
    println!("rx power MAE (dB), rows = trained on, columns = tested on");
    for (name, row) in m.train_scenes.iter().zip(&prx) {
        println!("{name:>6}: {:8.3} {:8.3}", row[0], row[1]);
    }
    for (name, row) in m.train_scenes.iter().zip(&m.cells) {
        println!("{name:>6} empty realizations: {} / {}, {} / {}", row[0].n_empty, row[0].n_links, row[1].n_empty, row[1].n_links);
    }
    for i in 0..2 {
        let own = evaluate_split(&trainers[i], &datasets[i], Split::Test, 1, &gen, &eval)?.summary;
        // Bitwise, so NaN means from empty realizations compare equal.
        let same = own.values.map(f64::to_bits) == m.cells[i][i].values.map(f64::to_bits);
        println!("diagonal {i} equals eval: {same}");
    }
    Ok(())
}
