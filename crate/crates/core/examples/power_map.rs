//! Predicted received power over a receiver grid for one rooftop transmitter.
//!
//! cargo run --release --example power_map -- <dataset.mpcd> <checkpoint.mpck> [out.csv]

use mpcgen::dataset::read_dataset;
use mpcgen::metrics::write_power_map_csv;
use mpcgen::model::{load_checkpoint, GenerateOptions};
use mpcgen::pipeline::spatial_power_map;
use mpcgen::scene::{generate_scene, rx_grid, tx_sites, SceneConfig, DEFAULT_MAST_M};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [ds_path, ckpt, ..] = args.as_slice() else {
        anyhow::bail!("usage: power_map <dataset.mpcd> <checkpoint.mpck> [out.csv]");
    };
    let out = args.get(2).cloned().unwrap_or_else(|| "powermap.csv".into());
    let ds = read_dataset(ds_path.as_ref())?;
    let scene = generate_scene(&SceneConfig { seed: ds.header.scene_seed, ..Default::default() })?;
    let tr = load_checkpoint(ckpt.as_ref())?;
    let tx = tx_sites(&scene, DEFAULT_MAST_M)[0];
    let cells = spatial_power_map(&tr, &scene, &ds.header.heightmap, tx, &rx_grid(&scene, 16.0, 2.0), 1, &GenerateOptions::default())?;
    let finite: Vec<f64> = cells.iter().map(|c| c.rx_power_db).filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!("{} cells, predicted power {lo:.1} to {hi:.1} dB", cells.len());
    write_power_map_csv(out.as_ref(), &cells)?;
    println!("wrote {out}");
    Ok(())
}
