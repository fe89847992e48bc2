//! Generates a scene, builds its dataset and writes it to disk.
//!
//! cargo run --release --example build_dataset -- [out.mpcd] [dataset-config.json] [scene-config.json]

use std::time::Instant;

use mpcgen::dataset::{build_dataset, read_dataset, write_dataset, write_stats_sidecar, DatasetConfig, Split};
use mpcgen::scene::{generate_scene, SceneConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().cloned().unwrap_or_else(|| "scene.mpcd".into());
    let load = |i: usize| args.get(i).map(std::fs::read_to_string).transpose();
    let ds_cfg: DatasetConfig = match load(1)? {
        Some(s) => serde_json::from_str(&s)?,
        None => DatasetConfig::default(),
    };
    let scene_cfg: SceneConfig = match load(2)? {
        Some(s) => serde_json::from_str(&s)?,
        None => SceneConfig::default(),
    };
    let scene = generate_scene(&scene_cfg)?;
    println!("scene: {} buildings over {} m", scene.buildings.len(), scene.extent_m);

    let t = Instant::now();
    let (ds, plan, report) = build_dataset(&scene, scene_cfg.digest(), &ds_cfg)?;
    println!(
        "traced {} candidate links in {:.1}s: {} above the floor, {} kept after the split",
        report.candidate_links,
        t.elapsed().as_secs_f64(),
        report.kept_after_filter,
        report.kept_after_split
    );
    println!(
        "train/val/test = {}/{}/{} (fractions {:.3?})",
        ds.count(Split::Train),
        ds.count(Split::Val),
        ds.count(Split::Test),
        plan.fractions
    );
    let mean_paths = ds.records.iter().map(|r| r.link.n_active()).sum::<usize>() as f64 / ds.records.len() as f64;
    println!("mean active paths per link: {mean_paths:.2}");
    println!("stats: {:?}", ds.header.stats);

    let path = std::path::Path::new(&out);
    write_dataset(&ds, path)?;
    write_stats_sidecar(&ds, path)?;
    let back = read_dataset(path)?;
    assert_eq!(back, ds);
    println!("wrote {} ({} bytes) and read it back", out, std::fs::metadata(path)?.len());
    Ok(())
}
