//! Renders the TX and RX point-of-view stacks of one link and the heightmap, as CSV grids.
//!
//! cargo run --release --example render_views -- [out-dir]

use std::fmt::Write as _;
use std::path::PathBuf;

use mpcgen::dataset::{preprocess_heightmap, preprocess_pov};
use mpcgen::scene::{channel, generate_scene, render_heightmap, render_pov, rx_grid, tx_sites, SceneConfig, DEFAULT_MAST_M};

fn grid(values: &[f64], res: usize) -> String {
    let mut s = String::new();
    for row in values.chunks(res) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        writeln!(s, "{}", cells.join(",")).unwrap();
    }
    s
}

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "views".into()));
    std::fs::create_dir_all(&out)?;
    let scene = generate_scene(&SceneConfig::default())?;
    let tx = tx_sites(&scene, DEFAULT_MAST_M)[3];
    let rx = rx_grid(&scene, 32.0, 2.0)[40];
    let res = 32;

    for (name, from, to) in [("tx", tx, rx), ("rx", rx, tx)] {
        let raw = render_pov(&scene, from, to, res);
        let pre = preprocess_pov(&raw)?;
        for c in [channel::DEPTH, channel::NZ, channel::EPS_R] {
            let file = out.join(format!("{name}_{}.csv", channel::NAMES[c]));
            std::fs::write(&file, grid(pre.channel(c), res))?;
        }
        let sky = raw.channel(channel::DEPTH).iter().filter(|&&d| d >= mpcgen::scene::DEPTH_MAX_M).count();
        println!("{name} view: {sky} of {} pixels see sky", res * res);
    }
    let hm = preprocess_heightmap(&render_heightmap(&scene, 64))?;
    std::fs::write(out.join("heightmap.csv"), grid(&hm.heights, hm.resolution))?;
    println!("wrote views to {}", out.display());
    Ok(())
}
