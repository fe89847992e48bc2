//! Traces one link through a generated city and prints every specular path.
//!
//! cargo run --release --example trace_scene -- [scene-seed]

use mpcgen::geom;
use mpcgen::scene::{filter_link, generate_scene, rx_grid, trace_link, tx_sites, SceneConfig, TraceConfig, DEFAULT_MAST_M};

const C: f64 = 299_792_458.0;

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(42);
    let scene = generate_scene(&SceneConfig { seed, ..Default::default() })?;
    let tx = tx_sites(&scene, DEFAULT_MAST_M)[0];
    let rxs = rx_grid(&scene, 32.0, 2.0);
    let cfg = TraceConfig::default();

    // The first receiver with more than one surviving path.
    let (rx, traced) = rxs
        .iter()
        .map(|&rx| (rx, trace_link(&scene, tx, rx, &cfg)))
        .find(|(_, t)| t.paths.len() > 1 && filter_link(&t.mpc_paths()))
        .ok_or_else(|| anyhow::anyhow!("no multipath link in this scene"))?;
    println!("tx {:?} -> rx {:?}, {:.1} m apart", tx, rx, geom::dist(tx, rx));
    for p in &traced.paths {
        let replay = geom::polyline_length(&p.vertices);
        println!(
            "{} bounce(s): {:7.2} ns, {:7.2} dB, |delay - replay/c| = {:.1e} s",
            p.surfaces.len(),
            p.path.delay_s * 1e9,
            10.0 * p.path.power().log10(),
            (p.path.delay_s - replay / C).abs()
        );
    }
    let link = traced.to_channel(cfg.max_paths)?;
    println!("link: tof {:.2} ns, rx power {:.2} dB", link.tof_s() * 1e9, link.rx_power_db());
    Ok(())
}
