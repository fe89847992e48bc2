//! Procedural urban scenes, the specular tracer and the conditioning renderers.

mod city;
mod fresnel;
mod material;
mod render;
mod trace;

pub use city::{generate_scene, Building, MaterialMix, SceneConfig, UrbanScene};
pub use fresnel::{complex_permittivity, fresnel_reflection, fresnel_te};
pub use material::{Material, MaterialKind, CONCRETE, GLASS, SKY, WOOD};
pub use render::{
    camera_basis, cast_ray, channel, pixel_ray, ray_box, render_heightmap, render_pov, HeightMap,
    Hit, PovStack, DEPTH_MAX_M, FOV_DEG, POV_CHANNELS,
};
pub use trace::{
    filter_link, prune_mask, prune_paths, segment_hits_box, surfaces, trace_link, Surface,
    TraceConfig, TracedLink, TracedPath, LINK_FLOOR_DB, PRUNE_THRESHOLD_DB,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("placed only {placed} of {requested} buildings")]
    Placement { placed: usize, requested: usize },
}

/// Endpoints of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub tx_pos: [f64; 3],
    pub rx_pos: [f64; 3],
}

pub const RX_HEIGHT_M: f64 = 1.5;
pub const DEFAULT_MAST_M: f64 = 3.0;

/// Rooftop transmitter position on each building: roof centre plus the mast.
pub fn tx_sites(scene: &UrbanScene, mast_m: f64) -> Vec<[f64; 3]> {
    scene
        .buildings
        .iter()
        .map(|b| {
            let c = b.center();
            [c[0], c[1], b.height_m + mast_m]
        })
        .collect()
}

/// Ground receivers at cell centres of a `pitch_m` grid, skipping building footprints.
pub fn rx_grid(scene: &UrbanScene, pitch_m: f64, clearance_m: f64) -> Vec<[f64; 3]> {
    let n = (scene.extent_m / pitch_m).floor() as usize;
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let (x, y) = ((i as f64 + 0.5) * pitch_m, (j as f64 + 0.5) * pitch_m);
            let blocked = scene.buildings.iter().any(|b| {
                x >= b.min[0] - clearance_m
                    && x <= b.max[0] + clearance_m
                    && y >= b.min[1] - clearance_m
                    && y <= b.max[1] + clearance_m
            });
            if !blocked {
                out.push([x, y, RX_HEIGHT_M]);
            }
        }
    }
    out
}
