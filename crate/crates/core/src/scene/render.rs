//! Pinhole POV rendering and top-down heightmaps.

use serde::{Deserialize, Serialize};

use super::city::UrbanScene;
use super::material::{Material, SKY};
use crate::geom::{self, V3};

pub const POV_CHANNELS: usize = 12;
pub const FOV_DEG: f64 = 45.0;
/// Depth assigned to sky pixels and the clamp for far hits (m).
pub const DEPTH_MAX_M: f64 = 500.0;

pub mod channel {
    pub const R: usize = 0;
    pub const G: usize = 1;
    pub const B: usize = 2;
    pub const DEPTH: usize = 3;
    pub const NX: usize = 4;
    pub const NY: usize = 5;
    pub const NZ: usize = 6;
    pub const EPS_R: usize = 7;
    pub const SIGMA: usize = 8;
    pub const SCATTER: usize = 9;
    pub const XPD: usize = 10;
    pub const THICKNESS: usize = 11;
    pub const NAMES: [&str; super::POV_CHANNELS] = [
        "r", "g", "b", "depth", "nx", "ny", "nz", "eps_r", "sigma", "scatter", "xpd", "thickness",
    ];
}

/// Channel-major image stack `[12][res][res]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovStack {
    pub resolution: usize,
    pub data: Vec<f64>,
}

impl PovStack {
    pub fn zeros(resolution: usize) -> Self {
        Self {
            resolution,
            data: vec![0.0; POV_CHANNELS * resolution * resolution],
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.resolution * self.resolution;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        let r = self.resolution;
        self.data[(c * r + row) * r + col]
    }

    fn set(&mut self, c: usize, row: usize, col: usize, v: f64) {
        let r = self.resolution;
        self.data[(c * r + row) * r + col] = v;
    }
}

/// Nearest ray intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: V3,
    pub material: &'static Material,
    /// Building index, or `None` for the ground.
    pub building: Option<usize>,
}

/// Entry distance and outward normal of a ray against a box, for origins outside it.
pub fn ray_box(origin: V3, dir: V3, bmin: V3, bmax: V3) -> Option<(f64, V3)> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut normal = [0.0; 3];
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k] < bmin[k] || origin[k] > bmax[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[k];
        let (t0, t1) = ((bmin[k] - origin[k]) * inv, (bmax[k] - origin[k]) * inv);
        let (near, far, sign) = if t0 < t1 { (t0, t1, -1.0) } else { (t1, t0, 1.0) };
        if near > lo {
            lo = near;
            normal = [0.0; 3];
            normal[k] = sign;
        }
        hi = hi.min(far);
        if lo > hi {
            return None;
        }
    }
    // An all-zero normal means the origin is inside the box.
    (lo > 0.0 && normal != [0.0; 3]).then_some((lo, normal))
}

pub fn cast_ray(scene: &UrbanScene, origin: V3, dir: V3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    if dir[2] < 0.0 && origin[2] > 0.0 {
        best = Some(Hit {
            t: -origin[2] / dir[2],
            normal: [0.0, 0.0, 1.0],
            material: scene.ground.material(),
            building: None,
        });
    }
    for (i, b) in scene.buildings.iter().enumerate() {
        if let Some((t, n)) = ray_box(origin, dir, b.box_min(), b.box_max()) {
            if best.is_none_or(|h| t < h.t) {
                best = Some(Hit {
                    t,
                    normal: n,
                    material: b.material.material(),
                    building: Some(i),
                });
            }
        }
    }
    best
}

/// Orthonormal camera basis (forward, right, up) looking from `from` toward `toward`.
pub fn camera_basis(from: V3, toward: V3) -> (V3, V3, V3) {
    let fwd = geom::normalize(geom::sub(toward, from));
    let mut right = geom::cross(fwd, [0.0, 0.0, 1.0]);
    if geom::norm(right) < 1e-9 {
        right = geom::cross(fwd, [0.0, 1.0, 0.0]);
    }
    let right = geom::normalize(right);
    let up = geom::cross(right, fwd);
    (fwd, right, up)
}

/// Unit ray direction through the centre of pixel (row, col).
pub fn pixel_ray(basis: (V3, V3, V3), resolution: usize, row: usize, col: usize) -> V3 {
    let (fwd, right, up) = basis;
    let half = (FOV_DEG.to_radians() / 2.0).tan();
    let u = ((col as f64 + 0.5) / resolution as f64 * 2.0 - 1.0) * half;
    let v = (1.0 - (row as f64 + 0.5) / resolution as f64 * 2.0) * half;
    geom::normalize(geom::add(fwd, geom::add(geom::scale(right, u), geom::scale(up, v))))
}

/// Renders the 12-channel stack. Depth is measured along the optical axis.
pub fn render_pov(scene: &UrbanScene, from: V3, toward: V3, resolution: usize) -> PovStack {
    use channel::*;
    let basis = camera_basis(from, toward);
    let mut stack = PovStack::zeros(resolution);
    for row in 0..resolution {
        for col in 0..resolution {
            let dir = pixel_ray(basis, resolution, row, col);
            let (depth, normal, mat) = match cast_ray(scene, from, dir) {
                Some(h) => ((h.t * geom::dot(dir, basis.0)).min(DEPTH_MAX_M), h.normal, h.material),
                None => (DEPTH_MAX_M, [0.0; 3], &SKY),
            };
            let values = [
                mat.rgb[0],
                mat.rgb[1],
                mat.rgb[2],
                depth,
                normal[0],
                normal[1],
                normal[2],
                mat.eps_r,
                mat.sigma_s_per_m,
                mat.scatter_s,
                mat.xpd_kx,
                mat.thickness_m,
            ];
            for (c, v) in values.into_iter().enumerate() {
                stack.set(c, row, col, v);
            }
        }
    }
    debug_assert_eq!(THICKNESS + 1, POV_CHANNELS);
    stack
}

/// Top-down building heights, row-major with row index along y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightMap {
    pub resolution: usize,
    pub m_per_px: f64,
    pub heights: Vec<f64>,
}

impl HeightMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.heights[row * self.resolution + col]
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            (col as f64 + 0.5) * self.m_per_px,
            (row as f64 + 0.5) * self.m_per_px,
        ]
    }
}

pub fn render_heightmap(scene: &UrbanScene, resolution: usize) -> HeightMap {
    let m_per_px = scene.extent_m / resolution as f64;
    let mut map = HeightMap {
        resolution,
        m_per_px,
        heights: vec![0.0; resolution * resolution],
    };
    for row in 0..resolution {
        for col in 0..resolution {
            let [x, y] = map.pixel_center(row, col);
            map.heights[row * resolution + col] = scene
                .buildings
                .iter()
                .filter(|b| b.contains_xy(x, y))
                .map(|b| b.height_m)
                .fold(0.0, f64::max);
        }
    }
    map
}
