//! Image-method specular tracer over the ground plane and building walls.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::city::UrbanScene;
use super::fresnel::fresnel_reflection;
use super::material::Material;
use crate::channel::{
    decode_direction, received_power_db, ChannelError, LinkChannel, MpcPath, DEFAULT_MAX_PATHS,
    SPEED_OF_LIGHT,
};
use crate::geom::{self, V3};

/// Paths weaker than the strongest by more than this are dropped (dB).
pub const PRUNE_THRESHOLD_DB: f64 = 25.0;
/// Links below this received power are discarded (dB relative to unit transmit power).
pub const LINK_FLOOR_DB: f64 = -120.0;

const PRUNE_TOL_DB: f64 = 1e-9;
const SEGMENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub max_reflections: usize,
    pub max_paths: usize,
    pub prune_db: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            max_reflections: 2,
            max_paths: DEFAULT_MAX_PATHS,
            prune_db: PRUNE_THRESHOLD_DB,
        }
    }
}

/// A planar reflector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Surface {
    Ground,
    /// The plane `axis = coord` of a building, facing `outward` (±1) along that axis.
    Wall {
        building: usize,
        axis: usize,
        coord: f64,
        outward: f64,
    },
}

impl Surface {
    fn axis(&self) -> usize {
        match self {
            Surface::Ground => 2,
            Surface::Wall { axis, .. } => *axis,
        }
    }

    fn coord(&self) -> f64 {
        match self {
            Surface::Ground => 0.0,
            Surface::Wall { coord, .. } => *coord,
        }
    }

    fn outward(&self) -> f64 {
        match self {
            Surface::Ground => 1.0,
            Surface::Wall { outward, .. } => *outward,
        }
    }

    pub fn normal(&self) -> V3 {
        let mut n = [0.0; 3];
        n[self.axis()] = self.outward();
        n
    }

    /// Strictly on the reflecting side.
    fn in_front(&self, p: V3) -> bool {
        (p[self.axis()] - self.coord()) * self.outward() > 0.0
    }

    pub fn mirror(&self, p: V3) -> V3 {
        let mut q = p;
        let a = self.axis();
        q[a] = 2.0 * self.coord() - p[a];
        q
    }

    fn material<'s>(&self, scene: &'s UrbanScene) -> &'static Material {
        match self {
            Surface::Ground => scene.ground.material(),
            Surface::Wall { building, .. } => scene.buildings[*building].material.material(),
        }
    }

    /// Whether a point on the plane lies on the finite facet.
    fn contains(&self, scene: &UrbanScene, p: V3) -> bool {
        match self {
            Surface::Ground => true,
            Surface::Wall { building, axis, .. } => {
                let b = &scene.buildings[*building];
                let other = 1 - axis;
                p[other] >= b.min[other] && p[other] <= b.max[other] && p[2] >= 0.0 && p[2] <= b.height_m
            }
        }
    }
}

/// Ground plus the four walls of every building.
pub fn surfaces(scene: &UrbanScene) -> Vec<Surface> {
    let mut out = vec![Surface::Ground];
    for (i, b) in scene.buildings.iter().enumerate() {
        for axis in 0..2 {
            out.push(Surface::Wall {
                building: i,
                axis,
                coord: b.min[axis],
                outward: -1.0,
            });
            out.push(Surface::Wall {
                building: i,
                axis,
                coord: b.max[axis],
                outward: 1.0,
            });
        }
    }
    out
}

/// A traced path together with the vertices needed to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedPath {
    pub path: MpcPath,
    /// TX, reflection points in order, RX.
    pub vertices: Vec<V3>,
    pub surfaces: Vec<Surface>,
    pub length_m: f64,
}

/// Tracer output for one link; may be empty when everything is blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedLink {
    pub tx_pos: V3,
    pub rx_pos: V3,
    pub paths: Vec<TracedPath>,
}

impl TracedLink {
    pub fn mpc_paths(&self) -> Vec<MpcPath> {
        self.paths.iter().map(|p| p.path).collect()
    }

    pub fn to_channel(&self, capacity: usize) -> Result<LinkChannel, ChannelError> {
        LinkChannel::from_paths(self.mpc_paths(), capacity, self.tx_pos, self.rx_pos)
    }
}

/// Slab test for the open segment `a + t(b - a)`, `t ∈ (ε, 1 − ε)`, against a box interior.
pub fn segment_hits_box(a: V3, b: V3, bmin: V3, bmax: V3) -> bool {
    let d = geom::sub(b, a);
    let (mut lo, mut hi) = (SEGMENT_EPS, 1.0 - SEGMENT_EPS);
    for k in 0..3 {
        if d[k] == 0.0 {
            if a[k] <= bmin[k] || a[k] >= bmax[k] {
                return false;
            }
        } else {
            let inv = 1.0 / d[k];
            let (mut t0, mut t1) = ((bmin[k] - a[k]) * inv, (bmax[k] - a[k]) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            lo = lo.max(t0);
            hi = hi.min(t1);
            if lo >= hi {
                return false;
            }
        }
    }
    true
}

fn segment_clear(scene: &UrbanScene, a: V3, b: V3) -> bool {
    !scene
        .buildings
        .iter()
        .any(|bd| segment_hits_box(a, b, bd.box_min(), bd.box_max()))
}

/// Intersection of segment `a → b` with the plane of `s`, snapped onto the plane.
fn plane_hit(s: &Surface, a: V3, b: V3) -> Option<V3> {
    let k = s.axis();
    let denom = b[k] - a[k];
    if denom == 0.0 {
        return None;
    }
    let t = (s.coord() - a[k]) / denom;
    if !(t > 0.0 && t < 1.0) {
        return None;
    }
    let mut p = geom::add(a, geom::scale(geom::sub(b, a), t));
    p[k] = s.coord();
    Some(p)
}

/// Back-traces reflection points for the surface sequence `seq`.
fn reflection_points(scene: &UrbanScene, tx: V3, rx: V3, seq: &[Surface]) -> Option<Vec<V3>> {
    let mut images = Vec::with_capacity(seq.len());
    let mut img = tx;
    for s in seq {
        img = s.mirror(img);
        images.push(img);
    }
    let mut points = vec![[0.0; 3]; seq.len()];
    let mut target = rx;
    for i in (0..seq.len()).rev() {
        let p = plane_hit(&seq[i], images[i], target)?;
        if !seq[i].contains(scene, p) {
            return None;
        }
        points[i] = p;
        target = p;
    }
    Some(points)
}

fn build_path(scene: &UrbanScene, vertices: Vec<V3>, seq: Vec<Surface>) -> Option<TracedPath> {
    // Every reflection must see both neighbours from its front side.
    for (i, s) in seq.iter().enumerate() {
        if !s.in_front(vertices[i]) || !s.in_front(vertices[i + 2]) {
            return None;
        }
    }
    if !vertices.windows(2).all(|w| segment_clear(scene, w[0], w[1])) {
        return None;
    }
    let lambda = scene.wavelength_m();
    let length = geom::polyline_length(&vertices);
    let mut gamma = Complex64::new(1.0, 0.0);
    for (i, s) in seq.iter().enumerate() {
        let u = geom::normalize(geom::sub(vertices[i + 1], vertices[i]));
        let cos_t = geom::dot(u, s.normal()).abs().min(1.0);
        gamma *= fresnel_reflection(s.material(scene), cos_t.acos(), scene.carrier_hz);
    }
    let phase = Complex64::from_polar(1.0, -2.0 * PI * length / lambda);
    let gain = gamma * phase * (lambda / (4.0 * PI * length));
    let n = vertices.len();
    let aod = decode_direction(geom::sub(vertices[1], vertices[0])).ok()?;
    let aoa = decode_direction(geom::sub(vertices[n - 2], vertices[n - 1])).ok()?;
    Some(TracedPath {
        path: MpcPath::active(gain, length / SPEED_OF_LIGHT, aod, aoa),
        vertices,
        surfaces: seq,
        length_m: length,
    })
}

/// Enumerates LOS plus specular reflections, then prunes, power-sorts and caps.
pub fn trace_link(scene: &UrbanScene, tx: V3, rx: V3, config: &TraceConfig) -> TracedLink {
    let surfs = surfaces(scene);
    let mut found = Vec::new();
    if let Some(p) = build_path(scene, vec![tx, rx], vec![]) {
        found.push(p);
    }
    if config.max_reflections >= 1 {
        for s in &surfs {
            if !s.in_front(tx) || !s.in_front(rx) {
                continue;
            }
            if let Some(pts) = reflection_points(scene, tx, rx, std::slice::from_ref(s)) {
                if let Some(p) = build_path(scene, vec![tx, pts[0], rx], vec![*s]) {
                    found.push(p);
                }
            }
        }
    }
    if config.max_reflections >= 2 {
        for s1 in surfs.iter().filter(|s| s.in_front(tx)) {
            for s2 in surfs.iter().filter(|s| s.in_front(rx)) {
                if s1 == s2 {
                    continue;
                }
                let seq = [*s1, *s2];
                if let Some(pts) = reflection_points(scene, tx, rx, &seq) {
                    let verts = vec![tx, pts[0], pts[1], rx];
                    if let Some(p) = build_path(scene, verts, seq.to_vec()) {
                        found.push(p);
                    }
                }
            }
        }
    }
    let powers: Vec<f64> = found.iter().map(|p| p.path.power()).collect();
    let keep = prune_mask(&powers, config.prune_db);
    let mut paths: Vec<TracedPath> = found
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect();
    paths.sort_by(|a, b| {
        b.path
            .power()
            .total_cmp(&a.path.power())
            .then(a.path.delay_s.total_cmp(&b.path.delay_s))
    });
    paths.truncate(config.max_paths);
    TracedLink {
        tx_pos: tx,
        rx_pos: rx,
        paths,
    }
}

/// `true` for entries within `threshold_db` of the strongest.
pub fn prune_mask(powers: &[f64], threshold_db: f64) -> Vec<bool> {
    let max = powers.iter().copied().fold(0.0, f64::max);
    powers
        .iter()
        .map(|&p| p > 0.0 && 10.0 * (max / p).log10() <= threshold_db + PRUNE_TOL_DB)
        .collect()
}

/// Drops active paths more than 25 dB below the strongest.
pub fn prune_paths(paths: &[MpcPath]) -> Vec<MpcPath> {
    let active: Vec<MpcPath> = paths.iter().copied().filter(|p| p.present).collect();
    let powers: Vec<f64> = active.iter().map(MpcPath::power).collect();
    active
        .into_iter()
        .zip(prune_mask(&powers, PRUNE_THRESHOLD_DB))
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Keep iff the link has an active path and its received power is not below the floor.
pub fn filter_link(paths: &[MpcPath]) -> bool {
    match received_power_db(paths) {
        Ok(p) => p >= LINK_FLOOR_DB,
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prune_boundary_is_inclusive() {
        let strongest = 1e-9;
        let at = strongest * 10f64.powf(-2.5);
        let past = strongest * 10f64.powf(-2.501);
        assert_eq!(prune_mask(&[strongest, at, past], 25.0), vec![true, true, false]);
    }

    #[test]
    fn segment_touching_face_is_clear() {
        let bmin = [0.0, 0.0, 0.0];
        let bmax = [10.0, 10.0, 10.0];
        assert!(!segment_hits_box([-5.0, 5.0, 5.0], [0.0, 5.0, 5.0], bmin, bmax));
        assert!(segment_hits_box([-5.0, 5.0, 5.0], [15.0, 5.0, 5.0], bmin, bmax));
        assert!(!segment_hits_box([-5.0, 5.0, 12.0], [15.0, 5.0, 12.0], bmin, bmax));
    }
}
