use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::material::MaterialKind;
use super::SceneError;

/// An axis-aligned building: footprint `[min, max]` in x/y, extruded from z = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height_m: f64,
    pub material: MaterialKind,
}

impl Building {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    pub fn overlaps(&self, other: &Building, gap: f64) -> bool {
        self.min[0] < other.max[0] + gap
            && other.min[0] < self.max[0] + gap
            && self.min[1] < other.max[1] + gap
            && other.min[1] < self.max[1] + gap
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn box_min(&self) -> [f64; 3] {
        [self.min[0], self.min[1], 0.0]
    }

    pub fn box_max(&self) -> [f64; 3] {
        [self.max[0], self.max[1], self.height_m]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrbanScene {
    pub extent_m: f64,
    pub buildings: Vec<Building>,
    pub ground: MaterialKind,
    pub carrier_hz: f64,
    pub seed: u64,
}

impl UrbanScene {
    /// A scene with no buildings.
    pub fn empty(extent_m: f64, carrier_hz: f64) -> Self {
        Self {
            extent_m,
            buildings: Vec::new(),
            ground: MaterialKind::Concrete,
            carrier_hz,
            seed: 0,
        }
    }

    pub fn wavelength_m(&self) -> f64 {
        crate::channel::SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Index of the building whose footprint contains (x, y).
    pub fn building_at(&self, x: f64, y: f64) -> Option<usize> {
        self.buildings.iter().position(|b| b.contains_xy(x, y))
    }
}

/// Relative weights of each material in the generated scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialMix {
    pub concrete: f64,
    pub wood: f64,
    pub glass: f64,
}

impl Default for MaterialMix {
    fn default() -> Self {
        Self {
            concrete: 0.6,
            wood: 0.15,
            glass: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub extent_m: f64,
    pub n_buildings: usize,
    /// Building height range (m).
    pub height_range: [f64; 2],
    /// Footprint side length range (m).
    pub footprint_range: [f64; 2],
    pub material_mix: MaterialMix,
    pub carrier_hz: f64,
    /// Cells per side of the street grid; 0 picks one from `n_buildings`.
    pub grid_cells: usize,
    /// Minimum clearance between footprints (m).
    pub street_m: f64,
    /// Placement attempts per building before giving up.
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            extent_m: 512.0,
            n_buildings: 30,
            height_range: [8.0, 40.0],
            footprint_range: [20.0, 45.0],
            material_mix: MaterialMix::default(),
            carrier_hz: 3.5e9,
            grid_cells: 0,
            street_m: 10.0,
            max_attempts: 200,
            seed: 42,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: &str| Err(SceneError::Config(msg.to_string()));
        if self.n_buildings == 0 {
            return bad("n_buildings must be at least 1");
        }
        if !(self.extent_m > 0.0) || !(self.carrier_hz > 0.0) {
            return bad("extent and carrier must be positive");
        }
        for (name, r) in [("height_range", self.height_range), ("footprint_range", self.footprint_range)] {
            if !(r[0] > 0.0 && r[1] >= r[0]) {
                return Err(SceneError::Config(format!("{name} must be positive and ordered")));
            }
        }
        let m = self.material_mix;
        if [m.concrete, m.wood, m.glass].iter().any(|w| !(*w >= 0.0))
            || m.concrete + m.wood + m.glass <= 0.0
        {
            return bad("material_mix weights must be nonnegative with a positive sum");
        }
        if self.street_m < 0.0 {
            return bad("street_m must be nonnegative");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

fn pick_material(rng: &mut ChaCha8Rng, mix: &MaterialMix) -> MaterialKind {
    let total = mix.concrete + mix.wood + mix.glass;
    let u = rng.random::<f64>() * total;
    if u < mix.concrete {
        MaterialKind::Concrete
    } else if u < mix.concrete + mix.wood {
        MaterialKind::Wood
    } else {
        MaterialKind::Glass
    }
}

/// Places buildings on a jittered street grid, re-sampling on overlap.
pub fn generate_scene(config: &SceneConfig) -> Result<UrbanScene, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cells = if config.grid_cells > 0 {
        config.grid_cells
    } else {
        ((config.n_buildings as f64).sqrt().ceil() as usize + 1).max(2)
    };
    let cell = config.extent_m / cells as f64;
    let mut order: Vec<usize> = (0..cells * cells).collect();
    order.shuffle(&mut rng);

    let mut buildings: Vec<Building> = Vec::with_capacity(config.n_buildings);
    let mut next_cell = 0;
    while buildings.len() < config.n_buildings {
        let mut placed = false;
        for _ in 0..config.max_attempts {
            let c = order[next_cell % order.len()];
            next_cell += 1;
            let (ci, cj) = ((c % cells) as f64, (c / cells) as f64);
            let fr = config.footprint_range;
            let w = rng.random_range(fr[0]..=fr[1]);
            let d = rng.random_range(fr[0]..=fr[1]);
            let h = rng.random_range(config.height_range[0]..=config.height_range[1]);
            // Jitter the footprint centre within its cell.
            let cx = (ci + 0.5) * cell + rng.random_range(-0.25..=0.25) * cell;
            let cy = (cj + 0.5) * cell + rng.random_range(-0.25..=0.25) * cell;
            let candidate = Building {
                min: [cx - w / 2.0, cy - d / 2.0],
                max: [cx + w / 2.0, cy + d / 2.0],
                height_m: h,
                material: pick_material(&mut rng, &config.material_mix),
            };
            let inside = candidate.min[0] >= config.street_m
                && candidate.min[1] >= config.street_m
                && candidate.max[0] <= config.extent_m - config.street_m
                && candidate.max[1] <= config.extent_m - config.street_m;
            if inside && !buildings.iter().any(|b| b.overlaps(&candidate, config.street_m)) {
                buildings.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SceneError::Placement {
                placed: buildings.len(),
                requested: config.n_buildings,
            });
        }
    }
    Ok(UrbanScene {
        extent_m: config.extent_m,
        buildings,
        ground: MaterialKind::Concrete,
        carrier_hz: config.carrier_hz,
        seed: config.seed,
    })
}
