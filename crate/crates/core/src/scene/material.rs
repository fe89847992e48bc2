use serde::{Deserialize, Serialize};

/// Radio and visual properties of a surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: &'static str,
    pub eps_r: f64,
    pub sigma_s_per_m: f64,
    pub scatter_s: f64,
    pub xpd_kx: f64,
    pub thickness_m: f64,
    /// Flat-shading colour, 0..255.
    pub rgb: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialKind {
    Concrete,
    Wood,
    Glass,
}

pub const CONCRETE: Material = Material {
    name: "concrete",
    eps_r: 18.18,
    sigma_s_per_m: 0.765,
    scatter_s: 0.0,
    xpd_kx: 0.0,
    thickness_m: 0.3,
    rgb: [150.0, 150.0, 145.0],
};

pub const WOOD: Material = Material {
    name: "wood",
    eps_r: 5.72,
    sigma_s_per_m: 0.001,
    scatter_s: 0.4,
    xpd_kx: 0.4,
    thickness_m: 0.05,
    rgb: [140.0, 95.0, 55.0],
};

pub const GLASS: Material = Material {
    name: "glass",
    eps_r: 5.24,
    sigma_s_per_m: 0.123,
    scatter_s: 0.4,
    xpd_kx: 0.4,
    thickness_m: 0.01,
    rgb: [120.0, 180.0, 200.0],
};

/// Pixels that hit nothing.
pub const SKY: Material = Material {
    name: "sky",
    eps_r: 1.0,
    sigma_s_per_m: 0.0,
    scatter_s: 0.0,
    xpd_kx: 0.0,
    thickness_m: 0.0,
    rgb: [135.0, 206.0, 235.0],
};

impl MaterialKind {
    pub const ALL: [MaterialKind; 3] = [MaterialKind::Concrete, MaterialKind::Wood, MaterialKind::Glass];

    pub fn material(self) -> &'static Material {
        match self {
            MaterialKind::Concrete => &CONCRETE,
            MaterialKind::Wood => &WOOD,
            MaterialKind::Glass => &GLASS,
        }
    }
}

impl Material {
    pub fn is_valid(&self) -> bool {
        self.eps_r >= 1.0
            && self.sigma_s_per_m >= 0.0
            && (0.0..=1.0).contains(&self.scatter_s)
            && (0.0..=1.0).contains(&self.xpd_kx)
            && self.thickness_m >= 0.0
    }
}
