use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::channel::DEFAULT_MAX_PATHS;
use crate::dataset::FOURIER_DIM;
use crate::scene::POV_CHANNELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub max_paths: usize,
    pub d_z: usize,
    pub d_scene: usize,
    pub d_model: usize,
    pub heads: usize,
    pub vit_layers: usize,
    pub posterior_layers: usize,
    pub decoder_layers: usize,
    pub patch: usize,
    pub ffn: usize,
    pub dropout: f64,
    pub pov_resolution: usize,
    pub heightmap_resolution: usize,
    /// Width of the hidden layer projecting the Fourier coordinate features.
    pub coord_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            max_paths: DEFAULT_MAX_PATHS,
            d_z: 64,
            d_scene: 128,
            d_model: 256,
            heads: 8,
            vit_layers: 3,
            posterior_layers: 2,
            decoder_layers: 3,
            patch: 32,
            ffn: 1024,
            dropout: 0.1,
            pov_resolution: 128,
            heightmap_resolution: 128,
            coord_hidden: 128,
        }
    }

    pub fn desk() -> Self {
        Self {
            max_paths: DEFAULT_MAX_PATHS,
            d_z: 16,
            d_scene: 32,
            d_model: 32,
            heads: 2,
            vit_layers: 1,
            posterior_layers: 1,
            decoder_layers: 1,
            patch: 8,
            ffn: 64,
            dropout: 0.1,
            pov_resolution: 16,
            heightmap_resolution: 16,
            coord_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("max_paths", self.max_paths),
            ("d_z", self.d_z),
            ("d_scene", self.d_scene),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("patch", self.patch),
            ("ffn", self.ffn),
            ("pov_resolution", self.pov_resolution),
            ("heightmap_resolution", self.heightmap_resolution),
            ("coord_hidden", self.coord_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        for (name, res) in [("POV", self.pov_resolution), ("heightmap", self.heightmap_resolution)] {
            if res % self.patch != 0 {
                return Err(ModelError::Config(format!(
                    "{name} resolution {res} is not divisible by patch size {}",
                    self.patch
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn pov_patches(&self) -> usize {
        (self.pov_resolution / self.patch).pow(2)
    }

    pub fn heightmap_patches(&self) -> usize {
        (self.heightmap_resolution / self.patch).pow(2)
    }

    /// Tokens in the full conditioning memory: global, TX, RX and the coordinate token.
    pub fn memory_tokens(&self) -> usize {
        self.heightmap_patches() + 2 * POV_CHANNELS * self.pov_patches() + 1
    }

    /// Tokens in the TX-only (or RX-only) memory used by the angle heads.
    pub fn side_memory_tokens(&self) -> usize {
        self.heightmap_patches() + POV_CHANNELS * self.pov_patches() + 1
    }

    pub fn coord_features(&self) -> usize {
        FOURIER_DIM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr_peak: f64,
    pub lr_warmup: usize,
    pub lr_min_ratio: f64,
    pub beta_max: f64,
    pub beta_warmup: usize,
    pub free_bits: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Learning-rate multiplier applied to the seven uncertainty scalars.
    pub kendall_lr_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            steps: 100_000,
            batch: 128,
            lr_peak: 3.5e-4,
            lr_warmup: 1000,
            lr_min_ratio: 0.01,
            beta_max: 0.1,
            beta_warmup: 11_000,
            free_bits: 0.1,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            kendall_lr_scale: 1.0,
            seed: 1,
        }
    }

    pub fn desk() -> Self {
        Self {
            steps: 1500,
            batch: 32,
            lr_peak: 1e-3,
            lr_warmup: 100,
            beta_max: 1.0,
            beta_warmup: 300,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.steps == 0 || self.batch == 0 {
            return Err(ModelError::Config("steps and batch must be positive".into()));
        }
        let finite_nonneg = [
            ("lr_peak", self.lr_peak),
            ("lr_min_ratio", self.lr_min_ratio),
            ("beta_max", self.beta_max),
            ("free_bits", self.free_bits),
            ("weight_decay", self.weight_decay),
            ("grad_clip", self.grad_clip),
            ("adam_eps", self.adam_eps),
            ("kendall_lr_scale", self.kendall_lr_scale),
        ];
        for (name, v) in finite_nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::Config(format!("{name} must be finite and nonnegative")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(ModelError::Config(format!("{name} outside [0, 1)")));
            }
        }
        Ok(())
    }
}
