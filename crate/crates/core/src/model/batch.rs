//! Assembly of model inputs and targets from dataset records.

use mpcgen_autodiff::Tensor;

use super::{ModelConfig, ModelError};
use crate::dataset::{fourier_encode, DatasetRecord, FOURIER_DIM};
use crate::scene::POV_CHANNELS;

/// Splits a channel-major image stack `[C][res][res]` into `[C, P, patch²]` rows.
pub fn patchify(image: &[f32], channels: usize, res: usize, patch: usize) -> Vec<f64> {
    let per_side = res / patch;
    let mut out = Vec::with_capacity(image.len());
    for c in 0..channels {
        let base = c * res * res;
        for pr in 0..per_side {
            for pc in 0..per_side {
                for r in 0..patch {
                    let row = pr * patch + r;
                    let start = base + row * res + pc * patch;
                    out.extend(image[start..start + patch].iter().map(|&v| v as f64));
                }
            }
        }
    }
    out
}

/// Heightmap patches `[1, 1, P, patch²]`, shared by every link of a scene.
pub fn heightmap_patches(cfg: &ModelConfig, heightmap: &[f32]) -> Result<Tensor, ModelError> {
    let res = cfg.heightmap_resolution;
    if heightmap.len() != res * res {
        return Err(ModelError::Data(format!(
            "heightmap has {} pixels, model expects {res}x{res}",
            heightmap.len()
        )));
    }
    let data = patchify(heightmap, 1, res, cfg.patch);
    Ok(Tensor::new(&[1, 1, cfg.heightmap_patches(), cfg.patch * cfg.patch], data)?)
}

/// Conditioning inputs of one link, with or without ground truth.
#[derive(Debug, Clone, Copy)]
pub struct LinkInput<'a> {
    pub link_id: u64,
    pub tx_pos: [f64; 3],
    pub rx_pos: [f64; 3],
    /// Preprocessed channel-major POV stacks.
    pub tx_pov: &'a [f32],
    pub rx_pov: &'a [f32],
}

impl LinkInput<'_> {
    pub fn coordinates(&self) -> [f64; 6] {
        let (t, r) = (self.tx_pos, self.rx_pos);
        [t[0], t[1], t[2], r[0], r[1], r[2]]
    }
}

impl<'a> From<&'a DatasetRecord> for LinkInput<'a> {
    fn from(r: &'a DatasetRecord) -> Self {
        Self {
            link_id: r.link_id,
            tx_pos: r.link.tx_pos,
            rx_pos: r.link.rx_pos,
            tx_pov: &r.tx_pov,
            rx_pov: &r.rx_pov,
        }
    }
}

/// Scene conditioning for a batch of links.
#[derive(Debug, Clone)]
pub struct CondBatch {
    pub n: usize,
    /// `[B, 12, P, patch²]`
    pub tx_patches: Tensor,
    pub rx_patches: Tensor,
    /// `[B, 96]`
    pub coords: Tensor,
}

/// Ground-truth targets for a batch of links.
#[derive(Debug, Clone)]
pub struct TargetBatch {
    /// `[B, L, 10]` per-slot vectors fed to the posterior.
    pub tokens: Tensor,
    /// `[B, L]` presence in {0, 1}.
    pub presence: Tensor,
    /// `[B, 1]`
    pub tof_n: Tensor,
    pub rx_power_n: Tensor,
    /// `[B, L]`
    pub delay: Tensor,
    /// `[B, L, 2]`
    pub gain: Tensor,
    /// `[B, L, 3]`
    pub aod: Tensor,
    pub aoa: Tensor,
}

impl TargetBatch {
    pub fn n(&self) -> usize {
        self.presence.shape()[0]
    }

    /// Active-slot count per link.
    pub fn active_counts(&self) -> Vec<usize> {
        let l = self.presence.shape()[1];
        self.presence
            .data()
            .chunks(l)
            .map(|row| row.iter().filter(|&&m| m > 0.5).count())
            .collect()
    }
}

pub fn cond_batch(cfg: &ModelConfig, records: &[LinkInput]) -> Result<CondBatch, ModelError> {
    let res = cfg.pov_resolution;
    let expected = POV_CHANNELS * res * res;
    let n = records.len();
    let (pp, ps2) = (cfg.pov_patches(), cfg.patch * cfg.patch);
    let mut tx = Vec::with_capacity(n * expected);
    let mut rx = Vec::with_capacity(n * expected);
    let mut coords = Vec::with_capacity(n * FOURIER_DIM);
    for r in records {
        if r.tx_pov.len() != expected || r.rx_pov.len() != expected {
            return Err(ModelError::Data(format!(
                "link {} has {} POV values, model expects {expected}",
                r.link_id,
                r.tx_pov.len()
            )));
        }
        tx.extend(patchify(&r.tx_pov, POV_CHANNELS, res, cfg.patch));
        rx.extend(patchify(&r.rx_pov, POV_CHANNELS, res, cfg.patch));
        coords.extend(fourier_encode(&r.coordinates()));
    }
    Ok(CondBatch {
        n,
        tx_patches: Tensor::new(&[n, POV_CHANNELS, pp, ps2], tx)?,
        rx_patches: Tensor::new(&[n, POV_CHANNELS, pp, ps2], rx)?,
        coords: Tensor::new(&[n, FOURIER_DIM], coords)?,
    })
}

pub fn target_batch(cfg: &ModelConfig, records: &[&DatasetRecord]) -> Result<TargetBatch, ModelError> {
    let (n, l) = (records.len(), cfg.max_paths);
    let mut tokens = Vec::with_capacity(n * l * 10);
    let mut presence = Vec::with_capacity(n * l);
    let mut delay = Vec::with_capacity(n * l);
    let mut gain = Vec::with_capacity(n * l * 2);
    let mut aod = Vec::with_capacity(n * l * 3);
    let mut aoa = Vec::with_capacity(n * l * 3);
    let (mut tof, mut prx) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for r in records {
        let x = &r.normalized;
        if x.slots.len() != l {
            return Err(ModelError::Data(format!(
                "link {} has {} slots, model expects {l}",
                r.link_id,
                x.slots.len()
            )));
        }
        for s in &x.slots {
            tokens.extend(s.to_vector());
            presence.push(if s.present { 1.0 } else { 0.0 });
            delay.push(s.excess_delay_n);
            gain.extend([s.gain_re_n, s.gain_im_n]);
            aod.extend(s.aod_unit);
            aoa.extend(s.aoa_unit);
        }
        tof.push(x.tof_n);
        prx.push(x.rx_power_n);
    }
    Ok(TargetBatch {
        tokens: Tensor::new(&[n, l, 10], tokens)?,
        presence: Tensor::new(&[n, l], presence)?,
        tof_n: Tensor::new(&[n, 1], tof)?,
        rx_power_n: Tensor::new(&[n, 1], prx)?,
        delay: Tensor::new(&[n, l], delay)?,
        gain: Tensor::new(&[n, l, 2], gain)?,
        aod: Tensor::new(&[n, l, 3], aod)?,
        aoa: Tensor::new(&[n, l, 3], aoa)?,
    })
}
