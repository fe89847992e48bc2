//! Sampling channel realizations from the prior.

use mpcgen_autodiff::{Graph, Tensor};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::batch::{cond_batch, heightmap_patches, LinkInput};
use super::layers::Ctx;
use super::network::{reparameterize, Cvae};
use super::params::ParamStore;
use super::ModelError;
use crate::channel::{decode_direction, denormalize_rx_power, denormalize_tof, LinkChannel, MpcPath, NormStats};
use crate::rng::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    /// Rescale active gains so their total power equals the predicted received power.
    pub power_rescale: bool,
    pub presence_threshold: f64,
    pub batch: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            power_rescale: true,
            presence_threshold: 0.5,
            batch: 64,
        }
    }
}

/// Decoder outputs for one link in normalized space.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub presence_prob: Vec<f64>,
    pub delay: Vec<f64>,
    pub gain: Vec<[f64; 2]>,
    pub aod: Vec<[f64; 3]>,
    pub aoa: Vec<[f64; 3]>,
    pub tof_n: f64,
    pub rx_power_n: f64,
}

/// One generated link. `channel` is `None` for a flagged empty realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub link_id: u64,
    pub channel: Option<LinkChannel>,
    /// Predicted ToF head output (s).
    pub tof_s: f64,
    /// Predicted received-power head output (dB).
    pub rx_power_db: f64,
}

impl Generated {
    pub fn is_empty(&self) -> bool {
        self.channel.is_none()
    }
}

/// Frozen model bound to the heightmap of the scene being generated.
pub struct Generator<'a> {
    pub model: &'a Cvae,
    pub params: &'a ParamStore,
    pub stats: &'a NormStats,
    heightmap: Tensor,
}

impl<'a> Generator<'a> {
    pub fn new(
        model: &'a Cvae,
        params: &'a ParamStore,
        stats: &'a NormStats,
        heightmap: &[f32],
    ) -> Result<Self, ModelError> {
        Ok(Self {
            model,
            params,
            stats,
            heightmap: heightmap_patches(&model.cfg, heightmap)?,
        })
    }

    /// Latent noise for one link; depends only on the seed, sample index and link id.
    pub fn noise(&self, seed: u64, sample: u64, link_id: u64) -> Vec<f64> {
        let mut rng = rng_for(derive_seed(seed, stream::GENERATE, sample), stream::GENERATE, link_id);
        (0..self.model.cfg.d_z).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Prior sampling and decoding for a batch with the given per-link noise rows.
    pub fn predict(&self, records: &[LinkInput], noise: &[Vec<f64>]) -> Result<Vec<RawPrediction>, ModelError> {
        let cfg = &self.model.cfg;
        let (n, l, dz) = (records.len(), cfg.max_paths, cfg.d_z);
        if n == 0 {
            return Ok(Vec::new());
        }
        let cond = cond_batch(cfg, records)?;
        let eps = Tensor::new(&[n, dz], noise.iter().flatten().copied().collect())?;
        let g = Graph::lenient();
        let cx = Ctx::eval(&g, self.params.bind(&g));
        let c = self.model.encode(&cx, &self.heightmap, &cond)?;
        let (mu, lv) = self.model.prior(&cx, c.c)?;
        let z = reparameterize(mu, lv, eps)?;
        let p = self.model.decode(&cx, z, &c)?;
        let (logit, delay, gain, aod, aoa, tof, prx) = (
            p.presence_logit.value(),
            p.delay.value(),
            p.gain.value(),
            p.aod.value(),
            p.aoa.value(),
            p.tof.value(),
            p.rx_power.value(),
        );
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        Ok((0..n)
            .map(|b| {
                let r = b * l..(b + 1) * l;
                RawPrediction {
                    presence_prob: logit.data()[r.clone()].iter().map(|&x| sig(x)).collect(),
                    delay: delay.data()[r].to_vec(),
                    gain: (0..l)
                        .map(|s| {
                            let i = (b * l + s) * 2;
                            [gain.data()[i], gain.data()[i + 1]]
                        })
                        .collect(),
                    aod: (0..l).map(|s| vec3(aod.data(), b * l + s)).collect(),
                    aoa: (0..l).map(|s| vec3(aoa.data(), b * l + s)).collect(),
                    tof_n: tof.data()[b],
                    rx_power_n: prx.data()[b],
                }
            })
            .collect())
    }

    /// Denormalizes one raw prediction into a physical link.
    pub fn realize(&self, rec: &LinkInput, raw: &RawPrediction, opts: &GenerateOptions) -> Generated {
        let tof_s = denormalize_tof(raw.tof_n, self.stats).max(0.0);
        let rx_power_db = denormalize_rx_power(raw.rx_power_n, self.stats);
        let active: Vec<usize> = (0..raw.presence_prob.len())
            .filter(|&s| raw.presence_prob[s] > opts.presence_threshold)
            .collect();
        let amp = 10f64.powf(rx_power_db / 20.0);
        let norm = if opts.power_rescale {
            active
                .iter()
                .map(|&s| raw.gain[s][0].powi(2) + raw.gain[s][1].powi(2))
                .sum::<f64>()
                .sqrt()
        } else {
            1.0
        };
        let paths: Vec<MpcPath> = if norm > 0.0 && norm.is_finite() {
            active
                .iter()
                .map(|&s| {
                    let g = Complex64::new(raw.gain[s][0], raw.gain[s][1]) * (amp / norm);
                    let delay = tof_s + raw.delay[s] * self.stats.window_s;
                    let dir = |v: [f64; 3]| decode_direction(v).unwrap_or((0.0, std::f64::consts::FRAC_PI_2));
                    MpcPath::active(g, delay, dir(raw.aod[s]), dir(raw.aoa[s]))
                })
                .filter(|p| p.power() > 0.0)
                .collect()
        } else {
            Vec::new()
        };
        let channel = if paths.is_empty() {
            None
        } else {
            LinkChannel::from_paths(paths, self.model.cfg.max_paths, rec.tx_pos, rec.rx_pos).ok()
        };
        Generated {
            link_id: rec.link_id,
            channel,
            tof_s,
            rx_power_db,
        }
    }

    /// Generates one realization per record, batched; sample `sample` of seed `seed`.
    pub fn generate(
        &self,
        records: &[LinkInput],
        seed: u64,
        sample: u64,
        opts: &GenerateOptions,
    ) -> Result<Vec<Generated>, ModelError> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(opts.batch.max(1)) {
            let noise: Vec<Vec<f64>> = chunk.iter().map(|r| self.noise(seed, sample, r.link_id)).collect();
            let raw = self.predict(chunk, &noise)?;
            out.extend(chunk.iter().zip(&raw).map(|(r, p)| self.realize(r, p, opts)));
        }
        Ok(out)
    }
}

fn vec3(data: &[f64], row: usize) -> [f64; 3] {
    [data[row * 3], data[row * 3 + 1], data[row * 3 + 2]]
}
