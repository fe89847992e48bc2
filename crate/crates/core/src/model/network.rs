//! Conditioning encoder, prior, posterior and slot decoder.

use mpcgen_autodiff::{AutodiffError, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::{CondBatch, TargetBatch};
use super::layers::{sinusoidal_positions, Attention, Ctx, CrossLayer, EncoderLayer, LayerNorm, Linear, Mlp};
use super::params::{Builder, ParamStore};
use super::{ModelConfig, ModelError, N_TASKS};
use crate::scene::POV_CHANNELS;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Soft bound keeping log-variances inside (-12, 12).
pub const LOGVAR_BOUND: f64 = 12.0;

/// Per-channel patch tower: tokens keep their channel identity through a channel embedding.
#[derive(Debug, Clone)]
pub struct Tower {
    embed: Linear,
    channel: usize,
    position: usize,
    layers: Vec<EncoderLayer>,
    ln: LayerNorm,
}

impl Tower {
    pub fn new(b: &mut Builder, name: &str, cfg: &ModelConfig, channels: usize, patches: usize) -> Self {
        let d = cfg.d_model;
        b.scoped(name, |b| Self {
            embed: Linear::new(b, "embed", cfg.patch * cfg.patch, d),
            channel: b.normal("channel", &[channels, 1, d], 0.02),
            position: b.normal("position", &[patches, d], 0.02),
            layers: (0..cfg.vit_layers)
                .map(|i| EncoderLayer::new(b, &format!("layer{i}"), d, cfg.heads, cfg.ffn))
                .collect(),
            ln: LayerNorm::new(b, "ln", d),
        })
    }

    /// `[B, C, P, patch²]` -> `[B, C·P, d]`.
    pub fn forward<'g>(&self, cx: &Ctx<'g>, patches: Var<'g>) -> Result<Var<'g>> {
        let s = patches.shape();
        let x = self
            .embed
            .forward(cx, patches)?
            .add(cx.p[self.channel])?
            .add(cx.p[self.position])?;
        let d = x.shape()[3];
        let mut x = x.reshape(&[s[0], s[1] * s[2], d])?;
        for layer in &self.layers {
            x = layer.forward(cx, x)?;
        }
        self.ln.forward(cx, x)
    }
}

/// Memories and fused conditioning vector for a batch.
#[derive(Clone, Copy)]
pub struct Conditioning<'g> {
    /// `[B, T, d]` with global, TX, RX and coordinate tokens.
    pub memory: Var<'g>,
    /// Global, TX and coordinate tokens.
    pub memory_tx: Var<'g>,
    /// Global, RX and coordinate tokens.
    pub memory_rx: Var<'g>,
    /// `[B, d_scene]`
    pub c: Var<'g>,
}

/// Decoder outputs in normalized space.
#[derive(Clone, Copy)]
pub struct Prediction<'g> {
    /// `[B, L]`
    pub presence_logit: Var<'g>,
    /// `[B, L]` in (0, 1)
    pub delay: Var<'g>,
    /// `[B, L, 2]`
    pub gain: Var<'g>,
    /// `[B, L, 3]` unit vectors
    pub aod: Var<'g>,
    pub aoa: Var<'g>,
    /// `[B, 1]`
    pub tof: Var<'g>,
    pub rx_power: Var<'g>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub global: Tower,
    pub tx: Tower,
    pub rx: Tower,
    pub coord: Mlp,
    pub fusion: Mlp,
}

#[derive(Debug, Clone)]
pub struct Posterior {
    pub embed: Linear,
    pub layers: Vec<CrossLayer>,
    pub ln: LayerNorm,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub slots: usize,
    pub z_proj: Linear,
    pub layers: Vec<CrossLayer>,
    pub ln: LayerNorm,
    pub presence: Linear,
    pub delay: Linear,
    pub gain: Linear,
    pub aod_ln: LayerNorm,
    pub aod_att: Attention,
    pub aod: Linear,
    pub aoa_ln: LayerNorm,
    pub aoa_att: Attention,
    pub aoa: Linear,
    pub scalars: Mlp,
}

/// Parameter layout of the whole model. Tensors live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Cvae {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub prior: Mlp,
    pub posterior: Posterior,
    pub decoder: Decoder,
    /// `[7]` log-σ per task.
    pub kendall: usize,
}

impl Cvae {
    /// Builds the layout and a freshly initialized store.
    pub fn init(cfg: &ModelConfig, seed: u64) -> std::result::Result<(Self, ParamStore), ModelError> {
        cfg.validate()?;
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let model = Self::build(cfg, &mut b);
        Ok((model, store))
    }

    fn build(cfg: &ModelConfig, b: &mut Builder) -> Self {
        let (d, l) = (cfg.d_model, cfg.max_paths);
        let encoder = b.scoped("encoder", |b| Encoder {
            global: Tower::new(b, "global", cfg, 1, cfg.heightmap_patches()),
            tx: Tower::new(b, "tx", cfg, POV_CHANNELS, cfg.pov_patches()),
            rx: Tower::new(b, "rx", cfg, POV_CHANNELS, cfg.pov_patches()),
            coord: Mlp::new(b, "coord", cfg.coord_features(), cfg.coord_hidden, d),
            fusion: Mlp::new(b, "fusion", 4 * d, cfg.d_scene, cfg.d_scene),
        });
        let prior = Mlp::new(b, "prior", cfg.d_scene, cfg.d_scene, 2 * cfg.d_z);
        let posterior = b.scoped("posterior", |b| Posterior {
            embed: Linear::new(b, "embed", 10, d),
            layers: (0..cfg.posterior_layers)
                .map(|i| CrossLayer::new(b, &format!("layer{i}"), d, cfg.heads, cfg.ffn))
                .collect(),
            ln: LayerNorm::new(b, "ln", d),
            head: Mlp::new(b, "head", d + 2 + cfg.d_scene, d, 2 * cfg.d_z),
        });
        let decoder = b.scoped("decoder", |b| Decoder {
            slots: b.normal("slots", &[l, d], 1.0),
            z_proj: Linear::new(b, "z_proj", cfg.d_z, d),
            layers: (0..cfg.decoder_layers)
                .map(|i| CrossLayer::new(b, &format!("layer{i}"), d, cfg.heads, cfg.ffn))
                .collect(),
            ln: LayerNorm::new(b, "ln", d),
            presence: Linear::new(b, "presence", d, 1),
            delay: Linear::new(b, "delay", d, 1),
            gain: Linear::new(b, "gain", d, 2),
            aod_ln: LayerNorm::new(b, "aod_ln", d),
            aod_att: Attention::new(b, "aod_att", d, cfg.heads),
            aod: Linear::new(b, "aod", d, 3),
            aoa_ln: LayerNorm::new(b, "aoa_ln", d),
            aoa_att: Attention::new(b, "aoa_att", d, cfg.heads),
            aoa: Linear::new(b, "aoa", d, 3),
            scalars: Mlp::new(b, "scalars", d, d, 2),
        });
        let kendall = b.constant("kendall.s", &[N_TASKS], 0.0);
        Self {
            cfg: cfg.clone(),
            encoder,
            prior,
            posterior,
            decoder,
            kendall,
        }
    }

    /// Layout for `cfg` with the shapes a store must match.
    pub fn layout(cfg: &ModelConfig) -> std::result::Result<(Self, ParamStore), ModelError> {
        Self::init(cfg, 0)
    }

    pub fn encode<'g>(&self, cx: &Ctx<'g>, heightmap: &Tensor, cond: &CondBatch) -> Result<Conditioning<'g>> {
        let g = cx.g;
        let n = cond.n;
        let enc = &self.encoder;
        let spread = g.constant(Tensor::zeros(&[n, 1, 1]));
        let global = enc.global.forward(cx, g.constant(heightmap.clone()))?;
        let global_b = global.add(spread)?;
        let tx = enc.tx.forward(cx, g.constant(cond.tx_patches.clone()))?;
        let rx = enc.rx.forward(cx, g.constant(cond.rx_patches.clone()))?;
        let coord = enc.coord.forward(cx, g.constant(cond.coords.clone()))?;
        let d = self.cfg.d_model;
        let coord_tok = coord.reshape(&[n, 1, d])?;
        let memory = g.concat(&[global_b, tx, rx, coord_tok], 1)?;
        let memory_tx = g.concat(&[global_b, tx, coord_tok], 1)?;
        let memory_rx = g.concat(&[global_b, rx, coord_tok], 1)?;
        let pooled = g.concat(
            &[
                global_b.mean_axis(1)?,
                tx.mean_axis(1)?,
                rx.mean_axis(1)?,
                coord,
            ],
            1,
        )?;
        let c = enc.fusion.forward(cx, pooled)?;
        Ok(Conditioning {
            memory,
            memory_tx,
            memory_rx,
            c,
        })
    }

    fn split_gaussian<'g>(&self, out: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let dz = self.cfg.d_z;
        let mu = out.slice(1, 0, dz)?;
        let logvar = out
            .slice(1, dz, dz)?
            .scale(1.0 / LOGVAR_BOUND)
            .tanh()
            .scale(LOGVAR_BOUND);
        Ok((mu, logvar))
    }

    /// `(μ_p, log σ_p²)`, each `[B, d_z]`.
    pub fn prior<'g>(&self, cx: &Ctx<'g>, c: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        self.split_gaussian(self.prior.forward(cx, c)?)
    }

    /// `(μ_q, log σ_q²)` from the ground-truth link and the conditioning.
    pub fn posterior<'g>(
        &self,
        cx: &Ctx<'g>,
        x: &TargetBatch,
        cond: &Conditioning<'g>,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let g = cx.g;
        let post = &self.posterior;
        let (n, l) = (x.n(), self.cfg.max_paths);
        let pe = g.constant(sinusoidal_positions(l, self.cfg.d_model));
        let mut h = post.embed.forward(cx, g.constant(x.tokens.clone()))?.add(pe)?;
        for layer in &post.layers {
            h = layer.forward(cx, h, cond.memory)?;
        }
        let h = post.ln.forward(cx, h)?;
        // Presence-masked mean over slots.
        let counts = x.active_counts();
        let weights = Tensor::from_fn(&[n, l, 1], |i| {
            let b = i / l;
            x.presence.data()[i] / counts[b].max(1) as f64
        });
        let pooled = h.mul_const(weights)?.sum_axis(1)?;
        let feats = g.concat(
            &[
                pooled,
                g.constant(x.rx_power_n.clone()),
                g.constant(x.tof_n.clone()),
                cond.c,
            ],
            1,
        )?;
        self.split_gaussian(post.head.forward(cx, feats)?)
    }

    pub fn decode<'g>(&self, cx: &Ctx<'g>, z: Var<'g>, cond: &Conditioning<'g>) -> Result<Prediction<'g>> {
        let dec = &self.decoder;
        let (d, l) = (self.cfg.d_model, self.cfg.max_paths);
        let n = z.shape()[0];
        let zp = dec.z_proj.forward(cx, z)?.reshape(&[n, 1, d])?;
        let mut h = zp.add(cx.p[dec.slots])?;
        for layer in &dec.layers {
            h = layer.forward(cx, h, cond.memory)?;
        }
        let h = dec.ln.forward(cx, h)?;
        let presence_logit = dec.presence.forward(cx, h)?.reshape(&[n, l])?;
        let delay = dec.delay.forward(cx, h)?.sigmoid().reshape(&[n, l])?;
        let gain = dec.gain.forward(cx, h)?;
        let route = |ln: &LayerNorm, att: &Attention, head: &Linear, mem: Var<'g>| -> Result<Var<'g>> {
            let q = ln.forward(cx, h)?;
            let r = h.add(att.forward(cx, q, mem)?)?;
            Ok(head.forward(cx, r)?.l2_normalize())
        };
        let aod = route(&dec.aod_ln, &dec.aod_att, &dec.aod, cond.memory_tx)?;
        let aoa = route(&dec.aoa_ln, &dec.aoa_att, &dec.aoa, cond.memory_rx)?;
        let scalars = dec.scalars.forward(cx, h.mean_axis(1)?)?;
        Ok(Prediction {
            presence_logit,
            delay,
            gain,
            aod,
            aoa,
            tof: scalars.slice(1, 0, 1)?,
            rx_power: scalars.slice(1, 1, 1)?,
        })
    }
}

/// `z = μ + exp(½ log σ²)·ε` with a fixed noise tensor.
pub fn reparameterize<'g>(mu: Var<'g>, logvar: Var<'g>, eps: Tensor) -> Result<Var<'g>> {
    mu.add(logvar.scale(0.5).exp().mul_const(eps)?)
}
