//! AdamW, gradient clipping and schedules.

use mpcgen_autodiff::Tensor;

use super::TrainConfig;

/// Linear warmup from zero, then cosine decay to `min_ratio · peak` at the last step.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    let peak = cfg.lr_peak;
    if step < cfg.lr_warmup {
        return peak * step as f64 / cfg.lr_warmup as f64;
    }
    let floor = cfg.lr_min_ratio * peak;
    let span = cfg.steps.saturating_sub(cfg.lr_warmup).max(1);
    let progress = ((step - cfg.lr_warmup) as f64 / span as f64).min(1.0);
    floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// `β_max · min(1, step / warmup)`.
pub fn kl_beta(cfg: &TrainConfig, step: usize) -> f64 {
    if cfg.beta_warmup == 0 {
        return cfg.beta_max;
    }
    cfg.beta_max * (step as f64 / cfg.beta_warmup as f64).min(1.0)
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl AdamW {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update. `lr_scale[i]` multiplies the rate of parameter `i`; `decay[i]` enables weight decay.
    pub fn step(
        &mut self,
        cfg: &TrainConfig,
        lr: f64,
        params: &mut [Tensor],
        grads: &[Tensor],
        lr_scale: &[f64],
        decay: &[bool],
    ) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let rate = lr * lr_scale[i];
            let wd = if decay[i] { cfg.weight_decay } else { 0.0 };
            let p = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= rate * (mhat / (vhat.sqrt() + cfg.adam_eps) + wd * p[j]);
            }
        }
    }
}
