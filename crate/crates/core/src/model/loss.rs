//! Task losses, KL with free bits, and uncertainty weighting.

use mpcgen_autodiff::{AutodiffError, Graph, Tensor, Var};

use super::batch::TargetBatch;
use super::network::Prediction;

type Result<T> = std::result::Result<T, AutodiffError>;

pub const N_TASKS: usize = 7;
pub const TASK_NAMES: [&str; N_TASKS] = ["presence", "tof", "power", "aoa", "aod", "delay", "gain"];

pub mod task {
    pub const PRESENCE: usize = 0;
    pub const TOF: usize = 1;
    pub const POWER: usize = 2;
    pub const AOA: usize = 3;
    pub const AOD: usize = 4;
    pub const DELAY: usize = 5;
    pub const GAIN: usize = 6;
}

pub const LOGIT_CLAMP: f64 = 30.0;

/// Mean binary cross-entropy over every slot of every link.
pub fn presence_loss<'g>(logits: Var<'g>, mask: &Tensor) -> Result<Var<'g>> {
    let l = logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    Ok(l.softplus().sub(l.mul_const(mask.clone())?)?.mean())
}

/// Squared error averaged over the batch.
pub fn scalar_loss<'g>(pred: Var<'g>, target: &Tensor) -> Result<Var<'g>> {
    let t = pred.graph().constant(target.clone());
    Ok(pred.sub(t)?.square().mean())
}

/// `m_ℓ / (‖m‖₁ · B)` so that a weighted sum gives the batch mean of per-link masked means.
pub fn masked_weights(mask: &Tensor) -> Tensor {
    let (n, l) = (mask.shape()[0], mask.shape()[1]);
    let counts: Vec<f64> = mask
        .data()
        .chunks(l)
        .map(|row| row.iter().sum::<f64>())
        .collect();
    Tensor::from_fn(&[n, l], |i| {
        let c = counts[i / l];
        if c > 0.0 {
            mask.data()[i] / (c * n as f64)
        } else {
            0.0
        }
    })
}

fn check_active(mask: &Tensor) -> Result<()> {
    let l = mask.shape()[1];
    if mask.data().chunks(l).any(|row| row.iter().all(|&m| m == 0.0)) {
        return Err(AutodiffError::InvalidShape {
            shape: mask.shape().to_vec(),
            reason: "masked loss on a link with no active paths".into(),
        });
    }
    Ok(())
}

/// Masked mean of `1 - d̂·d` per link, averaged over the batch.
pub fn cosine_loss<'g>(pred: Var<'g>, target: &Tensor, mask: &Tensor) -> Result<Var<'g>> {
    check_active(mask)?;
    let dots = pred.mul_const(target.clone())?.sum_axis(2)?;
    Ok(dots.mul_const(masked_weights(mask))?.sum().neg().offset(1.0))
}

/// Masked mean squared error per link, averaged over the batch.
pub fn masked_mse<'g>(pred: Var<'g>, target: &Tensor, mask: &Tensor) -> Result<Var<'g>> {
    check_active(mask)?;
    let t = pred.graph().constant(target.clone());
    Ok(pred.sub(t)?.square().mul_const(masked_weights(mask))?.sum())
}

/// Masked squared error over real and imaginary parts jointly, i.e. divided by `2‖m‖₁`.
pub fn gain_loss<'g>(pred: Var<'g>, target: &Tensor, mask: &Tensor) -> Result<Var<'g>> {
    check_active(mask)?;
    let t = pred.graph().constant(target.clone());
    let per_slot = pred.sub(t)?.square().sum_axis(2)?;
    Ok(per_slot.mul_const(masked_weights(mask))?.sum().scale(0.5))
}

/// The seven task losses in [`TASK_NAMES`] order.
pub fn task_losses<'g>(pred: &Prediction<'g>, x: &TargetBatch) -> Result<[Var<'g>; N_TASKS]> {
    let m = &x.presence;
    Ok([
        presence_loss(pred.presence_logit, m)?,
        scalar_loss(pred.tof, &x.tof_n)?,
        scalar_loss(pred.rx_power, &x.rx_power_n)?,
        cosine_loss(pred.aoa, &x.aoa, m)?,
        cosine_loss(pred.aod, &x.aod, m)?,
        masked_mse(pred.delay, &x.delay, m)?,
        gain_loss(pred.gain, &x.gain, m)?,
    ])
}

/// Per-dimension KL(q ‖ p) averaged over the batch, `[d_z]`.
pub fn kl_per_dim<'g>(
    mu_q: Var<'g>,
    logvar_q: Var<'g>,
    mu_p: Var<'g>,
    logvar_p: Var<'g>,
) -> Result<Var<'g>> {
    let ratio = logvar_q.sub(logvar_p)?.exp();
    let mahal = mu_p.sub(mu_q)?.square().mul(logvar_p.neg().exp())?;
    let kl = ratio
        .add(mahal)?
        .offset(-1.0)
        .add(logvar_p)?
        .sub(logvar_q)?
        .scale(0.5);
    kl.mean_axis(0)
}

/// `Σ_d max(λ, KL_d)`.
pub fn free_bits<'g>(kl: Var<'g>, lambda: f64) -> Var<'g> {
    kl.clamp(lambda, f64::INFINITY).sum()
}

/// Classification weight and offset first, then the six regression tasks.
const KENDALL_SCALE: [f64; N_TASKS] = [1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
const KENDALL_LOG: [f64; N_TASKS] = [2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];

/// `β·kl + Σ_reg [L/(2σ²) + log σ] + L₁/σ₁² + 2 log σ₁` with `σ = exp(s)`.
pub fn kendall_total<'g>(
    g: &'g Graph,
    losses: &[Var<'g>; N_TASKS],
    s: Var<'g>,
    beta: f64,
    kl_term: Var<'g>,
) -> Result<Var<'g>> {
    let parts: Vec<Var<'g>> = losses.iter().map(|l| l.reshape(&[1])).collect::<Result<_>>()?;
    let stacked = g.concat(&parts, 0)?;
    let data = stacked
        .mul(s.scale(-2.0).exp())?
        .mul_const(Tensor::new(&[N_TASKS], KENDALL_SCALE.to_vec())?)?;
    let reg = s.mul_const(Tensor::new(&[N_TASKS], KENDALL_LOG.to_vec())?)?;
    kl_term.scale(beta).add(data.add(reg)?.sum())
}
