//! Training loop state and a single optimization step.

use mpcgen_autodiff::{Graph, Tensor, Var};
use rand::seq::index::sample;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::batch::{cond_batch, heightmap_patches, target_batch, LinkInput};
use super::layers::Ctx;
use super::loss::{free_bits, kendall_total, kl_per_dim, task_losses, N_TASKS};
use super::network::{reparameterize, Cvae};
use super::optim::{clip_global_norm, kl_beta, learning_rate, AdamW};
use super::params::ParamStore;
use super::{ModelConfig, ModelError, TrainConfig};
use crate::channel::NormStats;
use crate::dataset::{Dataset, DatasetRecord, Split};
use crate::rng::{rng_for, stream};

/// Scalars recorded for every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub losses: [f64; N_TASKS],
    /// Raw KL summed over dimensions.
    pub kl: f64,
    /// KL after the free-bits floor.
    pub kl_term: f64,
    pub beta: f64,
    pub lr: f64,
    pub sigma: [f64; N_TASKS],
    pub grad_norm: f64,
}

/// Everything that changes between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub adam: AdamW,
    pub rng: ChaCha8Rng,
}

pub struct Trainer {
    pub model: Cvae,
    pub params: ParamStore,
    pub train_cfg: TrainConfig,
    pub stats: NormStats,
    pub state: TrainState,
    lr_scale: Vec<f64>,
    decay: Vec<bool>,
}

impl Trainer {
    /// Fresh model for `seed`; initialization and data order use separate sub-streams.
    pub fn new(
        model_cfg: &ModelConfig,
        train_cfg: &TrainConfig,
        stats: NormStats,
    ) -> Result<Self, ModelError> {
        train_cfg.validate()?;
        let init_seed = crate::rng::derive_seed(train_cfg.seed, stream::INIT, 0);
        let (model, params) = Cvae::init(model_cfg, init_seed)?;
        let state = TrainState {
            step: 0,
            adam: AdamW::new(params.tensors()),
            rng: rng_for(train_cfg.seed, stream::TRAIN, 0),
        };
        Ok(Self::assemble(model, params, train_cfg.clone(), stats, state))
    }

    pub(crate) fn assemble(
        model: Cvae,
        params: ParamStore,
        train_cfg: TrainConfig,
        stats: NormStats,
        state: TrainState,
    ) -> Self {
        let n = params.len();
        let mut lr_scale = vec![1.0; n];
        let mut decay = vec![true; n];
        lr_scale[model.kendall] = train_cfg.kendall_lr_scale;
        decay[model.kendall] = false;
        Self {
            model,
            params,
            train_cfg,
            stats,
            state,
            lr_scale,
            decay,
        }
    }

    pub fn sigma(&self) -> [f64; N_TASKS] {
        let s = self.params.get(self.model.kendall).data();
        std::array::from_fn(|k| s[k].exp())
    }

    /// One step on a batch sampled from the training split of `data`.
    pub fn step(&mut self, data: &TrainData) -> Result<StepLog, ModelError> {
        let n = data.records.len();
        let b = self.train_cfg.batch.min(n);
        let idx = sample(&mut self.state.rng, n, b).into_vec();
        let batch: Vec<&DatasetRecord> = idx.iter().map(|&i| data.records[i]).collect();
        self.step_on(&data.heightmap, &batch)
    }

    /// One step on an explicit batch.
    pub fn step_on(&mut self, heightmap: &Tensor, batch: &[&DatasetRecord]) -> Result<StepLog, ModelError> {
        let step = self.state.step;
        let tc = &self.train_cfg;
        let mc = &self.model.cfg;
        let lr = learning_rate(tc, step);
        let beta = kl_beta(tc, step);
        let drop_seed = self.state.rng.next_u64();
        let eps = Tensor::from_fn(&[batch.len(), mc.d_z], |_| StandardNormal.sample(&mut self.state.rng));
        let inputs: Vec<LinkInput> = batch.iter().map(|&r| r.into()).collect();
        let cond = cond_batch(mc, &inputs)?;
        let x = target_batch(mc, batch)?;

        let g = Graph::lenient();
        let vars = self.params.bind(&g);
        let cx = Ctx::train(&g, vars.clone(), mc.dropout, drop_seed);
        let out = forward_loss(&self.model, &cx, heightmap, &cond, &x, eps, beta, tc.free_bits)?;
        let total = out.total.item().unwrap_or(f64::NAN);
        if !total.is_finite() {
            let detail = match g.first_non_finite() {
                Some((node, op)) => format!("first non-finite value at node {node} ({op})"),
                None => "loss is non-finite".to_string(),
            };
            return Err(ModelError::Diverged { step, detail });
        }
        let mut grads_all = g.backward(out.total)?;
        let mut grads: Vec<Tensor> = vars
            .iter()
            .zip(self.params.tensors())
            .map(|(v, p)| grads_all.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        let grad_norm = clip_global_norm(&mut grads, tc.grad_clip);
        if !grad_norm.is_finite() {
            return Err(ModelError::Diverged {
                step,
                detail: "non-finite gradient norm".into(),
            });
        }
        self.state.adam.step(
            tc,
            lr,
            self.params.tensors_mut(),
            &grads,
            &self.lr_scale,
            &self.decay,
        );
        self.state.step += 1;
        Ok(StepLog {
            step,
            total,
            losses: out.losses,
            kl: out.kl,
            kl_term: out.kl_term,
            beta,
            lr,
            sigma: self.sigma(),
            grad_norm,
        })
    }

    /// Runs until `train_cfg.steps`, calling `on_step` after every step.
    pub fn run(
        &mut self,
        data: &TrainData,
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<Vec<StepLog>, ModelError> {
        let mut logs = Vec::with_capacity(self.train_cfg.steps.saturating_sub(self.state.step));
        while self.state.step < self.train_cfg.steps {
            let log = self.step(data)?;
            on_step(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Training split of a dataset plus its shared heightmap patches.
pub struct TrainData<'a> {
    pub heightmap: Tensor,
    pub records: Vec<&'a DatasetRecord>,
}

impl<'a> TrainData<'a> {
    /// Only training-split records are ever visible to the trainer.
    pub fn new(cfg: &ModelConfig, ds: &'a Dataset) -> Result<Self, ModelError> {
        let records: Vec<&DatasetRecord> = ds.split(Split::Train).collect();
        if records.is_empty() {
            return Err(ModelError::Data("training split is empty".into()));
        }
        Ok(Self {
            heightmap: heightmap_patches(cfg, &ds.header.heightmap)?,
            records,
        })
    }
}

/// Forward pass outputs used by the step and by diagnostics.
pub struct LossOutput<'g> {
    pub total: Var<'g>,
    pub losses: [f64; N_TASKS],
    pub kl: f64,
    pub kl_term: f64,
}

/// Full training objective through the posterior path.
#[allow(clippy::too_many_arguments)]
pub fn forward_loss<'g>(
    model: &Cvae,
    cx: &Ctx<'g>,
    heightmap: &Tensor,
    cond: &super::batch::CondBatch,
    x: &super::batch::TargetBatch,
    eps: Tensor,
    beta: f64,
    lambda: f64,
) -> Result<LossOutput<'g>, ModelError> {
    let c = model.encode(cx, heightmap, cond)?;
    let (mu_p, lv_p) = model.prior(cx, c.c)?;
    let (mu_q, lv_q) = model.posterior(cx, x, &c)?;
    let z = reparameterize(mu_q, lv_q, eps)?;
    let pred = model.decode(cx, z, &c)?;
    let losses = task_losses(&pred, x)?;
    let kl = kl_per_dim(mu_q, lv_q, mu_p, lv_p)?;
    let kl_term = free_bits(kl, lambda);
    let total = kendall_total(cx.g, &losses, cx.p[model.kendall], beta, kl_term)?;
    Ok(LossOutput {
        total,
        losses: losses.map(|l| l.item().unwrap_or(f64::NAN)),
        kl: kl.value().sum(),
        kl_term: kl_term.item().unwrap_or(f64::NAN),
    })
}
