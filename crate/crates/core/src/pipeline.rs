//! Experiment plumbing shared by the command-line tool, examples and tests.

use serde::{Deserialize, Serialize};

use crate::channel::LinkChannel;
use crate::dataset::{preprocess_pov, Dataset, DatasetRecord, Split};
use crate::metrics::{
    evaluate, summarize, LinkMetrics, MetricsError, MetricsSummary, PowerCell, PresenceCounts,
    TransferMatrix,
};
use crate::model::{GenerateOptions, Generated, Generator, LinkInput, ModelError, Trainer};
use crate::metrics::EvalOptions;
use crate::scene::{render_pov, UrbanScene};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("{0}")]
    Invalid(String),
}

/// Generated realizations and their metrics for one split.
pub struct Evaluation {
    pub summary: MetricsSummary,
    pub per_link: Vec<LinkMetrics>,
    pub generated: Vec<Generated>,
}

/// Generates one realization per link of `split` and scores it against ground truth.
pub fn evaluate_split(
    trainer: &Trainer,
    ds: &Dataset,
    split: Split,
    seed: u64,
    gen: &GenerateOptions,
    eval: &EvalOptions,
) -> Result<Evaluation, PipelineError> {
    let records: Vec<&DatasetRecord> = ds.split(split).collect();
    if records.is_empty() {
        return Err(MetricsError::Empty.into());
    }
    let generator = Generator::new(&trainer.model, &trainer.params, &trainer.stats, &ds.header.heightmap)?;
    let inputs: Vec<LinkInput> = records.iter().map(|&r| r.into()).collect();
    let generated = generator.generate(&inputs, seed, 0, gen)?;
    let ids: Vec<u64> = records.iter().map(|r| r.link_id).collect();
    let truth: Vec<&LinkChannel> = records.iter().map(|r| &r.link).collect();
    let pred: Vec<Option<&LinkChannel>> = generated.iter().map(|g| g.channel.as_ref()).collect();
    let (summary, per_link) = evaluate(&ids, &truth, &pred, eval)?;
    Ok(Evaluation {
        summary,
        per_link,
        generated,
    })
}

/// Every model evaluated on the test split of every dataset.
pub fn transfer_matrix(
    models: &[(String, &Trainer)],
    datasets: &[(String, &Dataset)],
    seed: u64,
    gen: &GenerateOptions,
    eval: &EvalOptions,
) -> Result<TransferMatrix, PipelineError> {
    let cells = models
        .iter()
        .map(|(_, tr)| {
            datasets
                .iter()
                .map(|(_, ds)| Ok(evaluate_split(tr, ds, Split::Test, seed, gen, eval)?.summary))
                .collect::<Result<Vec<_>, PipelineError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TransferMatrix {
        train_scenes: models.iter().map(|(n, _)| n.clone()).collect(),
        test_scenes: datasets.iter().map(|(n, _)| n.clone()).collect(),
        cells,
    })
}

/// Scores of the trivial predictors on a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Train-mean received power (dB) and its MAE on the split.
    pub mean_rx_power_db: f64,
    pub rx_power_mae_db: f64,
    /// Train-mean ToF (s) and its MAE (ns) on the split.
    pub mean_tof_s: f64,
    pub tof_mae_ns: f64,
    /// Best constant "first k slots active" mask, chosen on the split itself.
    pub best_k: usize,
    pub best_k_f1: f64,
}

pub fn baselines(ds: &Dataset, split: Split) -> Result<Baselines, PipelineError> {
    let train: Vec<&DatasetRecord> = ds.split(Split::Train).collect();
    let eval: Vec<&DatasetRecord> = ds.split(split).collect();
    if train.is_empty() || eval.is_empty() {
        return Err(MetricsError::Empty.into());
    }
    let mean = |f: &dyn Fn(&DatasetRecord) -> f64, rs: &[&DatasetRecord]| {
        rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64
    };
    let mean_prx = mean(&|r| r.link.rx_power_db(), &train);
    let mean_tof = mean(&|r| r.link.tof_s(), &train);
    let prx_mae = mean(&|r| (r.link.rx_power_db() - mean_prx).abs(), &eval);
    let tof_mae = mean(&|r| (r.link.tof_s() - mean_tof).abs() * 1e9, &eval);
    let capacity = ds.header.max_paths;
    let (best_k, best_k_f1) = (1..=capacity)
        .map(|k| {
            let mask: Vec<bool> = (0..capacity).map(|s| s < k).collect();
            let counts = eval
                .iter()
                .map(|r| PresenceCounts::from_masks(&r.link.presence_mask(), &mask))
                .fold(PresenceCounts::default(), PresenceCounts::merge);
            (k, counts.f1())
        })
        .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
    Ok(Baselines {
        mean_rx_power_db: mean_prx,
        rx_power_mae_db: prx_mae,
        mean_tof_s: mean_tof,
        tof_mae_ns: tof_mae,
        best_k,
        best_k_f1,
    })
}

/// Predicted received power over RX points for one transmitter, one fixed-seed sample per cell.
pub fn spatial_power_map(
    trainer: &Trainer,
    scene: &UrbanScene,
    heightmap: &[f32],
    tx: [f64; 3],
    rx_points: &[[f64; 3]],
    seed: u64,
    gen: &GenerateOptions,
) -> Result<Vec<PowerCell>, PipelineError> {
    let res = trainer.model.cfg.pov_resolution;
    let generator = Generator::new(&trainer.model, &trainer.params, &trainer.stats, heightmap)?;
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    let mut cells = Vec::with_capacity(rx_points.len());
    for (chunk_idx, chunk) in rx_points.chunks(gen.batch.max(1)).enumerate() {
        let povs: Vec<(Vec<f32>, Vec<f32>)> = chunk
            .iter()
            .map(|&rx| {
                Ok((
                    to_f32(preprocess_pov(&render_pov(scene, tx, rx, res))?.data),
                    to_f32(preprocess_pov(&render_pov(scene, rx, tx, res))?.data),
                ))
            })
            .collect::<Result<_, crate::dataset::DatasetError>>()?;
        let inputs: Vec<LinkInput> = chunk
            .iter()
            .zip(&povs)
            .enumerate()
            .map(|(i, (&rx, (tp, rp)))| LinkInput {
                link_id: (chunk_idx * gen.batch.max(1) + i) as u64,
                tx_pos: tx,
                rx_pos: rx,
                tx_pov: tp,
                rx_pov: rp,
            })
            .collect();
        let noise: Vec<Vec<f64>> = inputs.iter().map(|l| generator.noise(seed, 0, l.link_id)).collect();
        let raw = generator.predict(&inputs, &noise)?;
        for (input, r) in inputs.iter().zip(&raw) {
            let g = generator.realize(input, r, gen);
            cells.push(PowerCell {
                x: input.rx_pos[0],
                y: input.rx_pos[1],
                rx_power_db: g.channel.as_ref().map_or(f64::NAN, |c| c.rx_power_db()),
            });
        }
    }
    Ok(cells)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Mean ± std of each metric across several summaries (e.g. kept seeds).
pub fn aggregate(summaries: &[MetricsSummary]) -> Vec<(f64, f64)> {
    (0..8)
        .map(|i| mean_std(&summaries.iter().map(|s| s.values[i]).collect::<Vec<_>>()))
        .collect()
}

/// Re-scores a set of per-link metrics; used when merging partial evaluations.
pub fn rescore(per_link: &[LinkMetrics]) -> Result<MetricsSummary, PipelineError> {
    Ok(summarize(per_link)?)
}

/// Everything needed to regenerate the artifacts of one command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub scene: Option<crate::scene::SceneConfig>,
    pub dataset: Option<crate::dataset::DatasetConfig>,
    pub model: Option<crate::model::ModelConfig>,
    pub train: Option<crate::model::TrainConfig>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub output_dir: String,
    pub options: serde_json::Map<String, serde_json::Value>,
}

impl RunConfig {
    pub const FILE_NAME: &'static str = "run_config.json";

    pub fn write(&self, dir: &std::path::Path) -> std::io::Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::FILE_NAME);
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(&path, json)?;
        Ok(path)
    }

    pub fn read(dir: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(Self::FILE_NAME))?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
