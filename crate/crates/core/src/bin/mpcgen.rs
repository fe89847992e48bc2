//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mpcgen::dataset::{
    build_dataset, read_dataset, sidecar_path, write_dataset, write_stats_sidecar, Dataset, DatasetConfig,
    DatasetError, DatasetRecord, Split,
};
use mpcgen::metrics::{
    cdf_grid, empirical_cdf, write_cdf_csv, write_per_link_csv, write_power_map_csv, write_summary_csv,
    write_transfer_csv, EvalOptions, MetricsError, MetricsSummary, METRIC_NAMES,
};
use mpcgen::model::{
    load_checkpoint, passes_divergence_filter, save_checkpoint, GenerateOptions, Generator, LinkInput, ModelConfig,
    ModelError, StepLog, TrainConfig, TrainData, Trainer, TASK_NAMES,
};
use mpcgen::pipeline::{aggregate, evaluate_split, mean_std, spatial_power_map, transfer_matrix, PipelineError, RunConfig};
use mpcgen::scene::{generate_scene, rx_grid, tx_sites, SceneConfig, SceneError, UrbanScene};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

/// Scene generation, dataset building, training and evaluation of channel generators.
#[derive(Parser)]
#[command(name = "mpcgen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city and write it as JSON.
    GenScene(GenSceneArgs),
    /// Trace, filter, split and render a scene into a binary dataset.
    GenDataset(GenDatasetArgs),
    /// Print the statistics sidecar of a dataset.
    Stats(StatsArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Evaluate checkpoints on a dataset split.
    Eval(EvalArgs),
    /// Sample channels for the links of a split.
    Generate(GenerateArgs),
    /// Evaluate every checkpoint on the test split of every dataset.
    Transfer(TransferArgs),
    /// Predicted received power over an RX grid for one transmitter.
    Powermap(PowermapArgs),
    /// Per-link inference latency.
    Timeit(TimeitArgs),
}

#[derive(Args)]
struct GenSceneArgs {
    /// Scene config JSON; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDatasetArgs {
    /// Scene config JSON; defaults are used when omitted.
    #[arg(long)]
    scene_config: Option<PathBuf>,
    /// Dataset config JSON; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    /// POV and heightmap resolution in pixels.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Output dataset file; the stats sidecar and run config are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Model config JSON; the desk-scale model is used when omitted.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Training config JSON; desk-scale settings are used when omitted.
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Seeds as a list or range, e.g. `1,2,5` or `1..4` (inclusive).
    #[arg(long, default_value = "1")]
    seed: String,
    /// Overrides the number of steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Resume from this checkpoint instead of starting fresh (single seed only).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory; each seed gets `seed-<n>/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Clone)]
struct GenFlags {
    /// Generation seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Keep generated path gains as decoded instead of matching the predicted received power.
    #[arg(long)]
    no_power_rescale: bool,
    /// Score azimuth errors as plain absolute differences instead of circular distance.
    #[arg(long)]
    linear_az_diff: bool,
    /// Use checkpoints that fail the divergence filter.
    #[arg(long)]
    allow_diverged: bool,
}

impl GenFlags {
    fn generate(&self) -> GenerateOptions {
        GenerateOptions {
            power_rescale: !self.no_power_rescale,
            ..Default::default()
        }
    }

    fn eval(&self) -> EvalOptions {
        EvalOptions {
            linear_az_diff: self.linear_az_diff,
        }
    }

    fn options(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        m.insert("seed".into(), self.seed.into());
        m.insert("power_rescale".into(), (!self.no_power_rescale).into());
        m.insert("linear_az_diff".into(), self.linear_az_diff.into());
        m.insert("allow_diverged".into(), self.allow_diverged.into());
        m
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// One or more checkpoints, typically one per training seed.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[command(flatten)]
    flags: GenFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Independent prior samples per link.
    #[arg(long, default_value_t = 1)]
    samples: u64,
    /// Only the first N links of the split.
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    flags: GenFlags,
    /// Output directory; realizations are written as JSON lines.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    /// Checkpoints, one per training scene, in the same order as `--dataset`.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    dataset: Vec<PathBuf>,
    #[command(flatten)]
    flags: GenFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PowermapArgs {
    /// Scene config JSON the dataset was built from.
    #[arg(long)]
    scene_config: Option<PathBuf>,
    /// Overrides the scene seed.
    #[arg(long)]
    scene_seed: Option<u64>,
    /// Dataset providing the heightmap.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Index into the rooftop transmitter list.
    #[arg(long, default_value_t = 0)]
    tx: usize,
    /// RX grid pitch (m).
    #[arg(long, default_value_t = 8.0)]
    pitch: f64,
    #[command(flatten)]
    flags: GenFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TimeitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Links timed per repeat.
    #[arg(long, default_value_t = 64)]
    links: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[command(flatten)]
    flags: GenFlags,
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Result<T> = std::result::Result<T, Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_CONFIG, error: e.into() }
}

fn data_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_DATA, error: e.into() }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        data_err(e)
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Config(_) => config_err(e),
            _ => data_err(e),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => config_err(e),
            ModelError::Diverged { .. } => Failure { code: EXIT_DIVERGED, error: e.into() },
            _ => data_err(e),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        data_err(e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Model(m) => m.into(),
            PipelineError::Dataset(d) => d.into(),
            other => data_err(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        data_err(e)
    }
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| config_err(anyhow::anyhow!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(anyhow::anyhow!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(data_err)?;
    std::fs::write(path, json)?;
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || config_err(anyhow::anyhow!("bad seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn load_scene_config(path: Option<&Path>, seed: Option<u64>) -> Result<SceneConfig> {
    let mut cfg: SceneConfig = read_json(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_trainer(path: &Path) -> Result<Trainer> {
    load_checkpoint(path).map_err(|e| match e {
        ModelError::Io(_) | ModelError::Checkpoint(_) => data_err(anyhow::anyhow!("{}: {e}", path.display())),
        other => other.into(),
    })
}

/// Rejects a checkpoint that fails the divergence filter unless overridden.
fn check_filter(tr: &Trainer, path: &Path, allow: bool) -> Result<bool> {
    let sigma = tr.sigma()[0];
    let ok = passes_divergence_filter(sigma);
    if !ok && !allow {
        return Err(Failure {
            code: EXIT_DIVERGED,
            error: anyhow::anyhow!(
                "{}: sigma_presence {sigma:.3e} fails the divergence filter; pass --allow-diverged to use it",
                path.display()
            ),
        });
    }
    Ok(ok)
}

fn gen_scene(a: GenSceneArgs) -> Result<()> {
    let cfg = load_scene_config(a.config.as_deref(), a.seed)?;
    let scene = generate_scene(&cfg)?;
    write_json(&a.out, &scene)?;
    let dir = a.out.parent().unwrap_or(Path::new("."));
    RunConfig {
        command: "gen-scene".into(),
        scene: Some(cfg),
        seeds: vec![scene.seed],
        output_dir: display(dir),
        ..Default::default()
    }
    .write(dir)?;
    println!("{} buildings -> {}", scene.buildings.len(), a.out.display());
    Ok(())
}

fn gen_dataset(a: GenDatasetArgs) -> Result<()> {
    let scene_cfg = load_scene_config(a.scene_config.as_deref(), a.seed)?;
    let mut cfg: DatasetConfig = read_json(a.config.as_deref())?;
    if let Some(r) = a.resolution {
        cfg.pov_resolution = r;
        cfg.heightmap_resolution = r;
    }
    if let Some(s) = a.split_seed {
        cfg.split_seed = s;
    }
    let scene = generate_scene(&scene_cfg)?;
    let (ds, _, report) = build_dataset(&scene, scene_cfg.digest(), &cfg).map_err(|e| match e {
        DatasetError::Invalid(_) => config_err(e),
        other => data_err(other),
    })?;
    write_dataset(&ds, &a.out)?;
    write_stats_sidecar(&ds, &a.out)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_json(&dir.join("build_report.json"), &report)?;
    RunConfig {
        command: "gen-dataset".into(),
        scene: Some(scene_cfg.clone()),
        dataset: Some(cfg),
        seeds: vec![scene_cfg.seed],
        output_dir: display(dir),
        ..Default::default()
    }
    .write(dir)?;
    println!(
        "{} links kept of {} traced (train/val/test {}/{}/{}) -> {}",
        ds.records.len(),
        report.candidate_links,
        report.per_split[0],
        report.per_split[1],
        report.per_split[2],
        a.out.display()
    );
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let side = sidecar_path(&a.dataset);
    if side.exists() {
        print!("{}", std::fs::read_to_string(side)?);
        println!();
        return Ok(());
    }
    let ds = read_dataset(&a.dataset)?;
    println!("{}", serde_json::to_string_pretty(&ds.header.stats).map_err(data_err)?);
    Ok(())
}

fn write_step_csv(path: &Path, logs: &[StepLog], append: bool) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let csv_err = |e: csv::Error| data_err(e);
    if !append {
        let mut header = vec!["step".to_string(), "total".into()];
        header.extend(TASK_NAMES.iter().map(|n| format!("loss_{n}")));
        header.extend(["kl", "kl_term", "beta", "lr", "grad_norm"].map(String::from));
        header.extend(TASK_NAMES.iter().map(|n| format!("sigma_{n}")));
        w.write_record(&header).map_err(csv_err)?;
    }
    for l in logs {
        let mut rec = vec![l.step.to_string(), l.total.to_string()];
        rec.extend(l.losses.iter().map(f64::to_string));
        rec.extend([l.kl, l.kl_term, l.beta, l.lr, l.grad_norm].map(|v| v.to_string()));
        rec.extend(l.sigma.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainVerdict {
    seed: u64,
    steps: usize,
    sigma: [f64; 7],
    passes_divergence_filter: bool,
    seconds: f64,
}

fn train(a: TrainArgs) -> Result<()> {
    let mcfg: ModelConfig = read_json(a.model_config.as_deref())?;
    let mut tcfg: TrainConfig = read_json(a.train_config.as_deref())?;
    if let Some(s) = a.steps {
        tcfg.steps = s;
    }
    mcfg.validate()?;
    tcfg.validate()?;
    let seeds = parse_seeds(&a.seed)?;
    if a.resume.is_some() && seeds.len() != 1 {
        return Err(config_err(anyhow::anyhow!("--resume takes exactly one seed")));
    }
    let ds = read_dataset(&a.dataset)?;
    if ds.header.max_paths != mcfg.max_paths || ds.header.pov_resolution != mcfg.pov_resolution {
        return Err(config_err(anyhow::anyhow!(
            "model expects {} paths at {} px, dataset has {} at {} px",
            mcfg.max_paths,
            mcfg.pov_resolution,
            ds.header.max_paths,
            ds.header.pov_resolution
        )));
    }
    let data = TrainData::new(&mcfg, &ds)?;
    RunConfig {
        command: "train".into(),
        model: Some(mcfg.clone()),
        train: Some(tcfg.clone()),
        seeds: seeds.clone(),
        inputs: vec![display(&a.dataset)],
        output_dir: display(&a.out),
        ..Default::default()
    }
    .write(&a.out)?;

    let mut verdicts = Vec::new();
    for &seed in &seeds {
        let dir = a.out.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&dir)?;
        let mut cfg = tcfg.clone();
        cfg.seed = seed;
        let (mut tr, resumed) = match &a.resume {
            Some(p) => {
                let mut tr = load_trainer(p)?;
                tr.train_cfg.steps = cfg.steps;
                (tr, true)
            }
            None => (Trainer::new(&mcfg, &cfg, ds.header.stats.clone())?, false),
        };
        let t0 = Instant::now();
        let logs = tr.run(&data, |l| {
            if l.step % 100 == 0 {
                eprintln!(
                    "seed {seed} step {:>6} total {:>9.4} presence {:.3e} sigma_presence {:.3e}",
                    l.step, l.total, l.losses[0], l.sigma[0]
                );
            }
        })?;
        write_step_csv(&dir.join("losses.csv"), &logs, resumed)?;
        save_checkpoint(&tr, &dir.join("checkpoint.mpck"))?;
        let sigma = tr.sigma();
        let v = TrainVerdict {
            seed,
            steps: tr.state.step,
            sigma,
            passes_divergence_filter: passes_divergence_filter(sigma[0]),
            seconds: t0.elapsed().as_secs_f64(),
        };
        write_json(&dir.join("verdict.json"), &v)?;
        println!(
            "seed {seed}: {} steps in {:.0}s, sigma_presence {:.3e} ({})",
            v.steps,
            v.seconds,
            sigma[0],
            if v.passes_divergence_filter { "kept" } else { "filtered" }
        );
        verdicts.push(v);
    }
    write_json(&a.out.join("verdicts.json"), &verdicts)?;
    Ok(())
}

fn write_aggregate_csv(path: &Path, kept: &[MetricsSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(data_err)?;
    w.write_record(["metric", "mean", "std", "n"]).map_err(data_err)?;
    for (name, (m, s)) in METRIC_NAMES.iter().zip(aggregate(kept)) {
        w.write_record([name.to_string(), m.to_string(), s.to_string(), kept.len().to_string()])
            .map_err(data_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EvalVerdict {
    checkpoint: String,
    sigma_presence: f64,
    passes_divergence_filter: bool,
    used: bool,
}

fn eval(a: EvalArgs) -> Result<()> {
    let ds = read_dataset(&a.dataset)?;
    let split: Split = a.split.into();
    std::fs::create_dir_all(&a.out)?;
    let mut verdicts = Vec::new();
    let mut columns = Vec::new();
    let mut kept = Vec::new();
    for (i, path) in a.checkpoint.iter().enumerate() {
        let tr = load_trainer(path)?;
        let sigma = tr.sigma()[0];
        let passes = passes_divergence_filter(sigma);
        let used = passes || a.flags.allow_diverged;
        verdicts.push(EvalVerdict {
            checkpoint: display(path),
            sigma_presence: sigma,
            passes_divergence_filter: passes,
            used,
        });
        if !used {
            eprintln!("skipping {}: sigma_presence {sigma:.3e} fails the divergence filter", path.display());
            continue;
        }
        let ev = evaluate_split(&tr, &ds, split, a.flags.seed, &a.flags.generate(), &a.flags.eval())?;
        let name = format!("ckpt{i}");
        write_per_link_csv(&a.out.join(format!("per_link_{name}.csv")), &ev.per_link)?;
        let mut series = Vec::new();
        for (label, values) in [
            ("tof_err_ns", ev.per_link.iter().filter_map(|m| m.errors.as_ref().map(|e| e.tof_ns)).collect::<Vec<_>>()),
            (
                "rx_power_err_db",
                ev.per_link.iter().filter_map(|m| m.errors.as_ref().map(|e| e.rx_power_db)).collect(),
            ),
        ] {
            if !values.is_empty() {
                series.push((label.to_string(), empirical_cdf(&values, &cdf_grid(&values, 101))?));
            }
        }
        write_cdf_csv(&a.out.join(format!("cdf_{name}.csv")), &series)?;
        println!("{}: {}", path.display(), format_summary(&ev.summary));
        columns.push((name, ev.summary.clone()));
        kept.push(ev.summary);
    }
    write_json(&a.out.join("filter.json"), &verdicts)?;
    RunConfig {
        command: "eval".into(),
        seeds: vec![a.flags.seed],
        inputs: std::iter::once(display(&a.dataset)).chain(a.checkpoint.iter().map(|p| display(p))).collect(),
        output_dir: display(&a.out),
        options: {
            let mut m = a.flags.options();
            m.insert("split".into(), split.as_str().into());
            m
        },
        ..Default::default()
    }
    .write(&a.out)?;
    if kept.is_empty() {
        return Err(Failure {
            code: EXIT_DIVERGED,
            error: anyhow::anyhow!("every checkpoint fails the divergence filter; pass --allow-diverged to evaluate anyway"),
        });
    }
    write_summary_csv(&a.out.join("summary.csv"), &columns)?;
    write_aggregate_csv(&a.out.join("aggregate.csv"), &kept)?;
    for (name, (m, s)) in METRIC_NAMES.iter().zip(aggregate(&kept)) {
        println!("{name:>20}: {m:.4} ± {s:.4}");
    }
    Ok(())
}

fn format_summary(s: &MetricsSummary) -> String {
    METRIC_NAMES
        .iter()
        .zip(s.values)
        .map(|(n, v)| format!("{n}={v:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Serialize)]
struct GeneratedRow<'a> {
    link_id: u64,
    sample: u64,
    empty: bool,
    tof_s: f64,
    rx_power_db: f64,
    channel: Option<&'a mpcgen::channel::LinkChannel>,
}

fn generate(a: GenerateArgs) -> Result<()> {
    let ds = read_dataset(&a.dataset)?;
    let tr = load_trainer(&a.checkpoint)?;
    check_filter(&tr, &a.checkpoint, a.flags.allow_diverged)?;
    let split: Split = a.split.into();
    let records: Vec<&DatasetRecord> = ds.split(split).take(a.limit.unwrap_or(usize::MAX)).collect();
    let inputs: Vec<LinkInput> = records.iter().map(|&r| r.into()).collect();
    let generator = Generator::new(&tr.model, &tr.params, &tr.stats, &ds.header.heightmap)?;
    std::fs::create_dir_all(&a.out)?;
    let mut lines = String::new();
    let mut empty = 0;
    for sample in 0..a.samples {
        for g in generator.generate(&inputs, a.flags.seed, sample, &a.flags.generate())? {
            empty += g.is_empty() as usize;
            let row = GeneratedRow {
                link_id: g.link_id,
                sample,
                empty: g.is_empty(),
                tof_s: g.tof_s,
                rx_power_db: g.rx_power_db,
                channel: g.channel.as_ref(),
            };
            lines.push_str(&serde_json::to_string(&row).map_err(data_err)?);
            lines.push('\n');
        }
    }
    std::fs::write(a.out.join("generated.jsonl"), lines)?;
    RunConfig {
        command: "generate".into(),
        seeds: vec![a.flags.seed],
        inputs: vec![display(&a.dataset), display(&a.checkpoint)],
        output_dir: display(&a.out),
        options: {
            let mut m = a.flags.options();
            m.insert("split".into(), split.as_str().into());
            m.insert("samples".into(), a.samples.into());
            m.insert("limit".into(), serde_json::json!(a.limit));
            m
        },
        ..Default::default()
    }
    .write(&a.out)?;
    println!(
        "{} realizations ({} empty) -> {}",
        inputs.len() as u64 * a.samples,
        empty,
        a.out.join("generated.jsonl").display()
    );
    Ok(())
}

fn scene_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| display(path))
}

fn transfer(a: TransferArgs) -> Result<()> {
    let trainers: Vec<Trainer> = a.checkpoint.iter().map(|p| load_trainer(p)).collect::<Result<_>>()?;
    for (tr, p) in trainers.iter().zip(&a.checkpoint) {
        check_filter(tr, p, a.flags.allow_diverged)?;
    }
    let datasets: Vec<Dataset> = a.dataset.iter().map(|p| read_dataset(p)).collect::<std::result::Result<_, _>>()?;
    let models: Vec<(String, &Trainer)> = a.checkpoint.iter().zip(&trainers).map(|(p, t)| (display(p), t)).collect();
    let dsets: Vec<(String, &Dataset)> = a.dataset.iter().zip(&datasets).map(|(p, d)| (scene_name(p), d)).collect();
    let m = transfer_matrix(&models, &dsets, a.flags.seed, &a.flags.generate(), &a.flags.eval())?;
    std::fs::create_dir_all(&a.out)?;
    write_transfer_csv(&a.out.join("transfer.csv"), &m)?;
    write_json(&a.out.join("transfer.json"), &m)?;
    RunConfig {
        command: "transfer".into(),
        seeds: vec![a.flags.seed],
        inputs: a.checkpoint.iter().chain(&a.dataset).map(|p| display(p)).collect(),
        output_dir: display(&a.out),
        options: a.flags.options(),
        ..Default::default()
    }
    .write(&a.out)?;
    let prx = m.metric("rx_power_mae_db").unwrap_or_default();
    for (name, row) in m.train_scenes.iter().zip(prx) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:8.3}")).collect();
        println!("{name}: {}", cells.join(" "));
    }
    Ok(())
}

fn powermap(a: PowermapArgs) -> Result<()> {
    let cfg = load_scene_config(a.scene_config.as_deref(), a.scene_seed)?;
    let scene: UrbanScene = generate_scene(&cfg)?;
    let ds = read_dataset(&a.dataset)?;
    if ds.header.scene_seed != scene.seed {
        return Err(config_err(anyhow::anyhow!(
            "dataset was built from scene seed {}, config gives {}",
            ds.header.scene_seed,
            scene.seed
        )));
    }
    let tr = load_trainer(&a.checkpoint)?;
    check_filter(&tr, &a.checkpoint, a.flags.allow_diverged)?;
    let sites = tx_sites(&scene, mpcgen::scene::DEFAULT_MAST_M);
    let tx = *sites
        .get(a.tx)
        .ok_or_else(|| config_err(anyhow::anyhow!("tx index {} out of range ({} sites)", a.tx, sites.len())))?;
    if !(a.pitch > 0.0) {
        return Err(config_err(anyhow::anyhow!("pitch must be positive")));
    }
    let rxs = rx_grid(&scene, a.pitch, 2.0);
    let cells = spatial_power_map(&tr, &scene, &ds.header.heightmap, tx, &rxs, a.flags.seed, &a.flags.generate())?;
    std::fs::create_dir_all(&a.out)?;
    write_power_map_csv(&a.out.join("powermap.csv"), &cells)?;
    RunConfig {
        command: "powermap".into(),
        scene: Some(cfg),
        seeds: vec![a.flags.seed],
        inputs: vec![display(&a.dataset), display(&a.checkpoint)],
        output_dir: display(&a.out),
        options: {
            let mut m = a.flags.options();
            m.insert("tx".into(), a.tx.into());
            m.insert("pitch".into(), a.pitch.into());
            m
        },
        ..Default::default()
    }
    .write(&a.out)?;
    println!("{} cells -> {}", cells.len(), a.out.join("powermap.csv").display());
    Ok(())
}

fn timeit(a: TimeitArgs) -> Result<()> {
    if a.links == 0 || a.repeats == 0 {
        return Err(config_err(anyhow::anyhow!("links and repeats must be positive")));
    }
    let tr = load_trainer(&a.checkpoint)?;
    check_filter(&tr, &a.checkpoint, a.flags.allow_diverged)?;
    let opts = a.flags.generate();
    let mut end_to_end = Vec::new();
    let mut forward = Vec::new();
    for _ in 0..a.repeats {
        let t = Instant::now();
        let ds = read_dataset(&a.dataset)?;
        let inputs: Vec<LinkInput> = ds.split(Split::Test).take(a.links).map(LinkInput::from).collect();
        let generator = Generator::new(&tr.model, &tr.params, &tr.stats, &ds.header.heightmap)?;
        let out = generator.generate(&inputs, a.flags.seed, 0, &opts)?;
        std::hint::black_box(&out);
        end_to_end.push(t.elapsed().as_secs_f64() * 1e3 / inputs.len() as f64);

        let noise: Vec<Vec<f64>> = inputs.iter().map(|l| generator.noise(a.flags.seed, 0, l.link_id)).collect();
        let t = Instant::now();
        for (chunk, nz) in inputs.chunks(opts.batch.max(1)).zip(noise.chunks(opts.batch.max(1))) {
            std::hint::black_box(generator.predict(chunk, nz)?);
        }
        forward.push(t.elapsed().as_secs_f64() * 1e3 / inputs.len() as f64);
    }
    let (em, es) = mean_std(&end_to_end);
    let (fm, fs) = mean_std(&forward);
    println!("end-to-end: {em:.3} ± {es:.3} ms/link");
    println!("model only: {fm:.3} ± {fs:.3} ms/link");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScene(a) => gen_scene(a),
        Command::GenDataset(a) => gen_dataset(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Generate(a) => generate(a),
        Command::Transfer(a) => transfer(a),
        Command::Powermap(a) => powermap(a),
        Command::Timeit(a) => timeit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
