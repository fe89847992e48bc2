use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::format::{Dataset, DatasetHeader, DatasetRecord};
use super::preprocess::{preprocess_heightmap, preprocess_pov};
use super::split::{assign_splits, Split, SplitPlan, SPLIT_TOLERANCE};
use super::stats::compute_stats;
use super::DatasetError;
use crate::channel::{normalize_link, LinkChannel, DEFAULT_WINDOW_S};
use crate::rng::{derive_seed, stream};
use crate::scene::{
    filter_link, render_heightmap, render_pov, rx_grid, trace_link, tx_sites, TraceConfig,
    UrbanScene, DEFAULT_MAST_M,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub pov_resolution: usize,
    pub heightmap_resolution: usize,
    pub rx_pitch_m: f64,
    /// RX points closer than this to a footprint are skipped (m).
    pub rx_clearance_m: f64,
    /// Side of the square RX regions used for splitting (m).
    pub rx_block_m: f64,
    pub mast_m: f64,
    /// Number of rooftop transmitters; 0 uses every building.
    pub n_tx_sites: usize,
    pub split_seed: u64,
    pub split_tolerance: f64,
    pub window_s: f64,
    pub trace: TraceConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            pov_resolution: 16,
            heightmap_resolution: 16,
            rx_pitch_m: 16.0,
            rx_clearance_m: 2.0,
            rx_block_m: 64.0,
            mast_m: DEFAULT_MAST_M,
            n_tx_sites: 16,
            split_seed: 7,
            split_tolerance: SPLIT_TOLERANCE,
            window_s: DEFAULT_WINDOW_S,
            trace: TraceConfig::default(),
        }
    }
}

/// Counts collected while building a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub candidate_links: usize,
    pub kept_after_filter: usize,
    pub kept_after_split: usize,
    pub per_split: [usize; 3],
    pub split_fractions: [f64; 3],
}

struct Candidate {
    link_id: u64,
    tx_region: usize,
    rx_region: usize,
    link: LinkChannel,
}

fn rx_block(cfg: &DatasetConfig, extent: f64, p: [f64; 3]) -> usize {
    let n = (extent / cfg.rx_block_m).ceil().max(1.0) as usize;
    let bx = ((p[0] / cfg.rx_block_m) as usize).min(n - 1);
    let by = ((p[1] / cfg.rx_block_m) as usize).min(n - 1);
    by * n + bx
}

/// Traces, filters, splits, normalizes and renders every link of a scene.
pub fn build_dataset(
    scene: &UrbanScene,
    config_digest: [u8; 32],
    cfg: &DatasetConfig,
) -> Result<(Dataset, SplitPlan, BuildReport), DatasetError> {
    if cfg.pov_resolution == 0 || cfg.heightmap_resolution == 0 || !(cfg.rx_pitch_m > 0.0) {
        return Err(DatasetError::Invalid("resolutions and RX pitch must be positive".into()));
    }
    let mut sites = tx_sites(scene, cfg.mast_m);
    let mut site_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.split_seed, stream::TX_SITES, 0));
    sites.shuffle(&mut site_rng);
    if cfg.n_tx_sites > 0 {
        sites.truncate(cfg.n_tx_sites);
    }
    let rxs = rx_grid(scene, cfg.rx_pitch_m, cfg.rx_clearance_m);
    let n_blocks = {
        let n = (scene.extent_m / cfg.rx_block_m).ceil().max(1.0) as usize;
        n * n
    };

    let n_rx = rxs.len();
    let candidates: Vec<Option<Candidate>> = (0..sites.len() * n_rx)
        .into_par_iter()
        .map(|id| {
            let (t, r) = (id / n_rx, id % n_rx);
            let traced = trace_link(scene, sites[t], rxs[r], &cfg.trace);
            let paths = traced.mpc_paths();
            if !filter_link(&paths) {
                return None;
            }
            let link = traced.to_channel(cfg.trace.max_paths).ok()?;
            Some(Candidate {
                link_id: id as u64,
                tx_region: t,
                rx_region: rx_block(cfg, scene.extent_m, rxs[r]),
                link,
            })
        })
        .collect();
    let mut report = BuildReport {
        candidate_links: candidates.len(),
        ..Default::default()
    };
    let kept: Vec<Candidate> = candidates.into_iter().flatten().collect();
    report.kept_after_filter = kept.len();

    let pairs: Vec<(usize, usize)> = kept.iter().map(|c| (c.tx_region, c.rx_region)).collect();
    let plan = assign_splits(&pairs, sites.len(), n_blocks, cfg.split_seed)?;
    if plan.max_deviation() > cfg.split_tolerance {
        return Err(DatasetError::Split(format!(
            "best split fractions {:?} miss the 70/15/15 target by more than {}",
            plan.fractions, cfg.split_tolerance
        )));
    }
    let tagged: Vec<(Candidate, Split)> = kept
        .into_iter()
        .filter_map(|c| plan.split_of(c.tx_region, c.rx_region).map(|s| (c, s)))
        .collect();
    report.kept_after_split = tagged.len();
    for (_, s) in &tagged {
        report.per_split[*s as usize] += 1;
    }
    report.split_fractions = plan.fractions;

    let stats = compute_stats(
        tagged.iter().filter(|(_, s)| *s == Split::Train).map(|(c, _)| &c.link),
        cfg.window_s,
    )?;

    let records = tagged
        .par_iter()
        .map(|(c, split)| {
            let normalized = normalize_link(&c.link, &stats)?;
            let (tx, rx) = (c.link.tx_pos, c.link.rx_pos);
            let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
            let tx_pov = preprocess_pov(&render_pov(scene, tx, rx, cfg.pov_resolution))?;
            let rx_pov = preprocess_pov(&render_pov(scene, rx, tx, cfg.pov_resolution))?;
            Ok(DatasetRecord {
                link_id: c.link_id,
                tx_region: c.tx_region as u32,
                rx_region: c.rx_region as u32,
                split: *split,
                link: c.link.clone(),
                normalized,
                tx_pov: to_f32(tx_pov.data),
                rx_pov: to_f32(rx_pov.data),
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;

    let hm = preprocess_heightmap(&render_heightmap(scene, cfg.heightmap_resolution))?;
    let header = DatasetHeader {
        max_paths: cfg.trace.max_paths,
        pov_resolution: cfg.pov_resolution,
        heightmap_resolution: cfg.heightmap_resolution,
        heightmap_m_per_px: hm.m_per_px,
        stats,
        scene_seed: scene.seed,
        config_digest,
        tx_region_splits: plan.tx_groups.clone(),
        rx_region_splits: plan.rx_groups.clone(),
        heightmap: hm.heights.iter().map(|&h| h as f32).collect(),
    };
    Ok((Dataset { header, records }, plan, report))
}
