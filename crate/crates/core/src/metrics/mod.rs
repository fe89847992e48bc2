//! Evaluation metrics for generated channels.

mod report;

pub use report::{
    write_cdf_csv, write_per_link_csv, write_power_map_csv, write_summary_csv,
    write_transfer_csv,
};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelError, LinkChannel, MpcPath};

/// Below this fraction of the total weight the circular resultant is undefined.
pub const CIRCULAR_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("{truth} ground-truth links but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MetricsError {
    fn from(e: std::io::Error) -> Self {
        MetricsError::Io(e.to_string())
    }
}

impl From<csv::Error> for MetricsError {
    fn from(e: csv::Error) -> Self {
        MetricsError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PresenceCounts {
    pub fn from_masks(truth: &[bool], pred: &[bool]) -> Self {
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        c
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }

    /// `2PR / (P + R)`, or 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let tp = self.tp as f64;
        let p = if self.tp + self.fp > 0 { tp / (self.tp + self.fp) as f64 } else { 0.0 };
        let r = if self.tp + self.fn_ > 0 { tp / (self.tp + self.fn_) as f64 } else { 0.0 };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Micro-averaged F1 over all slots of all links.
pub fn presence_f1(truth: &[Vec<bool>], pred: &[Vec<bool>]) -> f64 {
    truth
        .iter()
        .zip(pred)
        .map(|(t, p)| PresenceCounts::from_masks(t, p))
        .fold(PresenceCounts::default(), PresenceCounts::merge)
        .f1()
}

fn total_power(link: &LinkChannel) -> Result<f64, MetricsError> {
    let p: f64 = link.active_paths().map(MpcPath::power).sum();
    if p > 0.0 {
        Ok(p)
    } else if link.n_active() == 0 {
        Err(ChannelError::NoActivePaths.into())
    } else {
        Err(ChannelError::ZeroPower.into())
    }
}

/// Power-weighted mean delay `Σ|α|²τ / Σ|α|²` (s).
pub fn weighted_mean_delay(link: &LinkChannel) -> Result<f64, MetricsError> {
    let total = total_power(link)?;
    Ok(link.active_paths().map(|p| p.power() * p.delay_s).sum::<f64>() / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleKind {
    AodAz,
    AodEl,
    AoaAz,
    AoaEl,
}

impl AngleKind {
    pub const ALL: [AngleKind; 4] = [AngleKind::AodAz, AngleKind::AodEl, AngleKind::AoaAz, AngleKind::AoaEl];

    pub fn is_azimuth(self) -> bool {
        matches!(self, AngleKind::AodAz | AngleKind::AoaAz)
    }

    pub fn of(self, p: &MpcPath) -> f64 {
        match self {
            AngleKind::AodAz => p.aod_az_rad,
            AngleKind::AodEl => p.aod_el_rad,
            AngleKind::AoaAz => p.aoa_az_rad,
            AngleKind::AoaEl => p.aoa_el_rad,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AngleKind::AodAz => "aod_az",
            AngleKind::AodEl => "aod_el",
            AngleKind::AoaAz => "aoa_az",
            AngleKind::AoaEl => "aoa_el",
        }
    }
}

/// A weighted mean angle in degrees. `ambiguous` marks a cancelled circular resultant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanAngle {
    pub deg: f64,
    pub ambiguous: bool,
}

/// Weighted circular mean of angles (rad), in degrees within [0, 360).
pub fn circular_mean_deg(angles_rad: &[f64], weights: &[f64]) -> MeanAngle {
    let (mut c, mut s, mut total) = (0.0, 0.0, 0.0);
    for (&a, &w) in angles_rad.iter().zip(weights) {
        c += w * a.cos();
        s += w * a.sin();
        total += w;
    }
    if !(c.hypot(s) >= CIRCULAR_EPS * total) {
        return MeanAngle {
            deg: 0.0,
            ambiguous: true,
        };
    }
    let mut deg = s.atan2(c).to_degrees().rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if deg >= 360.0 {
        deg = 0.0;
    }
    MeanAngle { deg, ambiguous: false }
}

/// Power-weighted mean angle of a link: circular for azimuths, arithmetic for elevations.
pub fn weighted_mean_angle(link: &LinkChannel, which: AngleKind) -> Result<MeanAngle, MetricsError> {
    let total = total_power(link)?;
    let (angles, weights): (Vec<f64>, Vec<f64>) = link.active_paths().map(|p| (which.of(p), p.power())).unzip();
    if which.is_azimuth() {
        Ok(circular_mean_deg(&angles, &weights))
    } else {
        let mean = angles.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>() / total;
        Ok(MeanAngle {
            deg: mean.to_degrees(),
            ambiguous: false,
        })
    }
}

/// Absolute azimuth difference in degrees; circular (at most 180) unless `linear`.
pub fn azimuth_diff_deg(a: f64, b: f64, linear: bool) -> f64 {
    let d = (a - b).abs();
    if linear {
        d
    } else {
        d.min(360.0 - d)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Plain absolute azimuth difference instead of the circular distance.
    pub linear_az_diff: bool,
}

/// Continuous errors of one link; absent for an empty realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousErrors {
    pub tof_ns: f64,
    pub mean_delay_ns: f64,
    pub rx_power_db: f64,
    /// AoD az, AoD el, AoA az, AoA el (deg).
    pub angles_deg: [f64; 4],
    /// Any azimuth mean fell back to 0 on either side.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub link_id: u64,
    pub presence: PresenceCounts,
    pub errors: Option<ContinuousErrors>,
}

pub fn link_metrics(
    link_id: u64,
    truth: &LinkChannel,
    pred: Option<&LinkChannel>,
    opts: &EvalOptions,
) -> Result<LinkMetrics, MetricsError> {
    let truth_mask = truth.presence_mask();
    let pred_mask = match pred {
        Some(p) => p.presence_mask(),
        None => vec![false; truth_mask.len()],
    };
    let presence = PresenceCounts::from_masks(&truth_mask, &pred_mask);
    let errors = match pred {
        None => None,
        Some(p) => {
            let mut angles = [0.0; 4];
            let mut ambiguous = false;
            for (k, which) in AngleKind::ALL.into_iter().enumerate() {
                let (a, b) = (weighted_mean_angle(p, which)?, weighted_mean_angle(truth, which)?);
                ambiguous |= a.ambiguous || b.ambiguous;
                angles[k] = if which.is_azimuth() {
                    azimuth_diff_deg(a.deg, b.deg, opts.linear_az_diff)
                } else {
                    (a.deg - b.deg).abs()
                };
            }
            Some(ContinuousErrors {
                tof_ns: (p.tof_s() - truth.tof_s()).abs() * 1e9,
                mean_delay_ns: (weighted_mean_delay(p)? - weighted_mean_delay(truth)?).abs() * 1e9,
                rx_power_db: (p.rx_power_db() - truth.rx_power_db()).abs(),
                angles_deg: angles,
                ambiguous,
            })
        }
    };
    Ok(LinkMetrics {
        link_id,
        presence,
        errors,
    })
}

pub const METRIC_NAMES: [&str; 8] = [
    "presence_f1",
    "tof_mae_ns",
    "mean_delay_mae_ns",
    "rx_power_mae_db",
    "aod_az_mae_deg",
    "aod_el_mae_deg",
    "aoa_az_mae_deg",
    "aoa_el_mae_deg",
];

/// Split-level means of the eight metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub values: [f64; 8],
    pub n_links: usize,
    /// Empty realizations: counted in F1, excluded from the continuous metrics.
    pub n_empty: usize,
    pub n_ambiguous: usize,
}

impl MetricsSummary {
    pub fn get(&self, name: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn f1(&self) -> f64 {
        self.values[0]
    }

    pub fn tof_mae_ns(&self) -> f64 {
        self.values[1]
    }

    pub fn rx_power_mae_db(&self) -> f64 {
        self.values[3]
    }
}

/// Averages per-link metrics. Continuous means are NaN if every realization was empty.
pub fn summarize(per_link: &[LinkMetrics]) -> Result<MetricsSummary, MetricsError> {
    if per_link.is_empty() {
        return Err(MetricsError::Empty);
    }
    let counts = per_link
        .iter()
        .map(|m| m.presence)
        .fold(PresenceCounts::default(), PresenceCounts::merge);
    let errs: Vec<&ContinuousErrors> = per_link.iter().filter_map(|m| m.errors.as_ref()).collect();
    let n = errs.len() as f64;
    let mean = |f: &dyn Fn(&ContinuousErrors) -> f64| {
        if errs.is_empty() {
            f64::NAN
        } else {
            errs.iter().map(|e| f(e)).sum::<f64>() / n
        }
    };
    Ok(MetricsSummary {
        values: [
            counts.f1(),
            mean(&|e| e.tof_ns),
            mean(&|e| e.mean_delay_ns),
            mean(&|e| e.rx_power_db),
            mean(&|e| e.angles_deg[0]),
            mean(&|e| e.angles_deg[1]),
            mean(&|e| e.angles_deg[2]),
            mean(&|e| e.angles_deg[3]),
        ],
        n_links: per_link.len(),
        n_empty: per_link.len() - errs.len(),
        n_ambiguous: errs.iter().filter(|e| e.ambiguous).count(),
    })
}

/// Paired evaluation of predictions against ground truth.
pub fn evaluate(
    ids: &[u64],
    truth: &[&LinkChannel],
    pred: &[Option<&LinkChannel>],
    opts: &EvalOptions,
) -> Result<(MetricsSummary, Vec<LinkMetrics>), MetricsError> {
    if truth.len() != pred.len() || ids.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let per_link = ids
        .iter()
        .zip(truth.iter().zip(pred))
        .map(|(&id, (t, p))| link_metrics(id, t, *p, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((summarize(&per_link)?, per_link))
}

/// Empirical CDF `#{v ≤ x} / n` at each grid point.
pub fn empirical_cdf(values: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(grid
        .iter()
        .map(|&x| (x, sorted.partition_point(|&v| v <= x) as f64 / n))
        .collect())
}

/// Grid covering a sample: `points` values from its minimum to its maximum.
pub fn cdf_grid(values: &[f64], points: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if points < 2 || lo >= hi {
        return vec![hi];
    }
    let mut g: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    *g.last_mut().unwrap() = hi;
    g
}

/// Metrics of every (training scene, evaluation scene) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub train_scenes: Vec<String>,
    pub test_scenes: Vec<String>,
    /// `cells[row][col]` for model `row` on dataset `col`.
    pub cells: Vec<Vec<MetricsSummary>>,
}

impl TransferMatrix {
    pub fn metric(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        let i = METRIC_NAMES.iter().position(|n| *n == name)?;
        Some(self.cells.iter().map(|row| row.iter().map(|c| c.values[i]).collect()).collect())
    }
}

/// One cell of a spatial power map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub x: f64,
    pub y: f64,
    /// Received power (dB); NaN for an empty realization.
    pub rx_power_db: f64,
}
