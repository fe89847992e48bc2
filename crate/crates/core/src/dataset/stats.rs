use crate::channel::{LinkChannel, NormStats, TOF_LOG_EPS};

use super::DatasetError;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Log-ToF and received-power statistics with unbiased standard deviations.
pub fn compute_stats<'a>(
    train: impl IntoIterator<Item = &'a LinkChannel>,
    window_s: f64,
) -> Result<NormStats, DatasetError> {
    let (mut logs, mut powers) = (Vec::new(), Vec::new());
    for link in train {
        logs.push((link.tof_s() * 1e9 + TOF_LOG_EPS).ln());
        powers.push(link.rx_power_db());
    }
    if logs.len() < 2 {
        return Err(DatasetError::Stats(format!(
            "need at least 2 training links, got {}",
            logs.len()
        )));
    }
    let (mu_log, sigma_log) = mean_std(&logs);
    let (mu_rx, sigma_rx) = mean_std(&powers);
    NormStats::new(mu_log, sigma_log, mu_rx, sigma_rx, window_s)
        .map_err(|e| DatasetError::Stats(format!("degenerate statistics: {e}")))
}
