//! CSV outputs.

use std::path::Path;

use super::{LinkMetrics, MetricsError, MetricsSummary, PowerCell, TransferMatrix, METRIC_NAMES};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_per_link_csv(path: &Path, rows: &[LinkMetrics]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "link_id",
        "tp",
        "fp",
        "fn",
        "empty",
        "tof_err_ns",
        "mean_delay_err_ns",
        "rx_power_err_db",
        "aod_az_err_deg",
        "aod_el_err_deg",
        "aoa_az_err_deg",
        "aoa_el_err_deg",
        "ambiguous",
    ])?;
    for m in rows {
        let e = m.errors.as_ref();
        let mut rec = vec![
            m.link_id.to_string(),
            m.presence.tp.to_string(),
            m.presence.fp.to_string(),
            m.presence.fn_.to_string(),
            e.is_none().to_string(),
            opt(e.map(|e| e.tof_ns)),
            opt(e.map(|e| e.mean_delay_ns)),
            opt(e.map(|e| e.rx_power_db)),
        ];
        for k in 0..4 {
            rec.push(opt(e.map(|e| e.angles_deg[k])));
        }
        rec.push(e.is_some_and(|e| e.ambiguous).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows are metrics, columns are scenes.
pub fn write_summary_csv(path: &Path, scenes: &[(String, MetricsSummary)]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["metric".to_string()];
    header.extend(scenes.iter().map(|(s, _)| s.clone()));
    w.write_record(&header)?;
    for (i, name) in METRIC_NAMES.iter().enumerate() {
        let mut rec = vec![name.to_string()];
        rec.extend(scenes.iter().map(|(_, m)| m.values[i].to_string()));
        w.write_record(&rec)?;
    }
    for (label, f) in [
        ("n_links", (|m: &MetricsSummary| m.n_links) as fn(&MetricsSummary) -> usize),
        ("n_empty", |m| m.n_empty),
        ("n_ambiguous", |m| m.n_ambiguous),
    ] {
        let mut rec = vec![label.to_string()];
        rec.extend(scenes.iter().map(|(_, m)| f(m).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: one row per (series, x, F(x)).
pub fn write_cdf_csv(path: &Path, series: &[(String, Vec<(f64, f64)>)]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "x", "cdf"])?;
    for (name, points) in series {
        for (x, f) in points {
            w.write_record([name.clone(), x.to_string(), f.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per (train scene, test scene) with all eight metrics.
pub fn write_transfer_csv(path: &Path, m: &TransferMatrix) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["train_scene".to_string(), "test_scene".to_string()];
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (r, row) in m.cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let mut rec = vec![m.train_scenes[r].clone(), m.test_scenes[c].clone()];
            rec.extend(cell.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_power_map_csv(path: &Path, cells: &[PowerCell]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "rx_power_db"])?;
    for c in cells {
        w.write_record([c.x.to_string(), c.y.to_string(), c.rx_power_db.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
