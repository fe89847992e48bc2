use crate::scene::{channel, HeightMap, PovStack, POV_CHANNELS};

use super::DatasetError;

pub const DEPTH_MAX_M: f64 = 500.0;
pub const EPS_R_MAX: f64 = 25.0;
pub const SIGMA_MAX: f64 = 10.0;
pub const HEIGHT_MAX_M: f64 = 500.0;

/// Accepted raw range per channel.
const RAW_RANGES: [(f64, f64); POV_CHANNELS] = [
    (0.0, 255.0),
    (0.0, 255.0),
    (0.0, 255.0),
    (0.0, DEPTH_MAX_M),
    (-1.0, 1.0),
    (-1.0, 1.0),
    (-1.0, 1.0),
    (1.0, EPS_R_MAX),
    (0.0, SIGMA_MAX),
    (0.0, 1.0),
    (0.0, 1.0),
    (0.0, 1.0),
];

fn log_scale(x: f64, max: f64) -> f64 {
    (1.0 + x).ln() / (1.0 + max).ln()
}

/// Maps one raw channel value into model range.
pub fn preprocess_value(c: usize, v: f64) -> f64 {
    match c {
        channel::R | channel::G | channel::B => v / 255.0,
        channel::DEPTH => log_scale(v, DEPTH_MAX_M),
        channel::EPS_R => log_scale(v, EPS_R_MAX),
        channel::SIGMA => log_scale(v, SIGMA_MAX),
        _ => v,
    }
}

pub fn preprocess_pov(raw: &PovStack) -> Result<PovStack, DatasetError> {
    let n = raw.resolution * raw.resolution;
    if raw.data.len() != POV_CHANNELS * n {
        return Err(DatasetError::Invalid(format!(
            "POV stack has {} values, expected {}",
            raw.data.len(),
            POV_CHANNELS * n
        )));
    }
    let mut out = raw.clone();
    for c in 0..POV_CHANNELS {
        let (lo, hi) = RAW_RANGES[c];
        for v in &mut out.data[c * n..(c + 1) * n] {
            if !(*v >= lo && *v <= hi) {
                return Err(DatasetError::OutOfRange {
                    channel: channel::NAMES[c],
                    value: *v,
                });
            }
            *v = preprocess_value(c, *v);
        }
    }
    Ok(out)
}

pub fn preprocess_height(h: f64) -> Result<f64, DatasetError> {
    if !(h >= 0.0) {
        return Err(DatasetError::OutOfRange {
            channel: "height",
            value: h,
        });
    }
    Ok(log_scale(h, HEIGHT_MAX_M))
}

pub fn preprocess_heightmap(raw: &HeightMap) -> Result<HeightMap, DatasetError> {
    let heights = raw
        .heights
        .iter()
        .map(|&h| preprocess_height(h))
        .collect::<Result<_, _>>()?;
    Ok(HeightMap {
        heights,
        ..raw.clone()
    })
}
