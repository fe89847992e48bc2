use std::f64::consts::PI;

pub const N_BANDS: usize = 8;
pub const COORD_SCALE_M: f64 = 1000.0;
/// Six endpoint coordinates, two values per band each.
pub const FOURIER_DIM: usize = 6 * 2 * N_BANDS;

/// Band frequencies in cycles per `COORD_SCALE_M`: 1, 2, 4, ..., 128.
pub fn band_frequencies() -> [f64; N_BANDS] {
    std::array::from_fn(|b| (1u32 << b) as f64)
}

/// Per scalar, `[sin_0, cos_0, sin_1, cos_1, ...]`; scalars in the given order.
pub fn fourier_encode_into(s: &[f64], out: &mut Vec<f64>) {
    let freqs = band_frequencies();
    for &x in s {
        for f in freqs {
            let (sn, cs) = (2.0 * PI * f * x / COORD_SCALE_M).sin_cos();
            out.push(sn);
            out.push(cs);
        }
    }
}

/// Encodes `[tx_x, tx_y, tx_z, rx_x, rx_y, rx_z]` into 96 features.
pub fn fourier_encode(s: &[f64; 6]) -> Vec<f64> {
    let mut out = Vec::with_capacity(FOURIER_DIM);
    fourier_encode_into(s, &mut out);
    out
}
