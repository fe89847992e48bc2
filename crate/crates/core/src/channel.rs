//! Multipath channel data model and the normalization transforms used to
//! turn a link into model targets.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Path slots per link.
pub const DEFAULT_MAX_PATHS: usize = 25;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Excess-delay window W (s).
pub const DEFAULT_WINDOW_S: f64 = 1e-6;
/// Offset added to the nanosecond ToF before taking the log.
pub const TOF_LOG_EPS: f64 = 1e-12;

const POLE_EPS: f64 = 1e-12;
const MIN_DIRECTION_NORM: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("link has no active paths")]
    NoActivePaths,
    #[error("link has zero total power")]
    ZeroPower,
    #[error("{active} active paths exceed the {capacity} available slots")]
    TooManyPaths { active: usize, capacity: usize },
    #[error("time of flight must be positive, got {0}")]
    NonPositiveTof(f64),
    #[error("direction vector is too short to decode (norm {0:e})")]
    DegenerateDirection(f64),
    #[error("invalid normalization statistics: {0}")]
    InvalidStats(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

type Result<T> = std::result::Result<T, ChannelError>;

/// One propagation path. Inactive slots are all zeros.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MpcPath {
    pub present: bool,
    pub gain_re: f64,
    pub gain_im: f64,
    pub delay_s: f64,
    pub aod_az_rad: f64,
    pub aod_el_rad: f64,
    pub aoa_az_rad: f64,
    pub aoa_el_rad: f64,
}

impl MpcPath {
    pub const INACTIVE: MpcPath = MpcPath {
        present: false,
        gain_re: 0.0,
        gain_im: 0.0,
        delay_s: 0.0,
        aod_az_rad: 0.0,
        aod_el_rad: 0.0,
        aoa_az_rad: 0.0,
        aoa_el_rad: 0.0,
    };

    pub fn active(gain: Complex64, delay_s: f64, aod: (f64, f64), aoa: (f64, f64)) -> Self {
        Self {
            present: true,
            gain_re: gain.re,
            gain_im: gain.im,
            delay_s,
            aod_az_rad: aod.0,
            aod_el_rad: aod.1,
            aoa_az_rad: aoa.0,
            aoa_el_rad: aoa.1,
        }
    }

    pub fn gain(&self) -> Complex64 {
        Complex64::new(self.gain_re, self.gain_im)
    }

    /// |α|², or 0 for an inactive slot.
    pub fn power(&self) -> f64 {
        if self.present {
            self.gain_re * self.gain_re + self.gain_im * self.gain_im
        } else {
            0.0
        }
    }

    pub fn check(&self) -> Result<()> {
        if !self.present {
            if *self != Self::INACTIVE {
                return Err(ChannelError::Invariant("inactive slot with nonzero fields".into()));
            }
            return Ok(());
        }
        let finite = [
            self.gain_re,
            self.gain_im,
            self.delay_s,
            self.aod_az_rad,
            self.aod_el_rad,
            self.aoa_az_rad,
            self.aoa_el_rad,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(ChannelError::Invariant("non-finite path field".into()));
        }
        if self.delay_s < 0.0 {
            return Err(ChannelError::Invariant(format!("negative delay {}", self.delay_s)));
        }
        for el in [self.aod_el_rad, self.aoa_el_rad] {
            if !(0.0..=PI).contains(&el) {
                return Err(ChannelError::Invariant(format!("elevation {el} outside [0, pi]")));
            }
        }
        for az in [self.aod_az_rad, self.aoa_az_rad] {
            if !(-PI..PI).contains(&az) {
                return Err(ChannelError::Invariant(format!("azimuth {az} outside [-pi, pi)")));
            }
        }
        Ok(())
    }
}

/// Sorts by descending power, then ascending delay; stable otherwise.
/// Inactive slots end up last because their power is zero and they sort
/// after every active path.
pub fn sort_by_power(paths: &mut [MpcPath]) {
    paths.sort_by(|a, b| {
        b.present
            .cmp(&a.present)
            .then(b.power().total_cmp(&a.power()))
            .then(a.delay_s.total_cmp(&b.delay_s))
    });
}

/// 10·log10 of the summed active path power.
pub fn received_power_db(paths: &[MpcPath]) -> Result<f64> {
    if !paths.iter().any(|p| p.present) {
        return Err(ChannelError::NoActivePaths);
    }
    let total: f64 = paths.iter().map(MpcPath::power).sum();
    if total <= 0.0 {
        return Err(ChannelError::ZeroPower);
    }
    Ok(10.0 * total.log10())
}

/// Minimum delay over active paths.
pub fn time_of_flight(paths: &[MpcPath]) -> Result<f64> {
    paths
        .iter()
        .filter(|p| p.present)
        .map(|p| p.delay_s)
        .min_by(f64::total_cmp)
        .ok_or(ChannelError::NoActivePaths)
}

/// One TX–RX link with a fixed number of power-ordered path slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkChannel {
    paths: Vec<MpcPath>,
    pub tx_pos: [f64; 3],
    pub rx_pos: [f64; 3],
    tof_s: f64,
    rx_power_db: f64,
}

impl LinkChannel {
    /// Builds a link from its active paths, sorting them and padding to `capacity` slots.
    pub fn from_paths(
        paths: impl IntoIterator<Item = MpcPath>,
        capacity: usize,
        tx_pos: [f64; 3],
        rx_pos: [f64; 3],
    ) -> Result<Self> {
        let mut slots: Vec<MpcPath> = paths.into_iter().filter(|p| p.present).collect();
        if slots.len() > capacity {
            return Err(ChannelError::TooManyPaths {
                active: slots.len(),
                capacity,
            });
        }
        for p in &slots {
            p.check()?;
        }
        sort_by_power(&mut slots);
        let tof_s = time_of_flight(&slots)?;
        let rx_power_db = received_power_db(&slots)?;
        slots.resize(capacity, MpcPath::INACTIVE);
        Ok(Self {
            paths: slots,
            tx_pos,
            rx_pos,
            tof_s,
            rx_power_db,
        })
    }

    /// Restores a link from stored slots, verifying every invariant.
    pub fn from_stored(
        paths: Vec<MpcPath>,
        tx_pos: [f64; 3],
        rx_pos: [f64; 3],
        tof_s: f64,
        rx_power_db: f64,
    ) -> Result<Self> {
        let link = Self {
            paths,
            tx_pos,
            rx_pos,
            tof_s,
            rx_power_db,
        };
        link.check_invariants()?;
        Ok(link)
    }

    pub fn paths(&self) -> &[MpcPath] {
        &self.paths
    }

    pub fn active_paths(&self) -> impl Iterator<Item = &MpcPath> {
        self.paths.iter().filter(|p| p.present)
    }

    pub fn n_active(&self) -> usize {
        self.paths.iter().filter(|p| p.present).count()
    }

    pub fn capacity(&self) -> usize {
        self.paths.len()
    }

    pub fn tof_s(&self) -> f64 {
        self.tof_s
    }

    pub fn rx_power_db(&self) -> f64 {
        self.rx_power_db
    }

    pub fn presence_mask(&self) -> Vec<bool> {
        self.paths.iter().map(|p| p.present).collect()
    }

    pub fn distance_m(&self) -> f64 {
        crate::geom::dist(self.tx_pos, self.rx_pos)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let mut seen_inactive = false;
        for p in &self.paths {
            p.check()?;
            if p.present && seen_inactive {
                return Err(ChannelError::Invariant("active slot after inactive slot".into()));
            }
            seen_inactive |= !p.present;
        }
        for w in self.paths.windows(2) {
            if w[0].present && w[1].present && w[0].power() < w[1].power() {
                return Err(ChannelError::Invariant("paths not power ordered".into()));
            }
        }
        let tof = time_of_flight(&self.paths)?;
        let p = received_power_db(&self.paths)?;
        if (tof - self.tof_s).abs() > 1e-9 * tof.abs().max(1e-12) {
            return Err(ChannelError::Invariant(format!(
                "stored tof {} != recomputed {tof}",
                self.tof_s
            )));
        }
        if (p - self.rx_power_db).abs() > 1e-9 * p.abs().max(1.0) {
            return Err(ChannelError::Invariant(format!(
                "stored power {} != recomputed {p}",
                self.rx_power_db
            )));
        }
        Ok(())
    }
}

/// Per-scene statistics from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu_log: f64,
    pub sigma_log: f64,
    pub mu_rx: f64,
    pub sigma_rx: f64,
    pub window_s: f64,
}

impl NormStats {
    pub fn new(mu_log: f64, sigma_log: f64, mu_rx: f64, sigma_rx: f64, window_s: f64) -> Result<Self> {
        let s = Self {
            mu_log,
            sigma_log,
            mu_rx,
            sigma_rx,
            window_s,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.mu_log, self.sigma_log, self.mu_rx, self.sigma_rx, self.window_s]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(ChannelError::InvalidStats("non-finite value".into()));
        }
        if self.sigma_log <= 0.0 || self.sigma_rx <= 0.0 || self.window_s <= 0.0 {
            return Err(ChannelError::InvalidStats(format!(
                "sigma_log={}, sigma_rx={}, window_s={} must all be positive",
                self.sigma_log, self.sigma_rx, self.window_s
            )));
        }
        Ok(())
    }
}

/// Normalized gains ã = α/√P_tot per slot (zero for inactive slots) and P_tot.
pub fn normalize_gains(link: &LinkChannel) -> Result<(Vec<Complex64>, f64)> {
    if link.n_active() == 0 {
        return Err(ChannelError::NoActivePaths);
    }
    let total: f64 = link.paths.iter().map(MpcPath::power).sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(ChannelError::ZeroPower);
    }
    let scale = total.sqrt();
    let gains = link
        .paths
        .iter()
        .map(|p| if p.present { p.gain() / scale } else { Complex64::new(0.0, 0.0) })
        .collect();
    Ok((gains, total))
}

/// Excess delays clip((τ − τ₀)/W, 0, 1) per slot; zero for inactive slots.
pub fn normalize_delays(link: &LinkChannel, window_s: f64) -> Vec<f64> {
    let tof = link.tof_s;
    link.paths
        .iter()
        .map(|p| {
            if p.present {
                ((p.delay_s - tof) / window_s).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

pub fn encode_direction(az_rad: f64, el_rad: f64) -> [f64; 3] {
    let (se, ce) = el_rad.sin_cos();
    let (sa, ca) = az_rad.sin_cos();
    [se * ca, se * sa, ce]
}

/// Inverse of [`encode_direction`]; azimuth in [−π, π), elevation in [0, π].
pub fn decode_direction(v: [f64; 3]) -> Result<(f64, f64)> {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(norm >= MIN_DIRECTION_NORM) {
        return Err(ChannelError::DegenerateDirection(norm));
    }
    let (x, y, z) = (v[0] / norm, v[1] / norm, v[2] / norm);
    let el = z.clamp(-1.0, 1.0).acos();
    let horizontal = (x * x + y * y).sqrt();
    let az = if horizontal < POLE_EPS { 0.0 } else { y.atan2(x) };
    Ok((wrap_azimuth(az), el))
}

/// Maps an angle into [−π, π).
pub fn wrap_azimuth(az: f64) -> f64 {
    let wrapped = (az + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        -PI
    } else {
        wrapped
    }
}

pub fn normalize_tof(tof_s: f64, stats: &NormStats) -> Result<f64> {
    if !(tof_s > 0.0) {
        return Err(ChannelError::NonPositiveTof(tof_s));
    }
    Ok(((tof_s * 1e9 + TOF_LOG_EPS).ln() - stats.mu_log) / stats.sigma_log)
}

pub fn denormalize_tof(tof_n: f64, stats: &NormStats) -> f64 {
    ((tof_n * stats.sigma_log + stats.mu_log).exp() - TOF_LOG_EPS) * 1e-9
}

pub fn normalize_rx_power(p_db: f64, stats: &NormStats) -> f64 {
    (p_db - stats.mu_rx) / stats.sigma_rx
}

pub fn denormalize_rx_power(p_n: f64, stats: &NormStats) -> f64 {
    p_n * stats.sigma_rx + stats.mu_rx
}

/// One slot of a normalized link; inactive slots are all zeros.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedSlot {
    pub present: bool,
    pub gain_re_n: f64,
    pub gain_im_n: f64,
    pub excess_delay_n: f64,
    pub aod_unit: [f64; 3],
    pub aoa_unit: [f64; 3],
}

impl NormalizedSlot {
    /// `[re, im, τ̃, aod(3), aoa(3), m]`
    pub fn to_vector(&self) -> [f64; 10] {
        let d = self.aod_unit;
        let a = self.aoa_unit;
        [
            self.gain_re_n,
            self.gain_im_n,
            self.excess_delay_n,
            d[0],
            d[1],
            d[2],
            a[0],
            a[1],
            a[2],
            if self.present { 1.0 } else { 0.0 },
        ]
    }
}

/// Model-space view of a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedLink {
    pub slots: Vec<NormalizedSlot>,
    pub tof_n: f64,
    pub rx_power_n: f64,
}

impl NormalizedLink {
    pub fn check_invariants(&self) -> Result<()> {
        let active: Vec<&NormalizedSlot> = self.slots.iter().filter(|s| s.present).collect();
        if active.is_empty() {
            return Err(ChannelError::NoActivePaths);
        }
        let power: f64 = active
            .iter()
            .map(|s| s.gain_re_n * s.gain_re_n + s.gain_im_n * s.gain_im_n)
            .sum();
        if (power - 1.0).abs() > 1e-9 {
            return Err(ChannelError::Invariant(format!("normalized power {power} != 1")));
        }
        let mut min_delay = f64::INFINITY;
        for s in &active {
            if !(0.0..=1.0).contains(&s.excess_delay_n) {
                return Err(ChannelError::Invariant("excess delay outside [0, 1]".into()));
            }
            min_delay = min_delay.min(s.excess_delay_n);
            for u in [s.aod_unit, s.aoa_unit] {
                let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(ChannelError::Invariant(format!("direction norm {n}")));
                }
            }
        }
        if min_delay != 0.0 {
            return Err(ChannelError::Invariant("no slot at zero excess delay".into()));
        }
        if self.slots.iter().any(|s| !s.present && *s != NormalizedSlot::default()) {
            return Err(ChannelError::Invariant("inactive slot with nonzero fields".into()));
        }
        Ok(())
    }

    pub fn presence(&self) -> Vec<bool> {
        self.slots.iter().map(|s| s.present).collect()
    }
}

/// Applies every per-slot and link-level transform.
pub fn normalize_link(link: &LinkChannel, stats: &NormStats) -> Result<NormalizedLink> {
    let (gains, _) = normalize_gains(link)?;
    let delays = normalize_delays(link, stats.window_s);
    let slots = link
        .paths
        .iter()
        .zip(gains.iter().zip(&delays))
        .map(|(p, (g, &d))| {
            if !p.present {
                return NormalizedSlot::default();
            }
            NormalizedSlot {
                present: true,
                gain_re_n: g.re,
                gain_im_n: g.im,
                excess_delay_n: d,
                aod_unit: encode_direction(p.aod_az_rad, p.aod_el_rad),
                aoa_unit: encode_direction(p.aoa_az_rad, p.aoa_el_rad),
            }
        })
        .collect();
    Ok(NormalizedLink {
        slots,
        tof_n: normalize_tof(link.tof_s, stats)?,
        rx_power_n: normalize_rx_power(link.rx_power_db, stats),
    })
}

/// Binned impulse response of a link.
#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    /// Coherent complex sum of the gains falling in each tap.
    pub taps: Vec<Complex64>,
    /// Incoherent power-delay profile: Σ|α|² per tap.
    pub power_profile: Vec<f64>,
    /// Set when at least one path landed past the last tap and was folded into it.
    pub overflow: bool,
}

impl Cir {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.taps.iter().map(|t| t.norm()).collect()
    }
}

/// Bins path contributions at `round(τ / spacing)`.
pub fn synthesize_cir(link: &LinkChannel, n_taps: usize, tap_spacing_s: f64) -> Result<Cir> {
    if n_taps == 0 || !(tap_spacing_s > 0.0) {
        return Err(ChannelError::Invariant(format!(
            "need n_taps >= 1 and positive spacing, got {n_taps}, {tap_spacing_s}"
        )));
    }
    let mut cir = Cir {
        taps: vec![Complex64::new(0.0, 0.0); n_taps],
        power_profile: vec![0.0; n_taps],
        overflow: false,
    };
    for p in link.active_paths() {
        let bin = (p.delay_s / tap_spacing_s).round() as usize;
        let bin = if bin >= n_taps {
            cir.overflow = true;
            n_taps - 1
        } else {
            bin
        };
        cir.taps[bin] += p.gain();
        cir.power_profile[bin] += p.power();
    }
    Ok(cir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(g: Complex64, delay: f64) -> MpcPath {
        MpcPath::active(g, delay, (0.1, 1.0), (-0.3, 1.2))
    }

    #[test]
    fn single_path_gain_normalizes_to_unit() {
        let link = LinkChannel::from_paths(
            [path(Complex64::new(3.0, 4.0), 1e-7)],
            DEFAULT_MAX_PATHS,
            [0.0; 3],
            [1.0; 3],
        )
        .unwrap();
        let (g, total) = normalize_gains(&link).unwrap();
        assert_eq!(total, 25.0);
        assert!((g[0].re - 0.6).abs() < 1e-15 && (g[0].im - 0.8).abs() < 1e-15);
    }

    #[test]
    fn delays_clip_to_window() {
        let link = LinkChannel::from_paths(
            [path(Complex64::new(1.0, 0.0), 300e-9), path(Complex64::new(0.5, 0.0), 1500e-9)],
            4,
            [0.0; 3],
            [0.0; 3],
        )
        .unwrap();
        assert_eq!(normalize_delays(&link, 1e-6), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn direction_conventions() {
        assert_eq!(decode_direction([0.0, 0.0, 1.0]).unwrap(), (0.0, 0.0));
        let (az, el) = decode_direction([-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(az, -PI);
        assert!((el - PI / 2.0).abs() < 1e-15);
        let (az, _) = decode_direction([-1.0, -0.0, 0.0]).unwrap();
        assert_eq!(az, -PI);
        assert!(decode_direction([0.0, 1e-10, 0.0]).is_err());
    }

    #[test]
    fn power_ordering_breaks_ties_by_delay() {
        let mut v = vec![
            path(Complex64::new(1.0, 0.0), 3e-7),
            MpcPath::INACTIVE,
            path(Complex64::new(0.0, 1.0), 2e-7),
            path(Complex64::new(2.0, 0.0), 5e-7),
        ];
        sort_by_power(&mut v);
        assert_eq!(v[0].delay_s, 5e-7);
        assert_eq!(v[1].delay_s, 2e-7);
        assert_eq!(v[2].delay_s, 3e-7);
        assert!(!v[3].present);
    }

    #[test]
    fn received_power_examples() {
        let one = [path(Complex64::new(10f64.powf(-4.5), 0.0), 1e-7)];
        assert!((received_power_db(&one).unwrap() + 90.0).abs() < 1e-9);
        let a = (0.5e-9f64).sqrt();
        let two = [path(Complex64::new(a, 0.0), 1e-7), path(Complex64::new(0.0, a), 2e-7)];
        assert!((received_power_db(&two).unwrap() + 90.0).abs() < 1e-9);
        assert!(received_power_db(&[MpcPath::INACTIVE]).is_err());
    }

    #[test]
    fn cir_bins_coherently_and_flags_overflow() {
        let link = LinkChannel::from_paths(
            [
                path(Complex64::new(1.0, 0.0), 0.0),
                path(Complex64::new(-0.5, 0.0), 0.2e-9),
                path(Complex64::new(0.1, 0.0), 50e-9),
            ],
            8,
            [0.0; 3],
            [0.0; 3],
        )
        .unwrap();
        let cir = synthesize_cir(&link, 10, 1e-9).unwrap();
        assert!((cir.taps[0].re - 0.5).abs() < 1e-15);
        assert!((cir.power_profile[0] - 1.25).abs() < 1e-15);
        assert!(cir.overflow);
        assert!((cir.power_profile[9] - 0.01).abs() < 1e-15);
    }
}
