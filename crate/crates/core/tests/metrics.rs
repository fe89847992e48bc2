mod common;

use mpcgen::channel::{LinkChannel, MpcPath};
use mpcgen::metrics::{
    azimuth_diff_deg, cdf_grid, circular_mean_deg, empirical_cdf, evaluate, presence_f1, weighted_mean_delay,
    EvalOptions, PresenceCounts,
};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn link(paths: &[(f64, f64, f64)]) -> LinkChannel {
    let ps = paths
        .iter()
        .map(|&(amp, delay, az)| MpcPath::active(Complex64::new(amp, 0.0), delay, (az, 1.0), (az, 1.0)));
    LinkChannel::from_paths(ps, 6, [0.0; 3], [1.0; 3]).unwrap()
}

#[test]
fn f1_edge_cases() {
    assert_eq!(PresenceCounts::default().f1(), 0.0);
    assert_eq!(presence_f1(&[vec![true, false]], &[vec![true, false]]), 1.0);
    assert_eq!(presence_f1(&[vec![true, false]], &[vec![false, true]]), 0.0);
    // tp 1, fp 1, fn 1.
    let f = presence_f1(&[vec![true, true, false]], &[vec![true, false, true]]);
    assert!((f - 0.5).abs() < 1e-15);
}

#[test]
fn perfect_predictions_score_zero_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth: Vec<LinkChannel> = (0..50).map(|_| common::random_link(&mut rng, 10)).collect();
    let ids: Vec<u64> = (0..50).collect();
    let refs: Vec<&LinkChannel> = truth.iter().collect();
    let preds: Vec<Option<&LinkChannel>> = truth.iter().map(Some).collect();
    let (s, per_link) = evaluate(&ids, &refs, &preds, &EvalOptions::default()).unwrap();
    assert_eq!(s.f1(), 1.0);
    assert!(s.values[1..].iter().all(|&v| v == 0.0));
    assert_eq!(per_link.len(), 50);
}

#[test]
fn empty_realizations_count_only_in_f1() {
    let t = link(&[(1e-4, 1e-7, 0.0), (5e-5, 2e-7, 1.0)]);
    let p = link(&[(1e-4, 3e-7, 0.0)]);
    let (s, _) = evaluate(&[0, 1], &[&t, &t], &[Some(&p), None], &EvalOptions::default()).unwrap();
    assert_eq!(s.n_empty, 1);
    assert!((s.tof_mae_ns() - 200.0).abs() < 1e-6);
    // 1 tp, 0 fp, 3 fn.
    assert!((s.f1() - 2.0 / 5.0).abs() < 1e-12);
    let (all_empty, _) = evaluate(&[0], &[&t], &[None], &EvalOptions::default()).unwrap();
    assert!(all_empty.tof_mae_ns().is_nan());
}

#[test]
fn mean_delay_is_power_weighted() {
    let l = link(&[(2.0, 100e-9, 0.0), (1.0, 600e-9, 0.0)]);
    assert!((weighted_mean_delay(&l).unwrap() - 200e-9).abs() < 1e-18);
}

#[test]
fn linear_azimuth_difference_is_an_option() {
    assert!((azimuth_diff_deg(350.0, 10.0, false) - 20.0).abs() < 1e-12);
    assert!((azimuth_diff_deg(350.0, 10.0, true) - 340.0).abs() < 1e-12);
    let a = link(&[(1e-4, 1e-7, 5f64.to_radians())]);
    let b = link(&[(1e-4, 1e-7, -5f64.to_radians())]);
    let circ = evaluate(&[0], &[&a], &[Some(&b)], &EvalOptions::default()).unwrap().0;
    let lin = evaluate(&[0], &[&a], &[Some(&b)], &EvalOptions { linear_az_diff: true }).unwrap().0;
    assert!((circ.values[4] - 10.0).abs() < 1e-9);
    assert!((lin.values[4] - 350.0).abs() < 1e-9);
}

#[test]
fn circular_mean_handles_wraparound() {
    let m = circular_mean_deg(&[350f64.to_radians(), 10f64.to_radians()], &[1.0, 1.0]);
    assert!(!m.ambiguous && m.deg.min(360.0 - m.deg) < 1e-9);
    assert!(circular_mean_deg(&[0.0, PI], &[1.0, 1.0]).ambiguous);
    // Tiny weights are not ambiguous by themselves.
    assert!(!circular_mean_deg(&[0.3], &[1e-18]).ambiguous);
}

#[test]
fn cdf_is_monotone_and_ends_at_one() {
    let v = [3.0, 1.0, 2.0, 2.0];
    let grid = cdf_grid(&v, 5);
    let cdf = empirical_cdf(&v, &grid).unwrap();
    assert_eq!(cdf.first().unwrap(), &(1.0, 0.25));
    assert_eq!(cdf.last().unwrap(), &(3.0, 1.0));
    assert!(cdf.windows(2).all(|w| w[0].1 <= w[1].1));
    assert!(empirical_cdf(&[], &grid).is_err());
}

proptest! {
    #[test]
    fn circular_mean_rotates_with_its_inputs(
        angles in proptest::collection::vec(-1.0f64..1.0, 1..8),
        weights in proptest::collection::vec(0.1f64..1.0, 8),
        shift in -PI..PI,
    ) {
        let w = &weights[..angles.len()];
        let base = circular_mean_deg(&angles, w);
        let moved: Vec<f64> = angles.iter().map(|a| a + shift).collect();
        let rotated = circular_mean_deg(&moved, w);
        prop_assert!(!base.ambiguous);
        let expected = (base.deg + shift.to_degrees()).rem_euclid(360.0);
        prop_assert!(azimuth_diff_deg(rotated.deg, expected, false) < 1e-8);
    }

    #[test]
    fn azimuth_difference_is_a_symmetric_bounded_distance(a in 0.0f64..360.0, b in 0.0f64..360.0) {
        let d = azimuth_diff_deg(a, b, false);
        prop_assert!((0.0..=180.0).contains(&d));
        prop_assert_eq!(d, azimuth_diff_deg(b, a, false));
    }

    #[test]
    fn f1_is_bounded_and_symmetric(bits in proptest::collection::vec(any::<(bool, bool)>(), 1..50)) {
        let t: Vec<bool> = bits.iter().map(|b| b.0).collect();
        let p: Vec<bool> = bits.iter().map(|b| b.1).collect();
        let f = presence_f1(&[t.clone()], &[p.clone()]);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, presence_f1(&[p], &[t]));
    }
}
