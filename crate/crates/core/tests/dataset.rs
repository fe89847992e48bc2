mod common;

use std::collections::HashSet;

use mpcgen::channel::normalize_link;
use mpcgen::dataset::{
    assign_splits, compute_stats, fourier_encode, preprocess_height, read_dataset, read_dataset_expecting,
    write_dataset, Dataset, Split, FOURIER_DIM, SPLIT_TOLERANCE,
};
use mpcgen::scene::{LINK_FLOOR_DB, POV_CHANNELS};
use proptest::prelude::*;
use std::sync::OnceLock;

fn dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| common::small_dataset(21, 40.0))
}

#[test]
fn records_are_consistent() {
    let ds = dataset();
    let h = &ds.header;
    assert!(!ds.records.is_empty());
    assert_eq!(h.heightmap.len(), h.heightmap_resolution.pow(2));
    let mut ids = HashSet::new();
    for r in &ds.records {
        assert!(ids.insert(r.link_id));
        r.link.check_invariants().unwrap();
        r.normalized.check_invariants().unwrap();
        assert_eq!(r.normalized, normalize_link(&r.link, &h.stats).unwrap());
        assert!(r.link.rx_power_db() >= LINK_FLOOR_DB);
        assert_eq!(r.tx_pov.len(), POV_CHANNELS * h.pov_resolution.pow(2));
        assert_eq!(r.rx_pov.len(), r.tx_pov.len());
        assert!(r.tx_pov.iter().chain(&r.rx_pov).all(|v| v.is_finite()));
    }
}

#[test]
fn splits_are_spatially_disjoint() {
    let ds = dataset();
    let h = &ds.header;
    for r in &ds.records {
        assert_eq!(h.tx_region_splits[r.tx_region as usize], r.split);
        assert_eq!(h.rx_region_splits[r.rx_region as usize], r.split);
    }
    for s in Split::ALL {
        assert!(ds.count(s) > 0, "{s:?} is empty");
    }
}

#[test]
fn statistics_come_from_the_training_split() {
    let ds = dataset();
    let stats = compute_stats(ds.split(Split::Train).map(|r| &r.link), ds.header.stats.window_s).unwrap();
    assert_eq!(stats, ds.header.stats);
    let all = compute_stats(ds.records.iter().map(|r| &r.link), ds.header.stats.window_s).unwrap();
    assert_ne!(all, ds.header.stats);
}

#[test]
fn files_round_trip_bit_identically() {
    let ds = dataset();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mpcd");
    write_dataset(ds, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes, ds.to_bytes().unwrap());
    assert_eq!(&read_dataset(&path).unwrap(), ds);
    assert!(read_dataset_expecting(&path, ds.header.max_paths + 1).is_err());
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = dataset().to_bytes().unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(Dataset::from_bytes(&bad_magic, None).is_err());
    let mut bad_header = bytes.clone();
    bad_header[40] ^= 1;
    assert!(Dataset::from_bytes(&bad_header, None).is_err());
    assert!(Dataset::from_bytes(&bytes[..bytes.len() - 3], None).is_err());
}

#[test]
fn split_search_hits_the_targets() {
    let links: Vec<(usize, usize)> = (0..12).flat_map(|t| (0..16).map(move |r| (t, r))).collect();
    let plan = assign_splits(&links, 12, 16, 3).unwrap();
    assert!(plan.max_deviation() <= SPLIT_TOLERANCE);
    assert!(assign_splits(&links, 2, 16, 3).is_err());
}

#[test]
fn fourier_features_have_the_documented_layout() {
    let f = fourier_encode(&[0.0, 250.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(f.len(), FOURIER_DIM);
    // First scalar is zero: sin 0 = 0, cos 0 = 1 in every band.
    assert!(f[..16].chunks(2).all(|p| p[0] == 0.0 && p[1] == 1.0));
    // 250 m at one cycle per km is a quarter turn.
    assert!((f[16] - 1.0).abs() < 1e-12 && f[17].abs() < 1e-12);
}

proptest! {
    #[test]
    fn fourier_pairs_lie_on_the_unit_circle(s in proptest::array::uniform6(-1000.0f64..1000.0)) {
        let f = fourier_encode(&s);
        for p in f.chunks(2) {
            prop_assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn height_preprocessing_is_monotone(a in 0.0f64..200.0, b in 0.0f64..200.0) {
        let (pa, pb) = (preprocess_height(a).unwrap(), preprocess_height(b).unwrap());
        prop_assert!(pa.is_finite() && pb.is_finite());
        if a < b {
            prop_assert!(pa <= pb);
        }
    }
}
