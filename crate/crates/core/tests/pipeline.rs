mod common;

use mpcgen::dataset::Split;
use mpcgen::metrics::{MetricsSummary, PresenceCounts};
use mpcgen::model::{GenerateOptions, ModelConfig, TrainConfig, TrainData, Trainer};
use mpcgen::pipeline::{aggregate, baselines, mean_std, spatial_power_map, RunConfig};
use mpcgen::scene::{generate_scene, SceneConfig};

#[test]
fn mean_std_matches_hand_values() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    assert!(mean_std(&[]).0.is_nan());
}

#[test]
fn aggregate_is_per_metric() {
    let a = MetricsSummary { values: [1.0; 8], n_links: 1, n_empty: 0, n_ambiguous: 0 };
    let b = MetricsSummary { values: [3.0; 8], ..a.clone() };
    assert!(aggregate(&[a, b]).iter().all(|&(m, _)| m == 2.0));
}

#[test]
fn run_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rc = RunConfig {
        command: "train".into(),
        model: Some(ModelConfig::desk()),
        train: Some(TrainConfig::desk()),
        seeds: vec![1, 2],
        ..Default::default()
    };
    rc.options.insert("steps".into(), 5.into());
    rc.write(dir.path()).unwrap();
    assert_eq!(RunConfig::read(dir.path()).unwrap(), rc);
}

#[test]
fn baselines_pick_the_best_constant_mask() {
    let ds = common::small_dataset(17, 48.0);
    let b = baselines(&ds, Split::Test).unwrap();
    for k in 1..=ds.header.max_paths {
        let mask: Vec<bool> = (0..ds.header.max_paths).map(|s| s < k).collect();
        let f1 = ds
            .split(Split::Test)
            .map(|r| PresenceCounts::from_masks(&r.link.presence_mask(), &mask))
            .fold(PresenceCounts::default(), PresenceCounts::merge)
            .f1();
        assert!(f1 <= b.best_k_f1);
    }
    let train: Vec<f64> = ds.split(Split::Train).map(|r| r.link.rx_power_db()).collect();
    assert!((b.mean_rx_power_db - mean_std(&train).0).abs() < 1e-9);
}

#[test]
fn power_maps_cover_every_point() {
    let cfg = SceneConfig { seed: 17, ..Default::default() };
    let scene = generate_scene(&cfg).unwrap();
    let ds = common::small_dataset(17, 48.0);
    let mcfg = ModelConfig::desk();
    let mut tr = Trainer::new(&mcfg, &TrainConfig { steps: 2, ..TrainConfig::desk() }, ds.header.stats).unwrap();
    tr.run(&TrainData::new(&mcfg, &ds).unwrap(), |_| {}).unwrap();
    let pts: Vec<[f64; 3]> = (0..5).map(|i| [20.0 + 30.0 * i as f64, 15.0, 1.5]).collect();
    let tx = ds.records[0].link.tx_pos;
    let gen = GenerateOptions { batch: 2, ..Default::default() };
    let cells = spatial_power_map(&tr, &scene, &ds.header.heightmap, tx, &pts, 3, &gen).unwrap();
    assert_eq!(cells.len(), pts.len());
    assert!(cells.iter().zip(&pts).all(|(c, p)| c.x == p[0] && c.y == p[1]));
    let again = spatial_power_map(&tr, &scene, &ds.header.heightmap, tx, &pts, 3, &gen).unwrap();
    let bits = |cs: &[mpcgen::metrics::PowerCell]| cs.iter().map(|c| c.rx_power_db.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&cells), bits(&again));
}
