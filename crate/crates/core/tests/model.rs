mod common;

use std::sync::OnceLock;

use mpcgen::dataset::{Dataset, Split};
use mpcgen::model::{
    free_bits, kl_beta, kl_per_dim, learning_rate, load_checkpoint, passes_divergence_filter, save_checkpoint,
    GenerateOptions, Generator, LinkInput, ModelConfig, TrainConfig, TrainData, Trainer, N_TASKS,
};
use mpcgen_autodiff::{Graph, Tensor};
use proptest::prelude::*;

fn dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| common::small_dataset(31, 48.0))
}

fn trained(steps: usize) -> Trainer {
    let ds = dataset();
    let mcfg = ModelConfig::desk();
    let tcfg = TrainConfig { steps, lr_warmup: 5, ..TrainConfig::desk() };
    let mut tr = Trainer::new(&mcfg, &tcfg, ds.header.stats).unwrap();
    tr.run(&TrainData::new(&mcfg, ds).unwrap(), |_| {}).unwrap();
    tr
}

#[test]
fn schedules_hit_their_endpoints() {
    let cfg = TrainConfig { steps: 1000, lr_warmup: 100, beta_warmup: 200, ..TrainConfig::desk() };
    assert_eq!(learning_rate(&cfg, 0), 0.0);
    assert!((learning_rate(&cfg, 100) - cfg.lr_peak).abs() < 1e-15);
    assert!((learning_rate(&cfg, 1000) - cfg.lr_min_ratio * cfg.lr_peak).abs() < 1e-15);
    assert_eq!(kl_beta(&cfg, 0), 0.0);
    assert_eq!(kl_beta(&cfg, 100), cfg.beta_max / 2.0);
    assert_eq!(kl_beta(&cfg, 5000), cfg.beta_max);
}

#[test]
fn configs_validate() {
    assert!(ModelConfig::desk().validate().is_ok());
    assert!(ModelConfig::paper().validate().is_ok());
    assert!(ModelConfig { heads: 3, ..ModelConfig::desk() }.validate().is_err());
    assert!(ModelConfig { patch: 5, ..ModelConfig::desk() }.validate().is_err());
    assert!(TrainConfig { batch: 0, ..TrainConfig::desk() }.validate().is_err());
}

#[test]
fn divergence_filter_threshold() {
    assert!(passes_divergence_filter(1e-3));
    assert!(passes_divergence_filter(1e-4));
    assert!(!passes_divergence_filter(2e-3));
    assert!(!passes_divergence_filter(f64::NAN));
}

proptest! {
    #[test]
    fn kl_is_zero_between_identical_gaussians(mu in -3.0f64..3.0, lv in -4.0f64..4.0) {
        let g = Graph::new();
        let t = |v: f64| g.leaf(Tensor::new(&[1, 1], vec![v]).unwrap());
        let kl = kl_per_dim(t(mu), t(lv), t(mu), t(lv)).unwrap().value().sum();
        prop_assert!(kl.abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative(a in -3.0f64..3.0, b in -3.0f64..3.0, la in -4.0f64..4.0, lb in -4.0f64..4.0) {
        let g = Graph::new();
        let t = |v: f64| g.leaf(Tensor::new(&[1, 1], vec![v]).unwrap());
        prop_assert!(kl_per_dim(t(a), t(la), t(b), t(lb)).unwrap().value().sum() >= -1e-12);
    }

    #[test]
    fn free_bits_never_below_the_floor(kl in proptest::collection::vec(0.0f64..1.0, 1..32), lambda in 0.0f64..0.5) {
        let g = Graph::new();
        let n = kl.len();
        let v = free_bits(g.leaf(Tensor::new(&[n], kl.clone()).unwrap()), lambda).item().unwrap();
        let expected: f64 = kl.iter().map(|k| k.max(lambda)).sum();
        prop_assert!((v - expected).abs() < 1e-12);
        prop_assert!(v >= n as f64 * lambda - 1e-12);
    }
}

#[test]
fn training_is_deterministic_and_finite() {
    let a = trained(6);
    let b = trained(6);
    assert_eq!(a.params.tensors(), b.params.tensors());
    assert!(a.sigma().iter().all(|s| s.is_finite() && *s > 0.0));
    assert_eq!(a.sigma().len(), N_TASKS);
}

#[test]
fn checkpoints_round_trip() {
    let tr = trained(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mpck");
    save_checkpoint(&tr, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.params.tensors(), tr.params.tensors());
    assert_eq!(back.train_cfg, tr.train_cfg);
    assert_eq!(back.state.step, tr.state.step);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'Z';
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn generation_is_seeded_and_valid() {
    let tr = trained(3);
    let ds = dataset();
    let gen = Generator::new(&tr.model, &tr.params, &tr.stats, &ds.header.heightmap).unwrap();
    let inputs: Vec<LinkInput> = ds.split(Split::Test).take(5).map(LinkInput::from).collect();
    let opts = GenerateOptions::default();
    let a = gen.generate(&inputs, 9, 0, &opts).unwrap();
    assert_eq!(a, gen.generate(&inputs, 9, 0, &opts).unwrap());
    assert_eq!(a.len(), inputs.len());
    for (g, i) in a.iter().zip(&inputs) {
        assert_eq!(g.link_id, i.link_id);
        if let Some(c) = &g.channel {
            c.check_invariants().unwrap();
            assert_eq!(c.capacity(), ds.header.max_paths);
            if opts.power_rescale {
                assert!((c.rx_power_db() - g.rx_power_db).abs() < 1e-6);
            }
        }
    }
    // Batching does not change results.
    let single = gen.generate(&inputs[..1], 9, 0, &GenerateOptions { batch: 1, ..opts }).unwrap();
    assert_eq!(single[0], a[0]);
}
