//! Finite-difference gradient checks of the transformer blocks and the loss heads.
//!
//! cargo run --release --example autodiff_gradcheck

use mpcgen::model::{
    check_block_gradients, cosine_loss, gain_loss, masked_mse, presence_loss, scalar_loss, Attention, Builder,
    CrossLayer, EncoderLayer, LayerNorm, Linear, Mlp, ParamStore,
};
use mpcgen_autodiff::{check_gradients, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, t, m, d) = (2, 3, 4, 8);
    let mut store = ParamStore::default();
    let mut init = ChaCha8Rng::seed_from_u64(5);
    let mut bld = Builder::new(&mut store, &mut init);
    let linear = Linear::new(&mut bld, "linear", d, 5);
    let norm = LayerNorm::new(&mut bld, "norm", d);
    let mlp = Mlp::new(&mut bld, "mlp", d, 12, d);
    let attn = Attention::new(&mut bld, "attn", d, 2);
    let enc = EncoderLayer::new(&mut bld, "enc", d, 2, 16);
    let cross = CrossLayer::new(&mut bld, "cross", d, 2, 16);
    // Non-trivial LayerNorm gains so the check exercises them.
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }

    let x = random(&mut rng, &[b, t, d]);
    let mem = random(&mut rng, &[b, m, d]);
    let reports = [
        ("linear", check_block_gradients(&store, &[x.clone()], H, 1, |cx, v| linear.forward(cx, v[0]))?),
        ("layer norm", check_block_gradients(&store, &[x.clone()], H, 1, |cx, v| norm.forward(cx, v[0]))?),
        ("mlp", check_block_gradients(&store, &[x.clone()], H, 1, |cx, v| mlp.forward(cx, v[0]))?),
        (
            "attention",
            check_block_gradients(&store, &[x.clone(), mem.clone()], H, 1, |cx, v| attn.forward(cx, v[0], v[1]))?,
        ),
        ("encoder layer", check_block_gradients(&store, &[x.clone()], H, 1, |cx, v| enc.forward(cx, v[0]))?),
        (
            "cross layer",
            check_block_gradients(&store, &[x.clone(), mem.clone()], H, 1, |cx, v| cross.forward(cx, v[0], v[1]))?,
        ),
    ];
    for (name, r) in &reports {
        println!("{name:>14}: max rel error {:.2e} over {} entries", r.max_rel_error, r.checked);
    }

    let l = 4;
    let mask = Tensor::from_fn(&[b, l], |i| if i % l < 2 + i / l { 1.0 } else { 0.0 });
    let logits = random(&mut rng, &[b, l]);
    let scalar = random(&mut rng, &[b, 1]);
    let scalar_t = random(&mut rng, &[b, 1]);
    let delay = random(&mut rng, &[b, l]);
    let delay_t = random(&mut rng, &[b, l]);
    let vec3 = random(&mut rng, &[b, l, 3]);
    let vec3_t = random(&mut rng, &[b, l, 3]);
    let gain = random(&mut rng, &[b, l, 2]);
    let gain_t = random(&mut rng, &[b, l, 2]);
    let heads = [
        ("presence", check_gradients(|_, v| presence_loss(v[0], &mask), &[logits], H, 2)?),
        ("scalar", check_gradients(|_, v| scalar_loss(v[0], &scalar_t), &[scalar], H, 2)?),
        ("delay", check_gradients(|_, v| masked_mse(v[0], &delay_t, &mask), &[delay], H, 2)?),
        ("direction", check_gradients(|_, v| cosine_loss(v[0], &vec3_t, &mask), &[vec3], H, 2)?),
        ("gain", check_gradients(|_, v| gain_loss(v[0], &gain_t, &mask), &[gain], H, 2)?),
    ];
    for (name, r) in &heads {
        println!("{name:>14}: max rel error {:.2e}", r.max_rel_error);
    }
    Ok(())
}
