//! Transformer building blocks over the autodiff graph.

use std::cell::RefCell;

use mpcgen_autodiff::{AutodiffError, Graph, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::Builder;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Parameters bound to one graph plus the dropout state of a forward pass.
pub struct Ctx<'g> {
    pub g: &'g Graph,
    pub p: Vec<Var<'g>>,
    dropout: Option<(f64, RefCell<ChaCha8Rng>)>,
}

impl<'g> Ctx<'g> {
    /// Inference context: dropout disabled.
    pub fn eval(g: &'g Graph, p: Vec<Var<'g>>) -> Self {
        Self { g, p, dropout: None }
    }

    /// Training context with dropout masks drawn from `seed`.
    pub fn train(g: &'g Graph, p: Vec<Var<'g>>, rate: f64, seed: u64) -> Self {
        let dropout = (rate > 0.0).then(|| (rate, RefCell::new(ChaCha8Rng::seed_from_u64(seed))));
        Self { g, p, dropout }
    }

    pub fn training(&self) -> bool {
        self.dropout.is_some()
    }

    /// Inverted dropout.
    pub fn dropout(&self, x: Var<'g>) -> Result<Var<'g>> {
        let Some((rate, rng)) = &self.dropout else {
            return Ok(x);
        };
        let keep = 1.0 - rate;
        let mut rng = rng.borrow_mut();
        let mask = Tensor::from_fn(&x.shape(), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        x.mul_const(mask)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, d_in: usize, d_out: usize) -> Self {
        b.scoped(name, |b| Self {
            w: b.xavier("w", d_in, d_out),
            b: b.constant("b", &[d_out], 0.0),
        })
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.matmul(cx.p[self.w])?.add(cx.p[self.b])
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: usize,
    bias: usize,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, name: &str, d: usize) -> Self {
        b.scoped(name, |b| Self {
            gain: b.constant("gain", &[d], 1.0),
            bias: b.constant("bias", &[d], 0.0),
        })
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.layer_norm().mul(cx.p[self.gain])?.add(cx.p[self.bias])
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(b: &mut Builder, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        b.scoped(name, |b| Self {
            l1: Linear::new(b, "l1", d_in, hidden),
            l2: Linear::new(b, "l2", hidden, d_out),
        })
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.l1.forward(cx, x)?.gelu();
        self.l2.forward(cx, h)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(b: &mut Builder, name: &str, d: usize, heads: usize) -> Self {
        b.scoped(name, |b| Self {
            q: Linear::new(b, "q", d, d),
            k: Linear::new(b, "k", d, d),
            v: Linear::new(b, "v", d, d),
            o: Linear::new(b, "o", d, d),
            heads,
        })
    }

    /// `x: [B, Tq, d]`, `mem: [B, Tk, d]` -> `[B, Tq, d]`.
    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>, mem: Var<'g>) -> Result<Var<'g>> {
        let xs = x.shape();
        let ms = mem.shape();
        let (b, tq, d) = (xs[0], xs[1], xs[2]);
        let tk = ms[1];
        let h = self.heads;
        let dh = d / h;
        let split = |v: Var<'g>, t: usize| -> Result<Var<'g>> {
            v.reshape(&[b, t, h, dh])?.permute(&[0, 2, 1, 3])
        };
        let q = split(self.q.forward(cx, x)?, tq)?;
        let k = split(self.k.forward(cx, mem)?, tk)?.transpose()?;
        let v = split(self.v.forward(cx, mem)?, tk)?;
        let att = q.matmul(k)?.scale(1.0 / (dh as f64).sqrt()).softmax();
        let out = att.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, tq, d])?;
        self.o.forward(cx, out)
    }
}

/// Pre-norm self-attention block.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    ln1: LayerNorm,
    att: Attention,
    ln2: LayerNorm,
    ffn: Mlp,
}

impl EncoderLayer {
    pub fn new(b: &mut Builder, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        b.scoped(name, |b| Self {
            ln1: LayerNorm::new(b, "ln1", d),
            att: Attention::new(b, "att", d, heads),
            ln2: LayerNorm::new(b, "ln2", d),
            ffn: Mlp::new(b, "ffn", d, ffn, d),
        })
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.ln1.forward(cx, x)?;
        let x = x.add(cx.dropout(self.att.forward(cx, h, h)?)?)?;
        let h = self.ln2.forward(cx, x)?;
        x.add(cx.dropout(self.ffn.forward(cx, h)?)?)
    }
}

/// Pre-norm block with self-attention, cross-attention to a memory, and a feed-forward.
#[derive(Debug, Clone)]
pub struct CrossLayer {
    ln1: LayerNorm,
    self_att: Attention,
    ln2: LayerNorm,
    cross_att: Attention,
    ln3: LayerNorm,
    ffn: Mlp,
}

impl CrossLayer {
    pub fn new(b: &mut Builder, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        b.scoped(name, |b| Self {
            ln1: LayerNorm::new(b, "ln1", d),
            self_att: Attention::new(b, "self", d, heads),
            ln2: LayerNorm::new(b, "ln2", d),
            cross_att: Attention::new(b, "cross", d, heads),
            ln3: LayerNorm::new(b, "ln3", d),
            ffn: Mlp::new(b, "ffn", d, ffn, d),
        })
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>, mem: Var<'g>) -> Result<Var<'g>> {
        let h = self.ln1.forward(cx, x)?;
        let x = x.add(cx.dropout(self.self_att.forward(cx, h, h)?)?)?;
        let h = self.ln2.forward(cx, x)?;
        let x = x.add(cx.dropout(self.cross_att.forward(cx, h, mem)?)?)?;
        let h = self.ln3.forward(cx, x)?;
        x.add(cx.dropout(self.ffn.forward(cx, h)?)?)
    }
}

/// Sinusoidal position table `[n, d]`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[n, d], |i| {
        let (pos, j) = (i / d, i % d);
        let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        let a = pos as f64 * freq;
        if j % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}
