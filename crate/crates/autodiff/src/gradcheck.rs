//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{AutodiffError, Graph, Tensor, Var};

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest element-wise relative error over all inputs.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares backprop gradients of `f` against central differences.
///
/// The output of `f` may have any shape; it is reduced to a scalar by a
/// fixed random projection so every output element is exercised. The
/// relative error per element is `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn check_gradients<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    seed: u64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>, AutodiffError>,
{
    let eval = |xs: &[Tensor], proj: Option<&Tensor>| -> Result<(f64, Tensor), AutodiffError> {
        let g = Graph::lenient();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = f(&g, &vars)?;
        let shape = out.shape();
        let p = match proj {
            Some(p) => p.clone(),
            None => projection(&shape, seed),
        };
        let loss = out.mul(g.constant(p.clone()))?.sum();
        Ok((loss.item().unwrap_or(f64::NAN), p))
    };

    let g = Graph::lenient();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = f(&g, &vars)?;
    let proj = projection(&out.shape(), seed);
    let loss = out.mul(g.constant(proj.clone()))?.sum();
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut xs: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(*var).unwrap_or(&zeros).clone();
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let (fp, _) = eval(&xs, Some(&proj))?;
            xs[i].data_mut()[j] = orig - h;
            let (fm, _) = eval(&xs, Some(&proj))?;
            xs[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn projection(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}
