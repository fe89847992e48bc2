//! Finite-difference checks of parameterized blocks.

use mpcgen_autodiff::{check_gradients, AutodiffError, GradCheckReport, Tensor, Var};

use super::layers::Ctx;
use super::params::ParamStore;

/// Checks gradients with respect to both `inputs` and every tensor of `params`.
///
/// `f` receives an inference context bound to the parameters and the input
/// variables in order.
pub fn check_block_gradients<F>(
    params: &ParamStore,
    inputs: &[Tensor],
    h: f64,
    seed: u64,
    f: F,
) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'g> Fn(&Ctx<'g>, &[Var<'g>]) -> Result<Var<'g>, AutodiffError>,
{
    let n_in = inputs.len();
    let all: Vec<Tensor> = inputs.iter().chain(params.tensors()).cloned().collect();
    check_gradients(
        |g, v| {
            let cx = Ctx::eval(g, v[n_in..].to_vec());
            f(&cx, &v[..n_in])
        },
        &all,
        h,
        seed,
    )
}
