//! Central-difference gradient checking in 64-bit precision.

use crate::autograd::{Engine, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-4;
pub const MAX_HALVINGS: u32 = 12;

/// Where the worst disagreement between analytic and numeric gradients was found.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares analytic gradients of a scalar function against central
/// differences, perturbing every element of every input.
///
/// `f` builds the graph from the given input values and returns the scalar
/// loss plus one variable per input (in input order) whose gradient is
/// checked. Relative error per element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// A central difference is only meaningful when `x - eps`, `x` and `x + eps`
/// lie in the same smooth piece of a piecewise-smooth function. When the
/// stencil flips a PReLU input or an L1 residual across zero (see
/// [`Graph::kink_pattern`]) the step is halved, up to [`MAX_HALVINGS`] times.
pub fn finite_diff_check<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Tensor<f64>]) -> Result<(Var, Vec<Var>)>,
{
    if eps <= 0.0 {
        return Err(Error::contract("finite_diff_check", "eps must be positive"));
    }
    let mut g = Graph::new();
    let (loss, vars) = f(&mut g, inputs)?;
    if vars.len() != inputs.len() {
        return Err(Error::contract(
            "finite_diff_check",
            format!("{} vars returned for {} inputs", vars.len(), inputs.len()),
        ));
    }
    let grads = g.backward(loss)?;
    let base_pattern = g.kink_pattern();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(g);

    let eval = |values: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let (loss, _) = f(&mut g, values)?;
        Ok((g.value(&loss).data()[0], g.kink_pattern()))
    };

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        input: 0,
        element: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.len() {
            let orig = t.data()[ei];
            let mut step = eps;
            let mut numeric;
            let mut halvings = 0;
            loop {
                work[ti].data_mut()[ei] = orig + step;
                let (plus, pp) = eval(&work)?;
                work[ti].data_mut()[ei] = orig - step;
                let (minus, pm) = eval(&work)?;
                numeric = (plus - minus) / (2.0 * step);
                if (pp == base_pattern && pm == base_pattern) || halvings == MAX_HALVINGS {
                    break;
                }
                step *= 0.5;
                halvings += 1;
            }
            work[ti].data_mut()[ei] = orig;

            let a = analytic[ti].data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst.max_rel_error || rel.is_nan() {
                worst = GradCheck {
                    max_rel_error: rel,
                    input: ti,
                    element: ei,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(worst)
}
