//! Reverse-mode gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tensor, Var};
use crate::error::{Error, Result};

/// Default probing step for unit-scale inputs.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub op: String,
    /// Worst relative error per argument.
    pub max_rel_error: Vec<f64>,
    pub max_abs_error: Vec<f64>,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() < tol
    }
}

/// Compare the reverse-mode gradient of `f` with central differences.
///
/// The output is reduced to a scalar through a fixed random projection
/// `L = <y, f(x)>`, so one reverse pass checks the full Jacobian against
/// `y`. An entry's relative error is `|analytic - numeric|` over the
/// larger of the two magnitudes, floored at 1e-3 of the argument's largest
/// numeric gradient so that entries which are zero up to round-off do not
/// dominate.
pub fn gradcheck<F>(
    name: &str,
    f: F,
    inputs: &[Tensor<f64>],
    step: f64,
    seed: u64,
) -> Result<GradcheckReport>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let non_finite = |what: &str| Error::invalid("gradcheck", format!("{name}: non-finite {what}"));

    let params: Vec<Var<f64>> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = Tensor::from_fn(out.shape(), |_| rng.gen_range(-1.0..1.0));
    let grads = out.backward_with(proj.clone())?;
    let analytic: Vec<Tensor<f64>> = params.iter().map(|p| grads.get_or_zero(p)).collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let vars: Vec<Var<f64>> = xs.iter().cloned().map(Var::constant).collect();
        let y = f(&vars)?;
        let l = y.value().dot(&proj);
        if l.is_finite() {
            Ok(l)
        } else {
            Err(non_finite("output while probing"))
        }
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel = Vec::with_capacity(inputs.len());
    let mut max_abs = Vec::with_capacity(inputs.len());
    for (arg, grad) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(grad.numel());
        for j in 0..grad.numel() {
            let orig = work[arg].data()[j];
            work[arg].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[arg].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[arg].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (1e-3 * scale).max(1e-12);
        let (mut rel, mut abs) = (0.0f64, 0.0f64);
        for (&a, &n) in grad.data().iter().zip(&numeric) {
            if !a.is_finite() {
                return Err(non_finite("analytic gradient"));
            }
            let d = (a - n).abs();
            abs = abs.max(d);
            rel = rel.max(d / a.abs().max(n.abs()).max(floor));
        }
        max_rel.push(rel);
        max_abs.push(abs);
    }
    Ok(GradcheckReport {
        op: name.to_string(),
        max_rel_error: max_rel,
        max_abs_error: max_abs,
    })
}

/// Uniform random tensor in `[lo, hi)`.
pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn detects_a_wrong_gradient() {
        // `scale` by 2 checked against a function that is really x * 3 in
        // the forward direction can only be caught if the checker works.
        let wrong = |xs: &[Var<f64>]| -> Result<Var<f64>> {
            let y = ops::scale(&xs[0], 2.0)?;
            let fwd = xs[0].value().map(|v| v * 3.0);
            Var::from_op("wrong", fwd, &[&y], |ctx| vec![Some(ctx.grad.clone())])
        };
        let x = Tensor::full([1, 1, 2, 2], 0.5);
        let r = gradcheck("wrong", wrong, &[x], FD_STEP, 1).unwrap();
        assert!(r.worst() > 0.1, "{r:?}");
    }

    #[test]
    fn sigmoid_passes_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, [1, 2, 3, 3], -2.0, 2.0);
        let r = gradcheck("sigmoid", |xs| ops::sigmoid(&xs[0]), &[x], FD_STEP, 4).unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }
}
