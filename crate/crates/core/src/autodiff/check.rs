use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` receives a fresh graph and the input placed on it as a parameter, and
/// must return a scalar node. Returns
/// `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
///
/// Functions with kinks (relu at 0, floors in bilinear sampling) only agree
/// away from the kink; callers choose points accordingly.
pub fn gradient_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let y = f(&mut g, x)?;
    let grads = g.backward(y)?;
    let analytic = grads.get_or_zeros(x, point);

    let eval = |p: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.param(p);
        let y = f(&mut g, x)?;
        g.value(y).item()
    };

    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = gradient_check(
            |g, x| {
                let y = g.mul(x, x)?;
                g.sum(y)
            },
            &Tensor::scalar(3.0),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let r = gradient_check(|g, x| g.sum(x), &Tensor::scalar(1.0), 0.0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
