//! Reverse-mode gradients of a tiny MLP loss against central differences,
//! then the full built-in gradient suite.

use lada::autodiff::{Graph, Tensor};
use lada::verify::run_suite;

fn loss(w: &Tensor, x: &Tensor) -> f64 {
    let mut g = Graph::new();
    let w = g.constant(w.clone());
    let x = g.constant(x.clone());
    let h = g.matmul(x, w).unwrap();
    let ls = g.log_softmax(h).unwrap();
    let m = g.mean(ls).unwrap();
    g.value(m).item().unwrap()
}

fn main() -> lada::Result<()> {
    let x = Tensor::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.3, -0.7]])?;
    let w = Tensor::from_rows(&[[0.1, 0.2], [-0.3, 0.4], [0.5, -0.6]])?;

    let mut g = Graph::new();
    let wv = g.param(w.clone());
    let xv = g.constant(x.clone());
    let h = g.matmul(xv, wv)?;
    let ls = g.log_softmax(h)?;
    let m = g.mean(ls)?;
    let grads = g.backward(m)?;
    let analytic = grads.get_or_zeros(wv, &w);

    let eps = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..w.numel() {
        let (mut up, mut dn) = (w.clone(), w.clone());
        up.data_mut()[k] += eps;
        dn.data_mut()[k] -= eps;
        let fd = (loss(&up, &x) - loss(&dn, &x)) / (2.0 * eps);
        worst = worst.max((fd - analytic.data()[k]).abs());
    }
    println!("mlp weights: max |analytic - fd| = {worst:.2e}");

    let report = run_suite("grad", 0)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(())
}
