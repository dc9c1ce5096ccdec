//! Symmetric Beta(τ, τ) draws, their moments, and the implicit gradient dλ/dτ.

use lada::beta::{beta_cdf, beta_inv_cdf, beta_sample, beta_sample_grad};
use lada::rng::{stream, Purpose};

fn main() -> lada::Result<()> {
    let mut rng = stream(0, 0, Purpose::Score, 0);
    println!("{:>6} {:>10} {:>10} {:>10}", "tau", "mean", "var", "exact var");
    for tau in [0.1, 0.5, 1.0, 2.0, 8.0] {
        let xs: Vec<f64> = (0..50_000)
            .map(|_| beta_sample(tau, &mut rng).map(|w| w.lambda))
            .collect::<lada::Result<_>>()?;
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        println!("{tau:>6} {mean:>10.4} {var:>10.5} {:>10.5}", 1.0 / (4.0 * (2.0 * tau + 1.0)));
    }

    // Raising τ pulls λ toward 0.5 at a fixed quantile.
    let tau = 2.0;
    for u in [0.1, 0.5, 0.9] {
        let lam = beta_inv_cdf(u, tau)?;
        let g = beta_sample_grad(lam, tau)?;
        println!("u={u} λ={lam:.5} F(λ)={:.5} dλ/dτ={:+.5}", beta_cdf(lam, tau)?, g.value);
    }
    Ok(())
}
