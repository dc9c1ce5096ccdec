//! Symmetric `Beta(τ, τ)` machinery for mixing weights.
//!
//! Sampling goes through a pair of log-space gamma draws, so concentrations
//! far below one still produce usable weights. The CDF is the regularized
//! incomplete beta function evaluated by a Lentz continued fraction. The
//! pathwise derivative of a sample with respect to its concentration comes
//! from differentiating `F(λ; τ) = u` at fixed `u`:
//!
//! ```text
//! dλ/dτ = -(∂F/∂τ)(λ; τ) / f(λ; τ)
//! ```
//!
//! where `∂F/∂τ` moves both shape slots together.

use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible concentration.
pub const TAU_FLOOR: f64 = 1e-3;
/// Samples are clamped to `[LAMBDA_MIN, 1 - LAMBDA_MIN]`.
pub const LAMBDA_MIN: f64 = 1e-9;
/// Bound on `|dλ/dτ|` before the gradient is reported as clamped.
pub const GRAD_LIMIT: f64 = 1e4;

const CF_MAX_ITER: usize = 2000;
const CF_EPS: f64 = 1e-15;
const INV_MAX_ITER: usize = 300;

/// One mixing weight together with the uniform that generated it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixWeight {
    pub lambda: f64,
    pub u: f64,
    pub tau: f64,
}

/// `dλ/dτ` for one sample. `clamped` is set when the density underflowed or
/// the raw value exceeded [`GRAD_LIMIT`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImplicitGrad {
    pub value: f64,
    pub clamped: bool,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= TAU_FLOOR) || !tau.is_finite() {
        return Err(Error::contract(format!(
            "concentration {tau} below floor {TAU_FLOOR}"
        )));
    }
    Ok(())
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::contract(format!("{name} = {v} outside (0, 1)")));
    }
    Ok(())
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::contract(format!("shape parameters ({a}, {b}) must be positive")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::contract(format!("x = {x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        Ok(1.0 - inc_beta_cf(1.0 - x, b, a)?)
    } else {
        inc_beta_cf(x, a, b)
    }
}

fn inc_beta_cf(x: f64, a: f64, b: f64) -> Result<f64> {
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let front = ln_front.exp() / a;

    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            return Ok((front * h).clamp(0.0, 1.0));
        }
    }
    Err(Error::numeric(
        "inc_beta",
        format!("continued fraction did not converge for x={x}, a={a}, b={b}"),
    ))
}

/// `F(λ; τ, τ)`.
pub fn beta_cdf(lambda: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("λ = {lambda} outside [0, 1]")));
    }
    if lambda == 0.5 {
        return Ok(0.5);
    }
    if lambda > 0.5 {
        return Ok(1.0 - inc_beta(1.0 - lambda, tau, tau)?);
    }
    inc_beta(lambda, tau, tau)
}

/// Density of `Beta(τ, τ)` at `λ ∈ (0, 1)`.
pub fn beta_pdf(lambda: f64, tau: f64) -> f64 {
    let lb = 2.0 * ln_gamma(tau) - ln_gamma(2.0 * tau);
    ((tau - 1.0) * (lambda.ln() + (1.0 - lambda).ln()) - lb).exp()
}

/// `F⁻¹(u; τ, τ)` by Newton steps safeguarded with (log-space) bisection.
///
/// Results are confined to `[LAMBDA_MIN, 1 - LAMBDA_MIN]`; for `u` whose exact
/// quantile falls outside that interval, the nearest bound is returned.
pub fn beta_inv_cdf(u: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_open_unit("u", u)?;
    if u == 0.5 {
        return Ok(0.5);
    }
    if u > 0.5 {
        return Ok(1.0 - inv_lower_half(1.0 - u, tau)?);
    }
    inv_lower_half(u, tau)
}

fn inv_lower_half(u: f64, tau: f64) -> Result<f64> {
    let mut lo = LAMBDA_MIN;
    let mut hi = 0.5;
    if beta_cdf(lo, tau)? >= u {
        return Ok(lo);
    }
    let lb = 2.0 * ln_gamma(tau) - ln_gamma(2.0 * tau);
    // Small-λ asymptote F(λ) ≈ λ^τ / (τ B(τ, τ)) as the starting point.
    let mut x = ((u.ln() + tau.ln() + lb) / tau).exp();
    if !(x > lo && x < hi) {
        x = (lo * hi).sqrt();
    }
    let mut best = (f64::INFINITY, x);
    for _ in 0..INV_MAX_ITER {
        let fx = beta_cdf(x, tau)? - u;
        if fx.abs() < best.0 {
            best = (fx.abs(), x);
        }
        if fx.abs() <= 1e-15 * u.max(1e-300) || fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x {
            return Ok(x);
        }
        let step = x - fx / beta_pdf(x, tau);
        x = if step.is_finite() && step > lo && step < hi {
            step
        } else if hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
    }
    if best.0 < 1e-9 {
        return Ok(best.1);
    }
    Err(Error::numeric(
        "beta_inv_cdf",
        format!("no convergence for u={u}, τ={tau} (residual {})", best.0),
    ))
}

/// `ln G` for `G ~ Gamma(shape, 1)` by Marsaglia–Tsang, boosted below one.
fn ln_gamma_sample(shape: f64, rng: &mut impl rand::Rng) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        return ln_gamma_sample(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * z;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        if u.ln() < 0.5 * z * z + d - d * v + d * v.ln() {
            return (d * v).ln();
        }
    }
}

/// Draws `λ ~ Beta(τ, τ)` and records `u = F(λ)`.
pub fn beta_sample(tau: f64, rng: &mut impl rand::Rng) -> Result<MixWeight> {
    check_tau(tau)?;
    let g1 = ln_gamma_sample(tau, rng);
    let g2 = ln_gamma_sample(tau, rng);
    // λ = G1 / (G1 + G2) = sigmoid(ln G1 - ln G2)
    let lambda = crate::autodiff::sigmoid(g1 - g2).clamp(LAMBDA_MIN, 1.0 - LAMBDA_MIN);
    let u = beta_cdf(lambda, tau)?;
    Ok(MixWeight { lambda, u, tau })
}

/// Pathwise derivative `dλ/dτ` of a `Beta(τ, τ)` sample at fixed uniform.
///
/// `∂F/∂τ` is a central difference on [`beta_cdf`] with step
/// `max(1e-5, 1e-4·τ)`.
pub fn beta_sample_grad(lambda: f64, tau: f64) -> Result<ImplicitGrad> {
    check_tau(tau)?;
    check_open_unit("λ", lambda)?;
    if lambda == 0.5 {
        return Ok(ImplicitGrad {
            value: 0.0,
            clamped: false,
        });
    }
    if lambda > 0.5 {
        let g = beta_sample_grad(1.0 - lambda, tau)?;
        return Ok(ImplicitGrad {
            value: -g.value,
            clamped: g.clamped,
        });
    }
    let h = (1e-4 * tau).max(1e-5);
    let t_lo = (tau - h).max(f64::MIN_POSITIVE);
    let t_hi = tau + h;
    let f_hi = inc_beta(lambda, t_hi, t_hi)?;
    let f_lo = inc_beta(lambda, t_lo, t_lo)?;
    let dfdtau = (f_hi - f_lo) / (t_hi - t_lo);
    let density = beta_pdf(lambda, tau);
    let raw = -dfdtau / density;
    if !density.is_finite() || density < 1e-300 || !raw.is_finite() {
        return Ok(ImplicitGrad {
            value: 0.0,
            clamped: true,
        });
    }
    if raw.abs() > GRAD_LIMIT {
        return Ok(ImplicitGrad {
            value: raw.signum() * GRAD_LIMIT,
            clamped: true,
        });
    }
    Ok(ImplicitGrad {
        value: raw,
        clamped: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn cdf_is_half_at_midpoint() {
        for tau in [TAU_FLOOR, 0.2, 1.0, 3.7, 50.0] {
            assert_eq!(beta_cdf(0.5, tau).unwrap(), 0.5);
        }
    }

    #[test]
    fn uniform_case() {
        assert!((beta_cdf(0.25, 1.0).unwrap() - 0.25).abs() < 1e-14);
        assert!((beta_inv_cdf(0.8, 1.0).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn cdf_matches_closed_form_for_tau_two() {
        // Beta(2,2): F(x) = 3x² - 2x³
        for x in [0.01, 0.1, 0.3, 0.7, 0.95] {
            let exact = 3.0 * x * x - 2.0 * x * x * x;
            assert!((beta_cdf(x, 2.0).unwrap() - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn tau_below_floor_is_rejected() {
        let mut rng = stream(0, 0, Purpose::Virtual, 0);
        assert!(matches!(beta_sample(1e-4, &mut rng), Err(Error::Contract(_))));
        assert!(matches!(beta_cdf(0.3, 0.0), Err(Error::Contract(_))));
        assert!(matches!(beta_sample_grad(0.3, 1e-5), Err(Error::Contract(_))));
    }

    #[test]
    fn samples_stay_inside_clamp() {
        let mut rng = stream(3, 0, Purpose::Virtual, 0);
        for _ in 0..2000 {
            let w = beta_sample(TAU_FLOOR, &mut rng).unwrap();
            assert!(w.lambda >= LAMBDA_MIN && w.lambda <= 1.0 - LAMBDA_MIN);
            assert!((0.0..=1.0).contains(&w.u));
        }
    }

    #[test]
    fn gradient_vanishes_at_midpoint() {
        for tau in [0.2, 1.0, 5.0] {
            assert_eq!(beta_sample_grad(0.5, tau).unwrap().value, 0.0);
        }
    }

    #[test]
    fn gradient_is_antisymmetric() {
        let a = beta_sample_grad(0.2, 1.7).unwrap().value;
        let b = beta_sample_grad(0.8, 1.7).unwrap().value;
        assert!((a + b).abs() < 1e-12);
    }
}
