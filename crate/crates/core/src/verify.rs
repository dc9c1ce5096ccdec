//! Oracle suites behind `lada verify`: finite-difference gradients, Beta
//! sampling and its pathwise derivative, exhaustive selection, and the
//! policy objective on a one-dimensional toy with a quadrature reference.

use std::time::Instant;

use rand::Rng as _;
use serde::Serialize;

use crate::acquisition::{select_top_pairs, BaseScore, PairCandidate};
use crate::autodiff::{gradient_check, Graph, Tensor, Var};
use crate::beta::{beta_cdf, beta_inv_cdf, beta_sample, beta_sample_grad, ln_beta};
use crate::classifier::MlpClassifier;
use crate::error::{Error, Result};
use crate::policy::{policy_loss_grad, train_policy, PolicyGenerator, PolicyOptimizer, PolicyTraining};
use crate::rng::{stream, Purpose, Rng};
use crate::stn::{graph_warp, AffineParams, ImageShape};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub elapsed_ms: u64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

pub const SUITES: [&str; 4] = ["grad", "beta", "selection", "policy"];

pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match name {
        "grad" => grad_suite(seed, 1000, 100)?,
        "beta" => beta_suite(seed, 100_000)?,
        "selection" => selection_suite(seed, 100)?,
        "policy" => policy_suite(seed)?,
        other => {
            return Err(Error::Config(format!(
                "unknown suite {other:?}; expected one of {}",
                SUITES.join(", ")
            )))
        }
    };
    Ok(SuiteReport {
        suite: name.into(),
        checks,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

// ---------------------------------------------------------------- gradients

fn rand_tensor(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let d = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(vec![rows, cols], d).expect("shape")
}

/// Values away from 0 so relu kinks stay out of finite-difference reach.
fn away_from_zero(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let d = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(vec![rows, cols], d).expect("shape")
}

/// Projects a node onto a fixed random direction so every output entry
/// influences the scalar.
fn project(g: &mut Graph, y: Var, rng: &mut Rng) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let r = rand_tensor(rng, shape[0], shape[1], -1.0, 1.0);
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    g.sum(p)
}

/// Runs one randomized case of op family `case % 18`; returns its error.
fn grad_case(case: usize, rng: &mut Rng) -> Result<(String, f64)> {
    let n = rng.random_range(1..4);
    let m = rng.random_range(1..5);
    let k = rng.random_range(1..4);
    let seed: u64 = rng.random();
    let dir = move || stream(seed, 0, Purpose::Score, 0);
    let h = 1e-6;
    let (name, point, err) = match case % 18 {
        0 => {
            let b = rand_tensor(rng, m, k, -1.0, 1.0);
            let p = rand_tensor(rng, n, m, -1.0, 1.0);
            let e = gradient_check(|g, x| { let b = g.constant(b.clone()); let y = g.matmul(x, b)?; project(g, y, &mut dir()) }, &p, h)?;
            ("matmul_lhs", p, e)
        }
        1 => {
            let a = rand_tensor(rng, n, m, -1.0, 1.0);
            let p = rand_tensor(rng, m, k, -1.0, 1.0);
            let e = gradient_check(|g, w| { let a = g.constant(a.clone()); let y = g.matmul(a, w)?; project(g, y, &mut dir()) }, &p, h)?;
            ("matmul_rhs", p, e)
        }
        2 => {
            let a = rand_tensor(rng, n, m, -1.0, 1.0);
            let p = rand_tensor(rng, 1, m, -1.0, 1.0);
            let e = gradient_check(|g, b| { let a = g.constant(a.clone()); let y = g.add_bias(a, b)?; project(g, y, &mut dir()) }, &p, h)?;
            ("add_bias", p, e)
        }
        3 => {
            let p = away_from_zero(rng, n, m);
            let e = gradient_check(|g, x| { let y = g.relu(x)?; project(g, y, &mut dir()) }, &p, h)?;
            ("relu", p, e)
        }
        4 => {
            let p = rand_tensor(rng, n, m + 1, -2.0, 2.0);
            let e = gradient_check(|g, x| { let y = g.softmax(x)?; project(g, y, &mut dir()) }, &p, h)?;
            ("softmax", p, e)
        }
        5 => {
            let p = rand_tensor(rng, n, m + 1, -2.0, 2.0);
            let e = gradient_check(|g, x| { let y = g.log_softmax(x)?; project(g, y, &mut dir()) }, &p, h)?;
            ("log_softmax", p, e)
        }
        6 => {
            let p = rand_tensor(rng, n, m, 0.2, 3.0);
            let e = gradient_check(|g, x| { let y = g.log(x)?; project(g, y, &mut dir()) }, &p, h)?;
            ("log", p, e)
        }
        7 => {
            let p = rand_tensor(rng, n, m, -3.0, 3.0);
            let e = gradient_check(|g, x| { let y = g.softplus(x)?; project(g, y, &mut dir()) }, &p, h)?;
            ("softplus", p, e)
        }
        8 => {
            let b = rand_tensor(rng, n, m, -1.0, 1.0);
            let p = rand_tensor(rng, n, m, -1.0, 1.0);
            let e = gradient_check(|g, x| { let b = g.constant(b.clone()); let y = g.mul(x, b)?; let y = g.mul(y, x)?; project(g, y, &mut dir()) }, &p, h)?;
            ("mul", p, e)
        }
        9 => {
            let a = rand_tensor(rng, n, m, -1.0, 1.0);
            let p = rand_tensor(rng, n, 1, -1.0, 1.0);
            let e = gradient_check(|g, c| { let a = g.constant(a.clone()); let y = g.mul_col(a, c)?; project(g, y, &mut dir()) }, &p, h)?;
            ("mul_col", p, e)
        }
        10 => {
            let b = rand_tensor(rng, n, m, -1.0, 1.0);
            let p = rand_tensor(rng, n, m, -1.0, 1.0);
            let e = gradient_check(|g, x| { let b = g.constant(b.clone()); let y = g.add(x, b)?; let y = g.sub(y, x)?; let y = g.add(y, x)?; project(g, y, &mut dir()) }, &p, h)?;
            ("add_sub", p, e)
        }
        11 => {
            let p = rand_tensor(rng, n, m, -1.0, 1.0);
            let s = rng.random_range(-3.0..3.0);
            let e = gradient_check(|g, x| { let y = g.scale(x, s)?; project(g, y, &mut dir()) }, &p, h)?;
            ("scale", p, e)
        }
        12 => {
            let b = rand_tensor(rng, n, k, -1.0, 1.0);
            let p = rand_tensor(rng, n, m, -1.0, 1.0);
            let e = gradient_check(|g, x| { let b = g.constant(b.clone()); let y = g.concat(&[x, b, x])?; project(g, y, &mut dir()) }, &p, h)?;
            ("concat", p, e)
        }
        13 => {
            let p = rand_tensor(rng, n, m, -1.0, 1.0);
            let e = gradient_check(|g, x| { let y = g.sum_rows(x)?; project(g, y, &mut dir()) }, &p, h)?;
            ("sum_rows", p, e)
        }
        14 => {
            let p = rand_tensor(rng, n, m, -1.0, 1.0);
            let e = gradient_check(|g, x| { let y = g.mul(x, x)?; g.mean(y) }, &p, h)?;
            ("mean", p, e)
        }
        15 => {
            let p = rand_tensor(rng, n, m + 1, -2.0, 2.0);
            let e = gradient_check(|g, x| { let y = g.entropy_from_logits(x)?; project(g, y, &mut dir()) }, &p, h)?;
            ("softmax_entropy", p, e)
        }
        16 => {
            // Two-layer relu net, gradient w.r.t. the first weight matrix;
            // the hidden pre-activations are kept away from 0.
            let x = rand_tensor(rng, n, m, -1.0, 1.0);
            let w2 = rand_tensor(rng, k, 3, -1.0, 1.0);
            let mut p = rand_tensor(rng, m, k, -1.0, 1.0);
            for _ in 0..50 {
                let z = x.matmul(&p)?;
                if z.data().iter().all(|v| v.abs() > 1e-3) {
                    break;
                }
                p = rand_tensor(rng, m, k, -1.0, 1.0);
            }
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let e = gradient_check(
                |g, w1| {
                    let xv = g.constant(x.clone());
                    let z = g.matmul(xv, w1)?;
                    let hdn = g.relu(z)?;
                    let w2v = g.constant(w2.clone());
                    let logits = g.matmul(hdn, w2v)?;
                    let lp = g.log_softmax(logits)?;
                    let mut t = vec![0.0; n * 3];
                    for (r, &c) in y.iter().enumerate() {
                        t[r * 3 + c] = 1.0;
                    }
                    let t = g.constant(Tensor::new(vec![n, 3], t)?);
                    let l = g.mul(lp, t)?;
                    let s = g.sum(l)?;
                    g.scale(s, -1.0)
                },
                &p,
                h,
            )?;
            ("mlp_ce", p, e)
        }
        _ => {
            // Classifier mixing path: soft CE of a hidden-layer mix w.r.t. λ.
            let mut crng = stream(seed, 0, Purpose::Init, 0);
            let clf = MlpClassifier::new(&[m + 1, 4, 3], 0.0, &mut crng)?;
            let hi = rand_tensor(rng, n, 4, 0.1, 1.0);
            let hj = rand_tensor(rng, n, 4, 0.1, 1.0);
            let p = rand_tensor(rng, n, 1, 0.1, 0.9);
            let e = gradient_check(
                |g, lam| {
                    let params = clf.bind(g, false);
                    let a = g.constant(hi.clone());
                    let b = g.constant(hj.clone());
                    let d = g.sub(a, b)?;
                    let s = g.mul_col(d, lam)?;
                    let hm = g.add(b, s)?;
                    let logits = clf.graph_range(g, &params, hm, 1, 2, crate::classifier::Dropout::Off)?;
                    let ent = g.entropy_from_logits(logits)?;
                    g.sum(ent)
                },
                &p,
                h,
            )?;
            ("mixed_forward", p, e)
        }
    };
    let _ = point;
    Ok((name.to_string(), err))
}

/// True when every sampled source coordinate of `theta` is at least `gap`
/// from a pixel boundary, where bilinear weights have kinks.
fn warp_clear_of_kinks(shape: ImageShape, theta: &[f64; 6], gap: f64) -> bool {
    let (h, w) = (shape.height as f64, shape.width as f64);
    for r in 0..shape.height {
        for c in 0..shape.width {
            let xn = (2 * c + 1) as f64 / w - 1.0;
            let yn = (2 * r + 1) as f64 / h - 1.0;
            let px = ((theta[0] * xn + theta[1] * yn + theta[2] + 1.0) * w - 1.0) / 2.0;
            let py = ((theta[3] * xn + theta[4] * yn + theta[5] + 1.0) * h - 1.0) / 2.0;
            if (px - px.round()).abs() < gap || (py - py.round()).abs() < gap {
                return false;
            }
        }
    }
    true
}

/// `trials` op cases plus `warps` random warp cases.
pub fn grad_suite(seed: u64, trials: usize, warps: usize) -> Result<Vec<Check>> {
    let mut rng = stream(seed, 0, Purpose::Score, 1);
    let mut worst = (String::new(), 0.0f64);
    let mut failures = 0;
    for case in 0..trials {
        let (name, err) = grad_case(case, &mut rng)?;
        if err >= 1e-5 {
            failures += 1;
        }
        if err > worst.1 {
            worst = (name, err);
        }
    }
    let mut out = vec![check(
        "ops_and_nets",
        failures == 0,
        format!("{trials} cases, {failures} above 1e-5, worst {:.3e} ({})", worst.1, worst.0),
    )];

    let mut worst_w = 0.0f64;
    let mut done = 0;
    while done < warps {
        let hgt = rng.random_range(2..7);
        let wid = rng.random_range(2..7);
        let shape = ImageShape::new(hgt, wid)?;
        let theta = AffineParams::random_small(0.4, &mut rng);
        if !warp_clear_of_kinks(shape, &theta.0, 1e-3) {
            continue;
        }
        let img = rand_tensor(&mut rng, 2, shape.pixels(), 0.0, 1.0);
        let th2 = Tensor::from_rows(&[theta.0, AffineParams::random_small(0.05, &mut rng).0])?;
        if !warp_clear_of_kinks(shape, th2.row_slice(1).try_into().expect("6"), 1e-3) {
            continue;
        }
        let s: u64 = rng.random();
        let e_theta = gradient_check(
            |g, t| {
                let x = g.constant(img.clone());
                let y = graph_warp(g, x, t, shape)?;
                project(g, y, &mut stream(s, 0, Purpose::Stn, 0))
            },
            &th2,
            1e-6,
        )?;
        let e_img = gradient_check(
            |g, x| {
                let t = g.constant(th2.clone());
                let y = graph_warp(g, x, t, shape)?;
                g.mean(y)
            },
            &img,
            1e-6,
        )?;
        worst_w = worst_w.max(e_theta).max(e_img);
        done += 1;
    }
    out.push(check(
        "bilinear_warp",
        worst_w < 1e-4,
        format!("{warps} (image, θ) draws, worst {worst_w:.3e}"),
    ));
    Ok(out)
}

// ------------------------------------------------------------------- beta

/// Kolmogorov–Smirnov distance between `n` samples and `beta_cdf`.
pub fn ks_statistic(tau: f64, n: usize, rng: &mut Rng) -> Result<f64> {
    let mut s: Vec<f64> = (0..n)
        .map(|_| beta_sample(tau, rng).map(|w| w.lambda))
        .collect::<Result<_>>()?;
    s.sort_by(f64::total_cmp);
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = beta_cdf(x, tau)?;
        d = d.max((i + 1) as f64 / n as f64 - f).max(f - i as f64 / n as f64);
    }
    Ok(d)
}

/// `(F⁻¹(u; τ+h) − F⁻¹(u; τ−h)) / 2h`.
pub fn inverse_cdf_derivative(u: f64, tau: f64) -> Result<f64> {
    let h = 1e-4 * tau;
    Ok((beta_inv_cdf(u, tau + h)? - beta_inv_cdf(u, tau - h)?) / (2.0 * h))
}

pub fn beta_suite(seed: u64, n: usize) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (i, tau) in [0.2, 1.0, 2.0, 5.0].into_iter().enumerate() {
        let mut rng = stream(seed, 0, Purpose::Score, 100 + i as u64);
        let d = ks_statistic(tau, n, &mut rng)?;
        out.push(check(&format!("ks_tau_{tau}"), d < 0.01, format!("D = {d:.5} at n = {n}")));
    }
    let mut worst = 0.0f64;
    let mut worst_at = (0.0, 0.0);
    let mut sign_ok = true;
    for &tau in &[0.2, 0.5, 1.0, 2.0, 5.0, 10.0] {
        for q in 1..20 {
            let u = q as f64 / 20.0;
            if q == 10 {
                continue;
            }
            let lam = beta_inv_cdf(u, tau)?;
            let g = beta_sample_grad(lam, tau)?.value;
            let fd = inverse_cdf_derivative(u, tau)?;
            let rel = (g - fd).abs() / fd.abs().max(1e-12);
            if rel > worst {
                worst = rel;
                worst_at = (u, tau);
            }
            sign_ok &= if u > 0.5 { g < 0.0 } else { g > 0.0 };
        }
    }
    out.push(check(
        "implicit_vs_inverse_cdf",
        worst < 1e-3,
        format!("worst rel. err {worst:.3e} at (u, τ) = {worst_at:?}"),
    ));
    out.push(check("sign_above_half_negative", sign_ok, "dλ/dτ < 0 for u > 0.5".into()));
    let mut mid = 0.0f64;
    for &tau in &[0.01, 0.2, 1.0, 3.0, 40.0] {
        mid = mid.max(beta_sample_grad(beta_inv_cdf(0.5, tau)?, tau)?.value.abs());
    }
    out.push(check("zero_at_median", mid < 1e-6, format!("max |dλ/dτ| at u = 0.5: {mid:.1e}")));

    // d/dτ E[λ²] = -1 / (2 (2τ+1)²) for symmetric Beta.
    let tau = 1.5;
    let mut rng = stream(seed, 0, Purpose::Score, 200);
    let vals: Vec<f64> = (0..n)
        .map(|_| {
            let w = beta_sample(tau, &mut rng)?;
            Ok(2.0 * w.lambda * beta_sample_grad(w.lambda, tau)?.value)
        })
        .collect::<Result<_>>()?;
    let (mean, se) = mean_se(&vals);
    let exact = -1.0 / (2.0 * (2.0 * tau + 1.0).powi(2));
    out.push(check(
        "pathwise_second_moment",
        (mean - exact).abs() < 3.0 * se,
        format!("estimate {mean:.5} ± {se:.5}, exact {exact:.5}"),
    ));
    Ok(out)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

// -------------------------------------------------------------- selection

/// Best sum over all size-`m` subsets, as sorted candidate indices.
pub fn exhaustive_best(totals: &[f64], m: usize) -> Vec<usize> {
    fn rec(t: &[f64], m: usize, start: usize, cur: &mut Vec<usize>, acc: f64, best: &mut (f64, Vec<usize>)) {
        if cur.len() == m {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for i in start..t.len() {
            if t.len() - i < m - cur.len() {
                break;
            }
            cur.push(i);
            rec(t, m, i + 1, cur, acc + t[i], best);
            cur.pop();
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    rec(totals, m, 0, &mut Vec::new(), 0.0, &mut best);
    best.1
}

pub fn selection_suite(seed: u64, trials: usize) -> Result<Vec<Check>> {
    let mut rng = stream(seed, 0, Purpose::Score, 300);
    let mut mismatches = 0;
    for _ in 0..trials {
        let cands: Vec<PairCandidate> = (0..20)
            .map(|c| {
                let parts = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
                PairCandidate::new(2 * c, 2 * c + 1, 1, 1.0, parts)
            })
            .collect();
        let mut got: Vec<usize> = select_top_pairs(&cands, 10)?
            .iter()
            .map(|c| c.id_i / 2)
            .collect();
        got.sort_unstable();
        let totals: Vec<f64> = cands.iter().map(|c| c.total).collect();
        if got != exhaustive_best(&totals, 5) {
            mismatches += 1;
        }
    }
    Ok(vec![check(
        "top_pairs_vs_exhaustive",
        mismatches == 0,
        format!("{trials} trials of 20 candidates, B = 10: {mismatches} mismatches"),
    )])
}

// ----------------------------------------------------------------- policy

/// `[1, 1, 2]` classifier whose hidden unit passes `relu(x)` and whose logit
/// gap is `16 h − 1.6`. Mixing `h_i = 0` with `h_j = 1` at layer 1 gives
/// logit gap `14.4 − 16 λ`, maximally uncertain at `λ = 0.9`.
pub fn toy_classifier() -> MlpClassifier {
    MlpClassifier::from_parameters(
        vec![
            Tensor::new(vec![1, 1], vec![1.0]).expect("shape"),
            Tensor::new(vec![1, 2], vec![0.0, 16.0]).expect("shape"),
        ],
        vec![
            Tensor::new(vec![1, 1], vec![0.0]).expect("shape"),
            Tensor::new(vec![1, 2], vec![0.0, -1.6]).expect("shape"),
        ],
        0.0,
    )
    .expect("toy classifier")
}

/// Predictive entropy of the toy at mix weight `λ` (on `h_i`).
pub fn toy_entropy(lambda: f64) -> f64 {
    let z: f64 = 14.4 - 16.0 * lambda;
    let p = 1.0 / (1.0 + (-z).exp());
    let q = 1.0 - p;
    let t = |v: f64| if v > 0.0 { -v * v.ln() } else { 0.0 };
    t(p) + t(q)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[g(λ)]` for `λ ~ Beta(τ, τ)` by composite Gauss–Legendre after the
/// substitution `w = λ^τ` on each half, which removes endpoint singularities.
pub fn beta_expectation(g: impl Fn(f64) -> f64, tau: f64) -> f64 {
    let (x, wts) = gauss_legendre(32);
    let panels = 64;
    let lb = ln_beta(tau, tau);
    let top = 0.5f64.powf(tau);
    // Uniform panels, with the first refined geometrically towards w = 0
    // where w^(1/τ) is not smooth.
    let mut edges: Vec<f64> = (0..40).rev().map(|k| top / panels as f64 * 0.5f64.powi(k)).collect();
    edges.insert(0, 0.0);
    edges.extend((2..=panels).map(|p| top * p as f64 / panels as f64));
    let mut acc = 0.0;
    for win in edges.windows(2) {
        let (a, b) = (win[0], win[1]);
        for (xi, wi) in x.iter().zip(&wts) {
            let w = 0.5 * (b - a) * xi + 0.5 * (a + b);
            let lam = w.powf(1.0 / tau);
            // λ^{τ−1} dλ = dw / τ, leaving (1−λ)^{τ−1} / (τ B).
            let dens = ((tau - 1.0) * (1.0 - lam).ln() - lb).exp() / tau;
            acc += 0.5 * (b - a) * wi * dens * (g(lam) + g(1.0 - lam));
        }
    }
    acc
}

/// Quadrature `E[H](τ)` on the toy and its central-difference derivative.
pub fn toy_objective(tau: f64) -> f64 {
    beta_expectation(toy_entropy, tau)
}

pub fn toy_objective_derivative(tau: f64) -> f64 {
    let h = 1e-4 * tau;
    (toy_objective(tau + h) - toy_objective(tau - h)) / (2.0 * h)
}

/// 50-point log grid on `[1e-3, 50]`: `(τ, E[H])` at the best grid point.
pub fn toy_grid_max() -> (f64, f64) {
    (0..50)
        .map(|i| {
            let t = (1e-3f64.ln() + (50f64.ln() - 1e-3f64.ln()) * i as f64 / 49.0).exp();
            (t, toy_objective(t))
        })
        .fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
}

/// Toy pair features at layer 1: `h_i = 0`, `h_j = 1`.
pub fn toy_pair() -> (Tensor, Tensor) {
    (Tensor::scalar(0.0), Tensor::scalar(1.0))
}

/// Mean and standard error of `∂L/∂b_out` over `reps` independent
/// single-pair objective evaluations with `n` mixes each.
pub fn toy_mc_gradient(policy: &PolicyGenerator, reps: usize, n: usize, seed: u64) -> Result<(f64, f64)> {
    let clf = toy_classifier();
    let (hi, hj) = toy_pair();
    let mut rng = stream(seed, 0, Purpose::Policy, 9);
    let mut vals = Vec::with_capacity(reps);
    for _ in 0..reps {
        let r = policy_loss_grad(policy, &clf, &hi, &hj, 1, n, &mut rng, BaseScore::Entropy)?;
        vals.push(r.grads[3].item()?);
    }
    Ok(mean_se(&vals))
}

pub fn policy_suite(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let clf = toy_classifier();
    let (hi, hj) = toy_pair();
    let mut init = stream(seed, 0, Purpose::Init, 77);
    let policy = PolicyGenerator::new(1, 64, &mut init)?;
    let tau0 = policy.infer_taus(&hi, &hj)?[0];
    out.push(check(
        "initial_tau",
        (tau0 - (2f64.ln() + 1e-3)).abs() < 1e-12,
        format!("τ0 = {tau0:.6}"),
    ));

    // ∂L/∂b_out = −dE[H]/dτ · sigmoid(raw) with raw = 0 at initialization.
    let (mean, se) = toy_mc_gradient(&policy, 10_000, 1, seed)?;
    let want = -toy_objective_derivative(tau0) * 0.5;
    out.push(check(
        "mc_gradient_vs_quadrature",
        (mean - want).abs() < 3.0 * se,
        format!("MC {mean:.5} ± {se:.5} (M = 10⁴), quadrature {want:.5}"),
    ));

    let (grid_tau, grid_best) = toy_grid_max();
    let mut train = policy.clone();
    let settings = PolicyTraining {
        steps: 200,
        lr: 0.05,
        samples: 512,
        batch_size: 0,
        optimizer: PolicyOptimizer::Adam,
        base: BaseScore::Entropy,
    };
    let mut rng = stream(seed, 0, Purpose::Policy, 10);
    let res = train_policy(&mut train, &clf, &hi, &hj, 1, &settings, &mut rng)?;
    let tau_star = res.tau_star[0];
    let achieved = toy_objective(tau_star);
    out.push(check(
        "trained_tau_near_grid_optimum",
        achieved >= 0.99 * grid_best,
        format!(
            "τ* = {tau_star:.4}, E[H](τ*) = {achieved:.5}; grid best {grid_best:.5} at τ = {grid_tau:.4}"
        ),
    ));

    // A classifier with constant output makes the objective flat.
    let flat = MlpClassifier::from_parameters(
        vec![Tensor::zeros(&[1, 1]), Tensor::zeros(&[1, 2])],
        vec![Tensor::zeros(&[1, 1]), Tensor::zeros(&[1, 2])],
        0.0,
    )?;
    let r = policy_loss_grad(&policy, &flat, &hi, &hj, 1, 8, &mut rng, BaseScore::Entropy)?;
    let gmax = r
        .grads
        .iter()
        .flat_map(|g| g.data().iter().copied())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    out.push(check("flat_classifier_zero_gradient", gmax == 0.0, format!("max |∂L/∂φ| = {gmax:e}")));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn beta_expectation_matches_moments() {
        for tau in [0.05, 0.3, 1.0, 4.0, 30.0] {
            let m2 = beta_expectation(|l| l * l, tau);
            let want = 0.25 + 1.0 / (4.0 * (2.0 * tau + 1.0));
            assert!((m2 - want).abs() < 1e-10, "τ = {tau}: {m2} vs {want}");
            assert!((beta_expectation(|_| 1.0, tau) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn exhaustive_picks_largest() {
        assert_eq!(exhaustive_best(&[0.1, 0.9, 0.5, 0.7], 2), vec![1, 3]);
    }

    #[test]
    fn unknown_suite_is_config_error() {
        assert!(matches!(run_suite("nope", 0), Err(Error::Config(_))));
    }
}
