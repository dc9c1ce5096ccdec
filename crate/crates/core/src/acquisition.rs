//! Acquisition scores and look-ahead pair selection.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::beta::{beta_sample, TAU_FLOOR};
use crate::classifier::MlpClassifier;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-instance score used for pairs and virtual instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseScore {
    Entropy,
    VarRatio,
}

impl BaseScore {
    pub fn score(self, p: &[f64]) -> Result<f64> {
        match self {
            BaseScore::Entropy => entropy_score(p),
            BaseScore::VarRatio => var_ratio_score(p),
        }
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::contract("empty probability vector"));
    }
    if p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::contract("negative or NaN probability"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("probabilities sum to {s}")));
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy_score(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// `1 - max_c p_c`.
pub fn var_ratio_score(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(1.0 - p.iter().copied().fold(0.0, f64::max))
}

/// Mutual information between prediction and weights, estimated from
/// stochastic forward passes: `H(mean p) - mean H(p)`.
pub fn bald_score<P: AsRef<[f64]>>(samples: &[P]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::contract("BALD needs at least two samples"));
    }
    let c = samples[0].as_ref().len();
    let mut mean = vec![0.0; c];
    let mut mean_h = 0.0;
    for s in samples {
        let s = s.as_ref();
        if s.len() != c {
            return Err(Error::dim("bald", "samples differ in class count"));
        }
        mean_h += entropy_score(s)?;
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let t = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    Ok((entropy_unchecked(&mean) - mean_h / t).max(0.0))
}

/// A scored pair of unlabeled instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub id_i: usize,
    pub id_j: usize,
    pub layer: usize,
    pub tau: f64,
    pub score_i: f64,
    pub score_j: f64,
    pub score_mix: f64,
    pub total: f64,
}

impl PairCandidate {
    pub fn new(id_i: usize, id_j: usize, layer: usize, tau: f64, parts: [f64; 3]) -> Self {
        let [score_i, score_j, score_mix] = parts;
        Self {
            id_i,
            id_j,
            layer,
            tau,
            score_i,
            score_j,
            score_mix,
            total: score_i + score_j + score_mix,
        }
    }
}

/// Monte-Carlo mean of `base(f^{k:L}(λ h_i + (1-λ) h_j))` over `n` draws of
/// `λ ~ Beta(τ, τ)`.
#[allow(clippy::too_many_arguments)]
pub fn mix_score(
    classifier: &MlpClassifier,
    h_i: &[f64],
    h_j: &[f64],
    layer: usize,
    tau: f64,
    n: usize,
    rng: &mut Rng,
    base: BaseScore,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::contract("need at least one Monte-Carlo mix"));
    }
    if tau < TAU_FLOOR {
        return Err(Error::contract(format!("τ = {tau} below floor")));
    }
    if h_i.len() != h_j.len() {
        return Err(Error::dim("mix_score", "pair features differ in width"));
    }
    let w = h_i.len();
    let mut rows = Vec::with_capacity(n * w);
    for _ in 0..n {
        let lam = beta_sample(tau, rng)?.lambda;
        rows.extend(mix_features(h_i, h_j, lam)?);
    }
    let probs = classifier.forward_from_layer(&Tensor::new(vec![n, w], rows)?, layer)?;
    let mut acc = 0.0;
    for r in 0..n {
        acc += base.score(probs.row_slice(r))?;
    }
    Ok(acc / n as f64)
}

/// `λ·h_i + (1−λ)·h_j`.
pub fn mix_features(h_i: &[f64], h_j: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if h_i.len() != h_j.len() {
        return Err(Error::dim("mix_features", "pair features differ in width"));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::contract(format!("mix weight {lambda} outside (0, 1]")));
    }
    Ok(h_i.iter().zip(h_j).map(|(&a, &b)| lambda * a + (1.0 - lambda) * b).collect())
}

/// Look-ahead score of one pair: both instance scores plus the expected score
/// of their mix at layer `layer`.
#[allow(clippy::too_many_arguments)]
pub fn pair_score(
    classifier: &MlpClassifier,
    ids: (usize, usize),
    x_i: &[f64],
    x_j: &[f64],
    layer: usize,
    tau: f64,
    n: usize,
    rng: &mut Rng,
    base: BaseScore,
) -> Result<PairCandidate> {
    let x = Tensor::from_rows(&[x_i, x_j])?;
    let p = classifier.forward(&x)?;
    let s_i = base.score(p.row_slice(0))?;
    let s_j = base.score(p.row_slice(1))?;
    let h = classifier.forward_to_layer(&x, layer)?;
    let s_m = mix_score(classifier, h.row_slice(0), h.row_slice(1), layer, tau, n, rng, base)?;
    Ok(PairCandidate::new(ids.0, ids.1, layer, tau, [s_i, s_j, s_m]))
}

/// Indices of the `m` largest scores, best first; equal scores keep their
/// original order.
pub fn top_indices(scores: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// The `budget / 2` candidates with the largest totals.
///
/// Candidates must be instance-disjoint, in which case greedy top-m is the
/// exact maximizer of the summed total over all size-m subsets.
pub fn select_top_pairs(candidates: &[PairCandidate], budget: usize) -> Result<Vec<PairCandidate>> {
    if !budget.is_multiple_of(2) {
        return Err(Error::contract(format!("pair budget {budget} must be even")));
    }
    let m = budget / 2;
    if candidates.len() < m {
        return Err(Error::contract(format!(
            "{} candidates cannot fill {m} pairs",
            candidates.len()
        )));
    }
    let mut seen = HashSet::new();
    for c in candidates {
        if !seen.insert(c.id_i) || !seen.insert(c.id_j) {
            return Err(Error::contract("candidate pairs overlap in instance ids"));
        }
    }
    let totals: Vec<f64> = candidates.iter().map(|c| c.total).collect();
    Ok(top_indices(&totals, m)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}
