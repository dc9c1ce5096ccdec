//! Mixing-policy generator: a small MLP mapping concatenated pair features to
//! a Beta concentration, trained to maximize the acquisition score of the
//! mixed features under a frozen classifier.
//!
//! Gradients reach the concentration through the sampled weights via
//! [`beta_sample_grad`]; the tape sees each weight as a node whose local
//! derivative with respect to `τ` is that implicit gradient.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::acquisition::BaseScore;
use crate::autodiff::{softplus, CustomOp, Graph, Tensor, Var};
use crate::beta::{beta_sample, beta_sample_grad, TAU_FLOOR};
use crate::classifier::{Dropout, MlpClassifier};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyOptimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

/// `τ = softplus(MLP([h_i, h_j])) + τ_floor` with one relu hidden layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyGenerator {
    feature_width: usize,
    params: Vec<Tensor>,
    adam: AdamState,
}

/// The generator's parameters on a graph.
struct BoundPolicy {
    vars: Vec<Var>,
}

impl PolicyGenerator {
    /// Hidden layer is He-initialized, the output layer starts at zero, so a
    /// fresh generator emits `softplus(0) + τ_floor` for every pair.
    pub fn new(feature_width: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if feature_width == 0 || hidden == 0 {
            return Err(Error::contract("policy widths must be positive"));
        }
        let fan_in = 2 * feature_width;
        let bound = (6.0 / fan_in as f64).sqrt();
        let w1 = (0..fan_in * hidden)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let params = vec![
            Tensor::new(vec![fan_in, hidden], w1)?,
            Tensor::zeros(&[1, hidden]),
            Tensor::zeros(&[hidden, 1]),
            Tensor::zeros(&[1, 1]),
        ];
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            feature_width,
            adam: AdamState {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            },
            params,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn check_pairs(&self, h_i: &Tensor, h_j: &Tensor) -> Result<()> {
        if h_i.shape() != h_j.shape() {
            return Err(Error::contract(format!(
                "pair features differ in shape: {:?} vs {:?}",
                h_i.shape(),
                h_j.shape()
            )));
        }
        if h_i.cols() != self.feature_width {
            return Err(Error::contract(format!(
                "policy expects width {}, got {}",
                self.feature_width,
                h_i.cols()
            )));
        }
        Ok(())
    }

    /// Concentrations for each row pair of `h_i`, `h_j` (`[P, w]` each).
    pub fn infer_taus(&self, h_i: &Tensor, h_j: &Tensor) -> Result<Vec<f64>> {
        self.check_pairs(h_i, h_j)?;
        let x = Tensor::concat_cols(&[h_i, h_j])?;
        let hidden = x.matmul(&self.params[0])?.add_bias(&self.params[1])?.relu();
        let raw = hidden.matmul(&self.params[2])?.add_bias(&self.params[3])?;
        Ok(raw.data().iter().map(|&r| softplus(r) + TAU_FLOOR).collect())
    }

    pub fn infer_tau(&self, h_i: &[f64], h_j: &[f64]) -> Result<f64> {
        if h_i.len() != h_j.len() {
            return Err(Error::contract("pair features differ in width"));
        }
        let taus = self.infer_taus(&Tensor::row(h_i), &Tensor::row(h_j))?;
        Ok(taus[0])
    }

    fn bind(&self, g: &mut Graph) -> BoundPolicy {
        BoundPolicy {
            vars: self.params.iter().map(|p| g.param(p.clone())).collect(),
        }
    }

    fn graph_tau(&self, g: &mut Graph, bound: &BoundPolicy, x: Var) -> Result<Var> {
        let z = g.matmul(x, bound.vars[0])?;
        let z = g.add_bias(z, bound.vars[1])?;
        let z = g.relu(z)?;
        let z = g.matmul(z, bound.vars[2])?;
        let raw = g.add_bias(z, bound.vars[3])?;
        let sp = g.softplus(raw)?;
        let floor = g.constant(Tensor::filled(g.value(sp).shape(), TAU_FLOOR));
        g.add(sp, floor)
    }

    fn apply(&mut self, grads: &[Tensor], lr: f64, optimizer: PolicyOptimizer) {
        match optimizer {
            PolicyOptimizer::Sgd => {
                for (p, g) in self.params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            PolicyOptimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.adam.t += 1;
                let t = self.adam.t as i32;
                let c1 = 1.0 - B1.powi(t);
                let c2 = 1.0 - B2.powi(t);
                for (((p, g), m), v) in self
                    .params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.adam.m)
                    .zip(&mut self.adam.v)
                {
                    for (((pv, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = B1 * *mv + (1.0 - B1) * gv;
                        *vv = B2 * *vv + (1.0 - B2) * gv * gv;
                        *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

/// Local derivative of sampled weights with respect to their concentration.
/// Input `τ: [P, 1]`, output `λ: [P·N, 1]`.
#[derive(Debug)]
struct ImplicitReparam {
    per_pair: usize,
    dlambda_dtau: Vec<f64>,
}

impl CustomOp for ImplicitReparam {
    fn name(&self) -> &'static str {
        "implicit_reparam"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let pairs = inputs[0].numel();
        let mut g = vec![0.0; pairs];
        for (p, gp) in g.iter_mut().enumerate() {
            for n in 0..self.per_pair {
                let idx = p * self.per_pair + n;
                *gp += grad.data()[idx] * self.dlambda_dtau[idx];
            }
        }
        Ok(vec![Some(Tensor::new(vec![pairs, 1], g)?)])
    }
}

/// Result of one evaluation of the policy objective.
#[derive(Clone, Debug)]
pub struct PolicyLossGrad {
    /// Mean over pairs of `-(1/N) Σₙ base(...)`.
    pub loss: f64,
    pub pair_losses: Vec<f64>,
    /// Concentrations that produced the losses.
    pub taus: Vec<f64>,
    /// `∂L/∂φ`, in parameter order.
    pub grads: Vec<Tensor>,
    /// Samples whose implicit gradient hit the clamp.
    pub clamped: usize,
}

fn pair_key(h_i: &[f64], h_j: &[f64]) -> u64 {
    let mut s = std::collections::hash_map::DefaultHasher::new();
    for v in h_i.iter().chain(h_j) {
        v.to_bits().hash(&mut s);
    }
    s.finish()
}

/// Evaluates `L_π` on a batch of pairs and its gradient with respect to the
/// generator's parameters. The classifier enters only as constants.
///
/// Draws for each pair come from a stream keyed by a seed taken from `rng`
/// and the pair's feature bits, so identical pairs see identical draws.
#[allow(clippy::too_many_arguments)]
pub fn policy_loss_grad(
    policy: &PolicyGenerator,
    classifier: &MlpClassifier,
    h_i: &Tensor,
    h_j: &Tensor,
    layer: usize,
    n: usize,
    rng: &mut Rng,
    base: BaseScore,
) -> Result<PolicyLossGrad> {
    if n == 0 {
        return Err(Error::contract("policy objective needs N >= 1 mixes"));
    }
    policy.check_pairs(h_i, h_j)?;
    if layer >= classifier.num_layers() || classifier.widths()[layer] != h_i.cols() {
        return Err(Error::contract(format!(
            "features of width {} do not match classifier layer {layer}",
            h_i.cols()
        )));
    }
    let pairs = h_i.rows();
    let w = h_i.cols();
    let step_seed: u64 = rng.random();

    let mut g = Graph::new();
    let bound = policy.bind(&mut g);
    let cparams = classifier.bind(&mut g, false);
    let x = g.constant(Tensor::concat_cols(&[h_i, h_j])?);
    let tau = policy.graph_tau(&mut g, &bound, x)?;
    let taus = g.value(tau).data().to_vec();

    let mut lambdas = Vec::with_capacity(pairs * n);
    let mut dl = Vec::with_capacity(pairs * n);
    let mut clamped = 0;
    let mut hj_rep = Vec::with_capacity(pairs * n * w);
    let mut diff_rep = Vec::with_capacity(pairs * n * w);
    for p in 0..pairs {
        let (ri, rj) = (h_i.row_slice(p), h_j.row_slice(p));
        let mut prng = stream(step_seed, 0, Purpose::Policy, pair_key(ri, rj));
        for _ in 0..n {
            let s = beta_sample(taus[p], &mut prng)?;
            let d = beta_sample_grad(s.lambda, taus[p])?;
            clamped += d.clamped as usize;
            lambdas.push(s.lambda);
            dl.push(d.value);
            hj_rep.extend_from_slice(rj);
            diff_rep.extend(ri.iter().zip(rj).map(|(a, b)| a - b));
        }
    }
    let lam = g.custom(
        Box::new(ImplicitReparam {
            per_pair: n,
            dlambda_dtau: dl,
        }),
        &[tau],
        Tensor::column(&lambdas),
    )?;
    let diff = g.constant(Tensor::new(vec![pairs * n, w], diff_rep)?);
    let hj = g.constant(Tensor::new(vec![pairs * n, w], hj_rep)?);
    let scaled = g.mul_col(diff, lam)?;
    let mixed = g.add(hj, scaled)?;
    let logits = classifier.graph_range(&mut g, &cparams, mixed, layer, classifier.num_layers(), Dropout::Off)?;
    let scores = match base {
        BaseScore::Entropy => g.entropy_from_logits(logits)?,
        BaseScore::VarRatio => {
            let probs = g.softmax(logits)?;
            let pv = g.value(probs);
            let c = pv.cols();
            let mut mask = vec![0.0; pv.numel()];
            for (r, j) in pv.argmax_rows().into_iter().enumerate() {
                mask[r * c + j] = 1.0;
            }
            let mask = g.constant(Tensor::new(pv.shape().to_vec(), mask)?);
            let picked = g.mul(probs, mask)?;
            let pmax = g.sum_rows(picked)?;
            let neg = g.scale(pmax, -1.0)?;
            let ones = g.constant(Tensor::filled(&[pairs * n, 1], 1.0));
            g.add(ones, neg)?
        }
    };
    let score_vals = g.value(scores).data().to_vec();
    let mean = g.mean(scores)?;
    let loss = g.scale(mean, -1.0)?;
    let loss_value = g.value(loss).item()?;
    let grads = g.backward(loss)?;

    let pair_losses = score_vals
        .chunks(n)
        .map(|c| -c.iter().sum::<f64>() / n as f64)
        .collect();
    Ok(PolicyLossGrad {
        loss: loss_value,
        pair_losses,
        taus,
        grads: bound
            .vars
            .iter()
            .zip(&policy.params)
            .map(|(&v, p)| grads.get_or_zeros(v, p))
            .collect(),
        clamped,
    })
}

/// Settings for [`train_policy`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTraining {
    pub steps: usize,
    pub lr: f64,
    pub samples: usize,
    /// Pairs per gradient step; `0` uses every candidate each step.
    pub batch_size: usize,
    pub optimizer: PolicyOptimizer,
    pub base: BaseScore,
}

impl Default for PolicyTraining {
    fn default() -> Self {
        Self {
            steps: 50,
            lr: 1e-2,
            samples: 8,
            batch_size: 0,
            optimizer: PolicyOptimizer::Adam,
            base: BaseScore::Entropy,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyOutcome {
    /// Concentration recorded at each pair's lowest observed loss.
    pub tau_star: Vec<f64>,
    pub best_loss: Vec<f64>,
    /// Batch loss at every step.
    pub loss_trace: Vec<f64>,
}

/// Amortized training over all candidate pairs (`h_i`, `h_j` are `[P, w]`).
pub fn train_policy(
    policy: &mut PolicyGenerator,
    classifier: &MlpClassifier,
    h_i: &Tensor,
    h_j: &Tensor,
    layer: usize,
    settings: &PolicyTraining,
    rng: &mut Rng,
) -> Result<PolicyOutcome> {
    if settings.steps == 0 {
        return Err(Error::contract("policy training needs at least one step"));
    }
    policy.check_pairs(h_i, h_j)?;
    let pairs = h_i.rows();
    let batch = if settings.batch_size == 0 {
        pairs
    } else {
        settings.batch_size.min(pairs)
    };
    let mut tau_star = vec![f64::NAN; pairs];
    let mut best = vec![f64::INFINITY; pairs];
    let mut trace = Vec::with_capacity(settings.steps);
    let mut cursor = 0;
    for _ in 0..settings.steps {
        let idx: Vec<usize> = (0..batch).map(|b| (cursor + b) % pairs).collect();
        cursor = (cursor + batch) % pairs.max(1);
        let (bi, bj) = if batch == pairs {
            (h_i.clone(), h_j.clone())
        } else {
            (h_i.select_rows(&idx), h_j.select_rows(&idx))
        };
        let step = policy_loss_grad(policy, classifier, &bi, &bj, layer, settings.samples, rng, settings.base)?;
        trace.push(step.loss);
        if !step.loss.is_finite() || step.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric(
                "train_policy",
                format!("policy loss diverged; trace {trace:?}"),
            ));
        }
        for (b, &p) in idx.iter().enumerate() {
            if step.pair_losses[b] < best[p] {
                best[p] = step.pair_losses[b];
                tau_star[p] = step.taus[b];
            }
        }
        policy.apply(&step.grads, settings.lr, settings.optimizer);
    }
    Ok(PolicyOutcome {
        tau_star,
        best_loss: best,
        loss_trace: trace,
    })
}

/// Per-pair variant: every pair trains its own copy of `policy` from the same
/// starting point. `policy` itself is left unchanged.
pub fn train_policy_per_pair(
    policy: &PolicyGenerator,
    classifier: &MlpClassifier,
    h_i: &Tensor,
    h_j: &Tensor,
    layer: usize,
    settings: &PolicyTraining,
    rng: &mut Rng,
) -> Result<PolicyOutcome> {
    let mut out = PolicyOutcome {
        tau_star: Vec::new(),
        best_loss: Vec::new(),
        loss_trace: vec![0.0; settings.steps],
    };
    let pairs = h_i.rows();
    for p in 0..pairs {
        let mut local = policy.clone();
        let bi = h_i.select_rows(&[p]);
        let bj = h_j.select_rows(&[p]);
        let r = train_policy(&mut local, classifier, &bi, &bj, layer, settings, rng)?;
        out.tau_star.push(r.tau_star[0]);
        out.best_loss.push(r.best_loss[0]);
        for (t, l) in out.loss_trace.iter_mut().zip(&r.loss_trace) {
            *t += l / pairs as f64;
        }
    }
    Ok(out)
}

/// Source of mixing concentrations used by the engine.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum MixPolicy {
    /// One learned generator per mixing layer, created on first use.
    Learned {
        hidden: usize,
        seed: u64,
        generators: BTreeMap<usize, PolicyGenerator>,
    },
    /// Constant concentration; training is a no-op.
    Fixed { tau: f64 },
}

impl MixPolicy {
    pub fn learned(hidden: usize, seed: u64) -> Self {
        MixPolicy::Learned {
            hidden,
            seed,
            generators: BTreeMap::new(),
        }
    }

    pub fn fixed(tau: f64) -> Result<Self> {
        if !(tau >= TAU_FLOOR) {
            return Err(Error::contract(format!("fixed τ {tau} below floor")));
        }
        Ok(MixPolicy::Fixed { tau })
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, MixPolicy::Learned { .. })
    }

    /// Drops learned generators so the next use starts from initialization.
    pub fn reset(&mut self) {
        if let MixPolicy::Learned { generators, .. } = self {
            generators.clear();
        }
    }

    fn generator(&mut self, layer: usize, width: usize) -> Result<Option<&mut PolicyGenerator>> {
        match self {
            MixPolicy::Fixed { .. } => Ok(None),
            MixPolicy::Learned {
                hidden,
                seed,
                generators,
            } => {
                if let std::collections::btree_map::Entry::Vacant(e) = generators.entry(layer) {
                    let mut rng = stream(*seed, 0, Purpose::Init, 1000 + layer as u64);
                    e.insert(PolicyGenerator::new(width, *hidden, &mut rng)?);
                }
                Ok(generators.get_mut(&layer))
            }
        }
    }

    pub fn infer_taus(&mut self, h_i: &Tensor, h_j: &Tensor, layer: usize) -> Result<Vec<f64>> {
        match self.generator(layer, h_i.cols())? {
            None => match self {
                MixPolicy::Fixed { tau } => Ok(vec![*tau; h_i.rows()]),
                MixPolicy::Learned { .. } => unreachable!(),
            },
            Some(gen) => gen.infer_taus(h_i, h_j),
        }
    }

    /// Trains (learned) or echoes the fixed concentration (fixed).
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        &mut self,
        classifier: &MlpClassifier,
        h_i: &Tensor,
        h_j: &Tensor,
        layer: usize,
        settings: &PolicyTraining,
        amortized: bool,
        rng: &mut Rng,
    ) -> Result<PolicyOutcome> {
        match self.generator(layer, h_i.cols())? {
            None => {
                let taus = self.infer_taus(h_i, h_j, layer)?;
                Ok(PolicyOutcome {
                    best_loss: vec![f64::NAN; taus.len()],
                    tau_star: taus,
                    loss_trace: Vec::new(),
                })
            }
            Some(gen) if amortized => train_policy(gen, classifier, h_i, h_j, layer, settings, rng),
            Some(gen) => train_policy_per_pair(gen, classifier, h_i, h_j, layer, settings, rng),
        }
    }
}
