//! Layered MLP classifier with explicit split points.
//!
//! Layer indices follow the usual look-ahead convention: `h⁰ = x`,
//! `hᵏ = relu(hᵏ⁻¹ Wₖ + bₖ)` for hidden layers, and `hᴸ` is the class
//! distribution. [`MlpClassifier::forward_to_layer`] and
//! [`MlpClassifier::forward_from_layer`] compose to the full forward pass
//! bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Training target: a pure class or a two-class mix with weight `lambda` on
/// `y_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SoftLabel {
    Pure(usize),
    Mixed { y_i: usize, y_j: usize, lambda: f64 },
}

impl SoftLabel {
    pub fn mixed(y_i: usize, y_j: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::contract(format!("mix weight {lambda} outside (0, 1)")));
        }
        Ok(SoftLabel::Mixed { y_i, y_j, lambda })
    }

    fn max_class(&self) -> usize {
        match *self {
            SoftLabel::Pure(y) => y,
            SoftLabel::Mixed { y_i, y_j, .. } => y_i.max(y_j),
        }
    }

    /// Dense target distribution over `classes`.
    pub fn target(&self, classes: usize) -> Vec<f64> {
        let mut t = vec![0.0; classes];
        match *self {
            SoftLabel::Pure(y) => t[y] = 1.0,
            SoftLabel::Mixed { y_i, y_j, lambda } => {
                t[y_i] += lambda;
                t[y_j] += 1.0 - lambda;
            }
        }
        t
    }
}

/// A virtual training example: two inputs mixed at hidden layer `layer`.
#[derive(Clone, Debug)]
pub struct MixedExample<'a> {
    pub x_i: &'a [f64],
    pub x_j: &'a [f64],
    pub layer: usize,
    pub label: SoftLabel,
}

/// Labeled inputs as a row matrix plus class ids.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub x: Tensor,
    pub y: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpClassifier {
    widths: Vec<usize>,
    dropout: f64,
    momentum: f64,
    batch_size: usize,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    velocity: Vec<Tensor>,
}

/// The classifier's parameters placed on a graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

/// Whether dropout masks are sampled during a forward pass.
pub enum Dropout<'a> {
    Off,
    On(&'a mut Rng),
}

impl MlpClassifier {
    /// `widths = [input, hidden..., classes]`, at least one hidden layer.
    pub fn new(widths: &[usize], dropout: f64, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::contract(
                "classifier needs input, at least one hidden layer, and output widths",
            ));
        }
        if widths.contains(&0) {
            return Err(Error::contract("layer widths must be positive"));
        }
        if widths[widths.len() - 1] < 2 {
            return Err(Error::contract("classifier needs at least two classes"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::contract(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(Tensor::new(vec![fan_in, fan_out], data)?);
            biases.push(Tensor::zeros(&[1, fan_out]));
        }
        let velocity = weights
            .iter()
            .chain(&biases)
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            dropout,
            momentum: 0.9,
            batch_size: 32,
            weights,
            biases,
            velocity,
        })
    }

    /// Builds a classifier from explicit parameters (`weights[l]` is
    /// `[widths[l], widths[l+1]]`).
    pub fn from_parameters(weights: Vec<Tensor>, biases: Vec<Tensor>, dropout: f64) -> Result<Self> {
        if weights.len() != biases.len() || weights.len() < 2 {
            return Err(Error::contract("need matching weights/biases for at least two layers"));
        }
        let mut widths = vec![weights[0].rows()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.shape().len() != 2 || w.rows() != *widths.last().unwrap_or(&0) {
                return Err(Error::dim("from_parameters", format!("weight {:?}", w.shape())));
            }
            if b.numel() != w.cols() {
                return Err(Error::dim("from_parameters", format!("bias {:?}", b.shape())));
            }
            widths.push(w.cols());
        }
        let biases: Vec<Tensor> = biases
            .into_iter()
            .map(|b| Tensor::new(vec![1, b.numel()], b.into_data()))
            .collect::<Result<_>>()?;
        let velocity = weights
            .iter()
            .chain(&biases)
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Ok(Self {
            widths,
            dropout,
            momentum: 0.9,
            batch_size: 32,
            weights,
            biases,
            velocity,
        })
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of weight layers `L`.
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, p: f64) {
        self.dropout = p;
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Layers where Manifold-Mixup may happen: hidden layers `1..L`, plus the
    /// input layer when `include_input`.
    pub fn eligible_mix_layers(&self, include_input: bool) -> Vec<usize> {
        let start = if include_input { 0 } else { 1 };
        (start..self.num_layers()).collect()
    }

    fn check_layer(&self, k: usize) -> Result<()> {
        if k > self.num_layers() {
            return Err(Error::contract(format!(
                "layer {k} out of range 0..={}",
                self.num_layers()
            )));
        }
        Ok(())
    }

    fn check_width(&self, h: &Tensor, k: usize) -> Result<()> {
        if h.shape().len() != 2 || h.cols() != self.widths[k] {
            return Err(Error::dim(
                "classifier",
                format!("layer {k} expects width {}, got {:?}", self.widths[k], h.shape()),
            ));
        }
        Ok(())
    }

    fn dropout_mask(&self, rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
        let keep = 1.0 - self.dropout;
        let data = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Tensor::new(vec![rows, cols], data).expect("mask shape")
    }

    /// Applies layers `from+1 ..= to`; returns logits when `to == L`.
    fn range(&self, h: &Tensor, from: usize, to: usize, mut dropout: Dropout<'_>) -> Result<Tensor> {
        let mut h = h.clone();
        for l in from..to {
            h = h.matmul(&self.weights[l])?.add_bias(&self.biases[l])?;
            if l + 1 < self.num_layers() {
                h = h.relu();
                if let Dropout::On(rng) = &mut dropout {
                    if self.dropout > 0.0 {
                        let mask = self.dropout_mask(h.rows(), h.cols(), rng);
                        h = h.mul(&mask)?;
                    }
                }
            }
        }
        Ok(h)
    }

    /// `hᵏ(x)` for a row batch `x`. `k = L` yields class probabilities.
    pub fn forward_to_layer(&self, x: &Tensor, k: usize) -> Result<Tensor> {
        self.check_layer(k)?;
        self.check_width(x, 0)?;
        let h = self.range(x, 0, k, Dropout::Off)?;
        if k == self.num_layers() {
            h.softmax_rows()
        } else {
            Ok(h)
        }
    }

    /// `f^{k:L}(h)`: class probabilities from layer-`k` features.
    pub fn forward_from_layer(&self, h: &Tensor, k: usize) -> Result<Tensor> {
        self.check_layer(k)?;
        self.check_width(h, k)?;
        if k == self.num_layers() {
            return Ok(h.clone());
        }
        self.range(h, k, self.num_layers(), Dropout::Off)?.softmax_rows()
    }

    /// Deterministic class probabilities (dropout off).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_to_layer(x, self.num_layers())
    }

    /// `samples` stochastic forward passes with dropout active.
    pub fn mc_dropout_predict(&self, x: &Tensor, samples: usize, rng: &mut Rng) -> Result<Vec<Tensor>> {
        if samples == 0 {
            return Err(Error::contract("MC dropout needs at least one sample"));
        }
        self.check_width(x, 0)?;
        (0..samples)
            .map(|_| {
                self.range(x, 0, self.num_layers(), Dropout::On(rng))?
                    .softmax_rows()
            })
            .collect()
    }

    /// Places the parameters on `g`, trainable or frozen.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let place = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundParams {
            weights: self.weights.iter().map(|w| place(g, w)).collect(),
            biases: self.biases.iter().map(|b| place(g, b)).collect(),
        }
    }

    /// Tape version of the layer range `from+1 ..= to` (logits at `L`).
    pub fn graph_range(
        &self,
        g: &mut Graph,
        params: &BoundParams,
        h: Var,
        from: usize,
        to: usize,
        mut dropout: Dropout<'_>,
    ) -> Result<Var> {
        self.check_layer(to)?;
        let mut h = h;
        for l in from..to {
            let z = g.matmul(h, params.weights[l])?;
            h = g.add_bias(z, params.biases[l])?;
            if l + 1 < self.num_layers() {
                h = g.relu(h)?;
                if let Dropout::On(rng) = &mut dropout {
                    if self.dropout > 0.0 {
                        let v = g.value(h);
                        let mask = self.dropout_mask(v.rows(), v.cols(), rng);
                        let m = g.constant(mask);
                        h = g.mul(h, m)?;
                    }
                }
            }
        }
        Ok(h)
    }

    /// Summed cross-entropy of the given rows against their targets, on tape.
    fn graph_ce_sum(&self, g: &mut Graph, logits: Var, targets: Tensor) -> Result<Var> {
        let logp = g.log_softmax(logits)?;
        let t = g.constant(targets);
        let prod = g.mul(logp, t)?;
        let s = g.sum(prod)?;
        g.scale(s, -1.0)
    }

    /// Mean loss over one batch made of labeled rows and mixed examples.
    fn batch_loss(
        &self,
        g: &mut Graph,
        params: &BoundParams,
        labeled: &LabeledBatch,
        lab_idx: &[usize],
        mixed: &[MixedExample<'_>],
        mix_idx: &[usize],
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let c = self.num_classes();
        let l = self.num_layers();
        let mut rng = rng;
        let mut parts = Vec::new();
        if !lab_idx.is_empty() {
            let x = g.constant(labeled.x.select_rows(lab_idx));
            let drop = match rng.as_deref_mut() {
                Some(r) => Dropout::On(r),
                None => Dropout::Off,
            };
            let logits = self.graph_range(g, params, x, 0, l, drop)?;
            let mut targets = Vec::with_capacity(lab_idx.len() * c);
            for &i in lab_idx {
                targets.extend(SoftLabel::Pure(labeled.y[i]).target(c));
            }
            let t = Tensor::new(vec![lab_idx.len(), c], targets)?;
            parts.push(self.graph_ce_sum(g, logits, t)?);
        }
        // Group mixed rows by their mixing layer.
        let mut layers: Vec<usize> = mix_idx.iter().map(|&i| mixed[i].layer).collect();
        layers.sort_unstable();
        layers.dedup();
        for k in layers {
            let rows: Vec<&MixedExample<'_>> = mix_idx
                .iter()
                .map(|&i| &mixed[i])
                .filter(|m| m.layer == k)
                .collect();
            let xi = Tensor::from_rows(&rows.iter().map(|m| m.x_i).collect::<Vec<_>>())?;
            let xj = Tensor::from_rows(&rows.iter().map(|m| m.x_j).collect::<Vec<_>>())?;
            let lam: Vec<f64> = rows
                .iter()
                .map(|m| match m.label {
                    SoftLabel::Pure(_) => 1.0,
                    SoftLabel::Mixed { lambda, .. } => lambda,
                })
                .collect();
            let xi = g.constant(xi);
            let xj = g.constant(xj);
            let hi = {
                let drop = match rng.as_deref_mut() {
                    Some(r) => Dropout::On(r),
                    None => Dropout::Off,
                };
                self.graph_range(g, params, xi, 0, k, drop)?
            };
            let hj = {
                let drop = match rng.as_deref_mut() {
                    Some(r) => Dropout::On(r),
                    None => Dropout::Off,
                };
                self.graph_range(g, params, xj, 0, k, drop)?
            };
            // λ·h_i + (1-λ)·h_j = h_j + λ·(h_i - h_j)
            let diff = g.sub(hi, hj)?;
            let lam = g.constant(Tensor::column(&lam));
            let scaled = g.mul_col(diff, lam)?;
            let hm = g.add(hj, scaled)?;
            let drop = match rng.as_deref_mut() {
                Some(r) => Dropout::On(r),
                None => Dropout::Off,
            };
            let logits = self.graph_range(g, params, hm, k, l, drop)?;
            let mut targets = Vec::with_capacity(rows.len() * c);
            for m in &rows {
                targets.extend(m.label.target(c));
            }
            let t = Tensor::new(vec![rows.len(), c], targets)?;
            parts.push(self.graph_ce_sum(g, logits, t)?);
        }
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = g.add(total, p)?;
        }
        g.scale(total, 1.0 / (lab_idx.len() + mix_idx.len()) as f64)
    }

    fn validate_labels(&self, labeled: &LabeledBatch, mixed: &[MixedExample<'_>]) -> Result<()> {
        let c = self.num_classes();
        if labeled.x.rows() != labeled.y.len() {
            return Err(Error::dim("train", "feature rows and labels differ in count"));
        }
        if labeled.y.is_empty() {
            return Err(Error::contract("labeled set must be non-empty"));
        }
        self.check_width(&labeled.x, 0)?;
        if let Some(&bad) = labeled.y.iter().find(|&&y| y >= c) {
            return Err(Error::contract(format!("class id {bad} >= {c}")));
        }
        for m in mixed {
            if m.label.max_class() >= c {
                return Err(Error::contract(format!("class id {} >= {c}", m.label.max_class())));
            }
            if m.layer >= self.num_layers() {
                return Err(Error::contract(format!("cannot mix at layer {}", m.layer)));
            }
            if m.x_i.len() != self.input_width() || m.x_j.len() != self.input_width() {
                return Err(Error::dim("train", "virtual source width mismatch"));
            }
        }
        Ok(())
    }

    /// Deterministic (dropout off) mean loss over all labeled and mixed
    /// examples.
    pub fn loss(&self, labeled: &LabeledBatch, mixed: &[MixedExample<'_>]) -> Result<f64> {
        self.validate_labels(labeled, mixed)?;
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let lab: Vec<usize> = (0..labeled.y.len()).collect();
        let mix: Vec<usize> = (0..mixed.len()).collect();
        let l = self.batch_loss(&mut g, &params, labeled, &lab, mixed, &mix, None)?;
        g.value(l).item()
    }

    /// One pass of minibatch SGD with momentum over labeled rows and mixed
    /// examples. Returns the size-weighted mean batch loss.
    pub fn train_epoch(
        &mut self,
        labeled: &LabeledBatch,
        mixed: &[MixedExample<'_>],
        lr: f64,
        rng: &mut Rng,
    ) -> Result<f64> {
        self.validate_labels(labeled, mixed)?;
        let n_lab = labeled.y.len();
        let mut items: Vec<usize> = (0..n_lab + mixed.len()).collect();
        items.shuffle(rng);
        let mut total = 0.0;
        for chunk in items.chunks(self.batch_size) {
            let lab: Vec<usize> = chunk.iter().copied().filter(|&i| i < n_lab).collect();
            let mix: Vec<usize> = chunk
                .iter()
                .filter(|&&i| i >= n_lab)
                .map(|&i| i - n_lab)
                .collect();
            let mut g = Graph::new();
            let params = self.bind(&mut g, true);
            let loss = self.batch_loss(&mut g, &params, labeled, &lab, mixed, &mix, Some(rng))?;
            let value = g.value(loss).item()?;
            let grads = g.backward(loss)?;
            let all: Vec<Var> = params.weights.iter().chain(&params.biases).copied().collect();
            let nw = self.weights.len();
            for (slot, var) in all.into_iter().enumerate() {
                let param = if slot < nw {
                    &mut self.weights[slot]
                } else {
                    &mut self.biases[slot - nw]
                };
                let grad = grads.get_or_zeros(var, param);
                let vel = &mut self.velocity[slot];
                for ((v, p), gr) in vel
                    .data_mut()
                    .iter_mut()
                    .zip(param.data_mut())
                    .zip(grad.data())
                {
                    *v = self.momentum * *v + gr;
                    *p -= lr * *v;
                }
            }
            if !value.is_finite() {
                return Err(Error::numeric("train_epoch", "loss diverged"));
            }
            total += value * chunk.len() as f64;
        }
        Ok(total / items.len() as f64)
    }

    /// Fraction of rows whose argmax (lowest index on ties) matches `y`.
    pub fn accuracy(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        if y.is_empty() {
            return Err(Error::contract("evaluation set must be non-empty"));
        }
        let pred = self.forward(x)?.argmax_rows();
        let correct = pred.iter().zip(y).filter(|(p, t)| p == t).count();
        Ok(correct as f64 / y.len() as f64)
    }

    /// Writes the versioned text checkpoint described in the README.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "lada-mlp 1");
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "widths {}", widths.join(" "));
        let _ = writeln!(s, "dropout {:e}", self.dropout);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            for (kind, t) in [("weight", w), ("bias", b)] {
                let _ = writeln!(s, "{kind} {} {} {}", l + 1, t.rows(), t.cols());
                for r in 0..t.rows() {
                    let row: Vec<String> = t.row_slice(r).iter().map(|v| format!("{v:e}")).collect();
                    let _ = writeln!(s, "{}", row.join(" "));
                }
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fail = |offset: usize, detail: &str| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            detail: detail.to_string(),
        };
        let mut offset = 0usize;
        let mut lines = text.split_inclusive('\n').map(|l| {
            let start = offset;
            offset += l.len();
            (start, l.trim_end())
        });
        let mut next = |what: &str| lines.next().ok_or_else(|| fail(text.len(), &format!("missing {what}")));
        let (o, header) = next("header")?;
        if header != "lada-mlp 1" {
            return Err(fail(o, "unknown checkpoint header"));
        }
        let (o, wl) = next("widths")?;
        let widths: Vec<usize> = wl
            .strip_prefix("widths ")
            .ok_or_else(|| fail(o, "expected widths"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| fail(o, "bad width")))
            .collect::<Result<_>>()?;
        let (o, dl) = next("dropout")?;
        let dropout: f64 = dl
            .strip_prefix("dropout ")
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| fail(o, "bad dropout"))?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for _ in 1..widths.len() {
            for kind in ["weight", "bias"] {
                let (o, hl) = next(kind)?;
                let parts: Vec<&str> = hl.split_whitespace().collect();
                if parts.len() != 4 || parts[0] != kind {
                    return Err(fail(o, &format!("expected {kind} header")));
                }
                let rows: usize = parts[2].parse().map_err(|_| fail(o, "bad rows"))?;
                let cols: usize = parts[3].parse().map_err(|_| fail(o, "bad cols"))?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (o, rl) = next("row")?;
                    for t in rl.split_whitespace() {
                        data.push(t.parse::<f64>().map_err(|_| fail(o, "bad value"))?);
                    }
                }
                let t = Tensor::new(vec![rows, cols], data).map_err(|_| fail(o, "row length"))?;
                if kind == "weight" {
                    weights.push(t);
                } else {
                    biases.push(t);
                }
            }
        }
        let model = Self::from_parameters(weights, biases, dropout)?;
        if model.widths != widths {
            return Err(fail(0, "declared widths disagree with parameters"));
        }
        Ok(model)
    }
}
