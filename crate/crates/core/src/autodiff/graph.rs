use std::fmt;

use super::tensor::{sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// An operation whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied here.
///
/// `backward` returns one entry per input, `None` for inputs that receive no
/// gradient.
pub trait CustomOp: fmt::Debug + Send {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Softplus(Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Sum(Var),
    SumRows(Var),
    Mean(Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eagerly evaluated reverse-mode tape. Nodes are appended in evaluation
/// order, which is a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed to it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = self.needs(inputs);
        self.push(value, op, rg)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = self.value(a).add_bias(self.value(bias))?;
        Ok(self.record(out, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).relu();
        Ok(self.record(out, Op::Relu(a), &[a]))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_rows()?;
        Ok(self.record(out, Op::Softmax(a), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).log_softmax_rows()?;
        Ok(self.record(out, Op::LogSoftmax(a), &[a]))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).ln()?;
        Ok(self.record(out, Op::Log(a), &[a]))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softplus()?;
        Ok(self.record(out, Op::Softplus(a), &[a]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.record(out, Op::Mul(a, b), &[a, b]))
    }

    /// Row-wise scaling of `a: [n, m]` by `col: [n, 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let out = self.value(a).mul_col(self.value(col))?;
        Ok(self.record(out, Op::MulCol(a, col), &[a, col]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.record(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s)?;
        Ok(self.record(out, Op::Scale(a, s), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_cols(&values)?;
        Ok(self.record(out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum()).ensure_finite("sum")?;
        Ok(self.record(out, Op::Sum(a), &[a]))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_rows()?.ensure_finite("sum_rows")?;
        Ok(self.record(out, Op::SumRows(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).mean()).ensure_finite("mean")?;
        Ok(self.record(out, Op::Mean(a), &[a]))
    }

    /// Records a caller-evaluated op. `output` must already hold the forward
    /// value.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Tensor) -> Result<Var> {
        let name = op.name();
        let output = output.ensure_finite(name)?;
        Ok(self.record(output, Op::Custom(op, inputs.to_vec()), inputs))
    }

    /// Row-wise Shannon entropy (nats) of `softmax(logits)`, as `[n, 1]`.
    pub fn entropy_from_logits(&mut self, logits: Var) -> Result<Var> {
        let p = self.softmax(logits)?;
        let logp = self.log_softmax(logits)?;
        let plogp = self.mul(p, logp)?;
        let s = self.sum_rows(plogp)?;
        self.scale(s, -1.0)
    }

    /// Reverse pass from a scalar `loss`. Gradient buffers start at zero on
    /// every call.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.vjp(node, &g)?;
            for (var, contrib) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(*b).transpose()?)?;
                let gb = val(*a).transpose()?.matmul(g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddBias(a, b) => {
                let gb = g.sum_cols()?;
                let gb = Tensor::new(val(*b).shape().to_vec(), gb.into_data())?;
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::Relu(a) => {
                let x = val(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                vec![(*a, Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let m = y.cols();
                let mut data = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(m).zip(g.data().chunks(m)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    data.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
                }
                vec![(*a, Tensor::new(y.shape().to_vec(), data)?)]
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let m = y.cols();
                let mut data = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(m).zip(g.data().chunks(m)) {
                    let gsum: f64 = gr.iter().sum();
                    data.extend(yr.iter().zip(gr).map(|(&yi, &gi)| gi - yi.exp() * gsum));
                }
                vec![(*a, Tensor::new(y.shape().to_vec(), data)?)]
            }
            Op::Log(a) => {
                let x = val(*a);
                let data = x.data().iter().zip(g.data()).map(|(&xi, &gi)| gi / xi).collect();
                vec![(*a, Tensor::new(x.shape().to_vec(), data)?.ensure_finite("log'")?)]
            }
            Op::Softplus(a) => {
                let x = val(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| gi * sigmoid(xi))
                    .collect();
                vec![(*a, Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::Mul(a, b) => vec![(*a, g.mul(val(*b))?), (*b, g.mul(val(*a))?)],
            Op::MulCol(a, c) => {
                let ga = g.mul_col(val(*c))?;
                let gc = g.mul(val(*a))?.sum_rows()?;
                vec![(*a, ga), (*c, gc)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0)?)],
            Op::Scale(a, s) => vec![(*a, g.scale(*s)?)],
            Op::Concat(parts) => {
                let n = g.rows();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let c = val(*p).cols();
                    let mut data = Vec::with_capacity(n * c);
                    for i in 0..n {
                        data.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                    }
                    offset += c;
                    res.push((*p, Tensor::new(vec![n, c], data)?));
                }
                res
            }
            Op::Sum(a) => {
                let s = g.item()?;
                vec![(*a, Tensor::filled(val(*a).shape(), s))]
            }
            Op::SumRows(a) => {
                let x = val(*a);
                let m = x.cols();
                let mut data = Vec::with_capacity(x.numel());
                for &gi in g.data() {
                    data.extend(std::iter::repeat_n(gi, m));
                }
                vec![(*a, Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::Mean(a) => {
                let x = val(*a);
                let s = g.item()? / x.numel() as f64;
                vec![(*a, Tensor::filled(x.shape(), s))]
            }
            Op::Custom(op, inputs) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let grads = op.backward(&vals, &node.value, g)?;
                if grads.len() != inputs.len() {
                    return Err(Error::contract(format!(
                        "{} backward returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    )));
                }
                inputs
                    .iter()
                    .zip(grads)
                    .filter_map(|(&v, g)| g.map(|g| (v, g)))
                    .collect()
            }
        };
        Ok(out)
    }
}
