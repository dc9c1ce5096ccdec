//! Per-instance affine warps of `H × W` images, trained by gradient ascent on
//! the classifier's predictive entropy of the warped image.
//!
//! Coordinates follow the normalized-grid convention with pixel centers at
//! `(2c + 1) / W − 1`, so the identity warp reproduces the input exactly.
//! Reads outside the image return 0.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::acquisition::entropy_score;
use crate::autodiff::{CustomOp, Graph, Tensor, Var};
use crate::classifier::{Dropout, MlpClassifier};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Row-major 2×3 affine matrix acting on `[x, y, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams(pub [f64; 6]);

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams(IDENTITY)
    }

    /// Pure translation in normalized units.
    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineParams([1.0, 0.0, tx, 0.0, 1.0, ty])
    }

    /// Clamps every entry to `identity ± radius`.
    pub fn clamped(mut self, radius: f64) -> Self {
        for (v, id) in self.0.iter_mut().zip(IDENTITY) {
            *v = v.clamp(id - radius, id + radius);
        }
        self
    }

    /// A warp with entries drawn uniformly in `identity ± scale`.
    pub fn random_small(scale: f64, rng: &mut Rng) -> Self {
        let mut t = IDENTITY;
        for v in &mut t {
            *v += rng.random_range(-scale..=scale);
        }
        AffineParams(t)
    }
}

/// Image geometry of flattened feature rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::contract(format!("image {height}×{width} is smaller than 2×2")));
        }
        Ok(Self { height, width })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Bilinear footprint of one output pixel.
struct Tap {
    idx: [Option<usize>; 4],
    w: [f64; 4],
    /// Derivatives of the four weights w.r.t. source pixel coords (px, py).
    dwx: [f64; 4],
    dwy: [f64; 4],
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn tap(shape: ImageShape, theta: &[f64], r: usize, c: usize) -> (Tap, f64, f64) {
    let (h, w) = (shape.height as f64, shape.width as f64);
    let xn = (2 * c + 1) as f64 / w - 1.0;
    let yn = (2 * r + 1) as f64 / h - 1.0;
    let xs = theta[0] * xn + theta[1] * yn + theta[2];
    let ys = theta[3] * xn + theta[4] * yn + theta[5];
    let px = snap(((xs + 1.0) * w - 1.0) / 2.0);
    let py = snap(((ys + 1.0) * h - 1.0) / 2.0);
    let (x0, y0) = (px.floor(), py.floor());
    let (fx, fy) = (px - x0, py - y0);
    let inside = |x: f64, y: f64| {
        (x >= 0.0 && y >= 0.0 && x < w && y < h).then(|| y as usize * shape.width + x as usize)
    };
    let t = Tap {
        idx: [
            inside(x0, y0),
            inside(x0 + 1.0, y0),
            inside(x0, y0 + 1.0),
            inside(x0 + 1.0, y0 + 1.0),
        ],
        w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        dwx: [-(1.0 - fy), 1.0 - fy, -fy, fy],
        dwy: [-(1.0 - fx), -fx, 1.0 - fx, fx],
    };
    (t, xn, yn)
}

fn warp_row(shape: ImageShape, image: &[f64], theta: &[f64], out: &mut [f64]) {
    for r in 0..shape.height {
        for c in 0..shape.width {
            let (t, _, _) = tap(shape, theta, r, c);
            out[r * shape.width + c] = t
                .idx
                .iter()
                .zip(t.w)
                .filter_map(|(i, w)| i.map(|i| w * image[i]))
                .sum();
        }
    }
}

/// Warps one flattened image.
pub fn affine_grid_sample(image: &[f64], shape: ImageShape, theta: &AffineParams) -> Result<Vec<f64>> {
    if image.len() != shape.pixels() {
        return Err(Error::dim(
            "affine_grid_sample",
            format!("image has {} values, shape needs {}", image.len(), shape.pixels()),
        ));
    }
    let mut out = vec![0.0; image.len()];
    warp_row(shape, image, &theta.0, &mut out);
    Ok(out)
}

/// Tape op: inputs `images [n, H·W]`, `theta [n, 6]`; output warped images.
#[derive(Debug)]
struct WarpOp {
    shape: ImageShape,
}

impl CustomOp for WarpOp {
    fn name(&self) -> &'static str {
        "affine_grid_sample"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (images, thetas) = (inputs[0], inputs[1]);
        let n = images.rows();
        let sw = self.shape.width;
        let (hh, ww) = (self.shape.height as f64, self.shape.width as f64);
        let mut g_img = vec![0.0; images.numel()];
        let mut g_theta = vec![0.0; thetas.numel()];
        for b in 0..n {
            let img = images.row_slice(b);
            let th = thetas.row_slice(b);
            let go = grad.row_slice(b);
            let gi = &mut g_img[b * images.cols()..(b + 1) * images.cols()];
            let gt = &mut g_theta[b * 6..(b + 1) * 6];
            for r in 0..self.shape.height {
                for c in 0..sw {
                    let o = go[r * sw + c];
                    if o == 0.0 {
                        continue;
                    }
                    let (t, xn, yn) = tap(self.shape, th, r, c);
                    let (mut dpx, mut dpy) = (0.0, 0.0);
                    for q in 0..4 {
                        if let Some(i) = t.idx[q] {
                            gi[i] += o * t.w[q];
                            dpx += t.dwx[q] * img[i];
                            dpy += t.dwy[q] * img[i];
                        }
                    }
                    let gx = o * dpx * ww / 2.0;
                    let gy = o * dpy * hh / 2.0;
                    gt[0] += gx * xn;
                    gt[1] += gx * yn;
                    gt[2] += gx;
                    gt[3] += gy * xn;
                    gt[4] += gy * yn;
                    gt[5] += gy;
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(images.shape().to_vec(), g_img)?),
            Some(Tensor::new(thetas.shape().to_vec(), g_theta)?),
        ])
    }
}

/// Differentiable batched warp on a graph.
pub fn graph_warp(g: &mut Graph, images: Var, thetas: Var, shape: ImageShape) -> Result<Var> {
    let (iv, tv) = (g.value(images), g.value(thetas));
    if iv.cols() != shape.pixels() || tv.cols() != 6 || iv.rows() != tv.rows() {
        return Err(Error::dim(
            "graph_warp",
            format!("images {:?} / thetas {:?} for {shape:?}", iv.shape(), tv.shape()),
        ));
    }
    let mut out = vec![0.0; iv.numel()];
    for b in 0..iv.rows() {
        let p = shape.pixels();
        warp_row(shape, iv.row_slice(b), tv.row_slice(b), &mut out[b * p..(b + 1) * p]);
    }
    let out = Tensor::new(iv.shape().to_vec(), out)?;
    g.custom(Box::new(WarpOp { shape }), &[images, thetas], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StnTraining {
    pub steps: usize,
    pub lr: f64,
    /// Half-width of the box around the identity.
    pub clamp: f64,
}

impl Default for StnTraining {
    fn default() -> Self {
        Self {
            steps: 30,
            lr: 5e-2,
            clamp: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StnOutcome {
    /// Best-entropy warp per image.
    pub theta: Vec<AffineParams>,
    pub warped: Tensor,
    pub best_entropy: Vec<f64>,
    /// Mean entropy of the batch at each evaluated step (step 0 = identity).
    pub entropy_trace: Vec<f64>,
}

/// Batched per-image ascent on `H[f(warp(x; θ))]` from the identity, with the
/// classifier frozen. Images are independent; each keeps its best snapshot.
pub fn train_stn_policy(
    classifier: &MlpClassifier,
    images: &Tensor,
    shape: ImageShape,
    settings: &StnTraining,
) -> Result<StnOutcome> {
    let n = images.rows();
    let mut thetas: Vec<f64> = (0..n).flat_map(|_| IDENTITY).collect();
    let mut best_theta = vec![AffineParams::identity(); n];
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut trace = Vec::with_capacity(settings.steps + 1);
    let layers = classifier.num_layers();
    for step in 0..=settings.steps {
        let mut g = Graph::new();
        let params = classifier.bind(&mut g, false);
        let x = g.constant(images.clone());
        let th = g.param(Tensor::new(vec![n, 6], thetas.clone())?);
        let warped = graph_warp(&mut g, x, th, shape)?;
        let logits = classifier.graph_range(&mut g, &params, warped, 0, layers, Dropout::Off)?;
        let ent = g.entropy_from_logits(logits)?;
        let ents = g.value(ent).data().to_vec();
        if ents.iter().any(|e| !e.is_finite()) {
            return Err(Error::numeric("train_stn_policy", format!("entropy diverged; trace {trace:?}")));
        }
        trace.push(ents.iter().sum::<f64>() / n.max(1) as f64);
        for b in 0..n {
            if ents[b] > best[b] {
                best[b] = ents[b];
                best_theta[b] = AffineParams(thetas[b * 6..b * 6 + 6].try_into().expect("6 entries"));
            }
        }
        if step == settings.steps {
            break;
        }
        let total = g.sum(ent)?;
        let grads = g.backward(total)?;
        let gt = grads.get_or_zeros(th, g.value(th));
        for (b, chunk) in thetas.chunks_mut(6).enumerate() {
            for (q, v) in chunk.iter_mut().enumerate() {
                *v += settings.lr * gt.data()[b * 6 + q];
            }
            let c = AffineParams(chunk.try_into().expect("6 entries")).clamped(settings.clamp);
            chunk.copy_from_slice(&c.0);
        }
    }
    let warped = warp_batch(images, shape, &best_theta)?;
    Ok(StnOutcome {
        theta: best_theta,
        warped,
        best_entropy: best,
        entropy_trace: trace,
    })
}

/// Applies one warp per row.
pub fn warp_batch(images: &Tensor, shape: ImageShape, thetas: &[AffineParams]) -> Result<Tensor> {
    if thetas.len() != images.rows() || images.cols() != shape.pixels() {
        return Err(Error::dim("warp_batch", "one warp per image row required"));
    }
    let p = shape.pixels();
    let mut out = vec![0.0; images.numel()];
    for (b, t) in thetas.iter().enumerate() {
        warp_row(shape, images.row_slice(b), &t.0, &mut out[b * p..(b + 1) * p]);
    }
    Tensor::new(images.shape().to_vec(), out)
}

/// `H(f(x)) + H(f(warp(x; θ)))` for one image.
pub fn stn_acquisition_score(
    classifier: &MlpClassifier,
    image: &[f64],
    shape: ImageShape,
    theta: &AffineParams,
) -> Result<f64> {
    let warped = affine_grid_sample(image, shape, theta)?;
    let p = classifier.forward(&Tensor::from_rows(&[image, &warped[..]])?)?;
    Ok(entropy_score(p.row_slice(0))? + entropy_score(p.row_slice(1))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use crate::rng::{stream, Purpose};

    #[test]
    fn identity_is_exact() {
        let s = ImageShape::new(3, 5).unwrap();
        let img: Vec<f64> = (0..15).map(|v| v as f64 * 0.37 - 1.0).collect();
        assert_eq!(affine_grid_sample(&img, s, &AffineParams::identity()).unwrap(), img);
    }

    #[test]
    fn one_pixel_translation_moves_delta() {
        let s = ImageShape::new(4, 4).unwrap();
        let mut img = vec![0.0; 16];
        img[5] = 1.0; // (1, 1)
        // Sampling one pixel to the left shifts content one pixel right.
        let out = affine_grid_sample(&img, s, &AffineParams::translation(-2.0 / 4.0, 0.0)).unwrap();
        let mut want = vec![0.0; 16];
        want[6] = 1.0;
        assert_eq!(out, want);
    }

    #[test]
    fn tiny_images_rejected() {
        assert!(ImageShape::new(1, 4).is_err());
    }

    #[test]
    fn warp_gradient_matches_finite_differences() {
        let s = ImageShape::new(4, 5).unwrap();
        let mut rng = stream(3, 0, Purpose::Stn, 0);
        let img: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let theta = AffineParams::random_small(0.2, &mut rng);
        let img_t = Tensor::row(&img);
        let err = gradient_check(
            |g, t| {
                let x = g.constant(img_t.clone());
                let w = graph_warp(g, x, t, s)?;
                g.mean(w)
            },
            &Tensor::row(&theta.0),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn constant_classifier_keeps_identity() {
        let mut rng = stream(0, 0, Purpose::Init, 0);
        let mut clf = MlpClassifier::new(&[4, 3, 2], 0.0, &mut rng).unwrap();
        let w: Vec<Tensor> = clf.weights().iter().map(|w| Tensor::zeros(w.shape())).collect();
        clf = MlpClassifier::from_parameters(w, clf.biases().to_vec(), 0.0).unwrap();
        let s = ImageShape::new(2, 2).unwrap();
        let x = Tensor::from_rows(&[[0.1, 0.9, 0.3, 0.5]]).unwrap();
        let out = train_stn_policy(&clf, &x, s, &StnTraining::default()).unwrap();
        assert_eq!(out.theta[0], AffineParams::identity());
        let sc = stn_acquisition_score(&clf, x.row_slice(0), s, &out.theta[0]).unwrap();
        assert!((sc - 2.0 * 2f64.ln()).abs() < 1e-12);
    }
}
