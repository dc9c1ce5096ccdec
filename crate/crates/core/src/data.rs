//! Datasets, file formats and the labeled / unlabeled / test pool.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::classifier::LabeledBatch;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::stn::ImageShape;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Where a dataset came from. Image datasets carry their geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    TwoMoons { n: usize, noise: f64, seed: u64 },
    Idx { images: PathBuf, labels: PathBuf, height: usize, width: usize },
    Csv { path: PathBuf },
    Memory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Row `i` is the instance with id `i`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, provenance: Provenance) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::dim("dataset", "one label per feature row required"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::contract(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            features,
            labels,
            classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        match self.provenance {
            Provenance::Idx { height, width, .. } => ImageShape::new(height, width).ok(),
            _ => None,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

/// Two interleaved half-circles: class 0 on the upper unit circle, class 1 on
/// the lower one shifted by `(1, 0.5)`, plus isotropic Gaussian noise.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if !n.is_multiple_of(2) {
        return Err(Error::contract(format!("two-moons size {n} must be even")));
    }
    if !(noise >= 0.0) {
        return Err(Error::contract("noise must be non-negative"));
    }
    let mut rng = stream(seed, 0, Purpose::Data, 0);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut feats = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = rng.random_range(0.0..=std::f64::consts::PI);
        let (mut x, mut y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        if noise > 0.0 {
            x += normal.sample(&mut rng);
            y += normal.sample(&mut rng);
        }
        feats.extend([x, y]);
        labels.push(class);
    }
    Dataset::new(
        Tensor::new(vec![n, 2], feats)?,
        labels,
        2,
        Provenance::TwoMoons { n, noise, seed },
    )
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        detail: detail.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(path, bytes.len(), "truncated header"))
}

/// Reads an IDX image/label file pair; pixels are scaled to `[0, 1]`.
/// `limit` keeps only the first instances.
pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let ib = read_file(images)?;
    let lb = read_file(labels)?;
    let magic = be_u32(&ib, 0, images)?;
    if magic != IDX_IMAGES {
        return Err(format_err(images, 0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(&ib, 4, images)? as usize;
    let h = be_u32(&ib, 8, images)? as usize;
    let w = be_u32(&ib, 12, images)? as usize;
    let magic = be_u32(&lb, 0, labels)?;
    if magic != IDX_LABELS {
        return Err(format_err(labels, 0, format!("bad label magic {magic:#010x}")));
    }
    let nl = be_u32(&lb, 4, labels)? as usize;
    if nl != n {
        return Err(format_err(labels, 4, format!("label count {nl} != image count {n}")));
    }
    let need = 16 + n * h * w;
    if ib.len() < need {
        return Err(format_err(images, ib.len(), format!("truncated: expected {need} bytes")));
    }
    if lb.len() < 8 + n {
        return Err(format_err(labels, lb.len(), format!("truncated: expected {} bytes", 8 + n)));
    }
    let keep = limit.map_or(n, |l| l.min(n));
    let feats = ib[16..16 + keep * h * w]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let y: Vec<usize> = lb[8..8 + keep].iter().map(|&b| b as usize).collect();
    let classes = y.iter().copied().max().map_or(0, |m| m + 1);
    Dataset::new(
        Tensor::new(vec![keep, h * w], feats)?,
        y,
        classes,
        Provenance::Idx {
            images: images.to_path_buf(),
            labels: labels.to_path_buf(),
            height: h,
            width: w,
        },
    )
}

/// Writes features (rounded to the nearest `k/255`) and labels as IDX.
pub fn write_idx(dataset: &Dataset, shape: ImageShape, images: &Path, labels: &Path) -> Result<()> {
    if dataset.width() != shape.pixels() {
        return Err(Error::dim("write_idx", "feature width does not match image shape"));
    }
    if dataset.classes > 256 {
        return Err(Error::contract("IDX labels hold at most 256 classes"));
    }
    let n = dataset.len() as u32;
    let mut ib = Vec::with_capacity(16 + dataset.features.numel());
    for v in [IDX_IMAGES, n, shape.height as u32, shape.width as u32] {
        ib.extend(v.to_be_bytes());
    }
    ib.extend(
        dataset
            .features
            .data()
            .iter()
            .map(|&f| (f.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lb = Vec::with_capacity(8 + dataset.len());
    for v in [IDX_LABELS, n] {
        lb.extend(v.to_be_bytes());
    }
    lb.extend(dataset.labels.iter().map(|&y| y as u8));
    fs::write(images, ib).map_err(|e| Error::io(images, e))?;
    fs::write(labels, lb).map_err(|e| Error::io(labels, e))
}

/// CSV with header `id,label,f0,f1,...`; ids must be `0..n` in order.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(format_err(path, 0, "header must start with id,label,f0"));
    }
    let width = header.len() - 2;
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        let parse_err = |what: &str| format_err(path, offset, format!("row {row}: bad {what}"));
        let id: usize = rec[0].trim().parse().map_err(|_| parse_err("id"))?;
        if id != row {
            return Err(format_err(path, offset, format!("ids must be dense; expected {row}, got {id}")));
        }
        labels.push(rec[1].trim().parse().map_err(|_| parse_err("label"))?);
        for f in rec.iter().skip(2) {
            feats.push(f.trim().parse::<f64>().map_err(|_| parse_err("feature"))?);
        }
    }
    let n = labels.len();
    let classes = labels.iter().copied().max().map_or(0, |m: usize| m + 1);
    Dataset::new(
        Tensor::new(vec![n, width], feats)?,
        labels,
        classes,
        Provenance::Csv {
            path: path.to_path_buf(),
        },
    )
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    format_err(path, offset, e.to_string())
}

/// Writes `dataset` as CSV; values use shortest round-trip formatting.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(dataset, file).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// CSV serialization to any writer.
pub fn write_csv_to<W: std::io::Write>(dataset: &Dataset, out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::io("<csv>", e);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dataset.width()).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(|e| io(e.into()))?;
    for i in 0..dataset.len() {
        let mut rec = vec![i.to_string(), dataset.labels[i].to_string()];
        rec.extend(dataset.features.row_slice(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

/// Instances partitioned into labeled, unlabeled and test ids. Labels of
/// unlabeled instances stay hidden inside the pool until revealed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Pool {
    dataset: Dataset,
    /// In acquisition order.
    labeled: Vec<usize>,
    /// Ascending.
    unlabeled: Vec<usize>,
    test: Vec<usize>,
    revealed: BTreeMap<usize, usize>,
}

/// Randomly partitions `dataset`: `n_test` test ids, `n_init_labeled` revealed
/// ids (class-balanced when `balanced`), the rest unlabeled.
pub fn split(dataset: Dataset, n_init_labeled: usize, n_test: usize, balanced: bool, seed: u64) -> Result<Pool> {
    let n = dataset.len();
    if n_init_labeled + n_test > n {
        return Err(Error::contract(format!(
            "{n_init_labeled} labeled + {n_test} test exceed {n} instances"
        )));
    }
    if n_test == 0 {
        return Err(Error::contract("test split must be non-empty"));
    }
    let c = dataset.classes;
    if balanced && (c == 0 || !n_init_labeled.is_multiple_of(c)) {
        return Err(Error::contract(format!(
            "{n_init_labeled} initial labels cannot be balanced over {c} classes"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut stream(seed, 0, Purpose::Split, 0));
    let test: Vec<usize> = ids[..n_test].to_vec();
    let rest = &ids[n_test..];
    let labeled: Vec<usize> = if balanced {
        let per = n_init_labeled / c;
        let mut taken = vec![0; c];
        let mut out = Vec::with_capacity(n_init_labeled);
        for &i in rest {
            let y = dataset.labels[i];
            if taken[y] < per {
                taken[y] += 1;
                out.push(i);
            }
        }
        if let Some(short) = taken.iter().position(|&t| t < per) {
            return Err(Error::contract(format!(
                "class {short} has fewer than {per} non-test instances"
            )));
        }
        out
    } else {
        rest[..n_init_labeled].to_vec()
    };
    let mut unlabeled: Vec<usize> = rest.iter().copied().filter(|i| !labeled.contains(i)).collect();
    unlabeled.sort_unstable();
    let revealed = labeled.iter().map(|&i| (i, dataset.labels[i])).collect();
    Ok(Pool {
        dataset,
        labeled,
        unlabeled,
        test,
        revealed,
    })
}

impl Pool {
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn classes(&self) -> usize {
        self.dataset.classes
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn features(&self, id: usize) -> &[f64] {
        self.dataset.features.row_slice(id)
    }

    pub fn rows(&self, ids: &[usize]) -> Tensor {
        self.dataset.features.select_rows(ids)
    }

    pub fn revealed_label(&self, id: usize) -> Option<usize> {
        self.revealed.get(&id).copied()
    }

    pub fn is_unlabeled(&self, id: usize) -> bool {
        self.unlabeled.binary_search(&id).is_ok()
    }

    /// Ground truth, for simulated oracles only.
    pub fn hidden_label(&self, id: usize) -> Option<usize> {
        self.dataset.labels.get(id).copied()
    }

    /// Moves `id` from unlabeled to labeled with the oracle's `label`.
    pub fn reveal(&mut self, id: usize, label: usize) -> Result<()> {
        if label >= self.classes() {
            return Err(Error::contract(format!("class id {label} >= {}", self.classes())));
        }
        let pos = self
            .unlabeled
            .binary_search(&id)
            .map_err(|_| Error::contract(format!("instance {id} is not unlabeled")))?;
        self.unlabeled.remove(pos);
        self.labeled.push(id);
        self.revealed.insert(id, label);
        Ok(())
    }

    pub fn labeled_batch(&self) -> LabeledBatch {
        LabeledBatch {
            x: self.rows(&self.labeled),
            y: self.labeled.iter().map(|i| self.revealed[i]).collect(),
        }
    }

    pub fn test_batch(&self) -> LabeledBatch {
        LabeledBatch {
            x: self.rows(&self.test),
            y: self.test.iter().map(|&i| self.dataset.labels[i]).collect(),
        }
    }

    /// Checks partition disjointness and that every labeled id is revealed.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = vec![0u8; self.dataset.len()];
        for &i in self.labeled.iter().chain(&self.unlabeled).chain(&self.test) {
            seen[i] += 1;
        }
        if seen.iter().any(|&s| s != 1) {
            return Err(Error::contract("pool partitions are not disjoint and exhaustive"));
        }
        if self.labeled.iter().any(|i| !self.revealed.contains_key(i)) || self.revealed.len() != self.labeled.len() {
            return Err(Error::contract("labeled set and revealed labels disagree"));
        }
        Ok(())
    }
}
