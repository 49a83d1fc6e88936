//! Dataset provisioning: synthetic generators, IDX binary parsing, batching.

use std::path::Path;

use crate::error::{Error, Result};
use crate::perturb::RngStream;
use crate::tensor::Tensor;

/// A finite labeled sample set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize, name: String) -> Result<Self> {
        if !inputs.is_2d() || inputs.rows() != labels.len() {
            return Err(Error::Data(format!(
                "dataset {name}: inputs {:?} vs {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Data(format!("dataset {name}: empty")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "dataset {name}: label {bad} out of range for {num_classes} classes"
            )));
        }
        if !inputs.all_finite() {
            return Err(Error::Data(format!("dataset {name}: non-finite input")));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            name,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows of this dataset at `indices`, in order.
    pub fn gather(&self, indices: &[usize], name: String) -> Result<Dataset> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            Tensor::new(vec![indices.len(), d], data)?,
            labels,
            self.num_classes,
            name,
        )
    }
}

/// One mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn fisher_yates(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Two interleaving half-circle classes.
///
/// Class 0 lies on the unit circle at the origin (upper arc); class 1 lies on
/// the unit circle centered at `(1, -0.5)` (lower arc). Gaussian coordinate
/// noise with standard deviation `noise_sd` is added on top.
pub fn gen_two_moons(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Config(format!(
            "gen_two_moons: n must be even and >= 2, got {n}"
        )));
    }
    if noise_sd < 0.0 {
        return Err(Error::Config(format!(
            "gen_two_moons: noise_sd must be >= 0, got {noise_sd}"
        )));
    }
    let half = n / 2;
    let mut rng = RngStream::from_seed(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = std::f64::consts::PI * rng.next_f64();
        let (x, y, label) = if i < half {
            (t.cos(), t.sin(), 0)
        } else {
            (1.0 + t.cos(), -0.5 - t.sin(), 1)
        };
        data.push(x + noise_sd * rng.next_gaussian());
        data.push(y + noise_sd * rng.next_gaussian());
        labels.push(label);
    }
    Dataset::new(
        Tensor::new(vec![n, 2], data)?,
        labels,
        2,
        "two_moons".into(),
    )
}

/// Equal-sized Gaussian clusters, one per center; label = center index.
pub fn gen_blobs(n: usize, centers: &[Vec<f64>], spread: f64, seed: u64) -> Result<Dataset> {
    if centers.len() < 2 {
        return Err(Error::Config(format!(
            "gen_blobs: need >= 2 centers, got {}",
            centers.len()
        )));
    }
    let k = centers.len();
    if n == 0 || n % k != 0 {
        return Err(Error::Config(format!(
            "gen_blobs: n = {n} is not a positive multiple of {k} centers"
        )));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::Config("gen_blobs: centers must share a positive dimension".into()));
    }
    if spread < 0.0 {
        return Err(Error::Config(format!(
            "gen_blobs: spread must be >= 0, got {spread}"
        )));
    }
    let per = n / k;
    let mut rng = RngStream::from_seed(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per {
            for &c in center {
                data.push(c + spread * rng.next_gaussian());
            }
            labels.push(label);
        }
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, k, "blobs".into())
}

const IDX_TYPE_UBYTE: u8 = 0x08;

/// Parse an IDX binary blob (unsigned-byte payload) into the stated shape,
/// rescaling bytes to [0, 1].
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    let (shape, payload) = parse_idx_bytes(bytes)?;
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(shape, data)
}

/// Parse an IDX blob into its shape and raw byte payload.
pub fn parse_idx_bytes(bytes: &[u8]) -> Result<(Vec<usize>, Vec<u8>)> {
    let err = |offset: usize, message: String| Error::Parse { offset, message };
    if bytes.len() < 4 {
        return Err(err(bytes.len(), "truncated magic".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        let offset = if bytes[0] != 0 { 0 } else { 1 };
        return Err(err(offset, format!("bad magic byte 0x{:02x}", bytes[offset])));
    }
    if bytes[2] != IDX_TYPE_UBYTE {
        return Err(err(
            2,
            format!("unsupported type byte 0x{:02x} (only unsigned byte 0x08)", bytes[2]),
        ));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(err(3, "zero-dimensional idx".into()));
    }
    let mut off = 4;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        if bytes.len() < off + 4 {
            return Err(err(bytes.len(), "truncated dimension table".into()));
        }
        let dim = u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(err(off, "zero-sized dimension".into()));
        }
        shape.push(dim);
        off += 4;
    }
    let numel: usize = shape.iter().product();
    if bytes.len() < off + numel {
        return Err(err(bytes.len(), format!("truncated payload: want {numel} bytes")));
    }
    if bytes.len() > off + numel {
        return Err(err(off + numel, "trailing bytes after payload".into()));
    }
    Ok((shape, bytes[off..].to_vec()))
}

/// Inverse of [`parse_idx_bytes`]: assemble an IDX blob from shape + payload.
pub fn serialize_idx(shape: &[usize], payload: &[u8]) -> Result<Vec<u8>> {
    let numel: usize = shape.iter().product();
    if shape.is_empty() || shape.len() > 255 || shape.iter().any(|&d| d == 0 || d > u32::MAX as usize)
    {
        return Err(Error::Contract(format!("serialize_idx: bad shape {shape:?}")));
    }
    if numel != payload.len() {
        return Err(Error::Contract(format!(
            "serialize_idx: shape {shape:?} wants {numel} bytes, got {}",
            payload.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + 4 * shape.len() + payload.len());
    out.extend_from_slice(&[0, 0, IDX_TYPE_UBYTE, shape.len() as u8]);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    Ok(out)
}

/// Load an MNIST-style (images, labels) IDX file pair into a flat dataset.
///
/// Image files must be at least 2-D (samples x pixel dims); pixels land in
/// [0, 1] and each image is flattened to one row. `limit` keeps the first
/// `limit` samples of both files.
pub fn load_idx_dataset(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
    name: String,
) -> Result<Dataset> {
    let (img_shape, img_bytes) = parse_idx_bytes(&std::fs::read(images_path)?)?;
    let (lab_shape, lab_bytes) = parse_idx_bytes(&std::fs::read(labels_path)?)?;
    if img_shape.len() < 2 {
        return Err(Error::Data(format!(
            "image idx must be >= 2-D, got {img_shape:?}"
        )));
    }
    if lab_shape.len() != 1 {
        return Err(Error::Data(format!(
            "label idx must be 1-D, got {lab_shape:?}"
        )));
    }
    if img_shape[0] != lab_shape[0] {
        return Err(Error::Data(format!(
            "{} images vs {} labels",
            img_shape[0], lab_shape[0]
        )));
    }
    let n = limit.map_or(img_shape[0], |l| l.min(img_shape[0]));
    if n == 0 {
        return Err(Error::Data("empty idx subset".into()));
    }
    let dim: usize = img_shape[1..].iter().product();
    let data: Vec<f64> = img_bytes[..n * dim].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab_bytes[..n].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(
        Tensor::new(vec![n, dim], data)?,
        labels,
        num_classes.max(2),
        name,
    )
}

/// Seed-derived random batches; the final partial batch is dropped so every
/// batch can be sharded evenly.
pub fn batches(ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 || batch_size > ds.len() {
        return Err(Error::Config(format!(
            "batches: batch size {batch_size} for dataset of {}",
            ds.len()
        )));
    }
    let mut rng = RngStream::from_seed(epoch_seed);
    let perm = fisher_yates(ds.len(), &mut rng);
    let d = ds.dim();
    let mut out = Vec::with_capacity(ds.len() / batch_size);
    for chunk in perm.chunks_exact(batch_size) {
        let mut data = Vec::with_capacity(batch_size * d);
        let mut labels = Vec::with_capacity(batch_size);
        for &i in chunk {
            data.extend_from_slice(ds.inputs.row(i));
            labels.push(ds.labels[i]);
        }
        out.push(Batch {
            inputs: Tensor::new(vec![batch_size, d], data)?,
            labels,
        });
    }
    Ok(out)
}

/// Deterministic train/test split by seeded permutation.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::Config(format!(
            "split_train_test: test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let n_test = ((ds.len() as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= ds.len() {
        return Err(Error::Config(format!(
            "split_train_test: fraction {test_fraction} leaves an empty split of {}",
            ds.len()
        )));
    }
    let mut rng = RngStream::from_seed(seed);
    let perm = fisher_yates(ds.len(), &mut rng);
    let train = ds.gather(&perm[n_test..], format!("{}_train", ds.name))?;
    let test = ds.gather(&perm[..n_test], format!("{}_test", ds.name))?;
    Ok((train, test))
}

/// Per-feature affine standardization fitted on the training split.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Standardizer {
        let (n, d) = (train.len(), train.dim());
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(train.inputs.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for r in 0..n {
            for (j, v) in train.inputs.row(r).iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        let sd = var
            .into_iter()
            .map(|v| (v / n as f64).sqrt().max(1e-12))
            .collect();
        Standardizer { mean, sd }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let (n, d) = (ds.len(), ds.dim());
        if d != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardize: fitted on dim {}, applied to dim {d}",
                self.mean.len()
            )));
        }
        let mut data = Vec::with_capacity(n * d);
        for r in 0..n {
            for (j, v) in ds.inputs.row(r).iter().enumerate() {
                data.push((v - self.mean[j]) / self.sd[j]);
            }
        }
        Dataset::new(
            Tensor::new(vec![n, d], data)?,
            ds.labels.clone(),
            ds.num_classes,
            ds.name.clone(),
        )
    }
}
