//! Datasets: IDX container I/O and the synthetic domain-shift benchmark.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// Labeled samples, one per column of `inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: SplitTag,
    inputs: Mat,
    labels: Vec<usize>,
    classes: usize,
    /// `(channels, height, width)` when the samples are images.
    image_shape: Option<(usize, usize, usize)>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: SplitTag,
        inputs: Mat,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(Error::Shape("dataset must contain at least one sample".into()));
        }
        if inputs.ncols() != labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                inputs.ncols(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Label(format!("label {l} of sample {i} is outside 0..{classes}")));
        }
        Ok(Self {
            name: name.into(),
            split,
            inputs,
            labels,
            classes,
            image_shape: None,
        })
    }

    pub fn with_image_shape(mut self, channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels * height * width != self.dim() {
            return Err(Error::Shape(format!(
                "image shape {channels}×{height}×{width} does not match dimension {}",
                self.dim()
            )));
        }
        self.image_shape = Some((channels, height, width));
        Ok(self)
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.image_shape
    }

    pub fn inputs(&self) -> &Mat {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.nrows()
    }

    /// Columns at `indices`, in that order.
    pub fn gather_inputs(&self, indices: &[usize]) -> Mat {
        self.inputs.select_columns(indices)
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// New dataset made of the samples at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut d = Self::new(
            self.name.clone(),
            self.split,
            self.gather_inputs(indices),
            self.gather_labels(indices),
            self.classes,
        )?;
        d.image_shape = self.image_shape;
        Ok(d)
    }
}

const IDX_UBYTE: u8 = 0x08;

struct IdxArray {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn parse_idx(bytes: &[u8], expected_rank: Option<usize>) -> Result<IdxArray> {
    let fmt = |offset: usize, message: String| Error::Format { offset, message };
    if bytes.len() < 4 {
        return Err(fmt(bytes.len(), "file shorter than the 4-byte magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(fmt(0, format!("bad magic prefix {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(fmt(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    if rank == 0 || expected_rank.is_some_and(|r| r != rank) {
        return Err(fmt(3, format!("unexpected rank {rank}")));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(fmt(bytes.len(), format!("truncated header: need {header} bytes")));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(fmt(
            bytes.len(),
            format!(
                "truncated payload: need {count} bytes after header, have {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > count {
        return Err(fmt(header + count, format!("{} trailing bytes", payload.len() - count)));
    }
    Ok(IdxArray {
        dims,
        payload: payload.to_vec(),
    })
}

/// Parses IDX image and label bytes. Pixels are scaled to `[0, 1]`; the class
/// count is `max(label) + 1`.
pub fn parse_idx_pair(image_bytes: &[u8], label_bytes: &[u8], name: &str, split: SplitTag) -> Result<Dataset> {
    let images = parse_idx(image_bytes, None)?;
    if images.dims.len() < 2 {
        return Err(Error::Format {
            offset: 3,
            message: "image file needs rank >= 2".into(),
        });
    }
    let labels = parse_idx(label_bytes, Some(1))?;
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("label count {} does not match image count {n}", labels.dims[0]),
        });
    }
    if n == 0 {
        return Err(Error::Format {
            offset: 4,
            message: "file declares zero items".into(),
        });
    }
    let d = images.payload.len() / n;
    let inputs = Mat::from_iterator(d, n, images.payload.iter().map(|&b| b as f64 / 255.0));
    let labels: Vec<usize> = labels.payload.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let ds = Dataset::new(name, split, inputs, labels, classes)?;
    match images.dims[1..] {
        [h, w] => ds.with_image_shape(1, h, w),
        [h, w, 1] => ds.with_image_shape(1, h, w),
        _ => Ok(ds),
    }
}

/// Reads an IDX image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let name = images
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_idx_pair(&ib, &lb, &name, SplitTag::Train)
}

fn idx_bytes(dims: &[usize], payload: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(payload);
    out
}

/// Serializes to IDX bytes, quantizing inputs to `round(255 · v)`.
pub fn to_idx_bytes(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if ds.classes > 256 {
        return Err(Error::Label("IDX labels are single bytes".into()));
    }
    let dims = match ds.image_shape {
        Some((1, h, w)) => vec![ds.len(), h, w],
        _ => vec![ds.len(), ds.dim()],
    };
    let images = idx_bytes(
        &dims,
        ds.inputs.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let labels = idx_bytes(&[ds.len()], ds.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn write_idx(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let (ib, lb) = to_idx_bytes(ds)?;
    std::fs::write(images, ib).map_err(|e| Error::io(images, e))?;
    std::fs::write(labels, lb).map_err(|e| Error::io(labels, e))
}

/// Gaussian class blobs in `dim` dimensions; the target domain rotates and
/// offsets the class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticShiftSpec {
    pub classes: usize,
    pub dim: usize,
    /// Distance of every class mean from the origin.
    pub mean_scale: f64,
    pub within_std: f64,
    /// Rotation applied in each coordinate plane `(2i, 2i+1)`.
    pub rotation_deg: f64,
    /// Added to every target coordinate.
    pub offset: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticShiftSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 16,
            mean_scale: 2.0,
            within_std: 1.0,
            rotation_deg: 30.0,
            offset: 0.0,
            train_per_class: 250,
            test_per_class: 100,
            seed: 0,
        }
    }
}

/// Source and target train/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub target_train: Dataset,
    pub target_test: Dataset,
}

impl SyntheticShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 {
            return Err(Error::Config("synthetic data needs >= 2 classes and dim >= 1".into()));
        }
        if self.classes > 2 * self.dim {
            return Err(Error::Config(format!(
                "only {} distinct class means fit in {} dimensions, asked for {}",
                2 * self.dim,
                self.dim,
                self.classes
            )));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("per-class sample counts must be positive".into()));
        }
        if !(self.within_std >= 0.0) || !self.mean_scale.is_finite() {
            return Err(Error::Config("within_std must be >= 0 and mean_scale finite".into()));
        }
        Ok(())
    }

    /// Mean of `class`: `+e_k` for `k < dim`, otherwise `−e_(k−dim)`, scaled.
    fn source_mean(&self, class: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        if class < self.dim {
            m[class] = self.mean_scale;
        } else {
            m[class - self.dim] = -self.mean_scale;
        }
        m
    }

    fn shift(&self, v: &[f64]) -> Vec<f64> {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let mut out = v.to_vec();
        for i in (0..self.dim.saturating_sub(1)).step_by(2) {
            out[i] = c * v[i] - s * v[i + 1];
            out[i + 1] = s * v[i] + c * v[i + 1];
        }
        out.iter_mut().for_each(|x| *x += self.offset);
        out
    }

    fn draw(
        &self,
        means: &[Vec<f64>],
        per_class: usize,
        rng: &mut ChaCha8Rng,
        name: &str,
        split: SplitTag,
    ) -> Result<Dataset> {
        let n = per_class * self.classes;
        let mut inputs = Mat::zeros(self.dim, n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let k = i % self.classes;
            for (r, m) in means[k].iter().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                inputs[(r, i)] = m + self.within_std * z;
            }
            labels.push(k);
        }
        Dataset::new(name, split, inputs, labels, self.classes)
    }

    /// Deterministic in the fields, seed included.
    pub fn generate(&self) -> Result<DomainPair> {
        self.validate()?;
        let source_means: Vec<Vec<f64>> = (0..self.classes).map(|k| self.source_mean(k)).collect();
        let target_means: Vec<Vec<f64>> = source_means.iter().map(|m| self.shift(m)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(DomainPair {
            source_train: self.draw(
                &source_means,
                self.train_per_class,
                &mut rng,
                "synthetic-source",
                SplitTag::Train,
            )?,
            source_test: self.draw(
                &source_means,
                self.test_per_class,
                &mut rng,
                "synthetic-source",
                SplitTag::Test,
            )?,
            target_train: self.draw(
                &target_means,
                self.train_per_class,
                &mut rng,
                "synthetic-target",
                SplitTag::Train,
            )?,
            target_test: self.draw(
                &target_means,
                self.test_per_class,
                &mut rng,
                "synthetic-target",
                SplitTag::Test,
            )?,
        })
    }
}

/// Free-function form of [`SyntheticShiftSpec::generate`].
pub fn gen_synthetic_shift(spec: &SyntheticShiftSpec) -> Result<DomainPair> {
    spec.generate()
}
