//! Datasets: IDX files, synthetic Gaussian clusters and seeded minibatches.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::tensor::DenseTensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Samples stored back to back, each flattened row-major from `sample_shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    sample_shape: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, sample_shape: Vec<usize>, split: Split) -> Result<Self> {
        let dim: usize = sample_shape.iter().product();
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::DataLength {
                shape: vec![labels.len(), dim],
                len: inputs.len(),
            });
        }
        Ok(Self {
            inputs,
            labels,
            sample_shape,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.sample_dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn image(&self, i: usize) -> DenseTensor {
        DenseTensor::new(self.sample_shape.clone(), self.sample(i).to_vec()).expect("shape checked at construction")
    }

    /// One more than the largest label.
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// The first `n` samples (all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs[..n * self.sample_dim()].to_vec(),
            labels: self.labels[..n].to_vec(),
            sample_shape: self.sample_shape.clone(),
            split: self.split,
        }
    }

    pub fn with_sample_shape(mut self, shape: Vec<usize>) -> Result<Self> {
        let dim = self.sample_dim();
        if shape.iter().product::<usize>() != dim {
            return Err(Error::ExtentProduct {
                from: self.sample_shape,
                from_len: dim,
                to: format!("{shape:?}"),
            });
        }
        self.sample_shape = shape;
        Ok(self)
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let d = self.sample_dim();
        let mut inputs = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Batch {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
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

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn check_len(path: &str, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Raw images file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_len(path, bytes, 4)?;
    check_magic(bytes, IMAGES_MAGIC)?;
    check_len(path, bytes, 16)?;
    let (n, rows, cols) = (
        be_u32(bytes, 4) as usize,
        be_u32(bytes, 8) as usize,
        be_u32(bytes, 12) as usize,
    );
    let expected = 16 + n * rows * cols;
    check_len(path, bytes, expected)?;
    Ok((n, rows, cols, bytes[16..expected].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &str) -> Result<Vec<u8>> {
    check_len(path, bytes, 4)?;
    check_magic(bytes, LABELS_MAGIC)?;
    check_len(path, bytes, 8)?;
    let n = be_u32(bytes, 4) as usize;
    check_len(path, bytes, 8 + n)?;
    Ok(bytes[8..8 + n].to_vec())
}

/// Reads an images/labels IDX pair, scaling pixels by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes, &images_path.display().to_string())?;
    let labels = parse_idx_labels(&lbl_bytes, &labels_path.display().to_string())?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let inputs = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(
        inputs,
        labels.iter().map(|&l| l as usize).collect(),
        vec![rows, cols],
        split,
    )
}

/// Serializes a dataset with 2-D samples and pixels in `k/255` back to an IDX pair.
pub fn write_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [rows, cols] = ds.sample_shape[..] else {
        return Err(Error::InvalidShape(ds.sample_shape.clone()));
    };
    let count = u32::try_from(ds.len()).map_err(|_| Error::Config("too many samples for IDX".into()))?;
    let mut images = Vec::with_capacity(16 + ds.inputs.len());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [count, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    for &x in &ds.inputs {
        let p = (x * 255.0).round();
        if !(0.0..=255.0).contains(&p) {
            return Err(Error::NonFinite(format!("pixel {x} outside [0, 1]")));
        }
        images.push(p as u8);
    }
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&count.to_be_bytes());
    for &l in &ds.labels {
        labels.push(u8::try_from(l).map_err(|_| Error::LabelOutOfRange { label: l, classes: 256 })?);
    }
    Ok((images, labels))
}

/// Gaussian clusters with unit variance around class centroids that are
/// pairwise at least six standard deviations apart.
pub fn synth_classification(seed: u64, n: usize, dims: usize, classes: usize) -> Result<Dataset> {
    if n == 0 || dims == 0 || classes == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs n, dims and classes >= 1 (got {n}, {dims}, {classes})"
        )));
    }
    const MIN_SEPARATION: f64 = 6.0;
    let mut rng = substream(seed, Stream::Synth, 0);
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut spread = MIN_SEPARATION;
    let centroids = 'outer: loop {
        for _ in 0..100 {
            let cs: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..dims).map(|_| spread * normal(&mut rng)).collect())
                .collect();
            let separated = (0..classes).all(|a| {
                (a + 1..classes).all(|b| {
                    let d2: f64 = cs[a].iter().zip(&cs[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                    d2 >= MIN_SEPARATION * MIN_SEPARATION
                })
            });
            if separated {
                break 'outer cs;
            }
        }
        spread *= 1.5;
    };
    let mut inputs = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class);
        for &c in &centroids[class] {
            inputs.push(c + normal(&mut rng));
        }
    }
    Dataset::new(inputs, labels, vec![dims], Split::Train)
}

/// Index batches for one epoch: a permutation drawn from `(seed, epoch)`,
/// cut into `batch_size` chunks with the last partial chunk kept.
pub fn minibatch_indices(n: usize, batch_size: usize, seed: u64, epoch: u32) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Stream::Shuffle, epoch));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Shuffled batches of `ds` for one epoch.
pub fn minibatches(ds: &Dataset, batch_size: usize, seed: u64, epoch: u32) -> Result<impl Iterator<Item = Batch> + '_> {
    let chunks = minibatch_indices(ds.len(), batch_size, seed, epoch)?;
    Ok(chunks.into_iter().map(move |idx| ds.gather(&idx)))
}
