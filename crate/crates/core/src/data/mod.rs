//! Datasets: synthetic generators, a delimited-text loader, stratified
//! splits and per-class subsampling. Everything is deterministic given a
//! seed.

mod delimited;

pub use delimited::{load_delimited, DelimitedOptions};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ndgrad::Tensor;
use crate::{Error, Result};

/// Labeled examples. Example ids are the row indices `0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(crate::ndgrad::TensorError::Dimension {
                op: "dataset",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            }
            .into());
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
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
        self.features.cols()
    }

    pub fn example_ids(&self) -> std::ops::Range<usize> {
        0..self.len()
    }

    /// Rows `idx` in the given order; ids are re-densified.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let features = self.features.select_rows(idx)?;
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.classes)
    }

    /// Example indices of each class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.indices_by_class().iter().map(Vec::len).collect()
    }
}

fn check_sizes(classes: usize, per_class: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::invalid("data.classes", "need at least 2 classes"));
    }
    if per_class == 0 {
        return Err(Error::invalid("data.per_class", "must be at least 1"));
    }
    Ok(())
}

fn normal(noise: f64) -> Result<Normal<f64>> {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::invalid("data.noise", "must be finite and non-negative"));
    }
    Normal::new(0.0, noise).map_err(|_| Error::invalid("data.noise", format!("{noise} is not a valid std dev")))
}

/// Vertices of a regular simplex with pairwise distance `separation`,
/// centred at the origin, expressed in `dim ≥ classes − 1` coordinates.
fn simplex_means(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    // Centred scaled basis vectors eᵢ·s/√2 − mean live in a (C−1)-dim
    // subspace of ℝ^C; Gram-Schmidt gives coordinates inside it.
    let scale = separation / std::f64::consts::SQRT_2;
    let verts: Vec<Vec<f64>> = (0..classes)
        .map(|i| {
            (0..classes)
                .map(|j| scale * (f64::from(u8::from(i == j)) - 1.0 / classes as f64))
                .collect()
        })
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in verts.iter().take(classes - 1) {
        let mut u = v.clone();
        for b in &basis {
            let p: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(u.into_iter().map(|x| x / n).collect());
    }
    verts
        .iter()
        .map(|v| {
            let mut coords: Vec<f64> = basis
                .iter()
                .map(|b| b.iter().zip(v).map(|(x, y)| x * y).sum())
                .collect();
            coords.resize(dim, 0.0);
            coords
        })
        .collect()
}

/// Isotropic Gaussian clusters around the vertices of a regular simplex.
/// Rows are grouped by class.
pub fn make_blobs(classes: usize, per_class: usize, dim: usize, separation: f64, noise: f64, seed: u64) -> Result<Dataset> {
    check_sizes(classes, per_class)?;
    if dim + 1 < classes {
        return Err(Error::invalid("data.dim", format!("{classes} classes need dim ≥ {}", classes - 1)));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::invalid("data.separation", "must be finite and non-negative"));
    }
    let dist = normal(noise)?;
    let means = simplex_means(classes, dim, separation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(mean.iter().map(|m| m + dist.sample(&mut rng)));
            labels.push(c);
        }
    }
    Dataset::new(Tensor::matrix(labels.len(), dim, data)?, labels, classes)
}

/// Concentric 2-D rings; class `c` sits at radius `c + 1`, with uniform
/// angle and Gaussian radial noise.
pub fn make_rings(classes: usize, per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    check_sizes(classes, per_class)?;
    let dist = normal(noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(classes * per_class * 2);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for _ in 0..per_class {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (c + 1) as f64 + dist.sample(&mut rng);
            data.extend([r * angle.cos(), r * angle.sin()]);
            labels.push(c);
        }
    }
    Dataset::new(Tensor::matrix(labels.len(), 2, data)?, labels, classes)
}

/// `⌈rate·n⌉`, ignoring float noise just above an integer.
pub fn kept_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Keeps `⌈rate·n_c⌉` examples of every class, drawn without replacement.
/// Kept rows stay in their original relative order.
pub fn subsample_per_class(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid("data.sampling_rate", format!("{rate} is outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(ds.len());
    for mut idx in ds.indices_by_class() {
        let k = kept_count(rate, idx.len());
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..k]);
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

/// Stratified train/validation split. Each class sends
/// `⌊fraction·n_c⌋` examples to validation but always keeps one for
/// training. Returns `(train, validation)`; validation is `None` when it
/// would be empty.
pub fn split_stratified(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid("data.val_fraction", format!("{val_fraction} is outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut idx in ds.indices_by_class() {
        if idx.is_empty() {
            continue;
        }
        let n_val = ((val_fraction * idx.len() as f64 + 1e-9).floor() as usize).min(idx.len() - 1);
        idx.shuffle(&mut rng);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    let val = if val.is_empty() { None } else { Some(ds.subset(&val)?) };
    Ok((ds.subset(&train)?, val))
}
