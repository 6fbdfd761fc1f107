//! Key dictionaries: per-class FIFO queues fed by the momentum twin, and a
//! per-example memory bank. Both hand out [`KeyBatch`]es through
//! [`KeySampler`], so the trainer treats them interchangeably.
//!
//! Every batch puts the query's own key in slot 0, which makes the bank
//! `K+1` rows tall and guarantees the query has at least one positive.

mod bank;
mod queues;

pub use bank::{BankSampling, MemoryBank};
pub use queues::MocoQueues;

use rand::Rng;

use crate::ndgrad::Tensor;
use crate::{Error, Result};

/// Tolerance on the unit-norm invariant of stored keys.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// One detached key: normalized hidden feature, normalized projection, label.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyEntry {
    h: Vec<f64>,
    z: Vec<f64>,
    label: usize,
}

impl KeyEntry {
    pub fn new(h: Vec<f64>, z: Vec<f64>, label: usize) -> Result<Self> {
        for (field, v) in [("key h", &h), ("key z", &z)] {
            let norm = crate::ndgrad::l2_norm(v);
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(field, format!("norm {norm} is not 1")));
            }
        }
        Ok(Self { h, z, label })
    }

    /// Row `i` of already-normalized `h` and `z` matrices.
    pub fn from_rows(h: &Tensor, z: &Tensor, i: usize, label: usize) -> Result<Self> {
        Self::new(h.row(i).to_vec(), z.row(i).to_vec(), label)
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn label(&self) -> usize {
        self.label
    }
}

/// `K+1` sampled keys for one query. Slot 0 is the query's own key.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyBatch {
    pub h_keys: Tensor,
    pub z_keys: Tensor,
    pub labels: Vec<usize>,
}

impl KeyBatch {
    pub fn from_entries<'a>(query: &'a KeyEntry, rest: impl IntoIterator<Item = &'a KeyEntry>) -> Result<Self> {
        let mut h = query.h.clone();
        let mut z = query.z.clone();
        let mut labels = vec![query.label];
        let (dh, dz) = (query.h.len(), query.z.len());
        for e in rest {
            if e.h.len() != dh || e.z.len() != dz {
                return Err(crate::ndgrad::TensorError::Dimension {
                    op: "key batch",
                    lhs: vec![dh, dz],
                    rhs: vec![e.h.len(), e.z.len()],
                }
                .into());
            }
            h.extend_from_slice(&e.h);
            z.extend_from_slice(&e.z);
            labels.push(e.label);
        }
        let rows = labels.len();
        Ok(Self {
            h_keys: Tensor::matrix(rows, dh, h)?,
            z_keys: Tensor::matrix(rows, dz, z)?,
            labels,
        })
    }

    /// `K + 1`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Indices of keys sharing `label` (the positive set `S`).
    pub fn positives(&self, label: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(j, &l)| (l == label).then_some(j))
            .collect()
    }
}

/// Common sampling contract of the two key generators.
pub trait KeySampler {
    /// Draws `per_class` keys from every non-empty class and prepends
    /// `query` at slot 0.
    fn sample<R: Rng + ?Sized>(&self, per_class: usize, query: &KeyEntry, rng: &mut R) -> Result<KeyBatch>;

    fn classes(&self) -> usize;
}

/// Either key generator, chosen by configuration.
#[derive(Clone, Debug)]
pub enum KeyPool {
    Queues(MocoQueues),
    Bank(MemoryBank),
}

impl KeySampler for KeyPool {
    fn sample<R: Rng + ?Sized>(&self, per_class: usize, query: &KeyEntry, rng: &mut R) -> Result<KeyBatch> {
        match self {
            KeyPool::Queues(q) => q.sample(per_class, query, rng),
            KeyPool::Bank(b) => b.sample(per_class, query, rng),
        }
    }

    fn classes(&self) -> usize {
        match self {
            KeyPool::Queues(q) => q.classes(),
            KeyPool::Bank(b) => b.classes(),
        }
    }
}

pub(crate) fn check_sample_args(per_class: usize, query: &KeyEntry, classes: usize) -> Result<()> {
    if per_class == 0 {
        return Err(Error::invalid("keys.keys_per_class", "must be at least 1"));
    }
    if query.label >= classes {
        return Err(Error::Label {
            label: query.label,
            classes,
        });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::KeyEntry;

    /// Unit vectors along a rotated axis, distinct per `tag`.
    pub fn entry(tag: usize, label: usize) -> KeyEntry {
        let a = tag as f64 * 0.37;
        KeyEntry::new(vec![a.cos(), a.sin()], vec![a.sin(), 0.0, a.cos()], label).unwrap()
    }
}
