use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_sample_args, KeyBatch, KeyEntry, KeySampler};
use crate::ndgrad::{Tensor, TensorError, NORM_EPS};
use crate::{Error, Result};

/// How the memory bank picks keys.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankSampling {
    /// `per_class` draws from every class, like the queues.
    #[default]
    Balanced,
    /// The same total number of draws, uniformly over all snapshots.
    Uniform,
}

/// One snapshot per training example, mixed as
/// `s ← m·s + (1−m)·new` and renormalized to unit length on every visit.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    entries: Vec<KeyEntry>,
    by_class: Vec<Vec<usize>>,
    momentum: f64,
    sampling: BankSampling,
}

impl MemoryBank {
    /// `entries[i]` is the snapshot of example `i`.
    pub fn new(entries: Vec<KeyEntry>, classes: usize, momentum: f64, sampling: BankSampling) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Momentum(momentum));
        }
        if entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut by_class = vec![Vec::new(); classes];
        for (i, e) in entries.iter().enumerate() {
            by_class
                .get_mut(e.label)
                .ok_or(Error::Label {
                    label: e.label,
                    classes,
                })?
                .push(i);
        }
        Ok(Self {
            entries,
            by_class,
            momentum,
            sampling,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: usize) -> &KeyEntry {
        &self.entries[id]
    }

    pub fn entries(&self) -> &[KeyEntry] {
        &self.entries
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Mixes new unit-norm features into the snapshots of `ids` (row `r` of
    /// `h`/`z` belongs to `ids[r]`). Labels never change.
    pub fn update(&mut self, ids: &[usize], h: &Tensor, z: &Tensor) -> Result<()> {
        if h.rows() != ids.len() || z.rows() != ids.len() {
            return Err(TensorError::Dimension {
                op: "bank_update",
                lhs: vec![ids.len()],
                rhs: vec![h.rows(), z.rows()],
            }
            .into());
        }
        let n = self.entries.len();
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(TensorError::Index { index: bad, len: n }.into());
        }
        let m = self.momentum;
        for (r, &id) in ids.iter().enumerate() {
            let e = &self.entries[id];
            let new_h = mix_unit(&e.h, h.row(r), m)?;
            let new_z = mix_unit(&e.z, z.row(r), m)?;
            self.entries[id] = KeyEntry::new(new_h, new_z, e.label)?;
        }
        Ok(())
    }
}

fn mix_unit(old: &[f64], new: &[f64], m: f64) -> Result<Vec<f64>> {
    if old.len() != new.len() {
        return Err(TensorError::Dimension {
            op: "bank_update",
            lhs: vec![old.len()],
            rhs: vec![new.len()],
        }
        .into());
    }
    let mut v: Vec<f64> = old.iter().zip(new).map(|(&o, &n)| m * o + (1.0 - m) * n).collect();
    let norm = crate::ndgrad::l2_norm(&v);
    if norm < NORM_EPS {
        return Err(TensorError::Degenerate { row: 0, norm }.into());
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

impl KeySampler for MemoryBank {
    fn sample<R: Rng + ?Sized>(&self, per_class: usize, query: &KeyEntry, rng: &mut R) -> Result<KeyBatch> {
        check_sample_args(per_class, query, self.by_class.len())?;
        let non_empty = self.by_class.iter().filter(|c| !c.is_empty()).count();
        let picked: Vec<&KeyEntry> = match self.sampling {
            BankSampling::Balanced => self
                .by_class
                .iter()
                .filter(|c| !c.is_empty())
                .flat_map(|ids| {
                    (0..per_class)
                        .map(|_| &self.entries[ids[rng.random_range(0..ids.len())]])
                        .collect::<Vec<_>>()
                })
                .collect(),
            BankSampling::Uniform => (0..per_class * non_empty)
                .map(|_| &self.entries[rng.random_range(0..self.entries.len())])
                .collect(),
        };
        KeyBatch::from_entries(query, picked)
    }

    fn classes(&self) -> usize {
        self.by_class.len()
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_util::entry;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(m: f64) -> MemoryBank {
        let entries = vec![
            KeyEntry::new(vec![1.0, 0.0], vec![1.0, 0.0], 0).unwrap(),
            KeyEntry::new(vec![0.0, 1.0], vec![0.0, 1.0], 1).unwrap(),
        ];
        MemoryBank::new(entries, 2, m, BankSampling::Balanced).unwrap()
    }

    fn row(v: [f64; 2]) -> Tensor {
        Tensor::from_rows(&[v]).unwrap()
    }

    #[test]
    fn half_mix_then_renormalize() {
        let mut b = bank(0.5);
        b.update(&[0], &row([0.0, 1.0]), &row([0.0, 1.0])).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for v in [b.entry(0).h(), b.entry(0).z()] {
            assert!((v[0] - s).abs() <= 1e-12 && (v[1] - s).abs() <= 1e-12);
        }
        assert_eq!(b.entry(0).label(), 0);
    }

    #[test]
    fn momentum_limits() {
        let mut replace = bank(0.0);
        replace.update(&[1], &row([0.6, 0.8]), &row([1.0, 0.0])).unwrap();
        assert_eq!(replace.entry(1).h(), &[0.6, 0.8]);
        assert_eq!(replace.entry(1).z(), &[1.0, 0.0]);

        let mut keep = bank(1.0);
        keep.update(&[1], &row([0.6, 0.8]), &row([1.0, 0.0])).unwrap();
        assert_eq!(keep.entry(1).h(), &[0.0, 1.0]);
    }

    #[test]
    fn bad_ids_and_shapes() {
        let mut b = bank(0.5);
        assert!(b.update(&[2], &row([1.0, 0.0]), &row([1.0, 0.0])).is_err());
        assert!(b.update(&[0, 1], &row([1.0, 0.0]), &row([1.0, 0.0])).is_err());
    }

    #[test]
    fn one_item_per_class_is_deterministic() {
        let b = bank(0.5);
        let q = KeyEntry::new(vec![1.0, 0.0], vec![1.0, 0.0], 1).unwrap();
        let batch = b.sample(1, &q, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(batch.labels, vec![1, 0, 1]);
        assert_eq!(batch.h_keys.row(1), &[1.0, 0.0]);
        assert_eq!(batch.h_keys.row(2), &[0.0, 1.0]);
    }

    #[test]
    fn balanced_histogram_and_determinism() {
        let entries: Vec<KeyEntry> = (0..30).map(|t| entry(t, t % 3)).collect();
        let b = MemoryBank::new(entries, 3, 0.5, BankSampling::Balanced).unwrap();
        let q = entry(77, 0);
        let a = b.sample(5, &q, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let again = b.sample(5, &q, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, again);
        let mut hist = [0usize; 3];
        for &l in &a.labels[1..] {
            hist[l] += 1;
        }
        assert_eq!(hist, [5, 5, 5]);
    }

    #[test]
    fn uniform_sampling_keeps_batch_size() {
        let entries: Vec<KeyEntry> = (0..30).map(|t| entry(t, t % 3)).collect();
        let b = MemoryBank::new(entries, 3, 0.5, BankSampling::Uniform).unwrap();
        let batch = b.sample(2, &entry(1, 1), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(batch.len(), 7);
    }
}
