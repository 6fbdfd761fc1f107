use std::collections::VecDeque;

use rand::Rng;

use super::{check_sample_args, KeyBatch, KeyEntry, KeySampler};
use crate::{Error, Result};

/// One bounded FIFO queue of keys per class.
#[derive(Clone, Debug)]
pub struct MocoQueues {
    queues: Vec<VecDeque<KeyEntry>>,
    capacity: usize,
}

impl MocoQueues {
    pub fn new(classes: usize, capacity: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("model.classes", "must be positive"));
        }
        if capacity == 0 {
            return Err(Error::invalid("keys.queue_size", "must be at least 1"));
        }
        Ok(Self {
            queues: vec![VecDeque::with_capacity(capacity); classes],
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn queue(&self, class: usize) -> &VecDeque<KeyEntry> {
        &self.queues[class]
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }

    /// True when every class queue is at capacity.
    pub fn is_full(&self) -> bool {
        self.queues.iter().all(|q| q.len() == self.capacity)
    }

    /// Appends each entry to its class queue, evicting the oldest entry of
    /// a full queue. Labels are checked before anything is inserted.
    pub fn enqueue(&mut self, entries: impl IntoIterator<Item = KeyEntry>) -> Result<()> {
        let entries: Vec<KeyEntry> = entries.into_iter().collect();
        let classes = self.queues.len();
        if let Some(e) = entries.iter().find(|e| e.label >= classes) {
            return Err(Error::Label {
                label: e.label,
                classes,
            });
        }
        for e in entries {
            let q = &mut self.queues[e.label];
            if q.len() == self.capacity {
                q.pop_front();
            }
            q.push_back(e);
        }
        Ok(())
    }
}

impl KeySampler for MocoQueues {
    /// Uniform draws with replacement, so short queues during warm-up still
    /// yield `per_class` keys. Classes are visited in ascending order.
    fn sample<R: Rng + ?Sized>(&self, per_class: usize, query: &KeyEntry, rng: &mut R) -> Result<KeyBatch> {
        check_sample_args(per_class, query, self.queues.len())?;
        if self.is_empty() {
            return Err(Error::EmptyPool);
        }
        let mut picked = Vec::with_capacity(per_class * self.queues.len());
        for q in self.queues.iter().filter(|q| !q.is_empty()) {
            for _ in 0..per_class {
                picked.push(&q[rng.random_range(0..q.len())]);
            }
        }
        KeyBatch::from_entries(query, picked)
    }

    fn classes(&self) -> usize {
        self.queues.len()
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_util::entry;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifo_eviction() {
        let mut q = MocoQueues::new(1, 2).unwrap();
        q.enqueue([entry(1, 0)]).unwrap();
        assert_eq!(q.queue(0).len(), 1);
        q.enqueue([entry(2, 0), entry(3, 0)]).unwrap();
        let held: Vec<_> = q.queue(0).iter().cloned().collect();
        assert_eq!(held, vec![entry(2, 0), entry(3, 0)]);
    }

    #[test]
    fn out_of_range_label_rejected_atomically() {
        let mut q = MocoQueues::new(2, 4).unwrap();
        let err = q.enqueue([entry(1, 0), entry(2, 5)]);
        assert!(matches!(err, Err(Error::Label { label: 5, classes: 2 })));
        assert!(q.is_empty());
    }

    #[test]
    fn interleaved_pushes_route_by_label() {
        // Replay the push sequence by hand and compare every queue.
        let capacity = 3;
        let mut q = MocoQueues::new(3, capacity).unwrap();
        let seq: Vec<(usize, usize)> = (0..20).map(|t| (t, (t * 7 + t / 3) % 3)).collect();
        for &(tag, label) in &seq {
            q.enqueue([entry(tag, label)]).unwrap();
        }
        for c in 0..3 {
            let expect: Vec<KeyEntry> = seq
                .iter()
                .filter(|&&(_, l)| l == c)
                .map(|&(t, l)| entry(t, l))
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .take(capacity)
                .rev()
                .collect();
            let got: Vec<KeyEntry> = q.queue(c).iter().cloned().collect();
            assert_eq!(got, expect, "class {c}");
            assert!(got.iter().all(|e| e.label() == c));
        }
    }

    #[test]
    fn forced_replacement_with_single_entry() {
        let mut q = MocoQueues::new(1, 4).unwrap();
        let e = entry(5, 0);
        q.enqueue([e.clone()]).unwrap();
        let query = entry(0, 0);
        let b = q.sample(2, &query, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.h_keys.row(0), query.h());
        assert_eq!(b.h_keys.row(1), e.h());
        assert_eq!(b.h_keys.row(2), e.h());
    }

    #[test]
    fn batch_size_counts_non_empty_classes() {
        let mut q = MocoQueues::new(4, 5).unwrap();
        for t in 0..15 {
            q.enqueue([entry(t, t % 3)]).unwrap();
        }
        let b = q.sample(2, &entry(99, 1), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(b.len(), 7);
        assert_eq!(b.labels, vec![1, 0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn same_seed_same_batch() {
        let mut q = MocoQueues::new(3, 8).unwrap();
        for t in 0..24 {
            q.enqueue([entry(t, t % 3)]).unwrap();
        }
        let query = entry(100, 2);
        let a = q.sample(4, &query, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = q.sample(4, &query, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_pool_and_bad_arguments() {
        let q = MocoQueues::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(q.sample(1, &entry(0, 0), &mut rng), Err(Error::EmptyPool)));
        assert!(q.sample(0, &entry(0, 0), &mut rng).is_err());
        assert!(MocoQueues::new(2, 0).is_err());
    }
}
