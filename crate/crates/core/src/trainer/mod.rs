//! The joint optimization loop.
//!
//! One [`Trainer::step`] runs, in order:
//! 1. the query path on the tape;
//! 2. the key path (momentum twin, or the detached query path in
//!    memory-bank mode);
//! 3. one [`KeyBatch`] per query with the query's own key in slot 0,
//!    sampled from the pool *before* this batch is added to it;
//! 4. the enabled losses, backward, and an SGD step;
//! 5. the momentum update of the twin, using the post-step parameters;
//! 6. enqueueing this batch's keys (or mixing them into the bank).

mod metrics;
mod optimizer;

pub use metrics::{write_metrics_csv, MetricRow, METRICS_HEADER};
pub use optimizer::OptimizerState;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{KeyGenerator, RunConfig, Warmup};
use crate::data::{self, Dataset};
use crate::keypool::{KeyBatch, KeyEntry, KeyPool, KeySampler, MemoryBank, MocoQueues};
use crate::losses::{self, CceVariant, LossNodes, LossTerms, LossWeights, Reduction, Temperature};
use crate::model::{KeyForward, ModelDims, ModelParams, MomentumTwin};
use crate::ndgrad::{Graph, Tensor, TensorError};
use crate::{Error, Result};

/// A mini-batch: features, labels and the example ids (row indices into the
/// training set) used to address memory-bank snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub ids: Vec<usize>,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset, ids: &[usize]) -> Result<Self> {
        Ok(Self {
            x: ds.features().select_rows(ids)?,
            y: ids.iter().map(|&i| ds.labels()[i]).collect(),
            ids: ids.to_vec(),
        })
    }
}

/// Loss settings a step needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub tau: Temperature,
    pub weights: LossWeights,
    pub cce_variant: CceVariant,
    pub reduction: Reduction,
    pub keys_per_class: usize,
    pub warmup: Warmup,
}

impl StepSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            tau: Temperature::new(cfg.loss.tau)?,
            weights: cfg.loss.weights(),
            cce_variant: cfg.loss.cce_variant,
            reduction: cfg.loss.reduction,
            keys_per_class: cfg.keys.keys_per_class,
            warmup: cfg.keys.warmup,
        })
    }
}

/// All mutable state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: ModelParams,
    pub twin: MomentumTwin,
    pub pool: KeyPool,
    pub opt: OptimizerState,
    pub settings: StepSettings,
    iteration: usize,
}

impl Trainer {
    /// Fresh state. Queue mode starts with empty queues; memory-bank mode
    /// snapshots every training example once.
    pub fn new(params: ModelParams, cfg: &RunConfig, train: &Dataset) -> Result<Self> {
        let twin = MomentumTwin::new(&params, cfg.keys.momentum)?;
        let pool = match cfg.keys.generator {
            KeyGenerator::Moco => KeyPool::Queues(MocoQueues::new(params.dims.classes, cfg.keys.queue_size)?),
            KeyGenerator::Membank => {
                let keys = params.query_keys(train.features())?;
                let entries = entries_from(&keys, train.labels())?;
                KeyPool::Bank(MemoryBank::new(
                    entries,
                    params.dims.classes,
                    cfg.keys.bank_momentum,
                    cfg.keys.bank_sampling,
                )?)
            }
        };
        Ok(Self {
            opt: OptimizerState::new(&params, &cfg.optim),
            settings: StepSettings::from_config(cfg)?,
            params,
            twin,
            pool,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Gradient-free pass that fills the dictionary.
    ///
    /// Queues: for every class, its last `queue_size` examples (in dataset
    /// order) go through the twin, so at most `queue_size × C` examples are
    /// visited. The pool must be empty. Memory bank: every snapshot is mixed
    /// with a fresh pass of the query path.
    pub fn warmup(&mut self, ds: &Dataset) -> Result<()> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        match &mut self.pool {
            KeyPool::Queues(q) => {
                if !q.is_empty() {
                    return Err(Error::invalid("keys", "warmup needs an empty queue pool"));
                }
                let cap = q.capacity();
                let mut idx: Vec<usize> = ds
                    .indices_by_class()
                    .into_iter()
                    .flat_map(|c| {
                        let skip = c.len().saturating_sub(cap);
                        c.into_iter().skip(skip)
                    })
                    .collect();
                idx.sort_unstable();
                let batch = Batch::from_dataset(ds, &idx)?;
                let keys = self.twin.forward_key(&batch.x)?;
                q.enqueue(entries_from(&keys, &batch.y)?)?;
            }
            KeyPool::Bank(bank) => {
                let keys = self.params.query_keys(ds.features())?;
                let ids: Vec<usize> = ds.example_ids().collect();
                bank.update(&ids, &keys.h, &keys.z)?;
            }
        }
        Ok(())
    }

    fn contrastive_active(&self) -> bool {
        if !self.settings.weights.contrastive() {
            return false;
        }
        match (&self.pool, self.settings.warmup) {
            (KeyPool::Queues(q), Warmup::Fill) => q.is_full(),
            _ => true,
        }
    }

    /// One optimization step at the current iteration. `rng` drives key
    /// sampling only.
    pub fn step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<LossTerms> {
        let iteration = self.iteration;
        self.step_inner(batch, rng).map_err(|e| match e {
            Error::Tensor(TensorError::NonFinite { context }) => Error::NonFinite { what: context, iteration },
            other => other,
        })
    }

    fn step_inner<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<LossTerms> {
        let iteration = self.iteration;
        let s = self.settings;
        let mut g = Graph::new();
        let q = self.params.forward_query(&mut g, &batch.x)?;

        let keys = match self.pool {
            KeyPool::Queues(_) => self.twin.forward_key(&batch.x)?,
            KeyPool::Bank(_) => self.params.query_keys(&batch.x)?,
        };
        let query_entries = entries_from(&keys, &batch.y)?;

        let mut nodes = LossNodes::default();
        if s.weights.ce != 0.0 {
            nodes.ce = Some(losses::ce(&mut g, q.logits, &batch.y, s.reduction)?);
        }
        if self.contrastive_active() {
            let banks = query_entries
                .iter()
                .map(|e| self.pool.sample(s.keys_per_class, e, rng))
                .collect::<Result<Vec<KeyBatch>>>()?;
            if s.weights.cce != 0.0 {
                let h_norm = g.row_l2_normalize(q.h)?;
                nodes.cce = Some(losses::cce(
                    &mut g,
                    h_norm,
                    &batch.y,
                    q.params.classifier,
                    &banks,
                    s.tau,
                    s.cce_variant,
                    s.reduction,
                )?);
            }
            if s.weights.ccl != 0.0 {
                nodes.ccl = Some(losses::ccl(&mut g, q.z, &batch.y, &banks, s.tau, s.reduction)?);
            }
        }
        let (total, terms) = match losses::bituning_total(&mut g, &nodes, &s.weights) {
            Ok(v) => v,
            // Only contrastive terms requested and the queues are still filling.
            Err(Error::NoLossEnabled) if s.weights.contrastive() => (g.constant(Tensor::scalar(0.0)?), LossTerms::default()),
            Err(e) => return Err(e),
        };
        if !terms.total.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                iteration,
            });
        }
        if g.requires_grad(total) {
            let grads = g.backward(total)?;
            let grads: Vec<Option<Tensor>> = q.params.ids().iter().map(|&id| grads.get(id).cloned()).collect();
            self.opt.apply(&mut self.params, &grads, iteration)?;
        }

        match &mut self.pool {
            KeyPool::Queues(pool) => {
                self.twin.momentum_update(&self.params)?;
                pool.enqueue(query_entries)?;
            }
            KeyPool::Bank(bank) => bank.update(&batch.ids, &keys.h, &keys.z)?,
        }
        self.iteration += 1;
        Ok(terms)
    }
}

fn entries_from(keys: &KeyForward, labels: &[usize]) -> Result<Vec<KeyEntry>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| KeyEntry::from_rows(&keys.h, &keys.z, i, y))
        .collect()
}

/// Top-1 accuracy of the classifier head; ties go to the lowest class.
pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let logits = params.logits(ds.features())?;
    Ok(accuracy(&logits, ds.labels()))
}

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let correct = logits.argmax_rows().iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}

/// Cycles through shuffled epochs; the tail that does not fill a batch is
/// dropped. Sets smaller than a batch are used whole.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, rng: ChaCha8Rng) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            cursor: n,
            batch_size: batch_size.min(n),
            rng,
        };
        s.reshuffle_if_needed();
        s
    }

    fn reshuffle_if_needed(&mut self) {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
    }

    pub fn next_ids(&mut self) -> Vec<usize> {
        self.reshuffle_if_needed();
        let ids = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        ids
    }
}

/// Independent random streams of one run, all derived from the run seed.
pub struct RunStreams {
    pub init: ChaCha8Rng,
    pub batches: ChaCha8Rng,
    pub keys: ChaCha8Rng,
    pub split_seed: u64,
    pub subsample_seed: u64,
}

impl RunStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |n: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(n);
            r
        };
        let mut seeds = stream(4);
        Self {
            init: stream(1),
            batches: stream(2),
            keys: stream(3),
            split_seed: seeds.random(),
            subsample_seed: seeds.random(),
        }
    }
}

/// Train and evaluation sets of a run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub train: Dataset,
    /// Validation split, or the training set when the split is empty.
    pub eval: Dataset,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<RunData> {
    let streams = RunStreams::new(cfg.run.seed);
    let full = cfg.build_dataset()?;
    let (train, val) = data::split_stratified(&full, cfg.data.val_fraction, streams.split_seed)?;
    let train = data::subsample_per_class(&train, cfg.data.sampling_rate, streams.subsample_seed)?;
    let eval = val.unwrap_or_else(|| train.clone());
    Ok(RunData { train, eval })
}

pub fn model_dims(cfg: &RunConfig, ds: &Dataset) -> ModelDims {
    ModelDims {
        input: ds.dim(),
        hidden: cfg.model.hidden.clone(),
        feature: cfg.model.feature_dim,
        classes: ds.classes(),
        projection: cfg.model.projector_dim,
        classifier_bias: cfg.model.classifier_bias,
    }
}

/// Record of a finished run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub config: RunConfig,
    pub seed: u64,
    pub log: Vec<MetricRow>,
    pub params: ModelParams,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// 0 unless `run.timing` is set.
    pub wall_ms: f64,
}

/// Builds data and model from `cfg`, warms up, and trains for
/// `optim.iterations` steps.
pub fn fit(cfg: &RunConfig) -> Result<TrainRun> {
    cfg.validate()?;
    // Only read the clock when asked: there is none on wasm32.
    let start = cfg.run.timing.then(Instant::now);
    let mut streams = RunStreams::new(cfg.run.seed);
    let RunData { train, eval } = prepare_data(cfg)?;
    let params = ModelParams::init(model_dims(cfg, &train), &mut streams.init)?;
    let mut trainer = Trainer::new(params, cfg, &train)?;
    if cfg.keys.warmup == Warmup::Pass && cfg.keys.generator == KeyGenerator::Moco {
        trainer.warmup(&train)?;
    }
    let mut sampler = BatchSampler::new(train.len(), cfg.optim.batch_size, streams.batches);
    let wall = || start.map(|s| s.elapsed().as_secs_f64() * 1e3);

    let mut log = Vec::new();
    let first = evaluate(&trainer.params, &eval)?;
    let mut best = first;
    let mut last_acc = first;
    log.push(MetricRow {
        iteration: 0,
        losses: None,
        val_acc: Some(first),
        wall_ms: wall(),
    });

    let total = cfg.optim.iterations;
    for t in 1..=total {
        let batch = Batch::from_dataset(&train, &sampler.next_ids())?;
        let terms = trainer.step(&batch, &mut streams.keys)?;
        let logged = t % cfg.run.log_every == 0;
        let evaluated = t == total || (cfg.run.eval_every > 0 && t % cfg.run.eval_every == 0);
        let val_acc = if evaluated {
            let acc = evaluate(&trainer.params, &eval)?;
            best = best.max(acc);
            last_acc = acc;
            Some(acc)
        } else {
            None
        };
        if logged || evaluated {
            log.push(MetricRow {
                iteration: t,
                losses: logged.then_some(terms),
                val_acc,
                wall_ms: wall(),
            });
        }
    }
    Ok(TrainRun {
        config: cfg.clone(),
        seed: cfg.run.seed,
        log,
        params: trainer.params,
        final_accuracy: last_acc,
        best_accuracy: best,
        wall_ms: wall().unwrap_or(0.0),
    })
}
