//! Run configuration: a TOML document with `[data]`, `[model]`, `[keys]`,
//! `[loss]`, `[optim]` and `[run]` sections. Unknown keys are rejected.
//! Every field has a default, so an empty document is a valid config.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset, DelimitedOptions};
use crate::keypool::BankSampling;
use crate::losses::{CceVariant, LossWeights, Reduction, Temperature, DEFAULT_TAU};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub keys: KeyConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub run: RunSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    #[default]
    Blobs,
    Rings,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub generator: Generator,
    pub classes: usize,
    pub per_class: usize,
    /// Blob dimensionality; rings are always 2-D.
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    /// Seed for dataset generation; defaults to the run seed.
    pub seed: Option<u64>,
    pub path: Option<String>,
    pub delimiter: String,
    pub label_column: usize,
    pub header: bool,
    pub val_fraction: f64,
    /// Per-class fraction of the training split kept for training.
    pub sampling_rate: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generator: Generator::Blobs,
            classes: 3,
            per_class: 100,
            dim: 2,
            separation: 4.0,
            noise: 0.1,
            seed: None,
            path: None,
            delimiter: ",".into(),
            label_column: 0,
            header: false,
            val_fraction: 0.3,
            sampling_rate: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub projector_dim: usize,
    pub classifier_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            feature_dim: 32,
            projector_dim: 128,
            classifier_bias: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyGenerator {
    #[default]
    Moco,
    Membank,
}

/// How the dictionary is prepared before contrastive terms apply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Warmup {
    /// One gradient-free pass through the key encoder fills the pool.
    #[default]
    Pass,
    /// No pre-pass; contrastive terms switch on once every queue is full.
    Fill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyConfig {
    pub generator: KeyGenerator,
    /// Capacity of each per-class queue.
    pub queue_size: usize,
    pub keys_per_class: usize,
    /// Momentum of the key encoder.
    pub momentum: f64,
    pub bank_momentum: f64,
    pub bank_sampling: BankSampling,
    pub warmup: Warmup,
}

impl Default for KeyConfig {
    fn default() -> Self {
        Self {
            generator: KeyGenerator::Moco,
            queue_size: 32,
            keys_per_class: 2,
            momentum: 0.999,
            bank_momentum: 0.5,
            bank_sampling: BankSampling::Balanced,
            warmup: Warmup::Pass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub ce: f64,
    pub cce: f64,
    pub ccl: f64,
    pub cce_variant: CceVariant,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            ce: 1.0,
            cce: 1.0,
            ccl: 1.0,
            cce_variant: CceVariant::Literal,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            ce: self.ce,
            cce: self.cce,
            ccl: self.ccl,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub head_lr_multiplier: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// `[iteration, factor]` pairs; the learning rate is multiplied by every
    /// factor whose iteration has been reached. Defaults to ×0.1 at 2/3
    /// and at 5/6 of the run.
    pub schedule: Option<Vec<(usize, f64)>>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 3e-4,
            head_lr_multiplier: 10.0,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            iterations: 2000,
            batch_size: 32,
            schedule: None,
        }
    }
}

impl OptimConfig {
    pub fn effective_schedule(&self) -> Vec<(usize, f64)> {
        self.schedule.clone().unwrap_or_else(|| {
            let t = self.iterations;
            vec![(2 * t / 3, 0.1), (5 * t / 6, 0.1)]
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub log_every: usize,
    /// Validation cadence; 0 evaluates only at the start and the end.
    pub eval_every: usize,
    /// Fill the `wall_ms` metric column. Off by default so metric files are
    /// byte-identical across repeated runs.
    pub timing: bool,
    pub output: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            log_every: 1,
            eval_every: 100,
            timing: false,
            output: "runs/latest".into(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML document and applies `key=value` overrides (dotted
    /// keys, TOML values; bare words are taken as strings).
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::invalid("config", e.message().to_string()))?;
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::invalid("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Hex SHA-256 of the canonical TOML form, ignoring `run.output` so the
    /// same experiment hashes the same wherever it is written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.run.output.clear();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.run.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.sampling_rate > 0.0 && d.sampling_rate <= 1.0) {
            return Err(Error::invalid("data.sampling_rate", "must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&d.val_fraction) {
            return Err(Error::invalid("data.val_fraction", "must be in [0, 1)"));
        }
        if d.generator == Generator::Csv && d.path.is_none() {
            return Err(Error::invalid("data.path", "required for the csv generator"));
        }
        if d.delimiter.len() != 1 {
            return Err(Error::invalid("data.delimiter", "must be a single byte"));
        }
        let m = &self.model;
        if m.feature_dim == 0 || m.projector_dim == 0 || m.hidden.contains(&0) {
            return Err(Error::invalid("model", "layer widths must be positive"));
        }
        let k = &self.keys;
        if k.queue_size == 0 {
            return Err(Error::invalid("keys.queue_size", "must be at least 1"));
        }
        if k.keys_per_class == 0 {
            return Err(Error::invalid("keys.keys_per_class", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&k.momentum) {
            return Err(Error::invalid("keys.momentum", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&k.bank_momentum) {
            return Err(Error::invalid("keys.bank_momentum", "must be in [0, 1]"));
        }
        Temperature::new(self.loss.tau)?;
        let l = &self.loss;
        for (field, w) in [("loss.ce", l.ce), ("loss.cce", l.cce), ("loss.ccl", l.ccl)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(field, "weights must be finite and non-negative"));
            }
        }
        if l.ce == 0.0 && l.cce == 0.0 && l.ccl == 0.0 {
            return Err(Error::NoLossEnabled);
        }
        let o = &self.optim;
        for (field, v) in [
            ("optim.base_lr", o.base_lr),
            ("optim.head_lr_multiplier", o.head_lr_multiplier),
            ("optim.weight_decay", o.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, "must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&o.sgd_momentum) {
            return Err(Error::invalid("optim.sgd_momentum", "must be in [0, 1)"));
        }
        if o.batch_size == 0 {
            return Err(Error::invalid("optim.batch_size", "must be at least 1"));
        }
        if self.run.log_every == 0 {
            return Err(Error::invalid("run.log_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Builds the full dataset described by `[data]`.
    pub fn build_dataset(&self) -> Result<Dataset> {
        let d = &self.data;
        let seed = self.data_seed();
        match d.generator {
            Generator::Blobs => data::make_blobs(d.classes, d.per_class, d.dim, d.separation, d.noise, seed),
            Generator::Rings => data::make_rings(d.classes, d.per_class, d.noise, seed),
            Generator::Csv => {
                let path = d.path.as_deref().ok_or_else(|| Error::invalid("data.path", "missing"))?;
                data::load_delimited(
                    std::path::Path::new(path),
                    &DelimitedOptions {
                        delimiter: d.delimiter.as_bytes()[0],
                        label_column: d.label_column,
                        has_header: d.header,
                    },
                )
            }
        }
    }
}

fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid("--set", format!("`{assignment}` is not KEY=VALUE")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::invalid("--set", format!("`{p}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
