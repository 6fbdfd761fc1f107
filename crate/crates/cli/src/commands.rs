use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bituning::config::RunConfig;
use bituning::gradcheck::{self, GradcheckOptions, GradcheckReport};
use bituning::model::{read_checkpoint, write_checkpoint};
use bituning::trainer::{self, write_metrics_csv};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, Common, Split};
use crate::exit::{ExitKind, NumericalFailure};
use crate::tables::{AblationRun, AblationTable, SweepAxis, SweepRun, SweepTable, ABLATION_ROWS};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Summary of one training run, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub seed: u64,
    pub iterations: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Loss curve, relative to the summary file.
    pub metrics: String,
    pub checkpoint: String,
    pub wall_ms: f64,
}

/// Reads `--config` (if any), then applies `--set`, `--seed` and `--out`
/// in that order.
pub fn load_config(common: &Common) -> Result<RunConfig> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::from_toml_with_overrides(&text, &common.set)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.output = out.display().to_string();
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut f = create(path)?;
    write(&mut f).and_then(|_| f.flush()).with_context(|| format!("writing {}", path.display()))
}

/// Trains one model and writes its artifacts into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<ResultRecord> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let run = trainer::fit(cfg).context("training failed")?;

    write_file(&out.join(METRICS_FILE), |f| write_metrics_csv(&run.log, f))?;
    write_file(&out.join(CHECKPOINT_FILE), |f| write_checkpoint(&run.params, f))?;
    write_file(&out.join(CONFIG_FILE), |f| f.write_all(cfg.to_toml().as_bytes()))?;
    let record = ResultRecord {
        config_hash: cfg.hash(),
        seed: cfg.run.seed,
        iterations: cfg.optim.iterations,
        final_accuracy: run.final_accuracy,
        best_accuracy: run.best_accuracy,
        metrics: METRICS_FILE.into(),
        checkpoint: CHECKPOINT_FILE.into(),
        wall_ms: run.wall_ms,
    };
    write_file(&out.join(SUMMARY_FILE), |f| {
        serde_json::to_writer_pretty(&mut *f, &record)?;
        writeln!(f)
    })?;
    Ok(record)
}

/// Top-1 accuracy of a saved model on the split that `cfg` describes.
pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig, split: Split) -> Result<f64> {
    let file = File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let params = read_checkpoint(BufReader::new(file)).with_context(|| format!("reading {}", checkpoint.display()))?;
    let data = trainer::prepare_data(cfg)?;
    let ds = match split {
        Split::Eval => &data.eval,
        Split::Train => &data.train,
    };
    anyhow::ensure!(
        params.dims.input == ds.dim() && params.dims.classes == ds.classes(),
        bituning::Error::Invalid {
            field: "checkpoint",
            reason: format!(
                "model expects {} inputs and {} classes, data has {} and {}",
                params.dims.input,
                params.dims.classes,
                ds.dim(),
                ds.classes()
            ),
        }
    );
    Ok(trainer::evaluate(&params, ds)?)
}

pub fn cmd_gradcheck(instances: u64, tolerance: f64) -> Result<GradcheckReport> {
    anyhow::ensure!(instances > 0, bituning::Error::Invalid {
        field: "instances",
        reason: "must be at least 1".into()
    });
    Ok(gradcheck::run(&GradcheckOptions {
        seeds: instances,
        tolerance,
        ..GradcheckOptions::default()
    })?)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?)
}

/// Fits every loss combination at every rate and seed. Results come back in
/// job order regardless of `jobs`.
pub fn cmd_ablate(cfg: &RunConfig, rates: &[f64], seeds: &[u64], jobs: Option<usize>) -> Result<AblationTable> {
    let mut plan = Vec::new();
    for &rate in rates {
        for (row, (_, ce, cce, ccl)) in ABLATION_ROWS.iter().enumerate() {
            for &seed in seeds {
                let mut c = cfg.clone();
                c.data.sampling_rate = rate;
                c.loss.ce = f64::from(u8::from(*ce));
                c.loss.cce = f64::from(u8::from(*cce));
                c.loss.ccl = f64::from(u8::from(*ccl));
                c.run.seed = seed;
                c.validate()?;
                plan.push((row, rate, seed, c));
            }
        }
    }
    let runs = pool(jobs)?.install(|| {
        plan.par_iter()
            .map(|(row, rate, seed, c)| {
                let run = trainer::fit(c).with_context(|| format!("{} at rate {rate}, seed {seed}", ABLATION_ROWS[*row].0))?;
                Ok(AblationRun {
                    row: *row,
                    rate: *rate,
                    seed: *seed,
                    final_accuracy: run.final_accuracy,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AblationTable {
        rates: rates.to_vec(),
        seeds: seeds.to_vec(),
        runs,
    })
}

/// One fit per (value, seed), sorted ascending by value then seed.
pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64], seeds: &[u64], jobs: Option<usize>) -> Result<SweepTable> {
    let mut values = values.to_vec();
    values.sort_by(f64::total_cmp);
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    let mut plan = Vec::new();
    for &value in &values {
        for &seed in &seeds {
            let mut c = cfg.clone();
            axis.apply(&mut c, value)?;
            c.run.seed = seed;
            c.validate()?;
            plan.push((value, seed, c));
        }
    }
    let runs = pool(jobs)?.install(|| {
        plan.par_iter()
            .map(|(value, seed, c)| {
                let run = trainer::fit(c).with_context(|| format!("{} = {value}, seed {seed}", axis.name()))?;
                Ok(SweepRun {
                    value: *value,
                    seed: *seed,
                    final_accuracy: run.final_accuracy,
                    best_accuracy: run.best_accuracy,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepTable { axis, runs })
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.run.output)
}

fn seeds_or_default(seeds: &[u64], cfg: &RunConfig) -> Vec<u64> {
    if seeds.is_empty() {
        vec![cfg.run.seed]
    } else {
        seeds.to_vec()
    }
}

pub(crate) fn dispatch(cli: Cli) -> Result<ExitKind> {
    let common = &cli.common;
    match cli.command {
        Command::Train => {
            let cfg = load_config(common)?;
            let out = out_dir(&cfg);
            let rec = cmd_train(&cfg, &out)?;
            println!(
                "final_acc={:.4} best_acc={:.4} config={} -> {}",
                rec.final_accuracy,
                rec.best_accuracy,
                &rec.config_hash[..12],
                out.display()
            );
        }
        Command::Eval { checkpoint, split } => {
            let cfg = load_config(common)?;
            let acc = cmd_eval(&checkpoint, &cfg, split)?;
            println!("{acc:.6}");
        }
        Command::Gradcheck { instances, tolerance } => {
            let report = cmd_gradcheck(instances, tolerance)?;
            print!("{}", report.to_table());
            if !report.passed() {
                let names: Vec<&str> = report.failures().iter().map(|r| r.name).collect();
                return Err(NumericalFailure(format!("gradient check failed for {}", names.join(", "))).into());
            }
        }
        Command::Ablate { rates, seeds } => {
            let cfg = load_config(common)?;
            let seeds = seeds_or_default(&seeds, &cfg);
            let table = cmd_ablate(&cfg, &rates, &seeds, common.jobs)?;
            let out = out_dir(&cfg);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_file(&out.join("ablation.csv"), |f| table.write_csv(f))?;
            write_file(&out.join("ablation_runs.csv"), |f| table.write_runs_csv(f))?;
            print!("{}", table.to_text());
        }
        Command::Sweep { axis, values, seeds } => {
            let cfg = load_config(common)?;
            let seeds = seeds_or_default(&seeds, &cfg);
            let table = cmd_sweep(&cfg, axis, &values, &seeds, common.jobs)?;
            let out = out_dir(&cfg);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_file(&out.join("sweep.csv"), |f| table.write_csv(f))?;
            print!("{}", table.to_text());
        }
    }
    Ok(ExitKind::Ok)
}
