use std::io::Write;

use bituning::config::RunConfig;
use clap::ValueEnum;

/// Loss-flag rows of the collaborative-effect ablation, in table order:
/// `(label, ce, cce, ccl)`.
pub const ABLATION_ROWS: [(&str, bool, bool, bool); 5] = [
    ("CE", true, false, false),
    ("CE+CCE", true, true, false),
    ("CE+CCL", true, false, true),
    ("CCE+CCL", false, true, true),
    ("CE+CCE+CCL", true, true, true),
];

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub row: usize,
    pub rate: f64,
    pub seed: u64,
    pub final_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    pub fn accuracies(&self, row: usize, rate: f64) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.row == row && r.rate == rate)
            .map(|r| r.final_accuracy)
            .collect()
    }

    /// Mean final accuracy of `row` at `rate`.
    pub fn mean(&self, row: usize, rate: f64) -> f64 {
        mean_std(&self.accuracies(row, rate)).0
    }

    /// One line per loss combination, with mean and std columns per rate.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "ce,cce,ccl")?;
        for r in &self.rates {
            write!(out, ",mean@{r},std@{r}")?;
        }
        writeln!(out)?;
        for (i, (_, ce, cce, ccl)) in ABLATION_ROWS.iter().enumerate() {
            write!(out, "{},{},{}", u8::from(*ce), u8::from(*cce), u8::from(*ccl))?;
            for &rate in &self.rates {
                let (m, s) = mean_std(&self.accuracies(i, rate));
                write!(out, ",{m:.6},{s:.6}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Every individual fit, for plotting spreads.
    pub fn write_runs_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "losses,rate,seed,final_acc")?;
        for r in &self.runs {
            writeln!(out, "{},{},{},{:.6}", ABLATION_ROWS[r.row].0, r.rate, r.seed, r.final_accuracy)?;
        }
        Ok(())
    }

    /// Human-readable summary in the same layout as the CSV.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12}", "losses");
        for r in &self.rates {
            s.push_str(&format!(" {:>17}", format!("rate {r}")));
        }
        s.push('\n');
        for (i, (name, ..)) in ABLATION_ROWS.iter().enumerate() {
            s.push_str(&format!("{name:<12}"));
            for &rate in &self.rates {
                let (m, sd) = mean_std(&self.accuracies(i, rate));
                s.push_str(&format!(" {:>8.2} ± {:>5.2}", 100.0 * m, 100.0 * sd));
            }
            s.push('\n');
        }
        s
    }
}

/// Hyper-parameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    KeysPerClass,
    ProjectorDim,
    QueueSize,
    Tau,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::KeysPerClass => "keys_per_class",
            SweepAxis::ProjectorDim => "projector_dim",
            SweepAxis::QueueSize => "queue_size",
            SweepAxis::Tau => "tau",
        }
    }

    /// Sets the axis in `cfg`. Integer axes reject fractional values.
    pub fn apply(self, cfg: &mut RunConfig, value: f64) -> anyhow::Result<()> {
        let int = || -> anyhow::Result<usize> {
            anyhow::ensure!(
                value >= 0.0 && value.fract() == 0.0,
                "{} needs whole numbers, got {value}",
                self.name()
            );
            Ok(value as usize)
        };
        match self {
            SweepAxis::KeysPerClass => cfg.keys.keys_per_class = int()?,
            SweepAxis::ProjectorDim => cfg.model.projector_dim = int()?,
            SweepAxis::QueueSize => cfg.keys.queue_size = int()?,
            SweepAxis::Tau => cfg.loss.tau = value,
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    /// Sorted ascending by value, then seed.
    pub runs: Vec<SweepRun>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "axis,value,seed,final_acc,best_acc")?;
        for r in &self.runs {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6}",
                self.axis.name(),
                r.value,
                r.seed,
                r.final_accuracy,
                r.best_accuracy
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:>14} {:>9} {:>7}\n", self.axis.name(), "mean_acc", "std");
        let mut i = 0;
        while i < self.runs.len() {
            let v = self.runs[i].value;
            let accs: Vec<f64> = self.runs[i..]
                .iter()
                .take_while(|r| r.value == v)
                .map(|r| r.final_accuracy)
                .collect();
            i += accs.len();
            let (m, sd) = mean_std(&accs);
            s.push_str(&format!("{v:>14} {:>9.2} {:>7.2}\n", 100.0 * m, 100.0 * sd));
        }
        s
    }
}
