//! Finite-difference verification of every tape op and every loss.
//!
//! Each check builds a random instance, takes the analytic gradient of a
//! scalar with one backward pass, and compares every input entry against
//! the central difference `(f(θ+ε) − f(θ−ε)) / 2ε`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::keypool::{KeyBatch, KeyEntry};
use crate::losses::{self, CceVariant, LossNodes, LossWeights, Reduction, Temperature};
use crate::model::{ModelDims, ModelParams};
use crate::ndgrad::{op_name, BackwardFault, Graph, NodeId, OpKind, Tensor};
use crate::Result;

/// Denominator floor for the relative error. Below it the comparison is
/// effectively absolute, which keeps exact zeros (dead ReLUs, unused
/// columns) from turning rounding noise into huge relative errors.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    /// Number of random instances per check.
    pub seeds: u64,
    pub first_seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Corrupts one backward rule in the analytic pass.
    pub fault: Option<BackwardFault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seeds: 20,
            first_seed: 0,
            eps: 1e-6,
            tolerance: 1e-4,
            fault: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Op,
    Loss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub kind: CheckKind,
    /// Largest relative error over all instances and entries.
    pub worst: f64,
    pub instances: u64,
    pub entries: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<CheckRow>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.worst <= self.tolerance)
    }

    pub fn failures(&self) -> Vec<&CheckRow> {
        self.rows.iter().filter(|r| r.worst > self.tolerance).collect()
    }

    /// Plain-text table, one line per check.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<18} {:<5} {:>12} {:>9} {:>8}  status\n", "check", "kind", "max_rel_err", "instances", "entries");
        for r in &self.rows {
            let kind = match r.kind {
                CheckKind::Op => "op",
                CheckKind::Loss => "loss",
            };
            let status = if r.worst <= self.tolerance { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{:<18} {:<5} {:>12.3e} {:>9} {:>8}  {status}\n",
                r.name, kind, r.worst, r.instances, r.entries
            ));
        }
        out
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Builds a scalar from the given leaves.
type Builder<'a> = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'a;

/// Worst relative error of `f` with respect to every entry of `inputs`.
pub fn check_function(inputs: &[Tensor], f: &Builder<'_>, eps: f64, fault: Option<BackwardFault>) -> Result<(f64, usize)> {
    let mut g = fault.map_or_else(Graph::new, Graph::with_fault);
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = f(&mut g, &ids)?;
    let grads = g.backward(root)?;

    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &ids)?;
        Ok(g.value(root).item())
    };

    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut vals = inputs.to_vec();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for j in 0..inputs[k].len() {
            let x = inputs[k].data()[j];
            vals[k].set_flat(j, x + eps)?;
            let plus = eval(&vals)?;
            vals[k].set_flat(j, x - eps)?;
            let minus = eval(&vals)?;
            vals[k].set_flat(j, x)?;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
            entries += 1;
        }
    }
    Ok((worst, entries))
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("finite")
}

/// Entries bounded away from zero so ReLU stays off its kink.
fn off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, rows, cols).map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

/// `Σᵢⱼ out[i,j]·r[i,j]` for a random constant `r`, built from tape ops.
fn weighted_sum(g: &mut Graph, out: NodeId, rng: &mut ChaCha8Rng) -> Result<NodeId> {
    let shape = g.value(out).shape().to_vec();
    if shape.len() < 2 {
        return Ok(g.sum(out)?);
    }
    let (m, n) = (shape[0], shape[1]);
    let r = g.constant(uniform(rng, m, n));
    let rt = g.transpose(r)?;
    let prod = g.matmul(out, rt)?;
    let diag: Vec<(usize, usize)> = (0..m).map(|i| (i, i)).collect();
    let d = g.gather(prod, &diag)?;
    Ok(g.sum(d)?)
}

const OPS: [OpKind; 13] = [
    OpKind::MatMul,
    OpKind::Add,
    OpKind::AddRow,
    OpKind::Scale,
    OpKind::Relu,
    OpKind::Sum,
    OpKind::Mean,
    OpKind::SelectRows,
    OpKind::ConcatRows,
    OpKind::Transpose,
    OpKind::RowL2Normalize,
    OpKind::LogSoftmaxRow,
    OpKind::Gather,
];

fn check_op(op: OpKind, seed: u64, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(2..=4);
    let n = rng.random_range(2..=5);
    let k = rng.random_range(2..=4);
    let head_seed: u64 = rng.random();
    let inputs: Vec<Tensor> = match op {
        OpKind::MatMul => vec![uniform(&mut rng, m, k), uniform(&mut rng, k, n)],
        OpKind::Add | OpKind::ConcatRows => vec![uniform(&mut rng, m, n), uniform(&mut rng, m, n)],
        OpKind::AddRow => vec![uniform(&mut rng, m, n), uniform(&mut rng, 1, n)],
        OpKind::Relu => vec![off_kink(&mut rng, m, n)],
        OpKind::RowL2Normalize | OpKind::LogSoftmaxRow => vec![uniform(&mut rng, m, n).map(|v| 2.0 * v + 0.5)],
        _ => vec![uniform(&mut rng, m, n)],
    };
    let scale = rng.random_range(-2.0..2.0);
    let rows: Vec<usize> = (0..m + 1).map(|_| rng.random_range(0..m)).collect();
    let at: Vec<(usize, usize)> = (0..n + 2).map(|_| (rng.random_range(0..m), rng.random_range(0..n))).collect();
    let f = move |g: &mut Graph, x: &[NodeId]| -> Result<NodeId> {
        let out = match op {
            OpKind::MatMul => g.matmul(x[0], x[1])?,
            OpKind::Add => g.add(x[0], x[1])?,
            OpKind::AddRow => g.add_row(x[0], x[1])?,
            OpKind::Scale => g.scale(x[0], scale)?,
            OpKind::Relu => g.relu(x[0])?,
            OpKind::Sum => g.sum(x[0])?,
            OpKind::Mean => g.mean(x[0])?,
            OpKind::SelectRows => g.select_rows(x[0], &rows)?,
            OpKind::ConcatRows => g.concat_rows(x[0], x[1])?,
            OpKind::Transpose => g.transpose(x[0])?,
            OpKind::RowL2Normalize => g.row_l2_normalize(x[0])?,
            OpKind::LogSoftmaxRow => g.log_softmax_row(x[0])?,
            OpKind::Gather => g.gather(x[0], &at)?,
            OpKind::Leaf => x[0],
        };
        weighted_sum(g, out, &mut ChaCha8Rng::seed_from_u64(head_seed))
    };
    check_function(&inputs, &f, opts.eps, opts.fault)
}

/// Names of the loss checks, in report order.
pub const LOSS_CHECKS: [&str; 6] = ["ce", "info_nce", "cce_literal", "cce_per_key", "ccl", "total"];

struct LossInstance {
    params: ModelParams,
    x: Tensor,
    labels: Vec<usize>,
    keys: Vec<KeyBatch>,
    info_keys: Tensor,
    positive: usize,
    tau: Temperature,
    reduction: Reduction,
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    loop {
        if let Ok(t) = uniform(rng, rows, cols).row_l2_normalize() {
            return t;
        }
    }
}

fn loss_instance(seed: u64) -> Result<LossInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        input: rng.random_range(2..=5),
        hidden: vec![rng.random_range(3..=8)],
        feature: rng.random_range(3..=16),
        classes: rng.random_range(2..=5),
        projection: rng.random_range(3..=8),
        classifier_bias: seed.is_multiple_of(3),
    };
    let params = ModelParams::init(dims.clone(), &mut rng)?;
    let b = rng.random_range(2..=4);
    let x = uniform(&mut rng, b, dims.input).scale(2.0);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..dims.classes)).collect();
    let mut keys = Vec::with_capacity(b);
    for &y in &labels {
        let k = rng.random_range(1..=8);
        let h = unit_rows(&mut rng, k + 1, dims.feature);
        let z = unit_rows(&mut rng, k + 1, dims.projection);
        let entries: Vec<KeyEntry> = (0..=k)
            .map(|i| KeyEntry::from_rows(&h, &z, i, if i == 0 { y } else { rng.random_range(0..dims.classes) }))
            .collect::<Result<_>>()?;
        keys.push(KeyBatch::from_entries(&entries[0], &entries[1..])?);
    }
    let kn = rng.random_range(1..=8);
    Ok(LossInstance {
        info_keys: unit_rows(&mut rng, kn + 1, dims.projection),
        positive: rng.random_range(0..=kn),
        tau: Temperature::new(rng.random_range(0.07..1.0))?,
        reduction: if seed.is_multiple_of(2) { Reduction::Sum } else { Reduction::Mean },
        params,
        x,
        labels,
        keys,
    })
}

fn check_loss(name: &str, seed: u64, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let inst = loss_instance(seed)?;
    let template = inst.params.clone();
    let inputs: Vec<Tensor> = template.tensors().into_iter().cloned().collect();
    let f = |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
        let x = g.constant(inst.x.clone());
        let q = crate::model::forward_bound(g, &template.nodes_from(ids), x)?;
        let i = &inst;
        let cce = |g: &mut Graph, variant| -> Result<NodeId> {
            let hn = g.row_l2_normalize(q.h)?;
            losses::cce(g, hn, &i.labels, q.params.classifier, &i.keys, i.tau, variant, i.reduction)
        };
        match name {
            "ce" => losses::ce(g, q.logits, &i.labels, i.reduction),
            "info_nce" => {
                let z0 = g.select_rows(q.z, &[0])?;
                losses::info_nce(g, z0, &i.info_keys, i.positive, i.tau)
            }
            "cce_literal" => cce(g, CceVariant::Literal),
            "cce_per_key" => cce(g, CceVariant::PerKey),
            "ccl" => losses::ccl(g, q.z, &i.labels, &i.keys, i.tau, i.reduction),
            "total" => {
                let nodes = LossNodes {
                    ce: Some(losses::ce(g, q.logits, &i.labels, i.reduction)?),
                    cce: Some(cce(g, CceVariant::Literal)?),
                    ccl: Some(losses::ccl(g, q.z, &i.labels, &i.keys, i.tau, i.reduction)?),
                };
                Ok(losses::bituning_total(g, &nodes, &LossWeights::default())?.0)
            }
            other => unreachable!("unknown loss check {other}"),
        }
    };
    check_function(&inputs, &f, opts.eps, opts.fault)
}

/// Runs every op and loss check over `opts.seeds` random instances.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let seeds = opts.first_seed..opts.first_seed + opts.seeds;
    let mut rows = Vec::new();
    for op in OPS {
        rows.push(aggregate(op_name(op), CheckKind::Op, seeds.clone(), |s| check_op(op, s, opts))?);
    }
    for name in LOSS_CHECKS {
        rows.push(aggregate(name, CheckKind::Loss, seeds.clone(), |s| check_loss(name, s, opts))?);
    }
    Ok(GradcheckReport {
        rows,
        tolerance: opts.tolerance,
    })
}

fn aggregate(
    name: &'static str,
    kind: CheckKind,
    seeds: std::ops::Range<u64>,
    mut check: impl FnMut(u64) -> Result<(f64, usize)>,
) -> Result<CheckRow> {
    let mut row = CheckRow {
        name,
        kind,
        worst: 0.0,
        instances: 0,
        entries: 0,
    };
    for s in seeds {
        let (w, n) = check(s)?;
        row.worst = row.worst.max(w);
        row.instances += 1;
        row.entries += n;
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(fault: Option<BackwardFault>) -> GradcheckReport {
        run(&GradcheckOptions {
            seeds: 3,
            fault,
            ..GradcheckOptions::default()
        })
        .unwrap()
    }

    #[test]
    fn all_checks_pass_and_every_loss_is_listed_once() {
        let report = quick(None);
        assert!(report.passed(), "{}", report.to_table());
        for name in LOSS_CHECKS {
            assert_eq!(report.rows.iter().filter(|r| r.name == name).count(), 1);
        }
        assert_eq!(report.rows.len(), OPS.len() + LOSS_CHECKS.len());
    }

    #[test]
    fn corrupted_backward_rule_is_detected() {
        for op in [OpKind::LogSoftmaxRow, OpKind::RowL2Normalize, OpKind::MatMul] {
            let report = quick(Some(BackwardFault { op, factor: 1.01 }));
            let failed: Vec<&str> = report.failures().iter().map(|r| r.name).collect();
            assert!(failed.contains(&op_name(op)), "{op:?}: {}", report.to_table());
            assert!(failed.contains(&"total"));
        }
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1e-9, 0.0) - 1e-6).abs() < 1e-18);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
