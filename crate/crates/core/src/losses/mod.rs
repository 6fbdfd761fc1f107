//! The four objectives and their unweighted sum, built on the tape.
//!
//! * `ce`: softmax over classes of `h·Wᵀ`, negative log-likelihood of the label.
//! * `info_nce`: one positive among `K+1` keys, logits `q·k/τ`.
//! * `cce`: for query `i`, softmax along the key bank of `w_{yᵢ}·h/τ`. The
//!   bank row 0 is the query's own normalized `h` (live, so gradient reaches
//!   the encoder through it); rows `1..=K` are detached keys.
//! * `ccl`: InfoNCE with every same-label key counted as a positive.
//!
//! All terms sum over the batch unless [`Reduction::Mean`] is selected, in
//! which case every term is divided by the batch size.

use serde::{Deserialize, Serialize};

use crate::keypool::KeyBatch;
use crate::ndgrad::{Graph, NodeId, Tensor};
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.07;

/// Softmax temperature, strictly positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid("loss.tau", format!("{tau} is not a positive number")));
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(DEFAULT_TAU)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Which numerator the contrastive cross-entropy uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CceVariant {
    /// Numerator `w_y·h_q`, weighted by the number of positives `|S|`.
    #[default]
    Literal,
    /// One term per positive key `k ∈ S`, numerator `w_y·h_k`.
    PerKey,
}

fn reduce(g: &mut Graph, terms: Vec<NodeId>, reduction: Reduction) -> Result<NodeId> {
    let n = terms.len();
    let mut it = terms.into_iter();
    let mut acc = it.next().ok_or(Error::EmptyDataset)?;
    for t in it {
        acc = g.add(acc, t)?;
    }
    Ok(match reduction {
        Reduction::Sum => acc,
        Reduction::Mean => g.scale(acc, 1.0 / n as f64)?,
    })
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::Label { label, classes }),
        None => Ok(()),
    }
}

fn check_keys(labels: &[usize], keys: &[KeyBatch]) -> Result<()> {
    if keys.len() != labels.len() {
        return Err(Error::KeyBatchMismatch {
            queries: labels.len(),
            keys: keys.len(),
        });
    }
    for (kb, &y) in keys.iter().zip(labels) {
        if kb.labels.first() != Some(&y) {
            return Err(Error::SlotZeroLabel {
                slot0: kb.labels.first().copied().unwrap_or(usize::MAX),
                query: y,
            });
        }
    }
    Ok(())
}

/// Cross-entropy over classes. `logits` is `b×C`.
pub fn ce(g: &mut Graph, logits: NodeId, labels: &[usize], reduction: Reduction) -> Result<NodeId> {
    let t = g.value(logits);
    if t.rows() != labels.len() {
        return Err(Error::KeyBatchMismatch {
            queries: t.rows(),
            keys: labels.len(),
        });
    }
    check_labels(labels, t.cols())?;
    let lsm = g.log_softmax_row(logits)?;
    let at: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
    let picked = g.gather(lsm, &at)?;
    let total = g.sum(picked)?;
    let neg = g.scale(total, -1.0)?;
    match reduction {
        Reduction::Sum => Ok(neg),
        Reduction::Mean => Ok(g.scale(neg, 1.0 / labels.len() as f64)?),
    }
}

/// Log-probabilities of one query (`1×n` row) against constant keys.
fn log_probs_against(g: &mut Graph, query: NodeId, keys_t: &Tensor, tau: Temperature) -> Result<NodeId> {
    let k = g.constant(keys_t.clone());
    let sims = g.matmul(query, k)?;
    let logits = g.scale(sims, 1.0 / tau.get())?;
    Ok(g.log_softmax_row(logits)?)
}

/// InfoNCE for a single `1×L` query against `(K+1)×L` keys.
pub fn info_nce(g: &mut Graph, q: NodeId, keys: &Tensor, positive: usize, tau: Temperature) -> Result<NodeId> {
    if positive >= keys.rows() {
        return Err(crate::ndgrad::TensorError::Index {
            index: positive,
            len: keys.rows(),
        }
        .into());
    }
    let lp = log_probs_against(g, q, &keys.transpose()?, tau)?;
    let p = g.gather(lp, &[(0, positive)])?;
    let s = g.sum(p)?;
    Ok(g.scale(s, -1.0)?)
}

/// Contrastive cross-entropy on the classifier head.
///
/// `h_q_norm` is `b×d` (row-normalized `h`), `w` is the `C×d` classifier and
/// `keys[i]` the bank of query `i`. Slot 0 of each bank is replaced by the
/// live `h_q_norm` row so the numerator also appears in the denominator.
#[allow(clippy::too_many_arguments)]
pub fn cce(
    g: &mut Graph,
    h_q_norm: NodeId,
    labels: &[usize],
    w: NodeId,
    keys: &[KeyBatch],
    tau: Temperature,
    variant: CceVariant,
    reduction: Reduction,
) -> Result<NodeId> {
    check_keys(labels, keys)?;
    check_labels(labels, g.value(w).rows())?;
    let mut terms = Vec::with_capacity(labels.len());
    for (i, (kb, &y)) in keys.iter().zip(labels).enumerate() {
        let proto = g.select_rows(w, &[y])?;
        let hq = g.select_rows(h_q_norm, &[i])?;
        let bank = if kb.len() > 1 {
            let rest: Vec<usize> = (1..kb.len()).collect();
            let rest = g.constant(kb.h_keys.select_rows(&rest)?);
            g.concat_rows(hq, rest)?
        } else {
            hq
        };
        let bank_t = g.transpose(bank)?;
        let sims = g.matmul(proto, bank_t)?;
        let logits = g.scale(sims, 1.0 / tau.get())?;
        let lp = g.log_softmax_row(logits)?;
        let positives = kb.positives(y);
        let term = match variant {
            CceVariant::Literal => {
                let p = g.gather(lp, &[(0, 0)])?;
                let s = g.sum(p)?;
                g.scale(s, -(positives.len() as f64))?
            }
            CceVariant::PerKey => {
                let at: Vec<(usize, usize)> = positives.iter().map(|&k| (0, k)).collect();
                let p = g.gather(lp, &at)?;
                let s = g.sum(p)?;
                g.scale(s, -1.0)?
            }
        };
        terms.push(term);
    }
    reduce(g, terms, reduction)
}

/// Categorical contrastive loss on the projector head. `z_q` is `b×L`.
pub fn ccl(
    g: &mut Graph,
    z_q: NodeId,
    labels: &[usize],
    keys: &[KeyBatch],
    tau: Temperature,
    reduction: Reduction,
) -> Result<NodeId> {
    check_keys(labels, keys)?;
    let mut terms = Vec::with_capacity(labels.len());
    for (i, (kb, &y)) in keys.iter().zip(labels).enumerate() {
        let zq = g.select_rows(z_q, &[i])?;
        let lp = log_probs_against(g, zq, &kb.z_keys.transpose()?, tau)?;
        let at: Vec<(usize, usize)> = kb.positives(y).into_iter().map(|k| (0, k)).collect();
        let p = g.gather(lp, &at)?;
        let s = g.sum(p)?;
        terms.push(g.scale(s, -1.0)?);
    }
    reduce(g, terms, reduction)
}

/// Per-term multipliers. The objective itself has none; a weight of 0
/// disables a term, which is how ablations switch terms off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub ce: f64,
    pub cce: f64,
    pub ccl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            cce: 1.0,
            ccl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn contrastive(&self) -> bool {
        self.cce != 0.0 || self.ccl != 0.0
    }
}

/// Tape handles of the computed terms; `None` when disabled.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossNodes {
    pub ce: Option<NodeId>,
    pub cce: Option<NodeId>,
    pub ccl: Option<NodeId>,
}

/// Scalar loss values. Disabled terms are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossTerms {
    pub ce: Option<f64>,
    pub cce: Option<f64>,
    pub ccl: Option<f64>,
    pub total: f64,
}

/// Sum of the enabled terms (times their weight when not 1).
pub fn bituning_total(g: &mut Graph, nodes: &LossNodes, weights: &LossWeights) -> Result<(NodeId, LossTerms)> {
    let mut total: Option<NodeId> = None;
    let mut terms = LossTerms::default();
    for (node, weight, slot) in [
        (nodes.ce, weights.ce, &mut terms.ce),
        (nodes.cce, weights.cce, &mut terms.cce),
        (nodes.ccl, weights.ccl, &mut terms.ccl),
    ] {
        let Some(node) = node else { continue };
        if weight == 0.0 {
            continue;
        }
        *slot = Some(g.value(node).item());
        let weighted = if weight == 1.0 { node } else { g.scale(node, weight)? };
        total = Some(match total {
            None => weighted,
            Some(acc) => g.add(acc, weighted)?,
        });
    }
    let total = total.ok_or(Error::NoLossEnabled)?;
    terms.total = g.value(total).item();
    Ok((total, terms))
}

#[cfg(test)]
mod tests;
