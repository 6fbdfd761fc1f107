use super::{encode, Dense, ModelParams};
use crate::ndgrad::{Tensor, TensorError};
use crate::{Error, Result};

/// Slow-moving copy of the encoder and projector, `θ_k ← m·θ_k + (1−m)·θ_q`.
///
/// The classifier has no twin: keys are contrasted against the live class
/// prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumTwin {
    pub encoder: Vec<Dense>,
    pub projector: Dense,
    momentum: f64,
}

/// Detached key-path outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyForward {
    /// `f_k(x)` before normalization.
    pub h_raw: Tensor,
    /// Row-normalized `h`.
    pub h: Tensor,
    /// Row-normalized `φ_k(h_raw)`.
    pub z: Tensor,
}

impl MomentumTwin {
    /// Deep-copies the encoder and projector of `params`.
    pub fn new(params: &ModelParams, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Momentum(momentum));
        }
        Ok(Self {
            encoder: params.encoder.clone(),
            projector: params.projector.clone(),
            momentum,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn forward_key(&self, x: &Tensor) -> Result<KeyForward> {
        if x.shape().len() != 2 || x.cols() != self.encoder[0].weight.rows() {
            return Err(TensorError::Dimension {
                op: "forward_key",
                lhs: x.shape().to_vec(),
                rhs: self.encoder[0].weight.shape().to_vec(),
            }
            .into());
        }
        key_outputs(&self.encoder, &self.projector, x)
    }

    pub fn momentum_update(&mut self, params: &ModelParams) -> Result<()> {
        if params.encoder.len() != self.encoder.len() {
            return Err(TensorError::Dimension {
                op: "momentum_update",
                lhs: vec![self.encoder.len()],
                rhs: vec![params.encoder.len()],
            }
            .into());
        }
        let m = self.momentum;
        let pairs = self
            .encoder
            .iter_mut()
            .zip(&params.encoder)
            .chain(std::iter::once((&mut self.projector, &params.projector)));
        for (slow, fast) in pairs {
            mix(&mut slow.weight, &fast.weight, m)?;
            mix(&mut slow.bias, &fast.bias, m)?;
        }
        Ok(())
    }
}

fn mix(slow: &mut Tensor, fast: &Tensor, m: f64) -> Result<()> {
    if slow.shape() != fast.shape() {
        return Err(TensorError::Dimension {
            op: "momentum_update",
            lhs: slow.shape().to_vec(),
            rhs: fast.shape().to_vec(),
        }
        .into());
    }
    let data = slow
        .data()
        .iter()
        .zip(fast.data())
        .map(|(&k, &q)| m * k + (1.0 - m) * q)
        .collect();
    *slow = Tensor::from_parts(slow.shape().to_vec(), data);
    Ok(())
}

pub(super) fn key_outputs(encoder: &[Dense], projector: &Dense, x: &Tensor) -> Result<KeyForward> {
    let h_raw = encode(encoder, x)?;
    let h = h_raw.row_l2_normalize()?;
    let z = projector.forward(&h_raw)?.row_l2_normalize()?;
    Ok(KeyForward { h_raw, h, z })
}
