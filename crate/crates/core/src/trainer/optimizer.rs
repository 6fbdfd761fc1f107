use crate::config::OptimConfig;
use crate::model::{ModelParams, ParamGroup};
use crate::ndgrad::Tensor;
use crate::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay:
///
/// ```text
/// g ← g + wd·θ
/// v ← μ·v + g
/// θ ← θ − lr·v
/// ```
///
/// Heads (classifier, projector) use `base_lr × head_lr_multiplier`.
/// Parameters that received no gradient this step are left untouched,
/// velocity included.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    velocity: Vec<Tensor>,
    pub base_lr: f64,
    pub head_lr_multiplier: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub schedule: Vec<(usize, f64)>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, cfg: &OptimConfig) -> Self {
        Self {
            velocity: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            base_lr: cfg.base_lr,
            head_lr_multiplier: cfg.head_lr_multiplier,
            sgd_momentum: cfg.sgd_momentum,
            weight_decay: cfg.weight_decay,
            schedule: cfg.effective_schedule(),
        }
    }

    /// Product of every schedule factor whose iteration is ≤ `iteration`.
    pub fn lr_factor(&self, iteration: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(at, _)| iteration >= *at)
            .map(|(_, f)| f)
            .product()
    }

    pub fn lr(&self, group: ParamGroup, iteration: usize) -> f64 {
        let base = self.base_lr * self.lr_factor(iteration);
        match group {
            ParamGroup::Encoder => base,
            ParamGroup::Head => base * self.head_lr_multiplier,
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// `grads[i]` pairs with `params.tensors()[i]`.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &[Option<Tensor>], iteration: usize) -> Result<()> {
        let groups = params.groups();
        let lrs: Vec<f64> = groups.iter().map(|&g| self.lr(g, iteration)).collect();
        let (mu, wd) = (self.sgd_momentum, self.weight_decay);
        for (((p, grad), v), lr) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.velocity).zip(lrs) {
            let Some(grad) = grad else { continue };
            let vel: Vec<f64> = v
                .data()
                .iter()
                .zip(grad.data())
                .zip(p.data())
                .map(|((&vi, &gi), &pi)| mu * vi + gi + wd * pi)
                .collect();
            let new_p: Vec<f64> = p.data().iter().zip(&vel).map(|(&pi, &vi)| pi - lr * vi).collect();
            *v = Tensor::new(v.shape().to_vec(), vel).map_err(|_| Error::NonFinite {
                what: "velocity",
                iteration,
            })?;
            *p = Tensor::new(p.shape().to_vec(), new_p).map_err(|_| Error::NonFinite {
                what: "parameter",
                iteration,
            })?;
        }
        Ok(())
    }
}
