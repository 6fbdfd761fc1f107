//! Encoder `f`, classifier head `g` (matrix `W`, one row per class) and
//! projector head `φ`, plus the momentum twin that produces keys.

mod checkpoint;
mod twin;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use twin::{KeyForward, MomentumTwin};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::ndgrad::{Graph, NodeId, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    /// Hidden widths of the encoder MLP; relu follows each hidden layer.
    pub hidden: Vec<usize>,
    /// Width `d` of the representation `h`.
    pub feature: usize,
    pub classes: usize,
    /// Width `L` of the projector output `z`.
    pub projection: usize,
    pub classifier_bias: bool,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, usize); 4] = [
            ("model.input", self.input),
            ("model.feature_dim", self.feature),
            ("model.classes", self.classes),
            ("model.projector_dim", self.projection),
        ];
        for (field, v) in checks {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("model.hidden", "layer widths must be positive"));
        }
        Ok(())
    }

    fn encoder_widths(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input;
        for &h in self.hidden.iter().chain(std::iter::once(&self.feature)) {
            widths.push((prev, h));
            prev = h;
        }
        widths
    }
}

/// Affine layer `x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    fn random<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        // Nonzero biases keep h away from exactly zero when every hidden
        // unit is inactive for an input.
        let b = 1.0 / (fan_in as f64).sqrt();
        let bias_dist = Uniform::new_inclusive(-b, b).expect("finite bound");
        let bias = (0..fan_out).map(|_| bias_dist.sample(rng)).collect();
        Self {
            weight: Tensor::from_parts(vec![fan_in, fan_out], data),
            bias: Tensor::from_parts(vec![1, fan_out], bias),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight)?.add_row(&self.bias)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: Vec<Dense>,
    /// `C × d`; row `j` is the class prototype `w_j`.
    pub classifier: Tensor,
    pub classifier_bias: Option<Tensor>,
    pub projector: Dense,
}

/// Tape handles for every parameter, in [`ModelParams::param_names`] order.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    pub encoder: Vec<(NodeId, NodeId)>,
    pub classifier: NodeId,
    pub classifier_bias: Option<NodeId>,
    pub projector: (NodeId, NodeId),
}

impl ParamNodes {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.encoder.iter().flat_map(|&(w, b)| [w, b]).collect();
        ids.push(self.classifier);
        ids.extend(self.classifier_bias);
        ids.extend([self.projector.0, self.projector.1]);
        ids
    }
}

/// Query-path outputs recorded on a tape.
#[derive(Clone, Debug)]
pub struct QueryForward {
    pub params: ParamNodes,
    /// Unnormalized representation `h = f(x)`.
    pub h: NodeId,
    /// `row_l2_normalize(φ(h))`.
    pub z: NodeId,
    /// `h·Wᵀ` (+ bias when enabled).
    pub logits: NodeId,
}

/// Whether a parameter belongs to a head (classifier or projector), which
/// trains at the boosted learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Head,
}

impl ModelParams {
    /// Random initialization. Encoder hidden layers use He-uniform bounds;
    /// the last encoder layer and both heads use `1/√fan_in`. Biases are
    /// uniform in `±1/√fan_in`; the optional classifier bias starts at zero.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let widths = dims.encoder_widths();
        let last = widths.len() - 1;
        let encoder = widths
            .iter()
            .enumerate()
            .map(|(i, &(fi, fo))| {
                let bound = if i < last {
                    (6.0 / fi as f64).sqrt()
                } else {
                    1.0 / (fi as f64).sqrt()
                };
                Dense::random(fi, fo, bound, rng)
            })
            .collect();
        let head_bound = 1.0 / (dims.feature as f64).sqrt();
        let cls = Dense::random(dims.classes, dims.feature, head_bound, rng).weight;
        let projector = Dense::random(dims.feature, dims.projection, head_bound, rng);
        let classifier_bias = dims.classifier_bias.then(|| Tensor::zeros(&[1, dims.classes]));
        Ok(Self {
            dims,
            encoder,
            classifier: cls,
            classifier_bias,
            projector,
        })
    }

    /// All-zero parameters with the right shapes.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let encoder = dims
            .encoder_widths()
            .into_iter()
            .map(|(fi, fo)| Dense::zeros(fi, fo))
            .collect();
        Ok(Self {
            classifier: Tensor::zeros(&[dims.classes, dims.feature]),
            classifier_bias: dims.classifier_bias.then(|| Tensor::zeros(&[1, dims.classes])),
            projector: Dense::zeros(dims.feature, dims.projection),
            encoder,
            dims,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.encoder.len() {
            names.push(format!("encoder.{i}.weight"));
            names.push(format!("encoder.{i}.bias"));
        }
        names.push("classifier.weight".into());
        if self.classifier_bias.is_some() {
            names.push("classifier.bias".into());
        }
        names.push("projector.weight".into());
        names.push("projector.bias".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.encoder.iter().flat_map(|l| [&l.weight, &l.bias]).collect();
        out.push(&self.classifier);
        out.extend(self.classifier_bias.as_ref());
        out.extend([&self.projector.weight, &self.projector.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .encoder
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        out.push(&mut self.classifier);
        out.extend(self.classifier_bias.as_mut());
        out.extend([&mut self.projector.weight, &mut self.projector.bias]);
        out
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g = vec![ParamGroup::Encoder; 2 * self.encoder.len()];
        g.push(ParamGroup::Head);
        if self.classifier_bias.is_some() {
            g.push(ParamGroup::Head);
        }
        g.extend([ParamGroup::Head, ParamGroup::Head]);
        g
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> ParamNodes {
        ParamNodes {
            encoder: self
                .encoder
                .iter()
                .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
                .collect(),
            classifier: g.leaf(self.classifier.clone()),
            classifier_bias: self.classifier_bias.as_ref().map(|b| g.leaf(b.clone())),
            projector: (
                g.leaf(self.projector.weight.clone()),
                g.leaf(self.projector.bias.clone()),
            ),
        }
    }

    /// Regroups tape handles given in [`ModelParams::tensors`] order.
    pub fn nodes_from(&self, ids: &[NodeId]) -> ParamNodes {
        let n = self.encoder.len();
        let mut rest = ids[2 * n..].iter().copied();
        let mut next = || rest.next().expect("one id per parameter tensor");
        let classifier = next();
        let classifier_bias = self.classifier_bias.as_ref().map(|_| next());
        ParamNodes {
            encoder: ids[..2 * n].chunks(2).map(|c| (c[0], c[1])).collect(),
            classifier,
            classifier_bias,
            projector: (next(), next()),
        }
    }

    /// Query path on a fresh binding of the parameters.
    pub fn forward_query(&self, g: &mut Graph, x: &Tensor) -> Result<QueryForward> {
        self.check_input(x)?;
        let params = self.bind(g);
        let x = g.constant(x.clone());
        forward_bound(g, &params, x)
    }

    /// Eager `f(x)`, off the tape.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        encode(&self.encoder, x)
    }

    /// Eager classifier logits, used for evaluation.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.features(x)?;
        let mut logits = h.matmul(&self.classifier.transpose()?)?;
        if let Some(b) = &self.classifier_bias {
            logits = logits.add_row(b)?;
        }
        Ok(logits)
    }

    /// Eager query outputs: raw `h`, normalized `h`, and `z`. Detached.
    pub fn query_keys(&self, x: &Tensor) -> Result<KeyForward> {
        self.check_input(x)?;
        twin::key_outputs(&self.encoder, &self.projector, x)
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.dims.input || x.rows() == 0 {
            return Err(crate::ndgrad::TensorError::Dimension {
                op: "model input",
                lhs: x.shape().to_vec(),
                rhs: vec![self.dims.input],
            }
            .into());
        }
        Ok(())
    }
}

/// Query path over already-bound parameters.
pub fn forward_bound(g: &mut Graph, p: &ParamNodes, x: NodeId) -> Result<QueryForward> {
    let mut a = x;
    let last = p.encoder.len() - 1;
    for (i, &(w, b)) in p.encoder.iter().enumerate() {
        let lin = g.matmul(a, w)?;
        a = g.add_row(lin, b)?;
        if i < last {
            a = g.relu(a)?;
        }
    }
    let h = a;
    let wt = g.transpose(p.classifier)?;
    let mut logits = g.matmul(h, wt)?;
    if let Some(b) = p.classifier_bias {
        logits = g.add_row(logits, b)?;
    }
    let proj = g.matmul(h, p.projector.0)?;
    let proj = g.add_row(proj, p.projector.1)?;
    let z = g.row_l2_normalize(proj)?;
    Ok(QueryForward {
        params: p.clone(),
        h,
        z,
        logits,
    })
}

pub(crate) fn encode(layers: &[Dense], x: &Tensor) -> Result<Tensor> {
    let mut a = x.clone();
    let last = layers.len() - 1;
    for (i, l) in layers.iter().enumerate() {
        a = l.forward(&a)?;
        if i < last {
            a = a.relu();
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(hidden: Vec<usize>) -> ModelDims {
        ModelDims {
            input: 3,
            hidden,
            feature: 3,
            classes: 2,
            projection: 4,
            classifier_bias: false,
        }
    }

    #[test]
    fn zero_network_outputs_biases() {
        let mut p = ModelParams::zeros(dims(vec![5])).unwrap();
        p.encoder[1].bias = Tensor::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        p.classifier = Tensor::from_rows(&[[1.0, 0.0, 1.0], [0.0, 2.0, 0.0]]).unwrap();
        p.projector.bias = Tensor::from_rows(&[[1.0, 0.0, 0.0, 0.0]]).unwrap();
        let x = Tensor::from_rows(&[[9.0, -3.0, 1.0], [0.1, 0.2, 0.3]]).unwrap();
        let mut g = Graph::new();
        let out = p.forward_query(&mut g, &x).unwrap();
        for i in 0..2 {
            assert_eq!(g.value(out.h).row(i), &[0.5, -1.0, 2.0]);
            assert_eq!(g.value(out.logits).row(i), &[2.5, -2.0]);
        }
    }

    #[test]
    fn identity_encoder_passes_one_hot_through() {
        let mut p = ModelParams::zeros(dims(vec![])).unwrap();
        p.encoder[0].weight = Tensor::identity(3);
        p.projector.bias = Tensor::from_rows(&[[1.0, 0.0, 0.0, 0.0]]).unwrap();
        let x = Tensor::from_rows(&[[0.0, 1.0, 0.0]]).unwrap();
        let mut g = Graph::new();
        let out = p.forward_query(&mut g, &x).unwrap();
        assert_eq!(g.value(out.h), &x);
    }

    #[test]
    fn projected_rows_are_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(dims(vec![8]), &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0.3, -1.0, 2.0], [1.5, 0.2, -0.7]]).unwrap();
        let mut g = Graph::new();
        let out = p.forward_query(&mut g, &x).unwrap();
        for i in 0..2 {
            let n: f64 = g.value(out.z).row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_classifier_doubles_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::init(dims(vec![4]), &mut rng).unwrap();
        let mut p2 = p.clone();
        p2.classifier = p.classifier.scale(2.0);
        let x = Tensor::from_rows(&[[0.3, -1.0, 2.0]]).unwrap();
        let a = p.logits(&x).unwrap();
        let b = p2.logits(&x).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * u, *v);
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let p = ModelParams::zeros(dims(vec![])).unwrap();
        let x = Tensor::zeros(&[1, 2]);
        assert!(p.logits(&x).is_err());
    }

    #[test]
    fn names_tensors_and_groups_line_up() {
        let mut d = dims(vec![4, 4]);
        d.classifier_bias = true;
        let p = ModelParams::zeros(d).unwrap();
        assert_eq!(p.param_names().len(), p.tensors().len());
        assert_eq!(p.groups().len(), p.tensors().len());
        assert_eq!(p.param_names()[6], "classifier.weight");
        assert_eq!(p.groups()[6], ParamGroup::Head);
        assert_eq!(p.groups()[5], ParamGroup::Encoder);
    }
}
