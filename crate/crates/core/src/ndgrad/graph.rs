use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for fault injection and for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddRow,
    Scale,
    Relu,
    Sum,
    Mean,
    SelectRows,
    ConcatRows,
    Transpose,
    RowL2Normalize,
    LogSoftmaxRow,
    Gather,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SelectRows(NodeId, Vec<usize>),
    ConcatRows(NodeId, NodeId),
    Transpose(NodeId),
    RowL2Normalize(NodeId),
    LogSoftmaxRow(NodeId),
    Gather(NodeId, Vec<(usize, usize)>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::SelectRows(..) => OpKind::SelectRows,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::Transpose(_) => OpKind::Transpose,
            Op::RowL2Normalize(_) => OpKind::RowL2Normalize,
            Op::LogSoftmaxRow(_) => OpKind::LogSoftmaxRow,
            Op::Gather(..) => OpKind::Gather,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Scales the gradient an op passes to its inputs. Only used to prove that
/// the gradient checker catches a broken backward rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardFault {
    pub op: OpKind,
    pub factor: f64,
}

/// A reverse-mode tape built for one forward pass.
///
/// Nodes are appended in evaluation order, so ids are already a topological
/// order: the backward sweep walks them in reverse and touches each node
/// once. Values consumed by several ops accumulate every contribution.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<BackwardFault>,
}

/// Gradients of one scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: BackwardFault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable input: gradients flow into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A detached input: it never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<NodeId, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                context: op_name(op.kind()),
            });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::ConcatRows(a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SelectRows(a, _)
            | Op::Transpose(a)
            | Op::RowL2Normalize(a)
            | Op::LogSoftmaxRow(a)
            | Op::Gather(a, _) => self.requires_grad(*a),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1×n` bias to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).add_row(self.value(bias))?;
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId, TensorError> {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).relu();
        self.push(v, Op::Relu(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = Tensor::from_parts(Vec::new(), vec![self.value(a).sum()]);
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(TensorError::Empty { op: "mean" });
        }
        let v = Tensor::from_parts(Vec::new(), vec![t.sum() / t.len() as f64]);
        self.push(v, Op::Mean(a))
    }

    pub fn select_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId, TensorError> {
        let v = self.value(a).select_rows(idx)?;
        self.push(v, Op::SelectRows(a, idx.to_vec()))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).concat_rows(self.value(b))?;
        self.push(v, Op::ConcatRows(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).transpose()?;
        self.push(v, Op::Transpose(a))
    }

    pub fn row_l2_normalize(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).row_l2_normalize()?;
        self.push(v, Op::RowL2Normalize(a))
    }

    pub fn log_softmax_row(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).log_softmax_rows()?;
        self.push(v, Op::LogSoftmaxRow(a))
    }

    /// Picks entries `a[r, c]` into a rank-1 tensor, in the given order.
    pub fn gather(&mut self, a: NodeId, at: &[(usize, usize)]) -> Result<NodeId, TensorError> {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(at.len());
        for &(r, c) in at {
            if r >= m {
                return Err(TensorError::Index { index: r, len: m });
            }
            if c >= n {
                return Err(TensorError::Index { index: c, len: n });
            }
            data.push(t.get(r, c));
        }
        let v = Tensor::from_parts(vec![at.len()], data);
        self.push(v, Op::Gather(a, at.to_vec()))
    }

    /// Reverse sweep from a one-element `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, TensorError> {
        if self.value(root).len() != 1 {
            return Err(TensorError::Rank {
                op: "backward",
                expected: 0,
                shape: self.value(root).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::from_parts(self.value(root).shape().to_vec(), vec![1.0]));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let factor = match self.fault {
                Some(f) if f.op == node.op.kind() => f.factor,
                _ => 1.0,
            };
            for (parent, contrib) in self.local_grads(node, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                let contrib = if factor != 1.0 { contrib.scale(factor) } else { contrib };
                accumulate(&mut grads[parent.0], contrib)?;
            }
            grads[idx] = Some(g);
        }
        // Only leaves keep their gradient meaningful for callers, but
        // intermediate values are handy in tests, so everything is kept.
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>, TensorError> {
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                vec![
                    (*a, g.matmul(&bv.transpose()?)?),
                    (*b, av.transpose()?.matmul(g)?),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(a, bias) => {
                let n = g.cols();
                let mut col_sums = vec![0.0; n];
                for i in 0..g.rows() {
                    for (s, v) in col_sums.iter_mut().zip(g.row(i)) {
                        *s += v;
                    }
                }
                let shape = self.value(*bias).shape().to_vec();
                vec![(*a, g.clone()), (*bias, Tensor::from_parts(shape, col_sums))]
            }
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::Relu(a) => {
                let av = self.value(*a);
                let data = av
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(*a, Tensor::from_parts(av.shape().to_vec(), data))]
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                vec![(*a, Tensor::from_parts(av.shape().to_vec(), vec![g.item(); av.len()]))]
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let v = g.item() / av.len() as f64;
                vec![(*a, Tensor::from_parts(av.shape().to_vec(), vec![v; av.len()]))]
            }
            Op::SelectRows(a, idx) => {
                let av = self.value(*a);
                let n = av.cols();
                let mut data = vec![0.0; av.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for (d, v) in data[i * n..(i + 1) * n].iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                vec![(*a, Tensor::from_parts(av.shape().to_vec(), data))]
            }
            Op::ConcatRows(a, b) => {
                let split = self.value(*a).len();
                let (ga, gb) = g.data().split_at(split);
                vec![
                    (*a, Tensor::from_parts(self.value(*a).shape().to_vec(), ga.to_vec())),
                    (*b, Tensor::from_parts(self.value(*b).shape().to_vec(), gb.to_vec())),
                ]
            }
            Op::Transpose(a) => vec![(*a, g.transpose()?)],
            Op::RowL2Normalize(a) => {
                // y = x/‖x‖  ⇒  dx = (g − y·(y·g)) / ‖x‖
                let av = self.value(*a);
                let n = av.cols();
                let mut data = vec![0.0; av.len()];
                for i in 0..av.rows() {
                    let x = av.row(i);
                    let y = out.row(i);
                    let gi = g.row(i);
                    let norm = crate::ndgrad::l2_norm(x);
                    let dot: f64 = y.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        data[i * n + j] = (gi[j] - y[j] * dot) / norm;
                    }
                }
                vec![(*a, Tensor::from_parts(av.shape().to_vec(), data))]
            }
            Op::LogSoftmaxRow(a) => {
                // dx = g − softmax · Σ g
                let n = out.cols();
                let mut data = vec![0.0; out.len()];
                for i in 0..out.rows() {
                    let y = out.row(i);
                    let gi = g.row(i);
                    let gsum: f64 = gi.iter().sum();
                    for j in 0..n {
                        data[i * n + j] = gi[j] - y[j].exp() * gsum;
                    }
                }
                vec![(*a, Tensor::from_parts(out.shape().to_vec(), data))]
            }
            Op::Gather(a, at) => {
                let av = self.value(*a);
                let n = av.cols();
                let mut data = vec![0.0; av.len()];
                for (k, &(r, c)) in at.iter().enumerate() {
                    data[r * n + c] += g.data()[k];
                }
                vec![(*a, Tensor::from_parts(av.shape().to_vec(), data))]
            }
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) -> Result<(), TensorError> {
    *slot = Some(match slot.take() {
        None => contrib,
        Some(prev) => prev.add(&contrib)?,
    });
    Ok(())
}

pub fn op_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Leaf => "leaf",
        OpKind::MatMul => "matmul",
        OpKind::Add => "add",
        OpKind::AddRow => "add_row",
        OpKind::Scale => "scale",
        OpKind::Relu => "relu",
        OpKind::Sum => "sum",
        OpKind::Mean => "mean",
        OpKind::SelectRows => "select_rows",
        OpKind::ConcatRows => "concat_rows",
        OpKind::Transpose => "transpose",
        OpKind::RowL2Normalize => "row_l2_normalize",
        OpKind::LogSoftmaxRow => "log_softmax_row",
        OpKind::Gather => "gather",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reused_value_accumulates_both_paths() {
        // f(x) = sum(x + x) → df/dx = 2 everywhere
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&[[1.0, -2.0]]).unwrap());
        let y = g.add(x, x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let c = g.constant(Tensor::from_rows(&[[3.0], [4.0]]).unwrap());
        let y = g.matmul(x, c).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn log_softmax_uniform_and_large() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[[0.0, 0.0, 0.0]]).unwrap());
        let l = g.log_softmax_row(a).unwrap();
        for &v in g.value(l).data() {
            assert!((v + 3f64.ln()).abs() < 1e-15);
        }
        let b = g.constant(Tensor::from_rows(&[[1000.0, 0.0]]).unwrap());
        let l = g.log_softmax_row(b).unwrap();
        // exact: −ln(1 + e^−1000) and −1000 − ln(1 + e^−1000); e^−1000 underflows
        assert_eq!(g.value(l).data(), &[0.0, -1000.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_results_are_flagged() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&[[1e300, 1e300]]).unwrap());
        assert!(matches!(g.scale(x, 1e10), Err(TensorError::NonFinite { context: "scale" })));
    }
}
