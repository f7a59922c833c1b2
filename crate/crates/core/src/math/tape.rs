//! Tape-based reverse-mode differentiation over a fixed set of batched
//! matrix primitives.
//!
//! Every node holds a dense `rows × cols` value. Leaves are either trainable
//! parameters or constants; gradients are only propagated along nodes that
//! depend on at least one trainable leaf, so frozen networks cost a forward
//! pass plus input gradients only.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::math::mlp::{Activation, Layer, MlpParams};
use crate::math::special::LN_2PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    SubCol(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sum(NodeId),
    RowSum(NodeId),
    LogSumExpRows(NodeId),
    SegmentLogSumExp(NodeId, Vec<usize>),
    GatherRows(NodeId, Vec<usize>),
    SliceCols(NodeId, usize, usize),
    GaussianLogPdf { mean: NodeId, target: NodeId, var: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::SubCol(..) => "sub_col",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::RowSum(..) => "row_sum",
            Op::LogSumExpRows(..) => "log_sum_exp_rows",
            Op::SegmentLogSumExp(..) => "segment_log_sum_exp",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::GaussianLogPdf { .. } => "gaussian_logpdf",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Node handles for the weights of one network placed on a graph.
#[derive(Clone, Debug)]
pub struct MlpVars {
    /// `(Wᵀ, b)` per layer; `Wᵀ` is `in × out`, `b` is `1 × out`.
    layers: Vec<(NodeId, NodeId)>,
    activations: Vec<Activation>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    first_non_finite: Option<&'static str>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> NodeId {
        if self.first_non_finite.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.first_non_finite = Some(op.name());
        }
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    /// First op that produced a non-finite value, if any.
    pub fn non_finite_op(&self) -> Option<&'static str> {
        self.first_non_finite
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `a (P × C) + b (1 × C)` broadcast over rows.
    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::AddBias(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    /// Elementwise product of equally-shaped nodes.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// `a (P × C) - b (P × 1)` broadcast over columns.
    pub fn sub_col(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::SubCol(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) + c;
        let rg = self.rg(a);
        self.push(v, Op::Offset(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(v, Op::Log(a), rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sum, `P × C → P × 1`.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(v, Op::RowSum(a), rg)
    }

    /// Per-row log-sum-exp, `P × C → P × 1`.
    pub fn log_sum_exp_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut v = Array2::zeros((av.nrows(), 1));
        for (r, row) in av.axis_iter(Axis(0)).enumerate() {
            v[[r, 0]] = lse_slice(row.iter().copied());
        }
        let rg = self.rg(a);
        self.push(v, Op::LogSumExpRows(a), rg)
    }

    /// Log-sum-exp over contiguous row segments of a `P × 1` node.
    ///
    /// `offsets` has one more entry than there are segments; segment `b`
    /// covers rows `offsets[b]..offsets[b + 1]`.
    pub fn segment_log_sum_exp(&mut self, a: NodeId, offsets: Vec<usize>) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.ncols(), 1, "segment_log_sum_exp needs a column");
        assert_eq!(*offsets.last().unwrap(), av.nrows());
        let col = av.column(0);
        let mut v = Array2::zeros((offsets.len() - 1, 1));
        for b in 0..offsets.len() - 1 {
            v[[b, 0]] = lse_slice(col.slice(s![offsets[b]..offsets[b + 1]]).iter().copied());
        }
        let rg = self.rg(a);
        self.push(v, Op::SegmentLogSumExp(a, offsets), rg)
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let v = self.value(a).select(Axis(0), &idx);
        let rg = self.rg(a);
        self.push(v, Op::GatherRows(a, idx), rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, start, end), rg)
    }

    /// Row-wise isotropic Gaussian log-density `log N(target_p; mean_p, var·I)`,
    /// `P × D → P × 1`.
    pub fn gaussian_logpdf(&mut self, mean: NodeId, target: NodeId, var: f64) -> NodeId {
        let (m, t) = (self.value(mean), self.value(target));
        assert_eq!(m.dim(), t.dim(), "gaussian_logpdf shape mismatch");
        let d = m.ncols() as f64;
        let norm = -0.5 * d * (LN_2PI + var.ln());
        let mut v = Array2::zeros((m.nrows(), 1));
        for (r, (mr, tr)) in m.axis_iter(Axis(0)).zip(t.axis_iter(Axis(0))).enumerate() {
            let sq: f64 = mr.iter().zip(tr.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            v[[r, 0]] = norm - 0.5 * sq / var;
        }
        let rg = self.rg(mean) || self.rg(target);
        self.push(v, Op::GaussianLogPdf { mean, target, var }, rg)
    }

    /// Places a network's weights on the graph, trainable or frozen.
    pub fn mlp(&mut self, params: &MlpParams, trainable: bool) -> MlpVars {
        let layers = params
            .layers
            .iter()
            .map(|l| {
                let w = l.weight.t().to_owned();
                let b = l.bias.view().insert_axis(Axis(0)).to_owned();
                if trainable {
                    (self.param(w), self.param(b))
                } else {
                    (self.constant(w), self.constant(b))
                }
            })
            .collect();
        MlpVars { layers, activations: params.activations.clone() }
    }

    pub fn mlp_forward(&mut self, vars: &MlpVars, x: NodeId) -> NodeId {
        let mut h = x;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let z = self.matmul(h, w);
            h = self.add_bias(z, b);
            if let Some(act) = vars.activations.get(i) {
                h = match act {
                    Activation::Tanh => self.tanh(h),
                    Activation::Relu => self.relu(h),
                    Activation::Identity => h,
                };
            }
        }
        h
    }

    /// Reverse sweep from a `1 × 1` loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if let Some(op) = self.first_non_finite {
            return Err(Error::Numeric { op });
        }
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        if grads.iter().flatten().any(|g| !g.iter().all(|v| v.is_finite())) {
            return Err(Error::Numeric { op: "backward" });
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |id: NodeId, d: Array2<f64>| {
            if !self.rg(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => *existing += &d,
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::AddBias(a, b) => {
                acc(*a, g.clone());
                if self.rg(*b) {
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                if self.rg(*b) {
                    acc(*b, -g);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::SubCol(a, b) => {
                acc(*a, g.clone());
                if self.rg(*b) {
                    acc(*b, -g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::Offset(a) => acc(*a, g.clone()),
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                });
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g * &node.value),
            Op::Log(a) => acc(*a, g / self.value(*a)),
            Op::Square(a) => acc(*a, g * self.value(*a) * 2.0),
            Op::Sum(a) => acc(*a, Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]])),
            Op::RowSum(a) => {
                let av = self.value(*a);
                acc(*a, Array2::from_shape_fn(av.raw_dim(), |(r, _)| g[[r, 0]]));
            }
            Op::LogSumExpRows(a) => {
                let av = self.value(*a);
                let d = Array2::from_shape_fn(av.raw_dim(), |(r, c)| {
                    g[[r, 0]] * (av[[r, c]] - node.value[[r, 0]]).exp()
                });
                acc(*a, d);
            }
            Op::SegmentLogSumExp(a, offsets) => {
                let av = self.value(*a);
                let mut d = Array2::zeros(av.raw_dim());
                for b in 0..offsets.len() - 1 {
                    let (gb, lse) = (g[[b, 0]], node.value[[b, 0]]);
                    for r in offsets[b]..offsets[b + 1] {
                        d[[r, 0]] = gb * (av[[r, 0]] - lse).exp();
                    }
                }
                acc(*a, d);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut row = d.row_mut(src);
                    row += &g.row(r);
                }
                acc(*a, d);
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                acc(*a, d);
            }
            Op::GaussianLogPdf { mean, target, var } => {
                let (m, t) = (self.value(*mean), self.value(*target));
                let dm = Array2::from_shape_fn(m.raw_dim(), |(r, c)| g[[r, 0]] * (t[[r, c]] - m[[r, c]]) / var);
                if self.rg(*target) {
                    acc(*target, -&dm);
                }
                acc(*mean, dm);
            }
        }
    }
}

fn lse_slice(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + it.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Gradients of trainable leaves after a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient with the shape of the network the vars were created from;
    /// unreached weights get zero gradient.
    pub fn mlp(&self, vars: &MlpVars, like: &MlpParams) -> MlpParams {
        let layers = vars
            .layers
            .iter()
            .zip(&like.layers)
            .map(|(&(w, b), l)| Layer {
                weight: self.get(w).map(|g| g.t().to_owned()).unwrap_or_else(|| Array2::zeros(l.weight.raw_dim())),
                bias: self
                    .get(b)
                    .map(|g| g.row(0).to_owned())
                    .unwrap_or_else(|| ndarray::Array1::zeros(l.bias.len())),
            })
            .collect();
        MlpParams { layers, activations: like.activations.clone() }
    }
}

/// Evaluates a scalar loss of one network's parameters and its gradient.
pub fn value_and_grad<F>(params: &MlpParams, loss: F) -> Result<(f64, MlpParams)>
where
    F: FnOnce(&mut Graph, &MlpVars) -> NodeId,
{
    let mut g = Graph::new();
    let vars = g.mlp(params, true);
    let out = loss(&mut g, &vars);
    let value = g.scalar(out);
    let grads = g.backward(out)?;
    Ok((value, grads.mlp(&vars, params)))
}
