use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Zero padding applied around the spatial extent before a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input's spatial size (odd kernels only).
    Same,
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
        batch: usize,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Relu(NodeId),
    Reshape(NodeId),
    Mask {
        input: NodeId,
        mask: Vec<f64>,
    },
    WeightedBce {
        logits: NodeId,
        targets: Vec<f64>,
        weights: Option<Vec<f64>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Relu(_) => "relu",
            Op::Reshape(_) => "reshape",
            Op::Mask { .. } => "mask",
            Op::WeightedBce { .. } => "weighted_bce",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sum(a) | Op::Relu(a) | Op::Reshape(a) => vec![*a],
            Op::Conv2d {
                input,
                kernels,
                bias,
                ..
            } => vec![*input, *kernels, *bias],
            Op::MaxPool2 { input, .. } | Op::Mask { input, .. } => vec![*input],
            Op::WeightedBce { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any trainable leaf is reachable from this node.
    tracked: bool,
}

/// Records a forward computation as an append-only list of nodes and replays
/// it in reverse to accumulate gradients onto trainable leaves.
///
/// Node ids are indices into the record, so every operation's inputs precede
/// it and reverse index order is a valid backward schedule.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf; its gradient is available after [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.leaf_grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Clears every accumulated leaf gradient.
    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> NodeId {
        self.nodes.push(Node { value, op, tracked });
        self.leaf_grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        let value = Tensor::checked(op.name(), "forward", shape, data)?;
        let tracked = op.inputs().iter().any(|i| self.nodes[i.0].tracked);
        Ok(self.push(value, op, tracked))
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        self.record(Op::Add(a, b), self.shape(a).to_vec(), data)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        self.record(Op::Mul(a, b), self.shape(a).to_vec(), data)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let data = self.data(a).iter().map(|x| x * factor).collect();
        self.record(Op::Scale(a, factor), self.shape(a).to_vec(), data)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.data(a).iter().sum();
        self.record(Op::Sum(a), Vec::new(), vec![total])
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        self.record(Op::MatMul(a, b), vec![m, n], out)
    }

    /// Adds a length-`n` row vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        if sx.len() != 2 || sr.len() != 1 || sx[1] != sr[0] {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: sx.to_vec(),
                rhs: sr.to_vec(),
            });
        }
        let n = sr[0];
        let bias = self.data(row);
        let data = self
            .data(x)
            .chunks(n.max(1))
            .flat_map(|r| r.iter().zip(bias).map(|(a, b)| a + b))
            .collect();
        self.record(Op::AddRow(x, row), sx.to_vec(), data)
    }

    /// Stride-1 cross-correlation plus per-filter bias.
    ///
    /// `input` is `[C, H, W]` or `[N, C, H, W]`; `kernels` is `[F, C, k, k]`
    /// with square `k`; `bias` is `[F]`. The output has the input's rank.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernels).to_vec();
        let sb = self.shape(bias).to_vec();
        let dim_err = |lhs: &[usize], rhs: &[usize]| Error::Dimension {
            op: "conv2d",
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        };
        let (batch, c, h, w) = match si.as_slice() {
            [c, h, w] => (1, *c, *h, *w),
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => return Err(dim_err(&si, &sk)),
        };
        if sk.len() != 4 || sk[1] != c || sk[2] != sk[3] {
            return Err(dim_err(&si, &sk));
        }
        let (filters, k) = (sk[0], sk[2]);
        if sb != [filters] {
            return Err(dim_err(&sk, &sb));
        }
        let pad = match padding {
            Padding::Same if k % 2 == 1 => k / 2,
            Padding::Same => {
                return Err(Error::contract("same padding needs an odd kernel size"))
            }
            Padding::Valid => 0,
        };
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(dim_err(&si, &sk));
        }
        let geometry = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel: k,
            pad,
        };
        let out = kernels::conv2d_forward(
            self.data(input),
            batch,
            self.data(kernels),
            filters,
            self.data(bias),
            geometry,
        );
        let (oh, ow) = (geometry.out_height(), geometry.out_width());
        let shape = if si.len() == 3 {
            vec![filters, oh, ow]
        } else {
            vec![batch, filters, oh, ow]
        };
        self.record(
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
                batch,
            },
            shape,
            out,
        )
    }

    /// Max over disjoint 2×2 windows of the last two axes (which must be even).
    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.shape(input).to_vec();
        if s.len() < 2 || s[s.len() - 1] % 2 != 0 || s[s.len() - 2] % 2 != 0 {
            return Err(Error::Dimension {
                op: "maxpool2",
                lhs: s,
                rhs: vec![2, 2],
            });
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = s[..s.len() - 2].iter().product();
        let (values, argmax) = kernels::maxpool2_forward(self.data(input), planes, h, w);
        let mut shape = s;
        let r = shape.len();
        shape[r - 2] = h / 2;
        shape[r - 1] = w / 2;
        self.record(Op::MaxPool2 { input, argmax }, shape, values)
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let data = self.data(input).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.record(Op::Relu(input), self.shape(input).to_vec(), data)
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.value(input).numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(input).to_vec(),
                rhs: shape,
            });
        }
        let data = self.data(input).to_vec();
        self.record(Op::Reshape(input), shape, data)
    }

    /// Multiplies elementwise by a fixed, non-differentiated factor (dropout masks).
    pub fn mask(&mut self, input: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.value(input).numel() {
            return Err(Error::Dimension {
                op: "mask",
                lhs: self.shape(input).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = self.data(input).iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.record(Op::Mask { input, mask }, self.shape(input).to_vec(), data)
    }

    /// Mean over examples of `BCE(sigmoid(logit_i), target_i)`, computed from
    /// logits in the numerically stable form `softplus(z) - y·z`.
    pub fn bce(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        self.bce_node(logits, targets, None)
    }

    /// Mean over examples of `weight_i · BCE(sigmoid(logit_i), target_i)`.
    /// Weights are used as given, without normalization.
    pub fn weighted_bce(
        &mut self,
        logits: NodeId,
        targets: &[f64],
        weights: &[f64],
    ) -> Result<NodeId> {
        if weights.len() != targets.len() {
            return Err(Error::Dimension {
                op: "weighted_bce",
                lhs: vec![targets.len()],
                rhs: vec![weights.len()],
            });
        }
        self.bce_node(logits, targets, Some(weights))
    }

    fn bce_node(
        &mut self,
        logits: NodeId,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<NodeId> {
        let n = self.value(logits).numel();
        if targets.len() != n {
            return Err(Error::Dimension {
                op: "weighted_bce",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if n == 0 {
            return Err(Error::contract("weighted_bce on an empty batch"));
        }
        if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::contract(format!("label {t} outside {{0, 1}}")));
        }
        let z = self.data(logits);
        let total: f64 = match weights {
            None => z.iter().zip(targets).map(|(&z, &y)| bce_with_logit(z, y)).sum(),
            Some(w) => z
                .iter()
                .zip(targets.iter().zip(w))
                .map(|(&z, (&y, &w))| w * bce_with_logit(z, y))
                .sum(),
        };
        self.record(
            Op::WeightedBce {
                logits,
                targets: targets.to_vec(),
                weights: weights.map(<[f64]>::to_vec),
            },
            Vec::new(),
            vec![total / n as f64],
        )
    }

    /// Reverse-accumulates d(loss)/d(leaf) onto every trainable leaf reachable
    /// from the scalar `loss`. Leaf gradients accumulate across calls until
    /// [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(upstream) = pending[i].take() else {
                continue;
            };
            if !self.nodes[i].tracked {
                continue;
            }
            let node = &self.nodes[i];
            let name = node.op.name();
            if upstream.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: name,
                    phase: "backward",
                });
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&upstream).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(upstream),
                }
                continue;
            }
            let contributions = self.local_grads(i, &upstream)?;
            for (target, g) in contributions {
                if !self.nodes[target.0].tracked {
                    continue;
                }
                match &mut pending[target.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions from node `i` to each of its inputs.
    fn local_grads(&self, i: usize, upstream: &[f64]) -> Result<Vec<(NodeId, Vec<f64>)>> {
        let tracked = |id: NodeId| self.nodes[id.0].tracked;
        let out = match &self.nodes[i].op {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) => vec![(*a, upstream.to_vec()), (*b, upstream.to_vec())],
            Op::Mul(a, b) => {
                let ga = upstream.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect();
                let gb = upstream.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, c) => vec![(*a, upstream.iter().map(|g| g * c).collect())],
            Op::Sum(a) => vec![(*a, vec![upstream[0]; self.value(*a).numel()])],
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let mut out = Vec::new();
                if tracked(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, upstream, false, self.data(*b), true, &mut ga, false);
                    out.push((*a, ga));
                }
                if tracked(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, self.data(*a), true, upstream, false, &mut gb, false);
                    out.push((*b, gb));
                }
                out
            }
            Op::AddRow(x, row) => {
                let n = self.value(*row).numel();
                let mut grow = vec![0.0; n];
                for r in upstream.chunks(n.max(1)) {
                    grow.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                }
                vec![(*row, grow), (*x, upstream.to_vec())]
            }
            Op::Conv2d {
                input,
                kernels: kern,
                bias,
                geometry,
                batch,
            } => {
                let filters = self.shape(*kern)[0];
                let grads = kernels::conv2d_backward(
                    upstream,
                    self.data(*input),
                    *batch,
                    self.data(*kern),
                    filters,
                    *geometry,
                    tracked(*input),
                    tracked(*kern),
                    tracked(*bias),
                );
                [(*input, grads.input), (*kern, grads.kernels), (*bias, grads.bias)]
                    .into_iter()
                    .filter_map(|(id, g)| g.map(|g| (id, g)))
                    .collect()
            }
            Op::MaxPool2 { input, argmax } => {
                let mut g = vec![0.0; self.value(*input).numel()];
                for (&src, up) in argmax.iter().zip(upstream) {
                    g[src] += up;
                }
                vec![(*input, g)]
            }
            Op::Relu(x) => {
                let g = upstream
                    .iter()
                    .zip(self.data(*x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*x, g)]
            }
            Op::Reshape(x) => vec![(*x, upstream.to_vec())],
            Op::Mask { input, mask } => {
                vec![(*input, upstream.iter().zip(mask).map(|(g, m)| g * m).collect())]
            }
            Op::WeightedBce {
                logits,
                targets,
                weights,
            } => {
                let n = targets.len() as f64;
                let z = self.data(*logits);
                let g = match weights {
                    None => z
                        .iter()
                        .zip(targets)
                        .map(|(&z, &y)| upstream[0] * (sigmoid(z) - y) / n)
                        .collect(),
                    Some(w) => z
                        .iter()
                        .zip(targets.iter().zip(w))
                        .map(|(&z, (&y, &w))| upstream[0] * w * (sigmoid(z) - y) / n)
                        .collect(),
                };
                vec![(*logits, g)]
            }
        };
        let name = self.nodes[i].op.name();
        if out.iter().any(|(_, g)| g.iter().any(|v: &f64| !v.is_finite())) {
            return Err(Error::NonFinite {
                op: name,
                phase: "backward",
            });
        }
        Ok(out)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `y ∈ {0, 1}`.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}
