//! Reverse-mode computation graph over dense tensors.
//!
//! Forward values are computed eagerly as ops are inserted into an
//! append-only arena, so parents always precede children and the backward
//! pass is a single reverse sweep that visits each node once. Gradient
//! buffers are allocated lazily and accumulated additively, which makes
//! shared subexpressions (diamonds) sum their adjoints.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Operation record: parents plus whatever the backward rule needs.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    /// x [..., m] + bias [m].
    AddBias(NodeId, NodeId),
    /// x + constant tensor (no gradient into the constant).
    AddConst(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    /// [n, k] × [k, m].
    Matmul(NodeId, NodeId),
    /// [b, n, k] × [b, k, m].
    Bmm(NodeId, NodeId),
    /// Swap the last two axes.
    TransposeLast(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    Softmax {
        x: NodeId,
        axis: usize,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Tensor,
        inv_std: Vec<f64>,
        train: bool,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        kernel: usize,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    /// Real [..., H, W] → packed complex [..., H, W, 2].
    RealToComplex(NodeId),
    /// Packed complex → its real part.
    RealPart(NodeId),
    Fft2 {
        x: NodeId,
        inverse: bool,
    },
    SpectralMix {
        x: NodeId,
        w: NodeId,
        rows: Vec<usize>,
        cols: Vec<usize>,
    },
    /// [N, 1, H, W] → [N, T, r²] following a fixed cell order.
    Tokenize {
        x: NodeId,
        map: std::rc::Rc<Vec<usize>>,
    },
    Untokenize {
        x: NodeId,
        map: std::rc::Rc<Vec<usize>>,
    },
    DarcyResidual {
        p: NodeId,
        kappa: std::rc::Rc<Tensor>,
        hx: f64,
        hy: f64,
    },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub(crate) op: Op,
    pub requires: bool,
}

/// A single-use computation graph (one forward/backward episode).
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) rng: ChaCha8Rng,
}

impl Graph {
    pub fn new(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires
    }

    /// Insert a leaf. `requires_grad` marks trainable parameters and inputs
    /// whose gradients are wanted.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Add(a, b), req))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Sub(a, b), req))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Mul(a, b), req))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| -x).collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let req = self.requires(a);
        Ok(self.push(t, Op::Neg(a), req))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let req = self.requires(a);
        Ok(self.push(t, Op::Scale(a, c), req))
    }

    /// Broadcast-add a rank-1 bias over the last axis.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let m = *self.shape(a).last().unwrap_or(&0);
        if self.shape(bias) != [m] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let bias_data = self.value(bias).data().to_vec();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bias_data[i % m])
            .collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let req = self.requires(a) || self.requires(bias);
        Ok(self.push(t, Op::AddBias(a, bias), req))
    }

    /// Add a fixed table (positional encodings and the like); no gradient
    /// flows into the constant.
    pub fn add_const(&mut self, a: NodeId, c: &Tensor) -> Result<NodeId> {
        if self.shape(a) != c.shape() {
            return Err(Error::ShapeMismatch {
                op: "add_const",
                lhs: self.shape(a).to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(c.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let req = self.requires(a);
        Ok(self.push(t, Op::AddConst(a), req))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let req = self.requires(a);
        Ok(self.push(t, Op::Relu(a), req))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let req = self.requires(a);
        Ok(self.push(t, Op::Tanh(a), req))
    }

    /// Matrix product of a [n, k] activation and [k, m] weight.
    pub fn matmul(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let (sa, sw) = (self.shape(a).to_vec(), self.shape(w).to_vec());
        if sa.len() != 2 || sw.len() != 2 || sa[1] != sw[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sw,
            });
        }
        let (n, k, m) = (sa[0], sa[1], sw[1]);
        let out = matmul_raw(self.value(a).data(), self.value(w).data(), n, k, m);
        let t = Tensor::from_vec(&[n, m], out)?;
        let req = self.requires(a) || self.requires(w);
        Ok(self.push(t, Op::Matmul(a, w), req))
    }

    /// Batched matrix product [b, n, k] × [b, k, m].
    pub fn bmm(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let (sa, sw) = (self.shape(a).to_vec(), self.shape(w).to_vec());
        if sa.len() != 3 || sw.len() != 3 || sa[0] != sw[0] || sa[2] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "bmm",
                lhs: sa,
                rhs: sw,
            });
        }
        let (b, n, k, m) = (sa[0], sa[1], sa[2], sw[2]);
        let mut out = vec![0.0; b * n * m];
        for i in 0..b {
            let block = matmul_raw(
                &self.value(a).data()[i * n * k..(i + 1) * n * k],
                &self.value(w).data()[i * k * m..(i + 1) * k * m],
                n,
                k,
                m,
            );
            out[i * n * m..(i + 1) * n * m].copy_from_slice(&block);
        }
        let t = Tensor::from_vec(&[b, n, m], out)?;
        let req = self.requires(a) || self.requires(w);
        Ok(self.push(t, Op::Bmm(a, w), req))
    }

    /// Swap the last two axes of a rank ≥ 2 tensor.
    pub fn transpose_last(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose_last",
                lhs: s,
                rhs: vec![],
            });
        }
        let t = transpose_last_raw(self.value(a));
        let req = self.requires(a);
        Ok(self.push(t, Op::TransposeLast(a), req))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a).reshaped(shape)?;
        let req = self.requires(a);
        Ok(self.push(t, Op::Reshape(a), req))
    }

    /// Sum all entries to a scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(a).data().iter().sum();
        let req = self.requires(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), req))
    }

    /// Mean of all entries.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean squared difference between two same-shape tensors.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mse", a, b)?;
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument {
                what: "softmax axis",
                msg: format!("axis {axis} for shape {shape:?}"),
            });
        }
        let t = softmax_raw(self.value(a), axis);
        let req = self.requires(a);
        Ok(self.push(t, Op::Softmax { x: a, axis }, req))
    }

    /// Concatenate along `axis`; all other dims must match.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                what: "concat",
                msg: "no inputs".to_string(),
            });
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument {
                what: "concat axis",
                msg: format!("axis {axis} for shape {first:?}"),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;

        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; out_shape.iter().product()];
        let mut offset = 0;
        for &p in parts {
            let len_p = self.shape(p)[axis];
            let data = self.value(p).data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                let src = o * len_p * inner;
                out[dst..dst + len_p * inner].copy_from_slice(&data[src..src + len_p * inner]);
            }
            offset += len_p;
        }
        let t = Tensor::from_vec(&out_shape, out)?;
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            req,
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::InvalidArgument {
                what: "slice",
                msg: format!("axis {axis}, range {start}..{} for shape {shape:?}", start + len),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = vec![0.0; outer * len * inner];
        let data = self.value(a).data();
        for o in 0..outer {
            let src = (o * shape[axis] + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&data[src..src + len * inner]);
        }
        let t = Tensor::from_vec(&out_shape, out)?;
        let req = self.requires(a);
        Ok(self.push(t, Op::Slice { x: a, axis, start }, req))
    }

    /// Run the reverse sweep from a scalar output.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if !self.nodes[output.0].value.is_scalar() {
            return Err(Error::InvalidArgument {
                what: "backward",
                msg: format!(
                    "output must be scalar, shape {:?}",
                    self.nodes[output.0].value.shape()
                ),
            });
        }
        self.nodes[output.0].grad = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let grad = self.nodes[idx].grad.as_ref().unwrap().clone();
            self.backprop_one(idx, op, grad)?;
        }
        Ok(())
    }

    pub(crate) fn accumulate(&mut self, id: NodeId, delta: &[f64]) {
        if !self.nodes[id.0].requires {
            return;
        }
        let node = &mut self.nodes[id.0];
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        for (g, d) in grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }
}

/// Plain row-major matmul: [n, k] × [k, m].
pub(crate) fn matmul_raw(a: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    use rayon::prelude::*;
    let mut out = vec![0.0; n * m];
    if n * m * k < 1 << 16 {
        for i in 0..n {
            for kk in 0..k {
                let av = a[i * k + kk];
                if av == 0.0 {
                    continue;
                }
                let row = &w[kk * m..(kk + 1) * m];
                let dst = &mut out[i * m..(i + 1) * m];
                for (d, &wv) in dst.iter_mut().zip(row) {
                    *d += av * wv;
                }
            }
        }
    } else {
        // Each output row is owned by one task with a fixed summation order,
        // so results are identical for any thread count.
        out.par_chunks_mut(m).enumerate().for_each(|(i, dst)| {
            for kk in 0..k {
                let av = a[i * k + kk];
                if av == 0.0 {
                    continue;
                }
                let row = &w[kk * m..(kk + 1) * m];
                for (d, &wv) in dst.iter_mut().zip(row) {
                    *d += av * wv;
                }
            }
        });
    }
    out
}

pub(crate) fn transpose_last_raw(t: &Tensor) -> Tensor {
    let s = t.shape();
    let rank = s.len();
    let (n, m) = (s[rank - 2], s[rank - 1]);
    let outer: usize = s[..rank - 2].iter().product();
    let mut shape = s.to_vec();
    shape.swap(rank - 2, rank - 1);
    let mut out = vec![0.0; t.numel()];
    let data = t.data();
    for o in 0..outer {
        let base = o * n * m;
        for i in 0..n {
            for j in 0..m {
                out[base + j * n + i] = data[base + i * m + j];
            }
        }
    }
    Tensor::from_vec(&shape, out).expect("same element count")
}

pub(crate) fn softmax_raw(t: &Tensor, axis: usize) -> Tensor {
    let shape = t.shape();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = t.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for k in 0..len {
                mx = mx.max(out[idx(k)]);
            }
            let mut z = 0.0;
            for k in 0..len {
                let e = (out[idx(k)] - mx).exp();
                out[idx(k)] = e;
                z += e;
            }
            for k in 0..len {
                out[idx(k)] /= z;
            }
        }
    }
    Tensor::from_vec(shape, out).expect("same element count")
}
