use super::kernels::gemm;
use super::{numel, Scalar, Tensor, TensorError};
use crate::rng::Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

pub(super) struct Node<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

pub(super) enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_t: bool,
        b_batched: bool,
    },
    Add(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<T>,
        count: usize,
    },
}

/// Append-only record of a computation. Nodes are stored in creation order,
/// which is a topological order, and [`Tape::backward`] walks it in reverse.
pub struct Tape<T> {
    pub(super) nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Rejects any op whose output holds NaN or infinity.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("tape nodes are consistent")
    }

    fn requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<T>, inputs: &[Var], op: Op<T>) -> Result<Var, TensorError> {
        debug_assert_eq!(numel(&shape), value.len());
        if self.check_finite && !value.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = self.requires(inputs);
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a copy of `tensor`; gradients flow to it if it requires them.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: tensor.shape().to_vec(),
            value: tensor.data().to_vec(),
            requires_grad: tensor.requires_grad(),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let shape = tensor.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: tensor.into_data(),
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        self.gemm_node("matmul", a, b, 1, m, k, n, false, false, vec![m, n])
    }

    /// `[..., k] x [k, n] -> [..., n]`, treating the leading axes as rows.
    pub fn linear_map(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(mismatch("linear_map", sx, sw));
        }
        let k = sw[0];
        let n = sw[1];
        let m = numel(sx) / k;
        let mut shape = sx.to_vec();
        *shape.last_mut().expect("rank >= 1") = n;
        self.gemm_node("linear_map", x, w, 1, m, k, n, false, false, shape)
    }

    /// `x W + b` over the last axis.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var, TensorError> {
        let y = self.linear_map(x, w)?;
        self.add_row(y, bias)
    }

    /// Batched product `[B, m, k] x [B, k, n]`, or `[B, m, k] x [B, n, k]^T`
    /// when `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch("bmm", sa, sb));
        }
        self.gemm_node("bmm", a, b, batch, m, k, n, transpose_b, true, vec![batch, m, n])
    }

    #[allow(clippy::too_many_arguments)]
    fn gemm_node(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_t: bool,
        b_batched: bool,
        shape: Vec<usize>,
    ) -> Result<Var, TensorError> {
        let mut out = vec![T::zero(); batch * m * n];
        gemm(batch, m, k, n, self.value(a), false, self.value(b), b_t, b_batched, &mut out, false);
        let op = Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            b_t,
            b_batched,
        };
        self.push(name, shape, out, &[a, b], op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), out, &[a, b], Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), out, &[a, b], Op::Mul(a, b))
    }

    /// Adds a `[n]` row to every last-axis slice of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(mismatch("add_row", sx, sb));
        }
        let n = sb[0];
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        self.push("add_row", sx.to_vec(), out, &[x, bias], Op::AddRow { x, bias })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var, TensorError> {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        self.push("scale", self.shape(x).to_vec(), out, &[x], Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        self.push("relu", self.shape(x).to_vec(), out, &[x], Op::Relu(x))
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| TensorError::Invalid("softmax needs rank >= 1".into()))?;
        if n == 0 {
            return Err(TensorError::Invalid("softmax over an empty axis".into()));
        }
        let mut out = self.value(x).to_vec();
        out.chunks_mut(n).for_each(softmax_in_place);
        self.push("softmax", shape, out, &[x], Op::Softmax(x))
    }

    /// Normalises each last-axis slice to zero mean and unit (biased)
    /// variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| TensorError::Invalid("layer_norm needs rank >= 1".into()))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch("layer_norm", &shape, self.shape(gain)));
        }
        let eps = T::from_f64(eps);
        let inv_d = T::from_f64(1.0 / d as f64);
        let rows = numel(&shape) / d.max(1);
        let mut xhat = Vec::with_capacity(numel(&shape));
        let mut rstd = Vec::with_capacity(rows);
        for row in self.value(x).chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|&v| (v - mean) * r));
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let out = xhat
            .chunks(d)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &gv), &bv)| h * gv + bv))
            .collect();
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        self.push("layer_norm", shape, out, &[x, gain, bias], op)
    }

    /// Gathers rows of a `[V, D]` table; the output is `batch_shape ++ [D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], batch_shape: &[usize]) -> Result<Var, TensorError> {
        let st = self.shape(table);
        if st.len() != 2 || numel(batch_shape) != ids.len() {
            return Err(mismatch("embedding", st, batch_shape));
        }
        let (rows, d) = (st[0], st[1]);
        if let Some(&id) = ids.iter().find(|&&id| id >= rows) {
            return Err(TensorError::IndexOutOfRange { id, rows });
        }
        let values = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&values[id * d..(id + 1) * d]);
        }
        let mut shape = batch_shape.to_vec();
        shape.push(d);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        self.push("embedding", shape, out, &[table], op)
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1 / (1 - p)`. Returns `x` unchanged when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.next_f64() < p { T::zero() } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.push("dropout", self.shape(x).to_vec(), out, &[x], Op::Dropout { x, mask })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        if numel(shape) != self.value(x).len() {
            return Err(mismatch("reshape", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), out, &[x], Op::Reshape(x))
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(mismatch("permute", &shape, perm));
        }
        let (out_shape, out) = permute_data(self.value(x), &shape, perm);
        let op = Op::Permute { x, perm: perm.to_vec() };
        self.push("permute", out_shape, out, &[x], op)
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        if self.shape(x).len() != 2 {
            return Err(mismatch("transpose", self.shape(x), &[2]));
        }
        self.permute(x, &[1, 0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(mismatch("concat", &base, &[axis]));
        }
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().enumerate().any(|(d, &n)| d != axis && n != base[d]) {
                return Err(mismatch("concat", &base, s));
            }
            width += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut out = Vec::with_capacity(outer * width * base[axis + 1..].iter().product::<usize>());
        for o in 0..outer {
            for &p in parts {
                let chunk = self.value(p).len() / outer.max(1);
                out.extend_from_slice(&self.value(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = width;
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push("concat", shape, out, parts, op)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let total = self.value(x).iter().copied().sum();
        self.push("sum", Vec::new(), vec![total], &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(TensorError::Invalid("mean of an empty tensor".into()));
        }
        let total: T = self.value(x).iter().copied().sum();
        let out = total / T::from_f64(n as f64);
        self.push("mean", Vec::new(), vec![out], &[x], Op::Mean(x))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `[N, V]` logits. Rows whose target is `ignore` contribute neither loss
    /// nor gradient; if every row is ignored the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(mismatch("cross_entropy", &shape, &[targets.len()]));
        }
        let v = shape[1];
        let mut probs = self.value(logits).to_vec();
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (position, (row, &t)) in probs.chunks_mut(v).zip(targets).enumerate() {
            if t == ignore {
                continue;
            }
            if t >= v {
                return Err(TensorError::TargetOutOfRange { position, id: t, vocab: v });
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            total += (lse - row[t]).as_f64();
            count += 1;
        }
        probs.chunks_mut(v).for_each(softmax_in_place);
        let loss = if count == 0 { T::zero() } else { T::from_f64(total / count as f64) };
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            ignore,
            probs,
            count,
        };
        self.push("cross_entropy", Vec::new(), vec![loss], &[logits], op)
    }
}

pub(super) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

pub(super) fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    let mut index = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(data[offset]);
        for d in (0..rank).rev() {
            index[d] += 1;
            offset += out_strides[d];
            if index[d] < out_shape[d] {
                break;
            }
            offset -= out_strides[d] * out_shape[d];
            index[d] = 0;
        }
    }
    (out_shape, out)
}
