use super::kernels::gemm;
use super::tape::{permute_data, Node, Op, Tape, Var};
use super::{Scalar, Tensor, TensorError};

/// Gradients of one backward pass, kept for leaf nodes only.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` does not require a gradient or the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient for `v` (zero if disconnected) into `tensor.grad`.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor<T>) -> Result<(), TensorError> {
        match self.get(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.accumulate_grad(&vec![T::zero(); tensor.len()]),
        }
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'a mut [T]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
}

impl<T: Scalar> Tape<T> {
    /// Reverse sweep from a rank-0 `loss`. Every node before `loss` is visited
    /// once, in reverse creation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let shape = self.shape(loss);
        if !shape.is_empty() {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            if matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(nodes, &mut grads, i, &g);
        }
        Ok(Gradients { grads })
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            b_t,
            b_batched,
        } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(da) = slot(grads, nodes, a) {
                if b_t {
                    gemm(batch, m, n, k, g, false, bv, false, b_batched, da, true);
                } else {
                    gemm(batch, m, n, k, g, false, bv, true, b_batched, da, true);
                }
            }
            if let Some(db) = slot(grads, nodes, b) {
                match (b_t, b_batched) {
                    (false, true) => gemm(batch, k, m, n, av, true, g, false, true, db, true),
                    (false, false) => gemm(1, k, batch * m, n, av, true, g, false, true, db, true),
                    (true, true) => gemm(batch, n, m, k, g, true, av, false, true, db, true),
                    (true, false) => gemm(1, n, batch * m, k, g, true, av, false, true, db, true),
                }
            }
        }
        &Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(d) = slot(grads, nodes, v) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
                }
            }
        }
        &Op::AddRow { x, bias } => {
            if let Some(dx) = slot(grads, nodes, x) {
                dx.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
            }
            if let Some(db) = slot(grads, nodes, bias) {
                let n = db.len();
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, &g)| *d = *d + g);
                }
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(da) = slot(grads, nodes, a) {
                for ((d, &g), &y) in da.iter_mut().zip(g).zip(bv) {
                    *d = *d + g * y;
                }
            }
            if let Some(db) = slot(grads, nodes, b) {
                for ((d, &g), &x) in db.iter_mut().zip(g).zip(av) {
                    *d = *d + g * x;
                }
            }
        }
        &Op::Scale(x, factor) => {
            if let Some(dx) = slot(grads, nodes, x) {
                dx.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g * factor);
            }
        }
        &Op::Relu(x) => {
            let xv = &nodes[x.0].value;
            if let Some(dx) = slot(grads, nodes, x) {
                for ((d, &g), &v) in dx.iter_mut().zip(g).zip(xv) {
                    if v > T::zero() {
                        *d = *d + g;
                    }
                }
            }
        }
        &Op::Softmax(x) => {
            let y = &node.value;
            let n = *node.shape.last().expect("softmax rank >= 1");
            if let Some(dx) = slot(grads, nodes, x) {
                for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = *d + yv * (gv - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = *node.shape.last().expect("layer_norm rank >= 1");
            let gv = &nodes[gain.0].value;
            if let Some(dgain) = slot(grads, nodes, *gain) {
                for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                    for ((dg, &gq), &h) in dgain.iter_mut().zip(grow).zip(hrow) {
                        *dg = *dg + gq * h;
                    }
                }
            }
            if let Some(dbias) = slot(grads, nodes, *bias) {
                for grow in g.chunks(d) {
                    dbias.iter_mut().zip(grow).for_each(|(db, &gq)| *db = *db + gq);
                }
            }
            if let Some(dx) = slot(grads, nodes, *x) {
                let inv_d = T::from_f64(1.0 / d as f64);
                for (((drow, grow), hrow), &r) in dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).zip(rstd) {
                    let mut sum_g = T::zero();
                    let mut sum_gh = T::zero();
                    for ((&gq, &h), &w) in grow.iter().zip(hrow).zip(gv) {
                        sum_g = sum_g + gq * w;
                        sum_gh = sum_gh + gq * w * h;
                    }
                    for (((dv, &gq), &h), &w) in drow.iter_mut().zip(grow).zip(hrow).zip(gv) {
                        *dv = *dv + r * (gq * w - inv_d * sum_g - h * inv_d * sum_gh);
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            let dim = nodes[table.0].shape[1];
            if let Some(dt) = slot(grads, nodes, *table) {
                for (grow, &id) in g.chunks(dim).zip(ids) {
                    let target = &mut dt[id * dim..(id + 1) * dim];
                    target.iter_mut().zip(grow).for_each(|(d, &gq)| *d = *d + gq);
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(dx) = slot(grads, nodes, *x) {
                for ((d, &gq), &m) in dx.iter_mut().zip(g).zip(mask) {
                    *d = *d + gq * m;
                }
            }
        }
        &Op::Reshape(x) => {
            if let Some(dx) = slot(grads, nodes, x) {
                dx.iter_mut().zip(g).for_each(|(d, &gq)| *d = *d + gq);
            }
        }
        Op::Permute { x, perm } => {
            let mut inverse = vec![0; perm.len()];
            for (d, &p) in perm.iter().enumerate() {
                inverse[p] = d;
            }
            let (_, back) = permute_data(g, &node.shape, &inverse);
            if let Some(dx) = slot(grads, nodes, *x) {
                dx.iter_mut().zip(&back).for_each(|(d, &gq)| *d = *d + gq);
            }
        }
        Op::Concat { parts, axis } => {
            let outer: usize = node.shape[..*axis].iter().product();
            let mut offset = 0;
            for o in 0..outer {
                for &p in parts {
                    let chunk = nodes[p.0].value.len() / outer.max(1);
                    if let Some(dp) = slot(grads, nodes, p) {
                        let dst = &mut dp[o * chunk..(o + 1) * chunk];
                        dst.iter_mut().zip(&g[offset..offset + chunk]).for_each(|(d, &gq)| *d = *d + gq);
                    }
                    offset += chunk;
                }
            }
        }
        &Op::Sum(x) => {
            if let Some(dx) = slot(grads, nodes, x) {
                dx.iter_mut().for_each(|d| *d = *d + g[0]);
            }
        }
        &Op::Mean(x) => {
            if let Some(dx) = slot(grads, nodes, x) {
                let share = g[0] / T::from_f64(dx.len() as f64);
                dx.iter_mut().for_each(|d| *d = *d + share);
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            ignore,
            probs,
            count,
        } => {
            if *count == 0 {
                return;
            }
            let v = nodes[logits.0].shape[1];
            let scale = g[0] / T::from_f64(*count as f64);
            if let Some(dl) = slot(grads, nodes, *logits) {
                for ((drow, prow), &t) in dl.chunks_mut(v).zip(probs.chunks(v)).zip(targets) {
                    if t == *ignore {
                        continue;
                    }
                    for (d, &p) in drow.iter_mut().zip(prow) {
                        *d = *d + scale * p;
                    }
                    drow[t] = drow[t] - scale;
                }
            }
        }
    }
}
