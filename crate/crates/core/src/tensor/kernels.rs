//! Dense kernels shared by the forward and backward passes.

use super::Scalar;
use crate::parallel;

/// Batched general matrix product `out[b] (+)= op(a[b]) * op(b[b])`.
///
/// Logical shapes are `op(a): [m, k]` and `op(b): [k, n]`; with `a_t` the
/// stored `a` is `[k, m]`, with `b_t` the stored `b` is `[n, k]`. When
/// `b_batched` is false the same `b` is used for every batch entry. Each
/// output row is computed independently in a fixed order, so the parallel
/// and sequential paths agree bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    b_batched: bool,
    out: &mut [T],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), batch * m * k);
    debug_assert_eq!(b.len(), if b_batched { batch } else { 1 } * k * n);
    debug_assert_eq!(out.len(), batch * m * n);
    let work = batch * m * k * n;
    parallel::for_each_row(out, n, work, |row_idx, row| {
        gemm_row(row_idx, m, k, n, a, a_t, b, b_t, b_batched, row, accumulate)
    });
}

/// Same contract as [`gemm`], always on the calling thread.
#[allow(clippy::too_many_arguments)]
pub fn gemm_sequential<T: Scalar>(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    b_batched: bool,
    out: &mut [T],
    accumulate: bool,
) {
    debug_assert_eq!(out.len(), batch * m * n);
    if n == 0 {
        return;
    }
    for (row_idx, row) in out.chunks_mut(n).enumerate() {
        gemm_row(row_idx, m, k, n, a, a_t, b, b_t, b_batched, row, accumulate);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm_row<T: Scalar>(
    row_idx: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    b_batched: bool,
    row: &mut [T],
    accumulate: bool,
) {
    let bt = row_idx / m;
    let i = row_idx % m;
    let a = &a[bt * m * k..(bt + 1) * m * k];
    let b = if b_batched { &b[bt * k * n..(bt + 1) * k * n] } else { b };
    if !accumulate {
        row.fill(T::zero());
    }
    let a_at = |p: usize| if a_t { a[p * m + i] } else { a[i * k + p] };
    if b_t {
        for (j, out) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (p, &bv) in b_row.iter().enumerate() {
                acc = acc + a_at(p) * bv;
            }
            *out = *out + acc;
        }
    } else {
        for p in 0..k {
            let av = a_at(p);
            let b_row = &b[p * n..(p + 1) * n];
            for (out, &bv) in row.iter_mut().zip(b_row) {
                *out = *out + av * bv;
            }
        }
    }
}
