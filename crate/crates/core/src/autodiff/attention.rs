//! Fused routed attention.
//!
//! Queries of region `r` attend to every token of the `k` regions listed in
//! `routing[group, r]`. Tensors are region-major `(groups * regions, c, h, w)`:
//! each batch entry holds one region's `h * w` tokens of dimension `c`.
//!
//! The probability matrix is never stored. The forward pass keeps one
//! log-sum-exp per query token; the backward pass rebuilds probabilities in
//! row chunks from it, which bounds memory by the chunk size regardless of
//! image resolution.

use super::softmax::softmax_row;
use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{IndexTensor, MatMut, MatRef, Real, Tensor};

/// Upper bound on the logits buffer, in elements.
const LOGIT_BUDGET: usize = 1 << 20;

struct Layout {
    groups: usize,
    regions: usize,
    topk: usize,
    dim: usize,
    tokens: usize,
    chunk: usize,
}

impl Layout {
    fn new<T: Real>(q: &Tensor<T>, routing: &IndexTensor) -> Self {
        let [b, dim, h, w] = q.shape();
        let [groups, _, regions, topk] = routing.shape;
        let tokens = h * w;
        let row = (topk * tokens).max(1);
        let chunk = (LOGIT_BUDGET / row).clamp(1, tokens.max(1));
        debug_assert_eq!(b, groups * regions);
        Self { groups, regions, topk, dim, tokens, chunk }
    }

    fn entry(&self, g: usize, r: usize) -> usize {
        (g * self.regions + r) * self.dim * self.tokens
    }

    fn sources<'a>(&self, routing: &'a IndexTensor, g: usize, r: usize) -> &'a [usize] {
        routing.row(g * self.regions + r)
    }

    /// Token-major view (rows = tokens, cols = channels) of `rows` tokens.
    fn tokens_of<'a, T>(&self, data: &'a [T], base: usize, first: usize) -> MatRef<'a, T> {
        MatRef::new(data, base + first, 1, self.tokens)
    }
}

fn logits<T: Real>(lay: &Layout, q: &[T], k: &[T], sources: &[usize], g: usize, qbase: usize, t0: usize, rows: usize, scale: T, buf: &mut [T]) {
    let width = lay.topk * lay.tokens;
    for (j, &s) in sources.iter().enumerate() {
        let kb = lay.entry(g, s);
        T::gemm(
            rows,
            lay.dim,
            lay.tokens,
            scale,
            lay.tokens_of(q, qbase, t0),
            lay.tokens_of(k, kb, 0).t(),
            T::zero(),
            MatMut::new(buf, j * lay.tokens, width, 1),
        );
    }
}

pub fn validate_routing(shape: [usize; 4], routing: &IndexTensor) -> Result<()> {
    let [groups, one, regions, topk] = routing.shape;
    if one != 1 || groups * regions != shape[0] {
        return Err(Error::shape(
            "fine_attention",
            format!("routing {:?} does not cover {} region entries", routing.shape, shape[0]),
        ));
    }
    if topk == 0 || topk > regions {
        return Err(Error::invalid("fine_attention", format!("k={topk} outside 1..={regions}")));
    }
    if let Some(&bad) = routing.data.iter().find(|&&i| i >= regions) {
        return Err(Error::invalid("fine_attention", format!("routed region {bad} out of range for {regions} regions")));
    }
    Ok(())
}

/// Returns the attended values and the per-token log-sum-exp.
pub fn attention_forward_kernel<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, routing: &IndexTensor) -> (Tensor<T>, Vec<T>) {
    let lay = Layout::new(q, routing);
    let scale = T::one() / T::from_usize(lay.dim).unwrap().sqrt();
    let width = lay.topk * lay.tokens;
    let mut out = Tensor::zeros(q.shape());
    let mut lse = vec![T::zero(); lay.groups * lay.regions * lay.tokens];
    let mut buf = vec![T::zero(); lay.chunk * width];
    for g in 0..lay.groups {
        for r in 0..lay.regions {
            let qbase = lay.entry(g, r);
            let sources = lay.sources(routing, g, r);
            for t0 in (0..lay.tokens).step_by(lay.chunk) {
                let rows = lay.chunk.min(lay.tokens - t0);
                let buf = &mut buf[..rows * width];
                logits(&lay, q.data(), k.data(), sources, g, qbase, t0, rows, scale, buf);
                let lse_row = (g * lay.regions + r) * lay.tokens + t0;
                for (i, row) in buf.chunks_mut(width).enumerate() {
                    lse[lse_row + i] = softmax_row(row);
                }
                for (j, &s) in sources.iter().enumerate() {
                    let beta = if j == 0 { T::zero() } else { T::one() };
                    T::gemm(
                        rows,
                        lay.tokens,
                        lay.dim,
                        T::one(),
                        MatRef::new(buf, j * lay.tokens, width, 1),
                        lay.tokens_of(v.data(), lay.entry(g, s), 0),
                        beta,
                        MatMut::new(out.data_mut(), qbase + t0, 1, lay.tokens),
                    );
                }
            }
        }
    }
    (out, lse)
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward_kernel<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    out: &Tensor<T>,
    routing: &IndexTensor,
    lse: &[T],
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let lay = Layout::new(q, routing);
    let scale = T::one() / T::from_usize(lay.dim).unwrap().sqrt();
    let width = lay.topk * lay.tokens;
    let mut dq = Tensor::zeros(q.shape());
    let mut dk = Tensor::zeros(k.shape());
    let mut dv = Tensor::zeros(v.shape());
    let mut probs = vec![T::zero(); lay.chunk * width];
    let mut dlogits = vec![T::zero(); lay.chunk * width];
    let mut rowdot = vec![T::zero(); lay.chunk];
    for g in 0..lay.groups {
        for r in 0..lay.regions {
            let qbase = lay.entry(g, r);
            let sources = lay.sources(routing, g, r);
            for t0 in (0..lay.tokens).step_by(lay.chunk) {
                let rows = lay.chunk.min(lay.tokens - t0);
                let p = &mut probs[..rows * width];
                let ds = &mut dlogits[..rows * width];
                logits(&lay, q.data(), k.data(), sources, g, qbase, t0, rows, scale, p);
                let lse_row = (g * lay.regions + r) * lay.tokens + t0;
                for (i, row) in p.chunks_mut(width).enumerate() {
                    let m = lse[lse_row + i];
                    for x in row.iter_mut() {
                        *x = (*x - m).exp();
                    }
                }
                // D_t = <dO_t, O_t>
                for (i, d) in rowdot[..rows].iter_mut().enumerate() {
                    let t = t0 + i;
                    *d = (0..lay.dim).map(|c| dout.data()[qbase + c * lay.tokens + t] * out.data()[qbase + c * lay.tokens + t]).sum();
                }
                let dout_rows = lay.tokens_of(dout.data(), qbase, t0);
                for (j, &s) in sources.iter().enumerate() {
                    let vb = lay.entry(g, s);
                    // dP = dO V^T
                    T::gemm(rows, lay.dim, lay.tokens, T::one(), dout_rows, lay.tokens_of(v.data(), vb, 0).t(), T::zero(), MatMut::new(ds, j * lay.tokens, width, 1));
                    // dV_s += P^T dO
                    T::gemm(
                        lay.tokens,
                        rows,
                        lay.dim,
                        T::one(),
                        MatRef::new(p, j * lay.tokens, width, 1).t(),
                        dout_rows,
                        T::one(),
                        MatMut::new(dv.data_mut(), vb, 1, lay.tokens),
                    );
                }
                for ((drow, prow), &d) in ds.chunks_mut(width).zip(p.chunks(width)).zip(&rowdot) {
                    for (x, &pv) in drow.iter_mut().zip(prow) {
                        *x = pv * (*x - d);
                    }
                }
                let q_rows = lay.tokens_of(q.data(), qbase, t0);
                for (j, &s) in sources.iter().enumerate() {
                    let kb = lay.entry(g, s);
                    let ds_j = MatRef::new(ds, j * lay.tokens, width, 1);
                    T::gemm(rows, lay.tokens, lay.dim, scale, ds_j, lay.tokens_of(k.data(), kb, 0), T::one(), MatMut::new(dq.data_mut(), qbase + t0, 1, lay.tokens));
                    T::gemm(lay.tokens, rows, lay.dim, scale, ds_j.t(), q_rows, T::one(), MatMut::new(dk.data_mut(), kb, 1, lay.tokens));
                }
            }
        }
    }
    (dq, dk, dv)
}

impl<T: Real> Graph<T> {
    /// Scaled dot-product attention from each query region to the tokens of
    /// its routed regions. `routing` has shape `(groups, 1, regions, k)`.
    pub fn fine_attention(&mut self, q: Var, k: Var, v: Var, routing: &IndexTensor) -> Result<Var> {
        let shape = self.shape(q);
        if self.shape(k) != shape || self.shape(v) != shape {
            return Err(Error::shape("fine_attention", format!("q {:?}, k {:?}, v {:?}", shape, self.shape(k), self.shape(v))));
        }
        validate_routing(shape, routing)?;
        let (value, lse) = attention_forward_kernel(self.value(q), self.value(k), self.value(v), routing);
        Ok(self.push(value, Op::Attention { q, k, v, routing: routing.clone(), lse }, &[q, k, v]))
    }
}
