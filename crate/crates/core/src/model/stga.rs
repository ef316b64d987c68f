//! Spatio-temporal group attention: multi-head self-attention restricted to
//! the tokens of one time slice.

use std::ops::Range;

use crate::model::layers::{linear, linear_backward};
use crate::model::params::{BlockLayout, ModelParams, Stack};
use crate::model::scalar::{gemm, MatMut, MatRef, Scalar};
use crate::model::tokens::TokenSet;

pub(crate) struct StgaCache<T> {
    x: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    ctx: Vec<T>,
    /// Softmax weights, group-major then head-major, each `n×n`.
    attn: Vec<T>,
}

fn softmax_rows<T: Scalar>(s: &mut [T], n: usize) {
    for row in s.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

pub(crate) fn stga_forward<T: Scalar>(
    x: &[T],
    groups: &[Range<usize>],
    p: &[T],
    lay: &BlockLayout,
) -> (Vec<T>, StgaCache<T>) {
    let d = lay.width;
    let n = x.len() / d;
    let dh = d / lay.heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let q = linear(x, n, d, &p[lay.attn_q.range()], d, None);
    let k = linear(x, n, d, &p[lay.attn_k.range()], d, None);
    let v = linear(x, n, d, &p[lay.attn_v.range()], d, None);
    let mut ctx = vec![T::zero(); n * d];
    let mut attn = Vec::with_capacity(groups.iter().map(|g| g.len() * g.len()).sum::<usize>() * lay.heads);
    for g in groups {
        let m = g.len();
        for h in 0..lay.heads {
            let qh = MatRef::new(&q, n, d).block(g.start, h * dh, m, dh);
            let kh = MatRef::new(&k, n, d).block(g.start, h * dh, m, dh);
            let vh = MatRef::new(&v, n, d).block(g.start, h * dh, m, dh);
            let mut s = vec![T::zero(); m * m];
            gemm(scale, qh, kh.t(), T::zero(), MatMut::new(&mut s, m, m));
            softmax_rows(&mut s, m);
            gemm(
                T::one(),
                MatRef::new(&s, m, m),
                vh,
                T::zero(),
                MatMut::new(&mut ctx, n, d).block(g.start, h * dh, m, dh),
            );
            attn.extend_from_slice(&s);
        }
    }
    let y = linear(&ctx, n, d, &p[lay.attn_o.range()], d, None);
    (y, StgaCache { x: x.to_vec(), q, k, v, ctx, attn })
}

pub(crate) fn stga_backward<T: Scalar>(
    dy: &[T],
    cache: &StgaCache<T>,
    groups: &[Range<usize>],
    p: &[T],
    lay: &BlockLayout,
    grad: &mut [T],
) -> Vec<T> {
    let d = lay.width;
    let n = dy.len() / d;
    let dh = d / lay.heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let dctx = linear_backward(dy, &cache.ctx, n, d, d, p, lay.attn_o, None, grad);
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut at = 0;
    for g in groups {
        let m = g.len();
        for h in 0..lay.heads {
            let a = &cache.attn[at..at + m * m];
            at += m * m;
            let dch = MatRef::new(&dctx, n, d).block(g.start, h * dh, m, dh);
            let qh = MatRef::new(&cache.q, n, d).block(g.start, h * dh, m, dh);
            let kh = MatRef::new(&cache.k, n, d).block(g.start, h * dh, m, dh);
            let vh = MatRef::new(&cache.v, n, d).block(g.start, h * dh, m, dh);
            gemm(
                T::one(),
                MatRef::new(a, m, m).t(),
                dch,
                T::one(),
                MatMut::new(&mut dv, n, d).block(g.start, h * dh, m, dh),
            );
            let mut ds = vec![T::zero(); m * m];
            gemm(T::one(), dch, vh.t(), T::zero(), MatMut::new(&mut ds, m, m));
            for r in 0..m {
                let arow = &a[r * m..(r + 1) * m];
                let drow = &mut ds[r * m..(r + 1) * m];
                let dot: T = arow.iter().zip(drow.iter()).map(|(&x, &y)| x * y).sum();
                for (dv_, &av) in drow.iter_mut().zip(arow) {
                    *dv_ = av * (*dv_ - dot);
                }
            }
            gemm(scale, MatRef::new(&ds, m, m), kh, T::one(), MatMut::new(&mut dq, n, d).block(g.start, h * dh, m, dh));
            gemm(scale, MatRef::new(&ds, m, m).t(), qh, T::one(), MatMut::new(&mut dk, n, d).block(g.start, h * dh, m, dh));
        }
    }
    let mut dx = linear_backward(&dq, &cache.x, n, d, d, p, lay.attn_q, None, grad);
    for (span, dproj) in [(lay.attn_k, &dk), (lay.attn_v, &dv)] {
        let part = linear_backward(dproj, &cache.x, n, d, d, p, span, None, grad);
        crate::model::layers::add_assign(&mut dx, &part);
    }
    dx
}

/// Grouped self-attention of block `layer` in `stack`, applied to `tokens`
/// as given (no normalization, no residual).
pub fn stga<T: Scalar>(tokens: &TokenSet<T>, params: &ModelParams<T>, stack: Stack, layer: usize) -> TokenSet<T> {
    let lay = &params.layout.blocks(stack)[layer];
    let (y, _) = stga_forward(&tokens.tokens, &tokens.groups(), &params.data, lay);
    tokens.with_tokens(y)
}
