//! Inter-frame feature aggregation across time slices.
//!
//! Each slice is summarized by its mean token. A depthwise 1-D convolution
//! (zero padding, stride 1) runs along the slice axis, a pointwise matrix
//! mixes channels, and the result is added back to every token of the slice.

use std::ops::Range;

use crate::model::params::{BlockLayout, ModelParams, Stack};
use crate::model::scalar::{gemm, MatMut, MatRef, Scalar};
use crate::model::tokens::TokenSet;

pub(crate) struct IffaCache<T> {
    summary: Vec<T>,
    conv: Vec<T>,
}

/// The additive branch: one mixed summary per slice, broadcast to its rows.
pub(crate) fn iffa_branch_forward<T: Scalar>(
    x: &[T],
    groups: &[Range<usize>],
    p: &[T],
    lay: &BlockLayout,
) -> (Vec<T>, IffaCache<T>) {
    let d = lay.width;
    let k = lay.kernel;
    let pad = k / 2;
    let s_count = groups.len();
    let mut summary = vec![T::zero(); s_count * d];
    for (s, g) in groups.iter().enumerate() {
        let row = &mut summary[s * d..(s + 1) * d];
        for r in g.clone() {
            for (a, &v) in row.iter_mut().zip(&x[r * d..(r + 1) * d]) {
                *a += v;
            }
        }
        let inv = T::one() / T::of(g.len() as f64);
        row.iter_mut().for_each(|v| *v *= inv);
    }
    let kern = &p[lay.iffa_depthwise.range()];
    let mut conv = vec![T::zero(); s_count * d];
    for s in 0..s_count {
        for u in 0..k {
            let Some(src) = (s + u).checked_sub(pad).filter(|&t| t < s_count) else {
                continue;
            };
            for c in 0..d {
                conv[s * d + c] += kern[c * k + u] * summary[src * d + c];
            }
        }
    }
    let mut mixed = vec![T::zero(); s_count * d];
    gemm(
        T::one(),
        MatRef::new(&conv, s_count, d),
        MatRef::new(&p[lay.iffa_pointwise.range()], d, d).t(),
        T::zero(),
        MatMut::new(&mut mixed, s_count, d),
    );
    let mut out = vec![T::zero(); x.len()];
    for (s, g) in groups.iter().enumerate() {
        for r in g.clone() {
            out[r * d..(r + 1) * d].copy_from_slice(&mixed[s * d..(s + 1) * d]);
        }
    }
    (out, IffaCache { summary, conv })
}

pub(crate) fn iffa_branch_backward<T: Scalar>(
    dy: &[T],
    cache: &IffaCache<T>,
    groups: &[Range<usize>],
    p: &[T],
    lay: &BlockLayout,
    grad: &mut [T],
) -> Vec<T> {
    let d = lay.width;
    let k = lay.kernel;
    let pad = k / 2;
    let s_count = groups.len();
    let mut dmixed = vec![T::zero(); s_count * d];
    for (s, g) in groups.iter().enumerate() {
        for r in g.clone() {
            for (a, &v) in dmixed[s * d..(s + 1) * d].iter_mut().zip(&dy[r * d..(r + 1) * d]) {
                *a += v;
            }
        }
    }
    gemm(
        T::one(),
        MatRef::new(&dmixed, s_count, d).t(),
        MatRef::new(&cache.conv, s_count, d),
        T::one(),
        MatMut::new(&mut grad[lay.iffa_pointwise.range()], d, d),
    );
    let mut dconv = vec![T::zero(); s_count * d];
    gemm(
        T::one(),
        MatRef::new(&dmixed, s_count, d),
        MatRef::new(&p[lay.iffa_pointwise.range()], d, d),
        T::zero(),
        MatMut::new(&mut dconv, s_count, d),
    );
    let kern = &p[lay.iffa_depthwise.range()];
    let k0 = lay.iffa_depthwise.offset;
    let mut dsummary = vec![T::zero(); s_count * d];
    for s in 0..s_count {
        for u in 0..k {
            let Some(src) = (s + u).checked_sub(pad).filter(|&t| t < s_count) else {
                continue;
            };
            for c in 0..d {
                let g = dconv[s * d + c];
                grad[k0 + c * k + u] += g * cache.summary[src * d + c];
                dsummary[src * d + c] += g * kern[c * k + u];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for (s, g) in groups.iter().enumerate() {
        let inv = T::one() / T::of(g.len() as f64);
        for r in g.clone() {
            for c in 0..d {
                dx[r * d + c] = dsummary[s * d + c] * inv;
            }
        }
    }
    dx
}

/// `token + mixed_summary[slice(token)]` for block `layer` of `stack`.
pub fn iffa<T: Scalar>(tokens: &TokenSet<T>, params: &ModelParams<T>, stack: Stack, layer: usize) -> TokenSet<T> {
    let lay = &params.layout.blocks(stack)[layer];
    let (mut y, _) = iffa_branch_forward(&tokens.tokens, &tokens.groups(), &params.data, lay);
    crate::model::layers::add_assign(&mut y, &tokens.tokens);
    tokens.with_tokens(y)
}
