//! Convolution-style channel attention (squeeze-excitation gating).
//!
//! `m = mean(tokens)`, `g = sigmoid(W2 · relu(W1 · m))`, `out = tokens ⊙ g`.

use crate::model::layers::{row_mean, sigmoid};
use crate::model::params::{BlockLayout, ModelParams, Stack};
use crate::model::scalar::Scalar;
use crate::model::tokens::TokenSet;

pub(crate) struct GateCache<T> {
    x: Vec<T>,
    mean: Vec<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
    gate: Vec<T>,
}

fn matvec<T: Scalar>(w: &[T], rows: usize, cols: usize, v: &[T]) -> Vec<T> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum())
        .collect()
}

pub(crate) fn gate_forward<T: Scalar>(x: &[T], p: &[T], lay: &BlockLayout) -> (Vec<T>, GateCache<T>) {
    let d = lay.width;
    let r = lay.reduced;
    let mean = row_mean(x, d);
    let pre = matvec(&p[lay.gate_w1.range()], r, d, &mean);
    let hidden: Vec<T> = pre.iter().map(|&a| a.max(T::zero())).collect();
    let z = matvec(&p[lay.gate_w2.range()], d, r, &hidden);
    let gate: Vec<T> = z.into_iter().map(sigmoid).collect();
    let mut y = x.to_vec();
    for row in y.chunks_exact_mut(d) {
        for (v, &g) in row.iter_mut().zip(&gate) {
            *v *= g;
        }
    }
    (y, GateCache { x: x.to_vec(), mean, pre, hidden, gate })
}

pub(crate) fn gate_backward<T: Scalar>(dy: &[T], cache: &GateCache<T>, p: &[T], lay: &BlockLayout, grad: &mut [T]) -> Vec<T> {
    let d = lay.width;
    let r = lay.reduced;
    let n = dy.len() / d;
    let mut dx = dy.to_vec();
    let mut dgate = vec![T::zero(); d];
    for (row, (dyr, xr)) in dx.chunks_exact_mut(d).zip(dy.chunks_exact(d).zip(cache.x.chunks_exact(d))) {
        for c in 0..d {
            dgate[c] += dyr[c] * xr[c];
            row[c] *= cache.gate[c];
        }
    }
    let dz: Vec<T> = dgate
        .iter()
        .zip(&cache.gate)
        .map(|(&dg, &g)| dg * g * (T::one() - g))
        .collect();
    let w2 = &p[lay.gate_w2.range()];
    let mut dhidden = vec![T::zero(); r];
    for c in 0..d {
        for j in 0..r {
            grad[lay.gate_w2.offset + c * r + j] += dz[c] * cache.hidden[j];
            dhidden[j] += w2[c * r + j] * dz[c];
        }
    }
    let w1 = &p[lay.gate_w1.range()];
    let mut dmean = vec![T::zero(); d];
    for j in 0..r {
        let da = if cache.pre[j] > T::zero() { dhidden[j] } else { T::zero() };
        for c in 0..d {
            grad[lay.gate_w1.offset + j * d + c] += da * cache.mean[c];
            dmean[c] += w1[j * d + c] * da;
        }
    }
    let inv = T::one() / T::of(n as f64);
    for row in dx.chunks_exact_mut(d) {
        for (v, &dm) in row.iter_mut().zip(&dmean) {
            *v += dm * inv;
        }
    }
    dx
}

/// Channel gating of block `layer` in `stack`.
pub fn conv_channel_attention<T: Scalar>(
    tokens: &TokenSet<T>,
    params: &ModelParams<T>,
    stack: Stack,
    layer: usize,
) -> TokenSet<T> {
    let lay = &params.layout.blocks(stack)[layer];
    let (y, _) = gate_forward(&tokens.tokens, &params.data, lay);
    tokens.with_tokens(y)
}
