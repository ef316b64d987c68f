//! Dense building blocks shared by the sub-modules.

use crate::model::params::Span;
use crate::model::scalar::{gemm, MatMut, MatRef, Scalar};
use crate::model::LAYER_NORM_EPS;

/// `y = x Wᵀ (+ b)` for row-major `x: n×inp`, `W: out×inp`.
pub(crate) fn linear<T: Scalar>(x: &[T], n: usize, inp: usize, w: &[T], out: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut y = vec![T::zero(); n * out];
    let beta = match bias {
        Some(b) => {
            for row in y.chunks_exact_mut(out) {
                row.copy_from_slice(b);
            }
            T::one()
        }
        None => T::zero(),
    };
    gemm(T::one(), MatRef::new(x, n, inp), MatRef::new(w, out, inp).t(), beta, MatMut::new(&mut y, n, out));
    y
}

/// Accumulates `dW`, `db` into `grad` and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    n: usize,
    inp: usize,
    out: usize,
    params: &[T],
    w: Span,
    b: Option<Span>,
    grad: &mut [T],
) -> Vec<T> {
    gemm(
        T::one(),
        MatRef::new(dy, n, out).t(),
        MatRef::new(x, n, inp),
        T::one(),
        MatMut::new(&mut grad[w.range()], out, inp),
    );
    if let Some(b) = b {
        let db = &mut grad[b.range()];
        for row in dy.chunks_exact(out) {
            for (g, &v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
    }
    let mut dx = vec![T::zero(); n * inp];
    gemm(
        T::one(),
        MatRef::new(dy, n, out),
        MatRef::new(&params[w.range()], out, inp),
        T::zero(),
        MatMut::new(&mut dx, n, inp),
    );
    dx
}

pub(crate) struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

/// Per-row layer normalization with learned scale and offset.
pub(crate) fn layer_norm<T: Scalar>(x: &[T], d: usize, scale: &[T], offset: &[T]) -> (Vec<T>, NormCache<T>) {
    let n = x.len() / d;
    let eps = T::of(LAYER_NORM_EPS);
    let inv_d = T::one() / T::of(d as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    let mut y = vec![T::zero(); x.len()];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * scale[c] + offset[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    d: usize,
    params: &[T],
    scale: Span,
    offset: Span,
    grad: &mut [T],
) -> Vec<T> {
    let n = dy.len() / d;
    let g = &params[scale.range()];
    let inv_d = T::one() / T::of(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for c in 0..d {
            grad[scale.offset + c] += dyr[c] * xh[c];
            grad[offset.offset + c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() * inv_d;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        for c in 0..d {
            dx[r * d + c] = cache.rstd[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
/// `tanh` of the GELU inner term; shared by the forward value and its
/// derivative so backward passes need no transcendental calls.
pub(crate) fn gelu_tanh<T: Scalar>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    // One exp instead of libm tanh; saturates cleanly at ±1.
    T::one() - T::of(2.0) / ((inner + inner).exp() + T::one())
}

pub(crate) fn gelu_with<T: Scalar>(x: T, t: T) -> T {
    T::of(0.5) * x * (T::one() + t)
}

pub(crate) fn gelu_grad_with<T: Scalar>(x: T, t: T) -> T {
    let half = T::of(0.5);
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
fn gelu<T: Scalar>(x: T) -> T {
    gelu_with(x, gelu_tanh(x))
}

#[cfg(test)]
fn gelu_grad<T: Scalar>(x: T) -> T {
    gelu_grad_with(x, gelu_tanh(x))
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Mean over rows of an `n×d` matrix.
pub(crate) fn row_mean<T: Scalar>(x: &[T], d: usize) -> Vec<T> {
    let n = x.len() / d;
    let mut m = vec![T::zero(); d];
    for row in x.chunks_exact(d) {
        for (a, &v) in m.iter_mut().zip(row) {
            *a += v;
        }
    }
    let inv = T::one() / T::of(n as f64);
    m.iter_mut().for_each(|v| *v *= inv);
    m
}

pub(crate) fn add_assign<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
