//! One SSTFormer block, pre-norm residual:
//!
//! ```text
//! x += STGA(LN1(x))
//! x += IFFA_branch(LN2(x))
//! x  = gate(x)
//! x += MLP(LN3(x))          // GELU, width mlp_ratio * d
//! ```

use std::ops::Range;

use crate::model::gate::{gate_backward, gate_forward, GateCache};
use crate::model::iffa::{iffa_branch_backward, iffa_branch_forward, IffaCache};
use crate::model::layers::{add_assign, gelu_grad_with, gelu_tanh, gelu_with, layer_norm, layer_norm_backward, linear, linear_backward, NormCache};
use crate::model::params::{BlockLayout, ModelParams, Stack};
use crate::model::scalar::Scalar;
use crate::model::stga::{stga_backward, stga_forward, StgaCache};
use crate::model::tokens::TokenSet;

pub(crate) struct BlockCache<T> {
    ln1: NormCache<T>,
    attn: StgaCache<T>,
    ln2: NormCache<T>,
    iffa: IffaCache<T>,
    gate: GateCache<T>,
    ln3: NormCache<T>,
    mlp_in: Vec<T>,
    mlp_pre: Vec<T>,
    mlp_tanh: Vec<T>,
    mlp_act: Vec<T>,
}

pub(crate) fn block_forward<T: Scalar>(
    x: &[T],
    groups: &[Range<usize>],
    p: &[T],
    lay: &BlockLayout,
) -> (Vec<T>, BlockCache<T>) {
    let d = lay.width;
    let n = x.len() / d;
    let (a, ln1) = layer_norm(x, d, &p[lay.ln1_scale.range()], &p[lay.ln1_offset.range()]);
    let (s, attn) = stga_forward(&a, groups, p, lay);
    let mut x1 = x.to_vec();
    add_assign(&mut x1, &s);

    let (b, ln2) = layer_norm(&x1, d, &p[lay.ln2_scale.range()], &p[lay.ln2_offset.range()]);
    let (f, iffa) = iffa_branch_forward(&b, groups, p, lay);
    add_assign(&mut x1, &f);

    let (mut x3, gate) = gate_forward(&x1, p, lay);

    let (mlp_in, ln3) = layer_norm(&x3, d, &p[lay.ln3_scale.range()], &p[lay.ln3_offset.range()]);
    let mlp_pre = linear(&mlp_in, n, d, &p[lay.fc1_weight.range()], lay.hidden, Some(&p[lay.fc1_bias.range()]));
    let mlp_tanh: Vec<T> = mlp_pre.iter().map(|&v| gelu_tanh(v)).collect();
    let mlp_act: Vec<T> = mlp_pre.iter().zip(&mlp_tanh).map(|(&v, &t)| gelu_with(v, t)).collect();
    let m = linear(&mlp_act, n, lay.hidden, &p[lay.fc2_weight.range()], d, Some(&p[lay.fc2_bias.range()]));
    add_assign(&mut x3, &m);

    (x3, BlockCache { ln1, attn, ln2, iffa, gate, ln3, mlp_in, mlp_pre, mlp_tanh, mlp_act })
}

pub(crate) fn block_backward<T: Scalar>(
    dy: &[T],
    cache: &BlockCache<T>,
    groups: &[Range<usize>],
    p: &[T],
    lay: &BlockLayout,
    grad: &mut [T],
) -> Vec<T> {
    let d = lay.width;
    let n = dy.len() / d;
    let h = lay.hidden;

    let mut dact = linear_backward(dy, &cache.mlp_act, n, h, d, p, lay.fc2_weight, Some(lay.fc2_bias), grad);
    for ((g, &pre), &t) in dact.iter_mut().zip(&cache.mlp_pre).zip(&cache.mlp_tanh) {
        *g *= gelu_grad_with(pre, t);
    }
    let dmlp_in = linear_backward(&dact, &cache.mlp_in, n, d, h, p, lay.fc1_weight, Some(lay.fc1_bias), grad);
    let mut dx3 = dy.to_vec();
    add_assign(&mut dx3, &layer_norm_backward(&dmlp_in, &cache.ln3, d, p, lay.ln3_scale, lay.ln3_offset, grad));

    let mut dx1 = gate_backward(&dx3, &cache.gate, p, lay, grad);

    let db = iffa_branch_backward(&dx1, &cache.iffa, groups, p, lay, grad);
    let dx1_norm = layer_norm_backward(&db, &cache.ln2, d, p, lay.ln2_scale, lay.ln2_offset, grad);
    add_assign(&mut dx1, &dx1_norm);

    let da = stga_backward(&dx1, &cache.attn, groups, p, lay, grad);
    let dx0_norm = layer_norm_backward(&da, &cache.ln1, d, p, lay.ln1_scale, lay.ln1_offset, grad);
    add_assign(&mut dx1, &dx0_norm);
    dx1
}

pub(crate) fn stack_forward<T: Scalar>(
    x: Vec<T>,
    groups: &[Range<usize>],
    p: &[T],
    blocks: &[BlockLayout],
) -> (Vec<T>, Vec<BlockCache<T>>) {
    let mut caches = Vec::with_capacity(blocks.len());
    let mut x = x;
    for lay in blocks {
        let (y, c) = block_forward(&x, groups, p, lay);
        caches.push(c);
        x = y;
    }
    (x, caches)
}

pub(crate) fn stack_backward<T: Scalar>(
    dy: Vec<T>,
    caches: &[BlockCache<T>],
    groups: &[Range<usize>],
    p: &[T],
    blocks: &[BlockLayout],
    grad: &mut [T],
) -> Vec<T> {
    blocks
        .iter()
        .zip(caches)
        .rev()
        .fold(dy, |d, (lay, c)| block_backward(&d, c, groups, p, lay, grad))
}

/// Applies block `layer` of `stack`.
pub fn sstformer_block<T: Scalar>(
    tokens: &TokenSet<T>,
    params: &ModelParams<T>,
    stack: Stack,
    layer: usize,
) -> TokenSet<T> {
    let lay = &params.layout.blocks(stack)[layer];
    let (y, _) = block_forward(&tokens.tokens, &tokens.groups(), &params.data, lay);
    tokens.with_tokens(y)
}
