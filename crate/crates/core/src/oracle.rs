//! Brute-force f64 references for tests.
//!
//! Everything here is written with plain nested loops over `Vec<Vec<f64>>`
//! and reads parameters by registry name. Nothing calls into the model's
//! kernels, so agreement between the two is meaningful.

use crate::error::{MsaeError, Result};
use crate::masking::MaskPlan;
use crate::model::{Layout, LossOn, ModelParams};
use crate::skeleton::SkeletonSequence;

pub type Mat = Vec<Vec<f64>>;

const LN_EPS: f64 = 1e-5;

fn tensor<'a>(p: &'a ModelParams<f64>, name: &str) -> &'a [f64] {
    p.get(name).unwrap_or_else(|| panic!("no tensor {name}")).0
}

/// `x Wᵀ + b` with `W` stored `[out][in]`.
fn affine(x: &Mat, w: &[f64], out: usize, b: Option<&[f64]>) -> Mat {
    x.iter()
        .map(|row| {
            let inp = row.len();
            (0..out)
                .map(|o| {
                    let mut s = b.map_or(0.0, |b| b[o]);
                    for i in 0..inp {
                        s += row[i] * w[o * inp + i];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn softmax_reference(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Slice index of each position: distinct frames in order, `F` per slice.
pub fn slices_reference(positions: &[(usize, usize)], frames_per_slice: usize) -> Vec<usize> {
    let mut frames: Vec<usize> = positions.iter().map(|p| p.0).collect();
    frames.sort_unstable();
    frames.dedup();
    positions
        .iter()
        .map(|p| frames.iter().position(|&f| f == p.0).unwrap() / frames_per_slice)
        .collect()
}

/// Multi-head softmax attention where token `i` attends to every `j` with
/// `slices[j] == slices[i]`; scale `1/sqrt(d/heads)`.
pub fn attention_reference(q: &Mat, k: &Mat, v: &Mat, slices: &[usize], heads: usize) -> Mat {
    let n = q.len();
    let d = q.first().map_or(0, Vec::len);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        let peers: Vec<usize> = (0..n).filter(|&j| slices[j] == slices[i]).collect();
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let logits: Vec<f64> = peers
                .iter()
                .map(|&j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() * scale)
                .collect();
            let w = softmax_reference(&logits);
            for (&j, a) in peers.iter().zip(&w) {
                for c in cols.clone() {
                    out[i][c] += a * v[j][c];
                }
            }
        }
    }
    out
}

pub fn layer_norm_reference(x: &Mat, scale: &[f64], offset: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let sd = (var + LN_EPS).sqrt();
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / sd * scale[c] + offset[c])
                .collect()
        })
        .collect()
}

pub fn stse_reference(coords: &[[f64; 2]], positions: &[(usize, usize)], p: &ModelParams<f64>) -> Mat {
    let d = p.config.d_enc;
    let w = tensor(p, "encoder.stse.coord_proj");
    let fpos = tensor(p, "encoder.stse.frame_pos");
    let jpos = tensor(p, "encoder.stse.joint_pos");
    positions
        .iter()
        .zip(coords)
        .map(|(&(f, j), xy)| {
            (0..d)
                .map(|c| xy[0] * w[c * 2] + xy[1] * w[c * 2 + 1] + fpos[f * d + c] + jpos[j * d + c])
                .collect()
        })
        .collect()
}

/// `prefix` names a block, e.g. `"encoder.blocks.0"`.
pub fn stga_reference(x: &Mat, slices: &[usize], p: &ModelParams<f64>, prefix: &str) -> Mat {
    let d = x[0].len();
    let t = |s: &str| tensor(p, &format!("{prefix}.stga.{s}"));
    let q = affine(x, t("q"), d, None);
    let k = affine(x, t("k"), d, None);
    let v = affine(x, t("v"), d, None);
    let ctx = attention_reference(&q, &k, &v, slices, p.config.heads);
    affine(&ctx, t("o"), d, None)
}

/// The IFFA branch alone (what gets added to each token).
pub fn iffa_branch_reference(x: &Mat, slices: &[usize], p: &ModelParams<f64>, prefix: &str) -> Mat {
    let d = x[0].len();
    let kw = p.config.iffa_kernel;
    let dw = tensor(p, &format!("{prefix}.iffa.depthwise"));
    let pw = tensor(p, &format!("{prefix}.iffa.pointwise"));
    let s_count = slices.iter().max().map_or(0, |m| m + 1);
    let mut summary = vec![vec![0.0; d]; s_count];
    let mut counts = vec![0usize; s_count];
    for (row, &s) in x.iter().zip(slices) {
        counts[s] += 1;
        for c in 0..d {
            summary[s][c] += row[c];
        }
    }
    for (row, &n) in summary.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    let half = (kw / 2) as isize;
    let mut conv = vec![vec![0.0; d]; s_count];
    for s in 0..s_count as isize {
        for c in 0..d {
            for u in 0..kw as isize {
                let src = s + u - half;
                if src >= 0 && src < s_count as isize {
                    conv[s as usize][c] += dw[c * kw + u as usize] * summary[src as usize][c];
                }
            }
        }
    }
    let mixed = affine(&conv, pw, d, None);
    slices.iter().map(|&s| mixed[s].clone()).collect()
}

pub fn iffa_reference(x: &Mat, slices: &[usize], p: &ModelParams<f64>, prefix: &str) -> Mat {
    add(x, &iffa_branch_reference(x, slices, p, prefix))
}

pub fn gate_reference(x: &Mat, p: &ModelParams<f64>, prefix: &str) -> Mat {
    let d = x[0].len();
    let r = (d / 4).max(1);
    let w1 = tensor(p, &format!("{prefix}.gate.w1"));
    let w2 = tensor(p, &format!("{prefix}.gate.w2"));
    let mean: Vec<f64> = (0..d).map(|c| x.iter().map(|row| row[c]).sum::<f64>() / x.len() as f64).collect();
    let hidden: Vec<f64> = (0..r)
        .map(|j| (0..d).map(|c| w1[j * d + c] * mean[c]).sum::<f64>().max(0.0))
        .collect();
    let g: Vec<f64> = (0..d)
        .map(|c| {
            let z: f64 = (0..r).map(|j| w2[c * r + j] * hidden[j]).sum();
            1.0 / (1.0 + (-z).exp())
        })
        .collect();
    x.iter().map(|row| row.iter().zip(&g).map(|(v, g)| v * g).collect()).collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn mlp_reference(x: &Mat, p: &ModelParams<f64>, prefix: &str) -> Mat {
    let d = x[0].len();
    let hidden = p.config.mlp_ratio * d;
    let t = |s: &str| tensor(p, &format!("{prefix}.mlp.{s}"));
    let h: Mat = affine(x, t("fc1.weight"), hidden, Some(t("fc1.bias")))
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    affine(&h, t("fc2.weight"), d, Some(t("fc2.bias")))
}

pub fn block_reference(x: &Mat, slices: &[usize], p: &ModelParams<f64>, prefix: &str) -> Mat {
    let ln = |x: &Mat, which: &str| {
        layer_norm_reference(
            x,
            tensor(p, &format!("{prefix}.{which}.scale")),
            tensor(p, &format!("{prefix}.{which}.offset")),
        )
    };
    let x = add(x, &stga_reference(&ln(x, "ln1"), slices, p, prefix));
    let x = add(&x, &iffa_branch_reference(&ln(&x, "ln2"), slices, p, prefix));
    let x = gate_reference(&x, p, prefix);
    add(&x, &mlp_reference(&ln(&x, "ln3"), p, prefix))
}

pub fn encoder_reference(coords: &[[f64; 2]], positions: &[(usize, usize)], p: &ModelParams<f64>) -> Mat {
    let slices = slices_reference(positions, p.config.frames_per_slice);
    let mut x = stse_reference(coords, positions, p);
    for i in 0..p.config.n_enc {
        x = block_reference(&x, &slices, p, &format!("encoder.blocks.{i}"));
    }
    x
}

/// Positions the plan leaves visible, frame-major, derived from its fields.
pub fn visible_reference(plan: &MaskPlan) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for f in 0..plan.frames {
        if plan.masked_frames.contains(&f) {
            continue;
        }
        let k = plan.visible_frames.iter().position(|&v| v == f).unwrap();
        for j in 0..plan.joints {
            if !plan.masked_joints_per_visible_frame[k].contains(&j) {
                out.push((f, j));
            }
        }
    }
    out
}

/// Full reconstructed grid, frame-major.
pub fn decoder_reference(latent: &Mat, positions: &[(usize, usize)], plan: &MaskPlan, p: &ModelParams<f64>) -> Vec<[f64; 2]> {
    let cfg = &p.config;
    let dd = cfg.d_dec;
    let (t_len, joints) = (plan.frames, plan.joints);
    let proj = affine(latent, tensor(p, "decoder.proj.weight"), dd, Some(tensor(p, "decoder.proj.bias")));
    let mask = tensor(p, "decoder.mask_token");
    let fpos = tensor(p, "decoder.frame_pos");
    let jpos = tensor(p, "decoder.joint_pos");
    let mut grid = Vec::with_capacity(t_len * joints);
    let mut slices = Vec::with_capacity(t_len * joints);
    for f in 0..t_len {
        for j in 0..joints {
            let base: &[f64] = match positions.iter().position(|&q| q == (f, j)) {
                Some(i) => &proj[i],
                None => mask,
            };
            grid.push((0..dd).map(|c| base[c] + fpos[f * dd + c] + jpos[j * dd + c]).collect());
            slices.push(f / cfg.frames_per_slice);
        }
    }
    for i in 0..cfg.n_dec {
        grid = block_reference(&grid, &slices, p, &format!("decoder.blocks.{i}"));
    }
    affine(&grid, tensor(p, "decoder.head.weight"), 2, Some(tensor(p, "decoder.head.bias")))
        .into_iter()
        .map(|r| [r[0], r[1]])
        .collect()
}

pub fn masked_mse_reference(pred: &[[f64; 2]], target: &[[f64; 2]], indicator: &[bool], loss_on: LossOn) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if loss_on == LossOn::All || indicator[i] {
            for c in 0..2 {
                sum += (pred[i][c] - target[i][c]).powi(2);
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Mask, encode, decode and score one bout.
pub fn pipeline_reference(seq: &SkeletonSequence, plan: &MaskPlan, p: &ModelParams<f64>, loss_on: LossOn) -> Result<f64> {
    let positions = visible_reference(plan);
    if positions.is_empty() {
        return Err(MsaeError::EmptyVisible { visible: 0, frames_per_slice: plan.frames_per_slice });
    }
    let coords: Vec<[f64; 2]> = positions.iter().map(|&(f, j)| seq.point(f, j)).collect();
    let latent = encoder_reference(&coords, &positions, p);
    let pred = decoder_reference(&latent, &positions, plan, p);
    let target: Vec<[f64; 2]> = (0..seq.frames())
        .flat_map(|f| (0..seq.joints()).map(move |j| (f, j)))
        .map(|(f, j)| seq.point(f, j))
        .collect();
    let indicator: Vec<bool> = (0..pred.len()).map(|r| !positions.contains(&(r / plan.joints, r % plan.joints))).collect();
    if loss_on == LossOn::Masked && !indicator.contains(&true) {
        return Err(MsaeError::EmptyLossSupport);
    }
    Ok(masked_mse_reference(&pred, &target, &indicator, loss_on))
}

#[derive(Clone, Copy, Debug)]
pub struct AdamReference {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// One Adam step at 1-based step `t`; updates `p`, `m`, `v` in place.
pub fn adam_reference(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, h: AdamReference) {
    for i in 0..p.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let m_hat = m[i] / (1.0 - h.beta1.powi(t as i32));
        let v_hat = v[i] / (1.0 - h.beta2.powi(t as i32));
        p[i] -= h.lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * p[i]);
    }
}

/// Central differences `(L(p + h eᵢ) − L(p − h eᵢ)) / 2h` for every coordinate.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, p: &[f64], h: f64) -> Vec<f64> {
    let mut work = p.to_vec();
    (0..p.len())
        .map(|i| {
            work[i] = p[i] + h;
            let up = f(&work);
            work[i] = p[i] - h;
            let down = f(&work);
            work[i] = p[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Below this combined magnitude entries are compared absolutely.
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct FinDiffReport {
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// First index whose error exceeds the tolerance.
    pub failing: Option<usize>,
}

impl FinDiffReport {
    pub fn passed(&self) -> bool {
        self.failing.is_none()
    }
}

pub fn compare_gradients(analytic: &[f64], numeric: &[f64], layout: &Layout, tol: f64) -> FinDiffReport {
    assert_eq!(analytic.len(), numeric.len());
    let err = |i: usize| {
        let (a, n) = (analytic[i], numeric[i]);
        let mag = a.abs() + n.abs();
        if mag < FD_ABS_FLOOR {
            (a - n).abs()
        } else {
            (a - n).abs() / mag.max(f64::MIN_POSITIVE)
        }
    };
    let errors: Vec<f64> = (0..analytic.len()).map(err).collect();
    let per_tensor = layout
        .specs
        .iter()
        .map(|s| (s.name.clone(), errors[s.span.range()].iter().cloned().fold(0.0, f64::max)))
        .collect();
    let (worst_index, max_rel_error) = errors
        .iter()
        .cloned()
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    FinDiffReport {
        per_tensor,
        max_rel_error,
        worst_index,
        failing: errors.iter().position(|&e| e > tol),
    }
}
