//! Parameter registry.
//!
//! Every learnable tensor lives in one flat vector. The registry fixes the
//! order, which is also the checkpoint layout and the layout of gradient
//! vectors.

use std::ops::Range;
use std::sync::Arc;

use crate::error::Result;
use crate::model::scalar::Scalar;
use crate::model::ModelConfig;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

impl Span {
    pub fn range(self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform(−a, a), a = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    /// N(0, 0.02²).
    SmallNormal,
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub span: Span,
    pub init: Init,
}

/// Offsets of one SSTFormer block.
#[derive(Clone, Debug)]
pub struct BlockLayout {
    pub width: usize,
    pub heads: usize,
    pub hidden: usize,
    pub reduced: usize,
    pub kernel: usize,
    pub ln1_scale: Span,
    pub ln1_offset: Span,
    pub attn_q: Span,
    pub attn_k: Span,
    pub attn_v: Span,
    pub attn_o: Span,
    pub ln2_scale: Span,
    pub ln2_offset: Span,
    pub iffa_depthwise: Span,
    pub iffa_pointwise: Span,
    pub gate_w1: Span,
    pub gate_w2: Span,
    pub ln3_scale: Span,
    pub ln3_offset: Span,
    pub fc1_weight: Span,
    pub fc1_bias: Span,
    pub fc2_weight: Span,
    pub fc2_bias: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stack {
    Encoder,
    Decoder,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub specs: Vec<TensorSpec>,
    pub stse_coord_proj: Span,
    pub stse_frame_pos: Span,
    pub stse_joint_pos: Span,
    pub enc_blocks: Vec<BlockLayout>,
    pub dec_proj_weight: Span,
    pub dec_proj_bias: Span,
    pub mask_token: Span,
    pub dec_frame_pos: Span,
    pub dec_joint_pos: Span,
    pub dec_blocks: Vec<BlockLayout>,
    pub head_weight: Span,
    pub head_bias: Span,
    pub total: usize,
}

struct Builder {
    specs: Vec<TensorSpec>,
    offset: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize], init: Init) -> Span {
        let len = shape.iter().product();
        let span = Span { offset: self.offset, len };
        self.offset += len;
        self.specs.push(TensorSpec { name, shape: shape.to_vec(), span, init });
        span
    }

    fn weight(&mut self, name: String, out: usize, inp: usize) -> Span {
        self.push(name, &[out, inp], Init::Xavier { fan_in: inp, fan_out: out })
    }

    fn block(&mut self, prefix: &str, cfg: &ModelConfig, width: usize) -> BlockLayout {
        let d = width;
        let hidden = cfg.mlp_ratio * d;
        let reduced = ModelConfig::reduced_width(d);
        let k = cfg.iffa_kernel;
        let p = |s: &str| format!("{prefix}.{s}");
        BlockLayout {
            width: d,
            heads: cfg.heads,
            hidden,
            reduced,
            kernel: k,
            ln1_scale: self.push(p("ln1.scale"), &[d], Init::Ones),
            ln1_offset: self.push(p("ln1.offset"), &[d], Init::Zeros),
            attn_q: self.weight(p("stga.q"), d, d),
            attn_k: self.weight(p("stga.k"), d, d),
            attn_v: self.weight(p("stga.v"), d, d),
            attn_o: self.weight(p("stga.o"), d, d),
            ln2_scale: self.push(p("ln2.scale"), &[d], Init::Ones),
            ln2_offset: self.push(p("ln2.offset"), &[d], Init::Zeros),
            iffa_depthwise: self.push(p("iffa.depthwise"), &[d, k], Init::Xavier { fan_in: k, fan_out: k }),
            iffa_pointwise: self.weight(p("iffa.pointwise"), d, d),
            gate_w1: self.weight(p("gate.w1"), reduced, d),
            gate_w2: self.weight(p("gate.w2"), d, reduced),
            ln3_scale: self.push(p("ln3.scale"), &[d], Init::Ones),
            ln3_offset: self.push(p("ln3.offset"), &[d], Init::Zeros),
            fc1_weight: self.weight(p("mlp.fc1.weight"), hidden, d),
            fc1_bias: self.push(p("mlp.fc1.bias"), &[hidden], Init::Zeros),
            fc2_weight: self.weight(p("mlp.fc2.weight"), d, hidden),
            fc2_bias: self.push(p("mlp.fc2.bias"), &[d], Init::Zeros),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut b = Builder { specs: Vec::new(), offset: 0 };
        let (de, dd) = (cfg.d_enc, cfg.d_dec);
        let stse_coord_proj = b.weight("encoder.stse.coord_proj".into(), de, 2);
        let stse_frame_pos = b.push("encoder.stse.frame_pos".into(), &[cfg.max_frames, de], Init::SmallNormal);
        let stse_joint_pos = b.push("encoder.stse.joint_pos".into(), &[cfg.joints, de], Init::SmallNormal);
        let enc_blocks = (0..cfg.n_enc)
            .map(|i| b.block(&format!("encoder.blocks.{i}"), cfg, de))
            .collect();
        let dec_proj_weight = b.weight("decoder.proj.weight".into(), dd, de);
        let dec_proj_bias = b.push("decoder.proj.bias".into(), &[dd], Init::Zeros);
        let mask_token = b.push("decoder.mask_token".into(), &[dd], Init::SmallNormal);
        let dec_frame_pos = b.push("decoder.frame_pos".into(), &[cfg.max_frames, dd], Init::SmallNormal);
        let dec_joint_pos = b.push("decoder.joint_pos".into(), &[cfg.joints, dd], Init::SmallNormal);
        let dec_blocks = (0..cfg.n_dec)
            .map(|i| b.block(&format!("decoder.blocks.{i}"), cfg, dd))
            .collect();
        let head_weight = b.weight("decoder.head.weight".into(), 2, dd);
        let head_bias = b.push("decoder.head.bias".into(), &[2], Init::Zeros);
        Layout {
            total: b.offset,
            specs: b.specs,
            stse_coord_proj,
            stse_frame_pos,
            stse_joint_pos,
            enc_blocks,
            dec_proj_weight,
            dec_proj_bias,
            mask_token,
            dec_frame_pos,
            dec_joint_pos,
            dec_blocks,
            head_weight,
            head_bias,
        }
    }

    pub fn blocks(&self, stack: Stack) -> &[BlockLayout] {
        match stack {
            Stack::Encoder => &self.enc_blocks,
            Stack::Decoder => &self.dec_blocks,
        }
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Name of the tensor holding flat index `index`.
    pub fn tensor_at(&self, index: usize) -> Option<&TensorSpec> {
        let i = self.specs.partition_point(|s| s.span.offset + s.span.len <= index);
        self.specs.get(i)
    }
}

/// All learnable tensors of one model.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layout: Arc<Layout>,
    pub data: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(config));
        let data = vec![T::zero(); layout.total];
        Ok(Self { config: config.clone(), layout, data })
    }

    /// Deterministic initialization; each tensor draws from its own stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let layout = Arc::clone(&p.layout);
        for (i, spec) in layout.specs.iter().enumerate() {
            let mut r = rng::stream(seed, &[rng::hash_str("init"), i as u64]);
            let dst = &mut p.data[spec.span.range()];
            match spec.init {
                Init::Xavier { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in dst {
                        *v = T::of(a * (2.0 * rng::open_unit(&mut r) - 1.0));
                    }
                }
                Init::SmallNormal => {
                    for v in dst {
                        *v = T::of(0.02 * rng::gaussian(&mut r));
                    }
                }
                Init::Ones => dst.fill(T::one()),
                Init::Zeros => dst.fill(T::zero()),
            }
        }
        Ok(p)
    }

    pub fn from_flat(config: &ModelConfig, data: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(crate::error::MsaeError::Checkpoint(format!(
                "config needs {} parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor_count(&self) -> usize {
        self.layout.specs.len()
    }

    pub fn get(&self, name: &str) -> Option<(&[T], &[usize])> {
        self.layout
            .spec(name)
            .map(|s| (&self.data[s.span.range()], s.shape.as_slice()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let span = self.layout.spec(name)?.span;
        Some(&mut self.data[span.range()])
    }

    pub fn slice(&self, span: Span) -> &[T] {
        &self.data[span.range()]
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// First non-finite entry, reported as `tensor[index]`.
    pub fn first_non_finite(&self) -> Option<String> {
        let i = self.data.iter().position(|v| !v.is_finite())?;
        let spec = self.layout.tensor_at(i)?;
        Some(format!("{}[{}]", spec.name, i - spec.span.offset))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_contiguous_and_named_uniquely() {
        let layout = Layout::new(&ModelConfig::default());
        let mut next = 0;
        for s in &layout.specs {
            assert_eq!(s.span.offset, next, "{}", s.name);
            assert_eq!(s.span.len, s.shape.iter().product::<usize>());
            next += s.span.len;
        }
        assert_eq!(next, layout.total);
        let mut names: Vec<&str> = layout.specs.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), layout.specs.len());
        assert_eq!(layout.tensor_at(0).unwrap().name, "encoder.stse.coord_proj");
        assert_eq!(layout.tensor_at(layout.total - 1).unwrap().name, "decoder.head.bias");
    }

    #[test]
    fn init_is_seeded_and_follows_rules() {
        let cfg = ModelConfig::tiny();
        let a = ModelParams::<f32>::init(&cfg, 5).unwrap();
        let b = ModelParams::<f32>::init(&cfg, 5).unwrap();
        let c = ModelParams::<f32>::init(&cfg, 6).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        assert!(a.get("encoder.blocks.0.ln1.scale").unwrap().0.iter().all(|&v| v == 1.0));
        assert!(a.get("decoder.head.bias").unwrap().0.iter().all(|&v| v == 0.0));
        let (q, shape) = a.get("encoder.blocks.0.stga.q").unwrap();
        let bound = (6.0 / (2 * shape[0]) as f32).sqrt();
        assert!(q.iter().all(|v| v.abs() <= bound));
        assert!(a.first_non_finite().is_none());
    }
}
