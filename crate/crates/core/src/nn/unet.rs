//! The parametric UNet family with collaborative pooling blocks.
//!
//! Level `i` has `base / divisor * 2^i` channels. Each encoder level is a
//! double 3x3 convolution followed, for collaborative models, by a pooling +
//! merge block; the result is kept as the skip connection and max-pooled.
//! The bottleneck is another double convolution at the deepest width. Each
//! decoder level runs a collaboration block, upsamples with a 2x2 transposed
//! convolution, concatenates the skip and applies a double convolution. A
//! 1x1 head maps back to the image channels, optionally as a residual.
//!
//! The channel schedule and skip/merge wiring are a reconstruction from
//! architecture diagrams; parameter counts come out about 15-20% above the
//! published ones.

use std::fmt::Write as _;
use std::path::Path;

use super::graph::{Graph, Var};
use super::layers::{Builder, Conv2d, ConvTranspose2d, DoubleConv, Params};
use super::pooling::{CollabBlock, PoolingKind};
use super::{ops, Tensor};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::patches::PatchStack;
use crate::rng;
use crate::scalar::Scalar;

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of down/up-sampling levels.
    pub depth: usize,
    pub base_channels: usize,
    /// Width divisor: 1 (full), 2 (slim), 4 (extra slim).
    pub width_divisor: usize,
    pub pooling: PoolingKind,
    /// Stack size `N` the model collaborates over.
    pub stack_n: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Predict `y + f(y)` instead of `f(y)`.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::unet()
    }
}

impl ModelConfig {
    /// Four-level UNet, 512-channel bottleneck.
    pub fn unet() -> Self {
        Self {
            depth: 4,
            base_channels: 64,
            width_divisor: 1,
            pooling: PoolingKind::None,
            stack_n: 1,
            in_channels: 3,
            out_channels: 3,
            residual: true,
        }
    }

    /// Three-level UNet-T, 256-channel bottleneck.
    pub fn unet_t() -> Self {
        Self {
            depth: 3,
            ..Self::unet()
        }
    }

    pub fn with_divisor(self, width_divisor: usize) -> Self {
        Self { width_divisor, ..self }
    }

    pub fn with_pooling(self, pooling: PoolingKind, stack_n: usize) -> Self {
        Self {
            pooling,
            stack_n,
            ..self
        }
    }

    /// Channels at encoder level `i`.
    pub fn channels(&self, level: usize) -> usize {
        (self.base_channels / self.width_divisor) << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth - 1)
    }

    /// Whether pooling blocks are inserted.
    pub fn is_collaborative(&self) -> bool {
        self.pooling.is_collaborative() && self.stack_n > 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 6 {
            return Err(Error::invalid(format!("depth {} outside 1..=6", self.depth)));
        }
        if self.width_divisor == 0 || self.base_channels % self.width_divisor != 0 || self.channels(0) == 0 {
            return Err(Error::invalid(format!(
                "base width {} is not divisible by {}",
                self.base_channels, self.width_divisor
            )));
        }
        if self.stack_n == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("stack size and channel counts must be positive"));
        }
        if self.residual && self.in_channels != self.out_channels {
            return Err(Error::invalid("a residual head needs in_channels == out_channels"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "base_channels = {}", self.base_channels);
        let _ = writeln!(s, "width_divisor = {}", self.width_divisor);
        let _ = writeln!(s, "pooling = {}", self.pooling);
        let _ = writeln!(s, "stack_n = {}", self.stack_n);
        let _ = writeln!(s, "in_channels = {}", self.in_channels);
        let _ = writeln!(s, "out_channels = {}", self.out_channels);
        let _ = writeln!(s, "residual = {}", self.residual);
        s
    }

    /// Reads the keys written by [`ModelConfig::to_text`]; missing keys keep
    /// the UNet defaults.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = Self::unet();
        let cfg = Self {
            depth: kv.take("depth")?.unwrap_or(d.depth),
            base_channels: kv.take("base_channels")?.unwrap_or(d.base_channels),
            width_divisor: kv.take("width_divisor")?.unwrap_or(d.width_divisor),
            pooling: kv.take("pooling")?.unwrap_or(d.pooling),
            stack_n: kv.take("stack_n")?.unwrap_or(d.stack_n),
            in_channels: kv.take("in_channels")?.unwrap_or(d.in_channels),
            out_channels: kv.take("out_channels")?.unwrap_or(d.out_channels),
            residual: kv.take("residual")?.unwrap_or(d.residual),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(path, text)?;
        let cfg = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    conv: DoubleConv,
    collab: Option<CollabBlock>,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    collab: Option<CollabBlock>,
    up: ConvTranspose2d,
    conv: DoubleConv,
}

/// A UNet with its parameters.
#[derive(Clone, Debug)]
pub struct Unet<T = f64> {
    config: ModelConfig,
    params: Params<T>,
    encoder: Vec<EncoderLevel>,
    bottleneck: DoubleConv,
    decoder: Vec<DecoderLevel>,
    head: Conv2d,
}

impl<T: Scalar> Unet<T> {
    /// Builds the model with He-uniform weights drawn from `seed`.
    ///
    /// A residual model starts with a zeroed head, i.e. as the identity, so
    /// early training refines the input instead of undoing a random offset.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Params::new();
        let mut rng = rng::rng(seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let pooling = if config.is_collaborative() {
            config.pooling
        } else {
            PoolingKind::None
        };
        let mut encoder = Vec::with_capacity(config.depth);
        let mut cin = config.in_channels;
        for i in 0..config.depth {
            let c = config.channels(i);
            encoder.push(b.scope(&format!("enc{i}"), |b| -> Result<_> {
                Ok(EncoderLevel {
                    conv: DoubleConv::new(b, "conv", cin, c),
                    collab: CollabBlock::new(b, "collab", pooling, c)?,
                })
            })?);
            cin = c;
        }
        let bottleneck = DoubleConv::new(&mut b, "bottleneck", cin, cin);
        let mut decoder = Vec::with_capacity(config.depth);
        for i in (0..config.depth).rev() {
            let c = config.channels(i);
            decoder.push(b.scope(&format!("dec{i}"), |b| -> Result<_> {
                Ok(DecoderLevel {
                    collab: CollabBlock::new(b, "collab", pooling, cin)?,
                    up: ConvTranspose2d::new(b, "up", cin, c, 2),
                    conv: DoubleConv::new(b, "conv", 2 * c, c),
                })
            })?);
            cin = c;
        }
        let head = Conv2d::new(&mut b, "head", cin, config.out_channels, 1);
        let mut model = Self {
            config,
            params,
            encoder,
            bottleneck,
            decoder,
            head,
        };
        if config.residual {
            model.zero_head();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Replaces all parameters; names and shapes must match.
    pub fn set_params(&mut self, params: Params<T>) -> Result<()> {
        if params.names() != self.params.names()
            || params
                .values()
                .iter()
                .zip(self.params.values())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("parameter names or shapes differ from the architecture"));
        }
        self.params = params;
        Ok(())
    }

    /// Zeroes the head so a residual model becomes the identity.
    pub fn zero_head(&mut self) {
        for idx in [self.head.weight, self.head.bias] {
            self.params.values_mut()[idx].data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Forward pass on `[B * N, C, H, W]` with parameters already bound on the graph.
    pub fn forward<'g>(&self, p: &[Var<'g, T>], x: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = x.shape();
        let (bn, c, h, w) = match shape[..] {
            [bn, c, h, w] => (bn, c, h, w),
            _ => return Err(Error::shape(format!("model input must be 4-d, got {shape:?}"))),
        };
        let n = self.config.stack_n;
        let factor = 1 << self.config.depth;
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "model expects {} channels, got {c}",
                self.config.in_channels
            )));
        }
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} is not divisible by 2^{}",
                self.config.depth
            )));
        }
        if bn % n != 0 {
            return Err(Error::shape(format!("{bn} images do not form stacks of {n}")));
        }
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h_ = x;
        for level in &self.encoder {
            h_ = level.conv.forward(p, h_)?;
            if let Some(cb) = &level.collab {
                h_ = cb.forward(p, h_, n)?;
            }
            skips.push(h_);
            h_ = ops::max_pool2d(h_)?;
        }
        h_ = self.bottleneck.forward(p, h_)?;
        for level in &self.decoder {
            if let Some(cb) = &level.collab {
                h_ = cb.forward(p, h_, n)?;
            }
            let up = level.up.forward(p, h_)?;
            let skip = skips.pop().expect("one skip per level");
            h_ = level.conv.forward(p, ops::concat_channels(&[up, skip])?)?;
        }
        let out = self.head.forward(p, h_)?;
        if self.config.residual {
            ops::add(x, out)
        } else {
            Ok(out)
        }
    }

    /// Inference on a packed tensor.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let out = self.forward(&p, g.input(x.clone()))?;
        let v = out.value();
        Ok((*v).clone())
    }

    /// Restores every image of a stack jointly.
    pub fn forward_collaborative(&self, stack: &PatchStack<T>) -> Result<PatchStack<T>> {
        if stack.len() % self.config.stack_n != 0 {
            return Err(Error::shape(format!(
                "stack of {} does not match model stack size {}",
                stack.len(),
                self.config.stack_n
            )));
        }
        let out = self.infer(&Tensor::from_stack(stack))?;
        stack.with_patches(out.to_images()?)
    }

    pub fn cast<U: Scalar>(&self) -> Unet<U> {
        Unet {
            config: self.config,
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            bottleneck: self.bottleneck.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
        }
    }
}
