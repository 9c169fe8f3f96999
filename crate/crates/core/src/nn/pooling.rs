//! Stack pooling: collapse the `N` per-image features of a stack into one
//! global feature, broadcast back to every slot, then merge it into each
//! local feature.

use std::fmt;
use std::str::FromStr;

use super::graph::Var;
use super::layers::{Builder, Conv2d, LayerNorm, LayerScale, MergeGlobal};
use super::ops;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which pooling operator collaborates across the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolingKind {
    /// No collaboration; every slot is processed independently.
    None,
    Max,
    /// Average over the stack; provided as an alternative, not separately validated.
    Mean,
    /// Lambda-layer pooling with `k` key features.
    Lambda { k: usize },
    /// Multi-head self-attention; `None` heads means `max(1, C / 32)` per level.
    SelfAttention { heads: Option<usize> },
}

impl PoolingKind {
    pub const LAMBDA_K: usize = 4;

    pub fn is_collaborative(&self) -> bool {
        !matches!(self, PoolingKind::None)
    }

    /// Heads used for a feature of `channels` channels.
    pub fn heads_for(heads: Option<usize>, channels: usize) -> usize {
        heads.unwrap_or((channels / 32).max(1))
    }
}

impl fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolingKind::None => f.write_str("none"),
            PoolingKind::Max => f.write_str("max"),
            PoolingKind::Mean => f.write_str("mean"),
            PoolingKind::Lambda { k } => write!(f, "lambda:{k}"),
            PoolingKind::SelfAttention { heads: None } => f.write_str("sa"),
            PoolingKind::SelfAttention { heads: Some(h) } => write!(f, "sa:{h}"),
        }
    }
}

impl FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: &str| {
            a.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::invalid(format!("bad pooling argument in '{s}'")))
        };
        match (name, arg) {
            ("none", None) => Ok(PoolingKind::None),
            ("max", None) => Ok(PoolingKind::Max),
            ("mean", None) => Ok(PoolingKind::Mean),
            ("lambda", None) => Ok(PoolingKind::Lambda { k: Self::LAMBDA_K }),
            ("lambda", Some(a)) => Ok(PoolingKind::Lambda { k: num(a)? }),
            ("sa" | "self_attention", None) => Ok(PoolingKind::SelfAttention { heads: None }),
            ("sa" | "self_attention", Some(a)) => Ok(PoolingKind::SelfAttention { heads: Some(num(a)?) }),
            _ => Err(Error::invalid(format!(
                "unknown pooling '{s}' (expected none, max, mean, lambda[:k], sa[:heads])"
            ))),
        }
    }
}

/// Lambda pooling: softmax-over-stack keys contract the queries into a
/// `k * C`-channel summary shared by all slots.
#[derive(Clone, Debug)]
pub struct LambdaPool {
    pub prenorm: LayerNorm,
    pub to_k: Conv2d,
    pub to_q: Conv2d,
    pub merge_inner: Conv2d,
    pub scale: LayerScale,
    pub k: usize,
}

impl LambdaPool {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize, k: usize) -> Self {
        b.scope(name, |b| Self {
            prenorm: LayerNorm::new(b, "prenorm", channels),
            to_k: Conv2d::new(b, "to_k", channels, k, 1),
            to_q: Conv2d::new(b, "to_q", channels, channels, 1),
            merge_inner: Conv2d::new(b, "merge_inner", (k + 1) * channels, channels, 1),
            scale: LayerScale::new(b, "scale", channels),
            k,
        })
    }

    /// The broadcast `k * C`-channel summary, before merging.
    pub fn summary<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>, n: usize) -> Result<Var<'g, T>> {
        let xn = self.prenorm.forward(p, x)?;
        let q = self.to_q.forward(p, xn)?;
        let keys = ops::stack_softmax(self.to_k.forward(p, xn)?, n)?;
        ops::lambda_summary(keys, q, n)
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>, n: usize) -> Result<Var<'g, T>> {
        let summary = self.summary(p, x, n)?;
        let g = self.merge_inner.forward(p, ops::concat_channels(&[x, summary])?)?;
        self.scale.forward(p, g)
    }
}

/// Pixelwise self-attention across the stack followed by an
/// inverted-bottleneck MLP, both residual and layer-scaled.
#[derive(Clone, Debug)]
pub struct SelfAttentionPool {
    pub prenorm: LayerNorm,
    pub to_qkv: Conv2d,
    pub scale: LayerScale,
    pub mlp_norm: LayerNorm,
    pub mlp_up: Conv2d,
    pub mlp_down: Conv2d,
    pub mlp_scale: LayerScale,
    pub heads: usize,
    pub channels: usize,
}

impl SelfAttentionPool {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::invalid(format!(
                "{heads} attention heads do not divide {channels} channels"
            )));
        }
        Ok(b.scope(name, |b| Self {
            prenorm: LayerNorm::new(b, "prenorm", channels),
            to_qkv: Conv2d::new(b, "to_qkv", channels, 3 * channels, 1),
            scale: LayerScale::new(b, "scale", channels),
            mlp_norm: LayerNorm::new(b, "mlp_norm", channels),
            mlp_up: Conv2d::new(b, "mlp_up", channels, 4 * channels, 1),
            mlp_down: Conv2d::new(b, "mlp_down", 4 * channels, channels, 1),
            mlp_scale: LayerScale::new(b, "mlp_scale", channels),
            heads,
            channels,
        }))
    }

    /// Query, key and value features.
    pub fn qkv<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>) -> Result<[Var<'g, T>; 3]> {
        let qkv = self.to_qkv.forward(p, self.prenorm.forward(p, x)?)?;
        let c = self.channels;
        Ok([
            ops::slice_channels(qkv, 0, c)?,
            ops::slice_channels(qkv, c, c)?,
            ops::slice_channels(qkv, 2 * c, c)?,
        ])
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>, n: usize) -> Result<Var<'g, T>> {
        let [q, k, v] = self.qkv(p, x)?;
        let attended = ops::stack_attention(q, k, v, n, self.heads)?;
        let g = ops::add(x, self.scale.forward(p, attended)?)?;
        let h = self.mlp_up.forward(p, self.mlp_norm.forward(p, g)?)?;
        let h = self.mlp_down.forward(p, ops::gelu(h))?;
        ops::add(g, self.mlp_scale.forward(p, h)?)
    }
}

/// The pooling operator `p` producing the global feature `g`.
#[derive(Clone, Debug)]
pub enum StackPool {
    Max,
    Mean,
    Lambda(LambdaPool),
    SelfAttention(SelfAttentionPool),
}

impl StackPool {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, kind: PoolingKind, channels: usize) -> Result<Option<Self>> {
        Ok(match kind {
            PoolingKind::None => None,
            PoolingKind::Max => Some(StackPool::Max),
            PoolingKind::Mean => Some(StackPool::Mean),
            PoolingKind::Lambda { k } => Some(StackPool::Lambda(LambdaPool::new(b, name, channels, k))),
            PoolingKind::SelfAttention { heads } => Some(StackPool::SelfAttention(SelfAttentionPool::new(
                b,
                name,
                channels,
                PoolingKind::heads_for(heads, channels),
            )?)),
        })
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>, n: usize) -> Result<Var<'g, T>> {
        match self {
            StackPool::Max => ops::stack_max(x, n),
            StackPool::Mean => ops::stack_mean(x, n),
            StackPool::Lambda(l) => l.forward(p, x, n),
            StackPool::SelfAttention(s) => s.forward(p, x, n),
        }
    }
}

/// Pooling followed by the 1x1 merge of local and global features.
#[derive(Clone, Debug)]
pub struct CollabBlock {
    pub pool: StackPool,
    pub merge: MergeGlobal,
}

impl CollabBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, kind: PoolingKind, channels: usize) -> Result<Option<Self>> {
        b.scope(name, |b| {
            let Some(pool) = StackPool::new(b, "pool", kind, channels)? else {
                return Ok(None);
            };
            Ok(Some(Self {
                pool,
                merge: MergeGlobal::new(b, "merge", channels),
            }))
        })
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>, n: usize) -> Result<Var<'g, T>> {
        let g = self.pool.forward(p, x, n)?;
        self.merge.forward(p, x, g)
    }
}
