//! Block-level network IR.
//!
//! A [`NetworkSpec`] is an ordered list of [`BlockSpec`]s applied to a square
//! input image. Input channels are never stored on a block; they are implied
//! by the previous block's output, and [`propagate_shapes`] resolves them.

mod json;

pub use json::{emit_netspec, parse_netspec};

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrError {
    #[error("network `{0}` has no blocks")]
    EmptyNetwork(String),
    #[error("block {block_index}: expected {expected} input channels, got {found}")]
    ChannelMismatch {
        block_index: usize,
        expected: u32,
        found: u32,
    },
    #[error("block {block_index}: {reason}")]
    InvalidBlock { block_index: usize, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Activation or feature-map shape, `h x w x c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub h: u32,
    pub w: u32,
    pub c: u32,
}

impl TensorShape {
    pub fn new(h: u32, w: u32, c: u32) -> Self {
        debug_assert!(h >= 1 && w >= 1 && c >= 1);
        Self { h, w, c }
    }

    pub fn square(side: u32, c: u32) -> Self {
        Self::new(side, side, c)
    }

    pub fn pixels(&self) -> u64 {
        self.h as u64 * self.w as u64
    }

    pub fn elements(&self) -> u64 {
        self.pixels() * self.c as u64
    }

    /// Spatial size after a stride, using ceiling division ("same" padding).
    pub fn strided(&self, stride: Stride) -> Self {
        let s = stride.get();
        Self {
            h: self.h.div_ceil(s),
            w: self.w.div_ceil(s),
            c: self.c,
        }
    }

    pub fn with_channels(&self, c: u32) -> Self {
        Self { c, ..*self }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.h == self.w {
            write!(f, "{}^2x{}", self.h, self.c)
        } else {
            write!(f, "{}x{}x{}", self.h, self.w, self.c)
        }
    }
}

/// Convolution kernel side. Always odd; the published blocks only use 1, 3 and 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Kernel(u32);

impl Kernel {
    pub const K1: Kernel = Kernel(1);
    pub const K3: Kernel = Kernel(3);
    pub const K5: Kernel = Kernel(5);

    pub fn new(k: u32) -> Result<Self, String> {
        if k == 0 || k.is_multiple_of(2) {
            Err(format!("kernel size must be odd and >= 1, got {k}"))
        } else {
            Ok(Kernel(k))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn area(self) -> u64 {
        self.0 as u64 * self.0 as u64
    }
}

impl TryFrom<u32> for Kernel {
    type Error = String;
    fn try_from(k: u32) -> Result<Self, String> {
        Kernel::new(k)
    }
}

impl From<Kernel> for u32 {
    fn from(k: Kernel) -> u32 {
        k.0
    }
}

/// Spatial stride, 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Stride(u32);

impl Stride {
    pub const ONE: Stride = Stride(1);
    pub const TWO: Stride = Stride(2);

    pub fn new(s: u32) -> Result<Self, String> {
        match s {
            1 | 2 => Ok(Stride(s)),
            _ => Err(format!("stride must be 1 or 2, got {s}")),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl Default for Stride {
    fn default() -> Self {
        Stride::ONE
    }
}

impl TryFrom<u32> for Stride {
    type Error = String;
    fn try_from(s: u32) -> Result<Self, String> {
        Stride::new(s)
    }
}

impl From<Stride> for u32 {
    fn from(s: Stride) -> u32 {
        s.0
    }
}

/// The four instantiations of a universal inverted bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UibVariant {
    /// Both depthwise convolutions present.
    ExtraDw,
    /// Only the middle depthwise (classic inverted bottleneck).
    Ib,
    /// Only the leading depthwise.
    ConvNext,
    /// No depthwise at all: two pointwise convolutions.
    Ffn,
}

impl UibVariant {
    pub fn classify(start_dw: Option<Kernel>, mid_dw: Option<Kernel>) -> Self {
        match (start_dw, mid_dw) {
            (Some(_), Some(_)) => UibVariant::ExtraDw,
            (None, Some(_)) => UibVariant::Ib,
            (Some(_), None) => UibVariant::ConvNext,
            (None, None) => UibVariant::Ffn,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            UibVariant::ExtraDw => "ExtraDW",
            UibVariant::Ib => "IB",
            UibVariant::ConvNext => "ConvNext",
            UibVariant::Ffn => "FFN",
        }
    }
}

fn default_true() -> bool {
    true
}

/// One row of an architecture table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockSpec {
    Conv2d {
        kernel: Kernel,
        stride: Stride,
        out: u32,
        #[serde(default = "default_true")]
        followed_by_bn: bool,
        #[serde(default)]
        bias: bool,
    },
    /// Standalone depthwise convolution (MobileNet V1/V2 style).
    Dwconv {
        kernel: Kernel,
        stride: Stride,
        #[serde(default = "default_true")]
        followed_by_bn: bool,
    },
    /// Full k x k expansion conv followed by a 1x1 projection.
    FusedIb {
        kernel: Kernel,
        stride: Stride,
        expanded: u32,
        out: u32,
    },
    Uib {
        start_dw: Option<Kernel>,
        mid_dw: Option<Kernel>,
        expanded: u32,
        out: u32,
        stride: Stride,
        /// Squeeze-excite bottleneck width, applied on the expanded features.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        se: Option<u32>,
    },
    /// Mobile multi-query attention: per-head queries, one shared K/V head.
    Mqa {
        num_heads: u32,
        head_dim: u32,
        kv_stride: Stride,
    },
    /// Standard multi-head self attention, used as the MQA baseline.
    Mhsa { num_heads: u32, head_dim: u32 },
    /// Global average pool over the full spatial extent.
    Avgpool,
    Dense {
        out: u32,
        #[serde(default = "default_true")]
        bias: bool,
    },
}

impl BlockSpec {
    pub fn conv(kernel: Kernel, stride: Stride, out: u32) -> Self {
        BlockSpec::Conv2d {
            kernel,
            stride,
            out,
            followed_by_bn: true,
            bias: false,
        }
    }

    pub fn fused_ib(kernel: Kernel, stride: Stride, expanded: u32, out: u32) -> Self {
        BlockSpec::FusedIb {
            kernel,
            stride,
            expanded,
            out,
        }
    }

    pub fn uib(start_dw: Option<Kernel>, mid_dw: Option<Kernel>, expanded: u32, out: u32, stride: Stride) -> Self {
        BlockSpec::Uib {
            start_dw,
            mid_dw,
            expanded,
            out,
            stride,
            se: None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BlockSpec::Conv2d { .. } => "conv2d",
            BlockSpec::Dwconv { .. } => "dwconv",
            BlockSpec::FusedIb { .. } => "fused_ib",
            BlockSpec::Uib { .. } => "uib",
            BlockSpec::Mqa { .. } => "mqa",
            BlockSpec::Mhsa { .. } => "mhsa",
            BlockSpec::Avgpool => "avgpool",
            BlockSpec::Dense { .. } => "dense",
        }
    }

    /// Human-readable block name as used in architecture tables.
    pub fn label(&self) -> &'static str {
        match self {
            BlockSpec::Conv2d { .. } => "Conv2D",
            BlockSpec::Dwconv { .. } => "DWConv",
            BlockSpec::FusedIb { .. } => "FusedIB",
            BlockSpec::Uib { start_dw, mid_dw, .. } => UibVariant::classify(*start_dw, *mid_dw).label(),
            BlockSpec::Mqa { .. } => "Mobile-MQA",
            BlockSpec::Mhsa { .. } => "MHSA",
            BlockSpec::Avgpool => "AvgPool",
            BlockSpec::Dense { .. } => "Dense",
        }
    }

    pub fn uib_variant(&self) -> Option<UibVariant> {
        match self {
            BlockSpec::Uib { start_dw, mid_dw, .. } => Some(UibVariant::classify(*start_dw, *mid_dw)),
            _ => None,
        }
    }

    pub fn stride(&self) -> Stride {
        match self {
            BlockSpec::Conv2d { stride, .. }
            | BlockSpec::Dwconv { stride, .. }
            | BlockSpec::FusedIb { stride, .. }
            | BlockSpec::Uib { stride, .. } => *stride,
            _ => Stride::ONE,
        }
    }

    pub fn is_attention(&self) -> bool {
        matches!(self, BlockSpec::Mqa { .. } | BlockSpec::Mhsa { .. })
    }

    /// Whether the block contains a depthwise convolution anywhere.
    pub fn has_depthwise(&self) -> bool {
        match self {
            BlockSpec::Dwconv { .. } => true,
            BlockSpec::Uib { start_dw, mid_dw, .. } => start_dw.is_some() || mid_dw.is_some(),
            BlockSpec::Mqa { kv_stride, .. } => *kv_stride == Stride::TWO,
            _ => false,
        }
    }

    /// Output shape for a given input shape, or the reason the block cannot
    /// accept it.
    pub fn output_shape(&self, input: TensorShape) -> Result<TensorShape, String> {
        let nonzero = |name: &str, v: u32| {
            if v == 0 {
                Err(format!("{name} must be >= 1"))
            } else {
                Ok(())
            }
        };
        match self {
            BlockSpec::Conv2d { stride, out, .. } => {
                nonzero("out", *out)?;
                Ok(input.strided(*stride).with_channels(*out))
            }
            BlockSpec::Dwconv { stride, .. } => Ok(input.strided(*stride)),
            BlockSpec::FusedIb {
                stride, expanded, out, ..
            } => {
                nonzero("expanded", *expanded)?;
                nonzero("out", *out)?;
                Ok(input.strided(*stride).with_channels(*out))
            }
            BlockSpec::Uib {
                stride,
                expanded,
                out,
                se,
                ..
            } => {
                nonzero("expanded", *expanded)?;
                nonzero("out", *out)?;
                if let Some(s) = se {
                    nonzero("se", *s)?;
                }
                Ok(input.strided(*stride).with_channels(*out))
            }
            BlockSpec::Mqa {
                num_heads, head_dim, ..
            }
            | BlockSpec::Mhsa { num_heads, head_dim } => {
                nonzero("num_heads", *num_heads)?;
                nonzero("head_dim", *head_dim)?;
                Ok(input)
            }
            BlockSpec::Avgpool => Ok(TensorShape::square(1, input.c)),
            BlockSpec::Dense { out, .. } => {
                nonzero("out", *out)?;
                if input.pixels() != 1 {
                    return Err(format!("dense expects a pooled 1x1 input, got {input}"));
                }
                Ok(input.with_channels(*out))
            }
        }
    }
}

/// An ordered block list plus the input it consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub input_res: u32,
    #[serde(default = "default_input_c")]
    pub input_c: u32,
    pub blocks: Vec<BlockSpec>,
    /// Published ImageNet top-1, carried as metadata only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1_accuracy: Option<f64>,
}

fn default_input_c() -> u32 {
    3
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, input_res: u32, blocks: Vec<BlockSpec>) -> Self {
        Self {
            name: name.into(),
            input_res,
            input_c: 3,
            blocks,
            top1_accuracy: None,
        }
    }

    pub fn input_shape(&self) -> TensorShape {
        TensorShape::square(self.input_res, self.input_c)
    }

    pub fn with_resolution(&self, input_res: u32) -> Self {
        Self {
            input_res,
            ..self.clone()
        }
    }

    /// Indices of the body blocks grouped into stages.
    ///
    /// The body ends at the last UIB / FusedIB / attention block; the trailing
    /// pointwise conv, pooling and classifier form the head and belong to no
    /// stage. A new stage starts at every stride-2 block.
    pub fn stages(&self) -> Vec<Range<usize>> {
        let body_end = self
            .blocks
            .iter()
            .rposition(|b| {
                matches!(
                    b,
                    BlockSpec::Uib { .. }
                        | BlockSpec::FusedIb { .. }
                        | BlockSpec::Mqa { .. }
                        | BlockSpec::Mhsa { .. }
                        | BlockSpec::Dwconv { .. }
                )
            })
            .map_or(0, |i| i + 1);
        let mut stages = Vec::new();
        let mut start = 0;
        for i in 1..body_end {
            if self.blocks[i].stride() == Stride::TWO {
                stages.push(start..i);
                start = i;
            }
        }
        if body_end > 0 {
            stages.push(start..body_end);
        }
        stages
    }
}

/// Resolved shapes for one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockShapes {
    pub input: TensorShape,
    pub output: TensorShape,
    /// An identity skip is added around this block.
    pub residual: bool,
}

/// Resolve every block's input and output shape.
///
/// Residuals are implicit: a stride-1 UIB whose output width equals its input
/// width carries one, and so does every attention block.
pub fn propagate_shapes(net: &NetworkSpec) -> Result<Vec<BlockShapes>, IrError> {
    if net.blocks.is_empty() {
        return Err(IrError::EmptyNetwork(net.name.clone()));
    }
    if net.input_res == 0 || net.input_c == 0 {
        return Err(IrError::InvalidBlock {
            block_index: 0,
            reason: "input resolution and channels must be >= 1".into(),
        });
    }
    let mut shape = net.input_shape();
    let mut out = Vec::with_capacity(net.blocks.len());
    for (block_index, block) in net.blocks.iter().enumerate() {
        if let BlockSpec::Mhsa { num_heads, head_dim } = block {
            let width = num_heads * head_dim;
            if width != shape.c {
                return Err(IrError::ChannelMismatch {
                    block_index,
                    expected: width,
                    found: shape.c,
                });
            }
        }
        let output = block
            .output_shape(shape)
            .map_err(|reason| IrError::InvalidBlock { block_index, reason })?;
        let residual = match block {
            BlockSpec::Uib { stride, .. } => *stride == Stride::ONE && output == shape,
            BlockSpec::Mqa { .. } | BlockSpec::Mhsa { .. } => true,
            _ => false,
        };
        out.push(BlockShapes {
            input: shape,
            output,
            residual,
        });
        shape = output;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uib_classification_is_total_and_exclusive() {
        let opts = [None, Some(Kernel::K3), Some(Kernel::K5)];
        let mut seen = std::collections::HashMap::new();
        for s in opts {
            for m in opts {
                let v = UibVariant::classify(s, m);
                let expected = match (s.is_some(), m.is_some()) {
                    (true, true) => UibVariant::ExtraDw,
                    (false, true) => UibVariant::Ib,
                    (true, false) => UibVariant::ConvNext,
                    (false, false) => UibVariant::Ffn,
                };
                assert_eq!(v, expected);
                *seen.entry(v).or_insert(0) += 1;
            }
        }
        assert_eq!(seen.len(), 4);
        assert_eq!(seen[&UibVariant::ExtraDw], 4);
        assert_eq!(seen[&UibVariant::Ffn], 1);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(Kernel::new(4).is_err());
        assert!(Kernel::new(0).is_err());
        assert_eq!(Kernel::new(7).unwrap().get(), 7);
        assert!(Stride::new(3).is_err());
    }

    #[test]
    fn stem_conv_halves_resolution() {
        let net = NetworkSpec::new("stem", 224, vec![BlockSpec::conv(Kernel::K3, Stride::TWO, 32)]);
        let shapes = propagate_shapes(&net).unwrap();
        assert_eq!(shapes[0].output, TensorShape::square(112, 32));
    }

    #[test]
    fn pointwise_stride_one_keeps_spatial_dims() {
        let net = NetworkSpec {
            input_c: 17,
            ..NetworkSpec::new("pw", 13, vec![BlockSpec::conv(Kernel::K1, Stride::ONE, 17)])
        };
        let shapes = propagate_shapes(&net).unwrap();
        assert_eq!(shapes[0].output, TensorShape::square(13, 17));
    }

    #[test]
    fn extra_dw_stride_two() {
        let net = NetworkSpec {
            input_c: 64,
            ..NetworkSpec::new(
                "xdw",
                28,
                vec![BlockSpec::uib(Some(Kernel::K5), Some(Kernel::K5), 192, 96, Stride::TWO)],
            )
        };
        let s = propagate_shapes(&net).unwrap();
        assert_eq!(s[0].output, TensorShape::square(14, 96));
        assert!(!s[0].residual);
    }

    #[test]
    fn odd_sizes_use_ceiling_division() {
        let s = TensorShape::square(7, 8).strided(Stride::TWO);
        assert_eq!((s.h, s.w), (4, 4));
    }

    #[test]
    fn residual_flags() {
        let net = NetworkSpec {
            input_c: 32,
            ..NetworkSpec::new(
                "res",
                8,
                vec![
                    BlockSpec::uib(None, Some(Kernel::K3), 64, 32, Stride::ONE),
                    BlockSpec::uib(None, Some(Kernel::K3), 64, 48, Stride::ONE),
                    BlockSpec::Mqa {
                        num_heads: 1,
                        head_dim: 16,
                        kv_stride: Stride::TWO,
                    },
                ],
            )
        };
        let s = propagate_shapes(&net).unwrap();
        assert!(s[0].residual);
        assert!(!s[1].residual);
        assert!(s[2].residual);
        assert_eq!(s[2].input, s[2].output);
    }

    #[test]
    fn empty_and_mismatch_errors() {
        let empty = NetworkSpec::new("empty", 8, vec![]);
        assert!(matches!(propagate_shapes(&empty), Err(IrError::EmptyNetwork(_))));
        let bad = NetworkSpec {
            input_c: 32,
            ..NetworkSpec::new(
                "bad",
                8,
                vec![BlockSpec::Mhsa {
                    num_heads: 2,
                    head_dim: 8,
                }],
            )
        };
        assert_eq!(
            propagate_shapes(&bad),
            Err(IrError::ChannelMismatch {
                block_index: 0,
                expected: 16,
                found: 32
            })
        );
        let unpooled = NetworkSpec::new("unpooled", 8, vec![BlockSpec::Dense { out: 10, bias: true }]);
        assert!(matches!(
            propagate_shapes(&unpooled),
            Err(IrError::InvalidBlock { block_index: 0, .. })
        ));
    }
}
