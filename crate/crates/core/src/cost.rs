//! Analytic MAC, parameter and memory-traffic accounting.
//!
//! One MAC is one multiply-add. Convolutions followed by batch norm carry no
//! bias; each normalized layer contributes two parameters per channel and no
//! MACs. Activations are free. Each block reads its input activation once,
//! writes its output once and reads all of its weights once.

use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{propagate_shapes, BlockSpec, IrError, Kernel, NetworkSpec, Stride, TensorShape};

#[derive(Debug, Error)]
pub enum CostError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("network has {available} stages, stage {requested} requested")]
    NoSuchStage { requested: usize, available: usize },
    #[error("network `{0}` contains no Mobile MQA block")]
    NoAttention(String),
}

/// Bytes per element for weights and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtypeWidths {
    pub weights: u32,
    pub activations: u32,
}

impl DtypeWidths {
    pub const INT8: DtypeWidths = DtypeWidths {
        weights: 1,
        activations: 1,
    };
    pub const FP16: DtypeWidths = DtypeWidths {
        weights: 2,
        activations: 2,
    };
    pub const FP32: DtypeWidths = DtypeWidths {
        weights: 4,
        activations: 4,
    };
}

impl Default for DtypeWidths {
    fn default() -> Self {
        DtypeWidths::INT8
    }
}

impl FromStr for DtypeWidths {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "int8" => Ok(DtypeWidths::INT8),
            "fp16" => Ok(DtypeWidths::FP16),
            "fp32" => Ok(DtypeWidths::FP32),
            _ => Err(format!("unknown dtype `{s}` (expected int8, fp16 or fp32)")),
        }
    }
}

impl fmt::Display for DtypeWidths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DtypeWidths::INT8 => f.write_str("int8"),
            DtypeWidths::FP16 => f.write_str("fp16"),
            DtypeWidths::FP32 => f.write_str("fp32"),
            DtypeWidths { weights, activations } => write!(f, "w{weights}a{activations}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCost {
    pub label: String,
    pub macs: u64,
    pub params: u64,
    pub weight_bytes: u64,
    pub act_in_bytes: u64,
    pub act_out_bytes: u64,
}

impl BlockCost {
    pub fn bytes(&self) -> u64 {
        self.weight_bytes + self.act_in_bytes + self.act_out_bytes
    }

    /// MACs per byte moved; `None` when the block moves no bytes.
    pub fn op_intensity(&self) -> Option<f64> {
        let bytes = self.bytes();
        (bytes > 0).then(|| self.macs as f64 / bytes as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub network: String,
    pub per_block: Vec<BlockCost>,
    pub total_macs: u64,
    pub total_params: u64,
    pub total_bytes: u64,
    pub dtype_widths: DtypeWidths,
}

impl CostReport {
    pub fn from_blocks(network: impl Into<String>, per_block: Vec<BlockCost>, dtype: DtypeWidths) -> Self {
        let total_macs = per_block.iter().map(|b| b.macs).sum();
        let total_params = per_block.iter().map(|b| b.params).sum();
        let total_bytes = per_block.iter().map(BlockCost::bytes).sum();
        Self {
            network: network.into(),
            per_block,
            total_macs,
            total_params,
            total_bytes,
            dtype_widths: dtype,
        }
    }

    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn op_intensity(&self) -> Option<f64> {
        (self.total_bytes > 0).then(|| self.total_macs as f64 / self.total_bytes as f64)
    }

    /// One row per block: index, kind, macs, params, bytes, op_intensity.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "kind", "macs", "params", "bytes", "op_intensity"])?;
        for (i, b) in self.per_block.iter().enumerate() {
            let oi = b.op_intensity().map_or_else(String::new, |v| format!("{v:.6}"));
            w.write_record([
                i.to_string(),
                b.label.clone(),
                b.macs.to_string(),
                b.params.to_string(),
                b.bytes().to_string(),
                oi,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    macs: u64,
    params: u64,
}

impl Tally {
    fn add(&mut self, other: Tally) {
        self.macs += other.macs;
        self.params += other.params;
    }
}

fn bn_params(channels: u32, normalized: bool) -> u64 {
    if normalized {
        2 * channels as u64
    } else {
        0
    }
}

/// Dense k x k convolution producing `out_pixels` outputs.
fn conv(out_pixels: u64, kernel: Kernel, c_in: u32, c_out: u32, bn: bool, bias: bool) -> Tally {
    let weights = kernel.area() * c_in as u64 * c_out as u64;
    Tally {
        macs: out_pixels * weights,
        params: weights + bn_params(c_out, bn) + if bias { c_out as u64 } else { 0 },
    }
}

fn pointwise(out_pixels: u64, c_in: u32, c_out: u32) -> Tally {
    conv(out_pixels, Kernel::K1, c_in, c_out, true, false)
}

fn depthwise(out_pixels: u64, kernel: Kernel, channels: u32, bn: bool) -> Tally {
    let weights = kernel.area() * channels as u64;
    Tally {
        macs: out_pixels * weights,
        params: weights + bn_params(channels, bn),
    }
}

fn uib_cost(
    input: TensorShape,
    start_dw: Option<Kernel>,
    mid_dw: Option<Kernel>,
    expanded: u32,
    out: u32,
    stride: Stride,
    se: Option<u32>,
) -> Tally {
    let reduced = input.strided(stride).pixels();
    let full = input.pixels();
    let mut t = Tally::default();
    // The stride lives on the middle DW when present, else on the start DW,
    // else (FFN) on the expansion pointwise.
    let mut pixels = full;
    if let Some(k) = start_dw {
        let p = if mid_dw.is_some() { full } else { reduced };
        t.add(depthwise(p, k, input.c, true));
        pixels = p;
    }
    if start_dw.is_none() && mid_dw.is_none() {
        pixels = reduced;
    }
    t.add(pointwise(pixels, input.c, expanded));
    if let Some(k) = mid_dw {
        t.add(depthwise(reduced, k, expanded, true));
    }
    if let Some(squeeze) = se {
        let fc = expanded as u64 * squeeze as u64;
        t.add(Tally {
            macs: 2 * fc,
            params: 2 * fc + expanded as u64 + squeeze as u64,
        });
    }
    t.add(pointwise(reduced, expanded, out));
    t
}

fn mqa_cost(input: TensorShape, num_heads: u32, head_dim: u32, kv_stride: Stride) -> Tally {
    let n = input.pixels();
    let c = input.c as u64;
    let inner = num_heads as u64 * head_dim as u64;
    let d = head_dim as u64;
    let kv = input.strided(kv_stride);
    let m = kv.pixels();
    let mut t = Tally {
        // Q and O projections at full resolution, shared single-head K and V
        // on the (possibly reduced) token set, logits and weighted sum.
        macs: n * c * inner + 2 * m * c * d + 2 * num_heads as u64 * n * m * d + n * inner * c,
        params: 2 * c * inner + 2 * c * d,
    };
    if kv_stride == Stride::TWO {
        // one 3x3 stride-2 depthwise feeding both K and V
        t.add(depthwise(m, Kernel::K3, input.c, true));
    }
    t
}

fn mhsa_cost(input: TensorShape, num_heads: u32, head_dim: u32) -> Tally {
    let n = input.pixels();
    let c = input.c as u64;
    let inner = num_heads as u64 * head_dim as u64;
    Tally {
        macs: 4 * n * c * inner + 2 * num_heads as u64 * n * n * head_dim as u64,
        params: 4 * c * inner,
    }
}

/// Cost of one block given its input shape. The shape must be one that
/// [`propagate_shapes`] accepts for this block.
pub fn block_cost(block: &BlockSpec, input: TensorShape, dtype: DtypeWidths) -> BlockCost {
    let output = block
        .output_shape(input)
        .expect("block_cost requires a shape-consistent input");
    let t = match *block {
        BlockSpec::Conv2d {
            kernel,
            out,
            followed_by_bn,
            bias,
            ..
        } => conv(output.pixels(), kernel, input.c, out, followed_by_bn, bias),
        BlockSpec::Dwconv {
            kernel, followed_by_bn, ..
        } => depthwise(output.pixels(), kernel, input.c, followed_by_bn),
        BlockSpec::FusedIb {
            kernel, expanded, out, ..
        } => {
            let mut t = conv(output.pixels(), kernel, input.c, expanded, true, false);
            t.add(pointwise(output.pixels(), expanded, out));
            t
        }
        BlockSpec::Uib {
            start_dw,
            mid_dw,
            expanded,
            out,
            stride,
            se,
        } => uib_cost(input, start_dw, mid_dw, expanded, out, stride, se),
        BlockSpec::Mqa {
            num_heads,
            head_dim,
            kv_stride,
        } => mqa_cost(input, num_heads, head_dim, kv_stride),
        BlockSpec::Mhsa { num_heads, head_dim } => mhsa_cost(input, num_heads, head_dim),
        BlockSpec::Avgpool => Tally::default(),
        BlockSpec::Dense { out, bias } => conv(1, Kernel::K1, input.c, out, false, bias),
    };
    BlockCost {
        label: block.label().to_string(),
        macs: t.macs,
        params: t.params,
        weight_bytes: t.params * dtype.weights as u64,
        act_in_bytes: input.elements() * dtype.activations as u64,
        act_out_bytes: output.elements() * dtype.activations as u64,
    }
}

pub fn network_cost(net: &NetworkSpec, dtype: DtypeWidths) -> Result<CostReport, IrError> {
    let shapes = propagate_shapes(net)?;
    let per_block = net
        .blocks
        .iter()
        .zip(&shapes)
        .map(|(b, s)| block_cost(b, s.input, dtype))
        .collect();
    Ok(CostReport::from_blocks(net.name.clone(), per_block, dtype))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Mhsa,
    Mqa,
}

/// Attention block of the given kind sized for a `channels`-wide stage.
pub fn attention_block(kind: AttentionKind, channels: u32) -> BlockSpec {
    let (num_heads, head_dim) = if channels.is_multiple_of(crate::zoo::MQA_HEAD_DIM) {
        (channels / crate::zoo::MQA_HEAD_DIM, crate::zoo::MQA_HEAD_DIM)
    } else {
        (1, channels)
    };
    match kind {
        AttentionKind::Mhsa => BlockSpec::Mhsa { num_heads, head_dim },
        AttentionKind::Mqa => BlockSpec::Mqa {
            num_heads,
            head_dim,
            kv_stride: Stride::ONE,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionDelta {
    pub base: CostReport,
    pub variant: CostReport,
}

impl AttentionDelta {
    pub fn added_macs(&self) -> u64 {
        self.variant.total_macs - self.base.total_macs
    }

    pub fn added_params(&self) -> u64 {
        self.variant.total_params - self.base.total_params
    }
}

/// Cost of `base` and of `base` with `count` attention blocks appended to the
/// end of stage `stage`.
pub fn attention_delta(
    base: &NetworkSpec,
    kind: AttentionKind,
    count: usize,
    stage: usize,
    dtype: DtypeWidths,
) -> Result<AttentionDelta, CostError> {
    let stages = base.stages();
    let span = stages.get(stage).ok_or(CostError::NoSuchStage {
        requested: stage,
        available: stages.len(),
    })?;
    let shapes = propagate_shapes(base)?;
    let channels = shapes[span.end - 1].output.c;
    let mut blocks = base.blocks.clone();
    let inserted = std::iter::repeat_n(attention_block(kind, channels), count);
    blocks.splice(span.end..span.end, inserted);
    let variant = NetworkSpec {
        name: format!("{}+{}x{:?}", base.name, count, kind),
        blocks,
        ..base.clone()
    };
    Ok(AttentionDelta {
        base: network_cost(base, dtype)?,
        variant: network_cost(&variant, dtype)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KvDelta {
    /// Total MACs with every MQA block at kv_stride 1.
    pub macs_without: u64,
    /// Total MACs of the network as given.
    pub macs_with: u64,
}

impl KvDelta {
    /// Fractional MAC reduction from K/V downsampling.
    pub fn relative(&self) -> f64 {
        (self.macs_without as f64 - self.macs_with as f64) / self.macs_without as f64
    }
}

/// MAC change attributable to spatially reducing keys and values.
pub fn kv_downsample_delta(net: &NetworkSpec, dtype: DtypeWidths) -> Result<KvDelta, CostError> {
    if !net.blocks.iter().any(|b| matches!(b, BlockSpec::Mqa { .. })) {
        return Err(CostError::NoAttention(net.name.clone()));
    }
    let without = NetworkSpec {
        blocks: net
            .blocks
            .iter()
            .map(|b| match *b {
                BlockSpec::Mqa {
                    num_heads, head_dim, ..
                } => BlockSpec::Mqa {
                    num_heads,
                    head_dim,
                    kv_stride: Stride::ONE,
                },
                ref other => other.clone(),
            })
            .collect(),
        ..net.clone()
    };
    Ok(KvDelta {
        macs_without: network_cost(&without, dtype)?.total_macs,
        macs_with: network_cost(net, dtype)?.total_macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_netspec;
    use crate::zoo::{build_mnv4, Mnv4Variant};

    fn single(block: BlockSpec, shape: TensorShape) -> BlockCost {
        block_cost(&block, shape, DtypeWidths::INT8)
    }

    #[test]
    fn unit_conv() {
        let c = single(BlockSpec::conv(Kernel::K1, Stride::ONE, 1), TensorShape::square(1, 1));
        assert_eq!(c.macs, 1);
        assert_eq!(c.params, 1 + 2);
    }

    #[test]
    fn depthwise_formula() {
        let c = single(
            BlockSpec::Dwconv {
                kernel: Kernel::K3,
                stride: Stride::ONE,
                followed_by_bn: true,
            },
            TensorShape::square(4, 8),
        );
        assert_eq!(c.macs, 4 * 4 * 9 * 8);
        assert_eq!(c.macs, 1152);
    }

    #[test]
    fn extra_dw_is_sum_of_four_sublayers() {
        // Oracle: each sublayer formula written out independently.
        let (h, c_in, e, c_out) = (8u64, 16u64, 64u64, 16u64);
        let start = h * h * 9 * c_in;
        let expand = h * h * c_in * e;
        let mid = h * h * 9 * e;
        let project = h * h * e * c_out;
        let params = (9 * c_in + 2 * c_in) + (c_in * e + 2 * e) + (9 * e + 2 * e) + (e * c_out + 2 * c_out);
        let c = single(
            BlockSpec::uib(Some(Kernel::K3), Some(Kernel::K3), 64, 16, Stride::ONE),
            TensorShape::square(8, 16),
        );
        assert_eq!(c.macs, start + expand + mid + project);
        assert_eq!(c.macs, 9216 + 65536 + 36864 + 65536);
        assert_eq!(c.params, params);
    }

    #[test]
    fn ffn_equals_two_pointwise_convs() {
        let shape = TensorShape::square(7, 24);
        let ffn = single(BlockSpec::uib(None, None, 96, 40, Stride::ONE), shape);
        let pw1 = single(BlockSpec::conv(Kernel::K1, Stride::ONE, 96), shape);
        let pw2 = single(BlockSpec::conv(Kernel::K1, Stride::ONE, 40), shape.with_channels(96));
        assert_eq!(ffn.macs, pw1.macs + pw2.macs);
        assert_eq!(ffn.params, pw1.params + pw2.params);
    }

    #[test]
    fn strided_extra_dw_runs_expansion_at_full_resolution() {
        let c = single(
            BlockSpec::uib(Some(Kernel::K5), Some(Kernel::K5), 192, 96, Stride::TWO),
            TensorShape::square(28, 64),
        );
        let expected = 28 * 28 * 25 * 64 + 28 * 28 * 64 * 192 + 14 * 14 * 25 * 192 + 14 * 14 * 192 * 96;
        assert_eq!(c.macs, expected);
    }

    #[test]
    fn mqa_projection_and_logit_dims() {
        // 8^2 x 256 input, 4 heads of 64, no K/V reduction: enumerate the
        // einsum dimensions directly.
        let n = 64u64;
        let (c, h, d) = (256u64, 4u64, 64u64);
        let projections = n * (c * h * d) + n * c * d + n * c * d + n * (h * d) * c;
        assert_eq!(projections, 64 * (2 * 256 * 256 + 2 * 256 * 64));
        let attention = h * n * n * d * 2;
        let cost = single(
            BlockSpec::Mqa {
                num_heads: 4,
                head_dim: 64,
                kv_stride: Stride::ONE,
            },
            TensorShape::square(8, 256),
        );
        assert_eq!(cost.macs, projections + attention);
        assert_eq!(cost.params, 2 * c * c + 2 * c * d);
    }

    #[test]
    fn kv_stride_quarters_logit_macs() {
        let shape = TensorShape::square(16, 128);
        let mk = |kv| BlockSpec::Mqa {
            num_heads: 2,
            head_dim: 64,
            kv_stride: kv,
        };
        let one = single(mk(Stride::ONE), shape);
        let two = single(mk(Stride::TWO), shape);
        let (n, c, h, d) = (256u64, 128u64, 2u64, 64u64);
        let logits_1 = 2 * h * n * n * d;
        let logits_2 = 2 * h * n * (n / 4) * d;
        assert_eq!(logits_1, 4 * logits_2);
        let kv_proj = |m: u64| 2 * m * c * d;
        let sr = 64 * 9 * c;
        assert_eq!(
            one.macs - two.macs,
            (logits_1 - logits_2) + kv_proj(256) - kv_proj(64) - sr
        );
    }

    #[test]
    fn totals_are_sums() {
        let r = network_cost(&build_mnv4(Mnv4Variant::ConvS), DtypeWidths::INT8).unwrap();
        assert_eq!(r.total_macs, r.per_block.iter().map(|b| b.macs).sum::<u64>());
        assert_eq!(r.total_bytes, r.per_block.iter().map(|b| b.bytes()).sum::<u64>());
    }

    #[test]
    fn doubling_resolution_quadruples_conv_macs() {
        let net = build_mnv4(Mnv4Variant::ConvM);
        let a = network_cost(&net, DtypeWidths::INT8).unwrap();
        let b = network_cost(&net.with_resolution(512), DtypeWidths::INT8).unwrap();
        assert_eq!(a.total_params, b.total_params);
        for (i, (x, y)) in a.per_block.iter().zip(&b.per_block).enumerate() {
            match net.blocks[i] {
                BlockSpec::Avgpool | BlockSpec::Dense { .. } => assert_eq!(x.macs, y.macs),
                BlockSpec::Conv2d { .. } if i > net.blocks.len() - 4 => assert_eq!(x.macs, y.macs),
                _ => assert_eq!(4 * x.macs, y.macs, "block {i}"),
            }
        }
    }

    #[test]
    fn fp16_doubles_bytes_not_macs() {
        let net = build_mnv4(Mnv4Variant::ConvS);
        let a = network_cost(&net, DtypeWidths::INT8).unwrap();
        let b = network_cost(&net, DtypeWidths::FP16).unwrap();
        assert_eq!(a.total_macs, b.total_macs);
        assert_eq!(2 * a.total_bytes, b.total_bytes);
    }

    #[test]
    fn zero_attention_blocks_is_identity() {
        let base = build_mnv4(Mnv4Variant::ConvL);
        let last = base.stages().len() - 1;
        let d = attention_delta(&base, AttentionKind::Mqa, 0, last, DtypeWidths::INT8).unwrap();
        assert_eq!(
            d.base,
            CostReport {
                network: d.base.network.clone(),
                ..d.variant.clone()
            }
        );
        assert_eq!(d.added_macs(), 0);
        assert!(matches!(
            attention_delta(&base, AttentionKind::Mqa, 1, 99, DtypeWidths::INT8),
            Err(CostError::NoSuchStage { .. })
        ));
    }

    #[test]
    fn mqa_params_match_closed_form() {
        let base = build_mnv4(Mnv4Variant::ConvL);
        let last = base.stages().len() - 1;
        let mhsa = attention_delta(&base, AttentionKind::Mhsa, 3, last, DtypeWidths::INT8).unwrap();
        let mqa = attention_delta(&base, AttentionKind::Mqa, 3, last, DtypeWidths::INT8).unwrap();
        let d = 512u64;
        assert_eq!(mhsa.added_params(), 3 * 4 * d * d);
        assert_eq!(mqa.added_params(), 3 * (2 * d * d + 2 * d * 64));
    }

    #[test]
    fn kv_delta_requires_mqa() {
        let net = build_mnv4(Mnv4Variant::ConvS);
        assert!(matches!(
            kv_downsample_delta(&net, DtypeWidths::INT8),
            Err(CostError::NoAttention(_))
        ));
    }

    #[test]
    fn csv_has_one_row_per_block() {
        let net =
            parse_netspec(r#"{"name":"t","input_res":4,"blocks":[{"kind":"conv2d","kernel":1,"stride":1,"out":2}]}"#)
                .unwrap();
        let r = network_cost(&net, DtypeWidths::INT8).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "index,kind,macs,params,bytes,op_intensity");
        // 16 px * 3 * 2 = 96 MACs; 6 + 4 params; 48 + 32 + 10 bytes
        assert_eq!(lines[1], "0,Conv2D,96,10,90,1.066667");
    }
}
