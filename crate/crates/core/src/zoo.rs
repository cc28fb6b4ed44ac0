//! Built-in architectures: the five MobileNetV4 networks row-for-row, plus the
//! MobileNet V1/V2/V3 baselines used for latency fitting and a toy fixture.

use std::fmt;
use std::str::FromStr;

use crate::ir::{BlockSpec, Kernel, NetworkSpec, Stride};

/// Width of one attention head in the hybrid models.
pub const MQA_HEAD_DIM: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mnv4Variant {
    ConvS,
    ConvM,
    ConvL,
    HybridM,
    HybridL,
}

impl Mnv4Variant {
    pub const ALL: [Mnv4Variant; 5] = [
        Mnv4Variant::ConvS,
        Mnv4Variant::ConvM,
        Mnv4Variant::ConvL,
        Mnv4Variant::HybridM,
        Mnv4Variant::HybridL,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Mnv4Variant::ConvS => "MNv4-Conv-S",
            Mnv4Variant::ConvM => "MNv4-Conv-M",
            Mnv4Variant::ConvL => "MNv4-Conv-L",
            Mnv4Variant::HybridM => "MNv4-Hybrid-M",
            Mnv4Variant::HybridL => "MNv4-Hybrid-L",
        }
    }

    pub fn input_res(self) -> u32 {
        match self {
            Mnv4Variant::ConvS => 224,
            Mnv4Variant::ConvM | Mnv4Variant::HybridM => 256,
            Mnv4Variant::ConvL | Mnv4Variant::HybridL => 384,
        }
    }

    pub fn top1(self) -> f64 {
        match self {
            Mnv4Variant::ConvS => 73.8,
            Mnv4Variant::ConvM => 79.9,
            Mnv4Variant::HybridM => 80.7,
            Mnv4Variant::ConvL => 82.9,
            Mnv4Variant::HybridL => 83.4,
        }
    }
}

impl fmt::Display for Mnv4Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Mnv4Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        let key = key.strip_prefix("mnv4-").unwrap_or(&key);
        match key {
            "conv-s" => Ok(Mnv4Variant::ConvS),
            "conv-m" => Ok(Mnv4Variant::ConvM),
            "conv-l" => Ok(Mnv4Variant::ConvL),
            "hybrid-m" => Ok(Mnv4Variant::HybridM),
            "hybrid-l" => Ok(Mnv4Variant::HybridL),
            _ => Err(format!("unknown MNv4 variant `{s}`")),
        }
    }
}

fn k(n: u32) -> Kernel {
    Kernel::new(n).expect("built-in kernels are odd")
}

fn s(n: u32) -> Stride {
    Stride::new(n).expect("built-in strides are 1 or 2")
}

fn conv(kernel: u32, stride: u32, out: u32) -> BlockSpec {
    BlockSpec::conv(k(kernel), s(stride), out)
}

fn fused(kernel: u32, stride: u32, expanded: u32, out: u32) -> BlockSpec {
    BlockSpec::fused_ib(k(kernel), s(stride), expanded, out)
}

fn extra_dw(k1: u32, k2: u32, expanded: u32, out: u32, stride: u32) -> BlockSpec {
    BlockSpec::uib(Some(k(k1)), Some(k(k2)), expanded, out, s(stride))
}

fn ib(kernel: u32, expanded: u32, out: u32, stride: u32) -> BlockSpec {
    BlockSpec::uib(None, Some(k(kernel)), expanded, out, s(stride))
}

fn convnext(kernel: u32, expanded: u32, out: u32, stride: u32) -> BlockSpec {
    BlockSpec::uib(Some(k(kernel)), None, expanded, out, s(stride))
}

fn ffn(expanded: u32, out: u32) -> BlockSpec {
    BlockSpec::uib(None, None, expanded, out, Stride::ONE)
}

/// Default Mobile MQA block for a stage of width `channels`.
pub fn default_mqa(channels: u32, kv_stride: Stride) -> BlockSpec {
    BlockSpec::Mqa {
        num_heads: (channels / MQA_HEAD_DIM).max(1),
        head_dim: MQA_HEAD_DIM,
        kv_stride,
    }
}

/// MobileNetV3-style head shared by every MNv4 network.
fn mnv4_head() -> [BlockSpec; 4] {
    [
        conv(1, 1, 960),
        BlockSpec::Avgpool,
        conv(1, 1, 1280),
        BlockSpec::Dense { out: 1000, bias: true },
    ]
}

pub fn build_mnv4(variant: Mnv4Variant) -> NetworkSpec {
    let mut blocks = match variant {
        Mnv4Variant::ConvS => conv_s(),
        Mnv4Variant::ConvM => conv_m(),
        Mnv4Variant::ConvL => conv_l(),
        Mnv4Variant::HybridM => hybrid_m(),
        Mnv4Variant::HybridL => hybrid_l(),
    };
    blocks.extend(mnv4_head());
    NetworkSpec {
        top1_accuracy: Some(variant.top1()),
        ..NetworkSpec::new(variant.display_name(), variant.input_res(), blocks)
    }
}

fn conv_s() -> Vec<BlockSpec> {
    vec![
        conv(3, 2, 32),
        fused(3, 2, 32, 32),
        fused(3, 2, 96, 64),
        extra_dw(5, 5, 192, 96, 2),
        ib(3, 192, 96, 1),
        ib(3, 192, 96, 1),
        ib(3, 192, 96, 1),
        ib(3, 192, 96, 1),
        convnext(3, 384, 96, 1),
        extra_dw(3, 3, 576, 128, 2),
        extra_dw(5, 5, 512, 128, 1),
        ib(5, 512, 128, 1),
        ib(5, 384, 128, 1),
        ib(3, 512, 128, 1),
        ib(3, 512, 128, 1),
    ]
}

fn conv_m_prefix() -> Vec<BlockSpec> {
    vec![
        conv(3, 2, 32),
        fused(3, 2, 128, 48),
        extra_dw(3, 5, 192, 80, 2),
        extra_dw(3, 3, 160, 80, 1),
    ]
}

fn conv_m() -> Vec<BlockSpec> {
    let mut b = conv_m_prefix();
    b.extend([
        extra_dw(3, 5, 480, 160, 2),
        extra_dw(3, 3, 640, 160, 1),
        extra_dw(3, 3, 640, 160, 1),
        extra_dw(3, 5, 640, 160, 1),
        extra_dw(3, 3, 640, 160, 1),
        convnext(3, 640, 160, 1),
        ffn(320, 160),
        convnext(3, 640, 160, 1),
        extra_dw(5, 5, 960, 256, 2),
        extra_dw(5, 5, 1024, 256, 1),
        extra_dw(3, 5, 1024, 256, 1),
        extra_dw(3, 5, 1024, 256, 1),
        ffn(1024, 256),
        convnext(3, 1024, 256, 1),
        extra_dw(3, 5, 512, 256, 1),
        extra_dw(5, 5, 1024, 256, 1),
        ffn(1024, 256),
        ffn(1024, 256),
        convnext(5, 512, 256, 1),
    ]);
    b
}

fn hybrid_m() -> Vec<BlockSpec> {
    let mqa16 = || default_mqa(160, Stride::TWO);
    let mqa8 = || default_mqa(256, Stride::ONE);
    let mut b = conv_m_prefix();
    b.extend([
        extra_dw(3, 5, 480, 160, 2),
        extra_dw(3, 3, 640, 160, 1),
        extra_dw(3, 3, 640, 160, 1),
        extra_dw(3, 5, 640, 160, 1),
        mqa16(),
        extra_dw(3, 3, 640, 160, 1),
        mqa16(),
        convnext(3, 640, 160, 1),
        mqa16(),
        ffn(640, 160),
        mqa16(),
        convnext(3, 640, 160, 1),
        extra_dw(5, 5, 960, 256, 2),
        extra_dw(5, 5, 1024, 256, 1),
        extra_dw(3, 5, 1024, 256, 1),
        extra_dw(3, 5, 1024, 256, 1),
        ffn(1024, 256),
        convnext(3, 1024, 256, 1),
        extra_dw(3, 5, 512, 256, 1),
        mqa8(),
        extra_dw(5, 5, 1024, 256, 1),
        mqa8(),
        ffn(1024, 256),
        mqa8(),
        ffn(1024, 256),
        mqa8(),
        convnext(5, 1024, 256, 1),
    ]);
    b
}

fn conv_l_prefix() -> Vec<BlockSpec> {
    vec![
        conv(3, 2, 24),
        fused(3, 2, 96, 48),
        extra_dw(3, 5, 192, 96, 2),
        extra_dw(3, 3, 384, 96, 1),
        extra_dw(3, 5, 384, 192, 2),
        extra_dw(3, 3, 768, 192, 1),
        extra_dw(3, 3, 768, 192, 1),
        extra_dw(3, 3, 768, 192, 1),
        extra_dw(3, 5, 768, 192, 1),
    ]
}

fn conv_l() -> Vec<BlockSpec> {
    let mut b = conv_l_prefix();
    b.extend(std::iter::repeat_n(extra_dw(5, 3, 768, 192, 1), 5));
    b.extend([
        convnext(3, 768, 192, 1),
        extra_dw(5, 5, 768, 512, 2),
        extra_dw(5, 5, 2048, 512, 1),
        extra_dw(5, 5, 2048, 512, 1),
        extra_dw(5, 5, 2048, 512, 1),
        convnext(5, 2048, 512, 1),
        extra_dw(5, 3, 2048, 512, 1),
        convnext(5, 2048, 512, 1),
        convnext(5, 2048, 512, 1),
        extra_dw(5, 3, 2048, 512, 1),
        extra_dw(5, 5, 2048, 512, 1),
        convnext(5, 2048, 512, 1),
        convnext(5, 2048, 512, 1),
        convnext(5, 2048, 512, 1),
    ]);
    b
}

fn hybrid_l() -> Vec<BlockSpec> {
    let mqa24 = || default_mqa(192, Stride::TWO);
    let mqa12 = || default_mqa(512, Stride::ONE);
    let mut b = conv_l_prefix();
    b.extend([
        extra_dw(5, 3, 768, 192, 1),
        extra_dw(5, 3, 768, 192, 1),
        mqa24(),
        extra_dw(5, 3, 768, 192, 1),
        mqa24(),
        extra_dw(5, 3, 768, 192, 1),
        mqa24(),
        extra_dw(5, 3, 768, 192, 1),
        mqa24(),
        convnext(3, 768, 192, 1),
        extra_dw(5, 5, 768, 512, 2),
        extra_dw(5, 5, 2048, 512, 1),
        extra_dw(5, 5, 2048, 512, 1),
        extra_dw(5, 5, 2048, 512, 1),
        convnext(5, 2048, 512, 1),
        extra_dw(5, 3, 2048, 512, 1),
        convnext(5, 2048, 512, 1),
        convnext(5, 2048, 512, 1),
        extra_dw(5, 3, 2048, 512, 1),
        extra_dw(5, 5, 2048, 512, 1),
        mqa12(),
        convnext(5, 2048, 512, 1),
        mqa12(),
        convnext(5, 2048, 512, 1),
        mqa12(),
        convnext(5, 2048, 512, 1),
        mqa12(),
        convnext(5, 2048, 512, 1),
    ]);
    b
}

/// Round a scaled channel count to a multiple of 8, never losing more than 10%.
pub fn make_divisible(value: f64) -> u32 {
    let divisor = 8.0;
    let mut rounded = ((value + divisor / 2.0) / divisor).floor() * divisor;
    rounded = rounded.max(divisor);
    if rounded < 0.9 * value {
        rounded += divisor;
    }
    rounded as u32
}

fn dw(kernel: u32, stride: u32) -> BlockSpec {
    BlockSpec::Dwconv {
        kernel: k(kernel),
        stride: s(stride),
        followed_by_bn: true,
    }
}

fn classifier() -> BlockSpec {
    BlockSpec::Dense { out: 1000, bias: true }
}

pub fn mobilenet_v1() -> NetworkSpec {
    let widths = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    let mut blocks = vec![conv(3, 2, 32)];
    for (out, stride) in widths {
        blocks.push(dw(3, stride));
        blocks.push(conv(1, 1, out));
    }
    blocks.push(BlockSpec::Avgpool);
    blocks.push(classifier());
    NetworkSpec {
        top1_accuracy: Some(74.0),
        ..NetworkSpec::new("MobileNet-V1", 224, blocks)
    }
}

/// MobileNetV2 at a width multiplier.
pub fn mobilenet_v2(width: f64) -> NetworkSpec {
    // (expansion, channels, repeats, first stride)
    let settings = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let mut c = make_divisible(32.0 * width);
    let mut blocks = vec![conv(3, 2, c)];
    for (t, ch, n, first_stride) in settings {
        let out = make_divisible(ch as f64 * width);
        for i in 0..n {
            let stride = if i == 0 { first_stride } else { 1 };
            if t == 1 {
                blocks.push(dw(3, stride));
                blocks.push(conv(1, 1, out));
            } else {
                blocks.push(ib(3, c * t, out, stride));
            }
            c = out;
        }
    }
    blocks.push(conv(1, 1, make_divisible(1280.0 * width.max(1.0))));
    blocks.push(BlockSpec::Avgpool);
    blocks.push(classifier());
    let (name, top1) = match width {
        0.5 => ("MobileNet-V2-0.5x".to_string(), Some(66.0)),
        1.0 => ("MobileNet-V2".to_string(), Some(73.4)),
        1.5 => ("MobileNet-V2-1.5x".to_string(), Some(76.8)),
        2.0 => ("MobileNet-V2-2.0x".to_string(), Some(78.4)),
        w => (format!("MobileNet-V2-{w}x"), None),
    };
    NetworkSpec {
        top1_accuracy: top1,
        ..NetworkSpec::new(name, 224, blocks)
    }
}

/// MobileNetV3-Large at a width multiplier, with squeeze-excite on the
/// expanded features.
pub fn mobilenet_v3_large(width: f64) -> NetworkSpec {
    // (kernel, expanded, out, squeeze-excite, stride)
    let settings = [
        (3, 16, 16, false, 1),
        (3, 64, 24, false, 2),
        (3, 72, 24, false, 1),
        (5, 72, 40, true, 2),
        (5, 120, 40, true, 1),
        (5, 120, 40, true, 1),
        (3, 240, 80, false, 2),
        (3, 200, 80, false, 1),
        (3, 184, 80, false, 1),
        (3, 184, 80, false, 1),
        (3, 480, 112, true, 1),
        (3, 672, 112, true, 1),
        (5, 672, 160, true, 2),
        (5, 960, 160, true, 1),
        (5, 960, 160, true, 1),
    ];
    let mut blocks = vec![conv(3, 2, 16)];
    for (i, (kernel, exp, out, se, stride)) in settings.into_iter().enumerate() {
        let out = make_divisible(out as f64 * width);
        if i == 0 {
            // No expansion: depthwise then projection.
            blocks.push(dw(kernel, stride));
            blocks.push(conv(1, 1, out));
            continue;
        }
        let expanded = make_divisible(exp as f64 * width);
        blocks.push(BlockSpec::Uib {
            start_dw: None,
            mid_dw: Some(k(kernel)),
            expanded,
            out,
            stride: s(stride),
            se: se.then(|| make_divisible(expanded as f64 / 4.0)),
        });
    }
    blocks.push(conv(1, 1, make_divisible(960.0 * width)));
    blocks.push(BlockSpec::Avgpool);
    blocks.push(BlockSpec::Conv2d {
        kernel: Kernel::K1,
        stride: Stride::ONE,
        out: make_divisible(1280.0 * width.max(1.0)),
        followed_by_bn: false,
        bias: true,
    });
    blocks.push(classifier());
    let (name, top1) = if width == 0.5 {
        ("MobileNet-V3L-0.5x".to_string(), Some(69.2))
    } else {
        (format!("MobileNet-V3L-{width}x"), None)
    };
    NetworkSpec {
        top1_accuracy: top1,
        ..NetworkSpec::new(name, 224, blocks)
    }
}

/// Small hybrid network covering every block kind, sized for fast tests.
pub fn toy_tiny() -> NetworkSpec {
    NetworkSpec::new(
        "toy-tiny",
        32,
        vec![
            conv(3, 2, 16),
            fused(3, 2, 32, 24),
            extra_dw(3, 5, 96, 24, 1),
            ib(3, 96, 32, 2),
            convnext(5, 64, 32, 1),
            ffn(64, 32),
            BlockSpec::Mqa {
                num_heads: 2,
                head_dim: 16,
                kv_stride: Stride::TWO,
            },
            conv(1, 1, 64),
            BlockSpec::Avgpool,
            BlockSpec::Dense { out: 10, bias: true },
        ],
    )
}

/// Registry key and builder.
type Entry = (&'static str, fn() -> NetworkSpec);

const REGISTRY: &[Entry] = &[
    ("mnv4-conv-s", || build_mnv4(Mnv4Variant::ConvS)),
    ("mnv4-conv-m", || build_mnv4(Mnv4Variant::ConvM)),
    ("mnv4-conv-l", || build_mnv4(Mnv4Variant::ConvL)),
    ("mnv4-hybrid-m", || build_mnv4(Mnv4Variant::HybridM)),
    ("mnv4-hybrid-l", || build_mnv4(Mnv4Variant::HybridL)),
    ("mobilenet-v1", mobilenet_v1),
    ("mobilenet-v2", || mobilenet_v2(1.0)),
    ("mobilenet-v2-0.5x", || mobilenet_v2(0.5)),
    ("mobilenet-v2-1.5x", || mobilenet_v2(1.5)),
    ("mobilenet-v2-2.0x", || mobilenet_v2(2.0)),
    ("mobilenet-v3l-0.5x", || mobilenet_v3_large(0.5)),
    ("toy-tiny", toy_tiny),
];

pub fn registry_names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|(name, _)| *name)
}

/// Every built-in network, in registry order.
pub fn builtins() -> Vec<NetworkSpec> {
    REGISTRY.iter().map(|(_, build)| build()).collect()
}

/// Look up a built-in network by registry key or display name
/// (case-insensitive, `_` and `-` interchangeable).
pub fn lookup(name: &str) -> Option<NetworkSpec> {
    let key = name.trim().to_ascii_lowercase().replace('_', "-");
    REGISTRY.iter().find(|(k, _)| *k == key).map(|(_, build)| build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{propagate_shapes, TensorShape, UibVariant};

    #[test]
    fn every_builtin_propagates_to_1280_features() {
        for name in registry_names() {
            let net = lookup(name).unwrap();
            let shapes = propagate_shapes(&net).unwrap();
            let n = shapes.len();
            if name.starts_with("toy") {
                continue;
            }
            assert_eq!(shapes[n - 1].output.c, 1000, "{name}");
            assert_eq!(shapes[n - 2].output.pixels(), 1, "{name}");
            if name.starts_with("mnv4") || name.starts_with("mobilenet-v3") {
                assert_eq!(shapes[n - 2].output, TensorShape::square(1, 1280), "{name}");
            }
        }
    }

    #[test]
    fn conv_s_layout() {
        let net = build_mnv4(Mnv4Variant::ConvS);
        // stem + 2 FusedIB + 12 UIB rows, then the 4 head rows
        assert_eq!(net.blocks.len(), 15 + 4);
        assert_eq!(net.blocks[1].label(), "FusedIB");
        let shapes = propagate_shapes(&net).unwrap();
        assert_eq!(shapes[0].output, TensorShape::square(112, 32));
        assert_eq!(shapes[3].input, TensorShape::square(28, 64));
        assert_eq!(shapes[3].output, TensorShape::square(14, 96));
        assert_eq!(shapes[15].input, TensorShape::square(7, 128));
    }

    #[test]
    fn hybrid_m_has_eight_mqa_rows() {
        let net = build_mnv4(Mnv4Variant::HybridM);
        let n = net.blocks.iter().filter(|b| matches!(b, BlockSpec::Mqa { .. })).count();
        assert_eq!(n, 8);
        let l = build_mnv4(Mnv4Variant::HybridL);
        assert_eq!(l.blocks.iter().filter(|b| b.is_attention()).count(), 8);
    }

    #[test]
    fn conv_l_last_stage_is_13_blocks_at_12px() {
        let net = build_mnv4(Mnv4Variant::ConvL);
        let shapes = propagate_shapes(&net).unwrap();
        let stages = net.stages();
        let last = stages.last().unwrap().clone();
        assert_eq!(last.len(), 13);
        for i in last {
            assert_eq!(shapes[i].output, TensorShape::square(12, 512));
        }
        assert_eq!(stages.len(), 5);
    }

    #[test]
    fn published_models_mix_uib_variants() {
        let variants_of = |v: Mnv4Variant| -> std::collections::HashSet<UibVariant> {
            build_mnv4(v).blocks.iter().filter_map(|b| b.uib_variant()).collect()
        };
        // Conv-M uses ExtraDW, ConvNext and FFN but no plain IB row
        let m = variants_of(Mnv4Variant::ConvM);
        assert_eq!(m.len(), 3);
        assert!(!m.contains(&UibVariant::Ib));
        let all: std::collections::HashSet<_> = Mnv4Variant::ALL.iter().flat_map(|&v| variants_of(v)).collect();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn lookup_accepts_display_names() {
        assert_eq!(lookup("MNv4-Conv-S").unwrap().name, "MNv4-Conv-S");
        assert_eq!(lookup("mobilenet_v2_0.5x").unwrap().name, "MobileNet-V2-0.5x");
        assert!(lookup("resnet-50").is_none());
        assert_eq!("conv_l".parse::<Mnv4Variant>(), Ok(Mnv4Variant::ConvL));
    }

    #[test]
    fn make_divisible_matches_reference_rounding() {
        assert_eq!(make_divisible(16.0), 16);
        assert_eq!(make_divisible(12.0), 16);
        assert_eq!(make_divisible(36.0), 40);
        assert_eq!(make_divisible(480.0), 480);
        assert_eq!(make_divisible(4.0), 8);
    }
}
