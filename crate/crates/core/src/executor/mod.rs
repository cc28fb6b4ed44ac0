//! Reference f32 execution of block graphs on seeded random weights.
//!
//! Tensors are HWC. Every block draws its weights from its own ChaCha8
//! stream, so a block's parameters depend only on the seed and its index.
//! ReLU follows every expansion and every standalone convolution;
//! projections are linear.

pub mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ir::{propagate_shapes, BlockSpec, IrError, Kernel, NetworkSpec, Stride, TensorShape};

const INIT_RANGE: f32 = 0.05;
/// Stream used for the network input, distinct from any block index.
const INPUT_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    Shape(#[from] IrError),
    #[error("block {block_index}: expected {expected} input, got {found}")]
    InputShape {
        block_index: usize,
        expected: TensorShape,
        found: TensorShape,
    },
    #[error("block {block_index} produced a non-finite value")]
    NonFinite { block_index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f32>) -> Self {
        assert_eq!(data.len() as u64, shape.elements(), "tensor data length");
        Self { shape, data }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Self::new(shape, vec![0.0; shape.elements() as usize])
    }

    /// Uniform values in `[-1, 1]`.
    pub fn random(shape: TensorShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INPUT_STREAM);
        let data = (0..shape.elements()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self::new(shape, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// How weights are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightInit {
    /// Uniform in `[-0.05, 0.05]`; norm scale `1 + u`, shift `u`.
    #[default]
    Uniform,
    /// Everything zero, norm scale and shift included.
    Zeros,
}

/// Weight source for one block.
pub struct Params {
    rng: ChaCha8Rng,
    init: WeightInit,
}

impl Params {
    pub fn new(seed: u64, block_index: usize, init: WeightInit) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(block_index as u64);
        Self { rng, init }
    }

    fn take(&mut self, n: usize) -> Vec<f32> {
        match self.init {
            WeightInit::Uniform => (0..n)
                .map(|_| self.rng.random_range(-INIT_RANGE..=INIT_RANGE))
                .collect(),
            WeightInit::Zeros => vec![0.0; n],
        }
    }

    fn norm(&mut self, c: usize) -> (Vec<f32>, Vec<f32>) {
        let mut scale = self.take(c);
        if self.init == WeightInit::Uniform {
            scale.iter_mut().for_each(|s| *s += 1.0);
        }
        (scale, self.take(c))
    }
}

fn conv_bn(x: &Tensor, p: &mut Params, k: Kernel, stride: Stride, c_out: u32, bn: bool, bias: bool) -> Tensor {
    let (k, c_out) = (k.get() as usize, c_out as usize);
    let w = p.take(k * k * x.shape.c as usize * c_out);
    let b = bias.then(|| p.take(c_out));
    let mut y = ops::conv2d(x, &w, k, stride.get() as usize, c_out, b.as_deref());
    if bn {
        let (s, t) = p.norm(c_out);
        ops::affine(&mut y, &s, &t);
    }
    y
}

fn dw_bn(x: &Tensor, p: &mut Params, k: Kernel, stride: Stride, bn: bool) -> Tensor {
    let k = k.get() as usize;
    let w = p.take(k * k * x.shape.c as usize);
    let mut y = ops::depthwise(x, &w, k, stride.get() as usize);
    if bn {
        let (s, t) = p.norm(y.shape.c as usize);
        ops::affine(&mut y, &s, &t);
    }
    y
}

fn squeeze_excite(x: &mut Tensor, p: &mut Params, squeeze: u32) {
    let c = x.shape.c as usize;
    let s = squeeze as usize;
    let pooled = ops::global_avg_pool(x);
    let (w1, b1) = (p.take(c * s), p.take(s));
    let (w2, b2) = (p.take(s * c), p.take(c));
    let mut hidden = ops::matmul(&pooled.data, &w1, 1, c, s);
    hidden.iter_mut().zip(&b1).for_each(|(h, b)| *h = (*h + b).max(0.0));
    let mut gate = ops::matmul(&hidden, &w2, 1, s, c);
    gate.iter_mut()
        .zip(&b2)
        .for_each(|(g, b)| *g = 1.0 / (1.0 + (-(*g + b)).exp()));
    for px in x.data.chunks_exact_mut(c) {
        px.iter_mut().zip(&gate).for_each(|(v, g)| *v *= g);
    }
}

#[allow(clippy::too_many_arguments)]
fn uib(
    x: &Tensor,
    p: &mut Params,
    start_dw: Option<Kernel>,
    mid_dw: Option<Kernel>,
    expanded: u32,
    out: u32,
    stride: Stride,
    se: Option<u32>,
) -> Tensor {
    // stride on the middle DW, else the start DW, else the expansion
    let mut y = match start_dw {
        Some(k) => dw_bn(x, p, k, if mid_dw.is_some() { Stride::ONE } else { stride }, true),
        None => x.clone(),
    };
    let expand_stride = if start_dw.is_none() && mid_dw.is_none() {
        stride
    } else {
        Stride::ONE
    };
    y = conv_bn(&y, p, Kernel::K1, expand_stride, expanded, true, false);
    ops::relu(&mut y);
    if let Some(k) = mid_dw {
        y = dw_bn(&y, p, k, stride, true);
        ops::relu(&mut y);
    }
    if let Some(s) = se {
        squeeze_excite(&mut y, p, s);
    }
    conv_bn(&y, p, Kernel::K1, Stride::ONE, out, true, false)
}

/// One row-stochastic attention matrix per head, `n x m`.
pub type AttentionMaps = Vec<Vec<f32>>;

struct AttentionWeights {
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    o: Vec<f32>,
    sr: Option<(Vec<f32>, Vec<f32>, Vec<f32>)>,
}

/// Multi-query attention when `shared_kv`, multi-head attention otherwise.
fn attention(
    x: &Tensor,
    p: &mut Params,
    heads: usize,
    d: usize,
    kv_stride: Stride,
    shared_kv: bool,
    logit_shift: f32,
) -> (Tensor, AttentionMaps) {
    let c = x.shape.c as usize;
    let kv_heads = if shared_kv { 1 } else { heads };
    let inner = heads * d;
    let sr = (kv_stride == Stride::TWO).then(|| {
        let w = p.take(9 * c);
        let (s, t) = p.norm(c);
        (w, s, t)
    });
    let wts = AttentionWeights {
        q: p.take(c * inner),
        k: p.take(c * kv_heads * d),
        v: p.take(c * kv_heads * d),
        o: p.take(inner * c),
        sr,
    };
    let kv_src = match &wts.sr {
        Some((w, s, t)) => {
            let mut r = ops::depthwise(x, w, 3, 2);
            ops::affine(&mut r, s, t);
            r
        }
        None => x.clone(),
    };
    let n = x.shape.pixels() as usize;
    let m = kv_src.shape.pixels() as usize;
    let q = ops::matmul(&x.data, &wts.q, n, c, inner);
    let k = ops::matmul(&kv_src.data, &wts.k, m, c, kv_heads * d);
    let v = ops::matmul(&kv_src.data, &wts.v, m, c, kv_heads * d);
    let scale = 1.0 / (d as f32).sqrt();
    let mut concat = vec![0f32; n * inner];
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let kh = if shared_kv { 0 } else { h };
        let kv_w = kv_heads * d;
        let mut logits = vec![0f32; n * m];
        for i in 0..n {
            let qi = &q[i * inner + h * d..][..d];
            for j in 0..m {
                let kj = &k[j * kv_w + kh * d..][..d];
                let dot: f32 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                logits[i * m + j] = dot * scale + logit_shift;
            }
        }
        ops::softmax_rows(&mut logits, m);
        for i in 0..n {
            let out = &mut concat[i * inner + h * d..][..d];
            for j in 0..m {
                let a = logits[i * m + j];
                let vj = &v[j * kv_w + kh * d..][..d];
                out.iter_mut().zip(vj).for_each(|(o, x)| *o += a * x);
            }
        }
        maps.push(logits);
    }
    let y = ops::matmul(&concat, &wts.o, n, inner, c);
    (Tensor::new(x.shape, y), maps)
}

/// Run a Mobile MQA block and also return its attention matrices. Adding
/// `logit_shift` to every logit must leave the output unchanged.
pub fn run_mqa_traced(
    block: &BlockSpec,
    input: &Tensor,
    seed: u64,
    block_index: usize,
    logit_shift: f32,
) -> Option<(Tensor, AttentionMaps)> {
    let BlockSpec::Mqa {
        num_heads,
        head_dim,
        kv_stride,
    } = *block
    else {
        return None;
    };
    let mut p = Params::new(seed, block_index, WeightInit::Uniform);
    Some(attention(
        input,
        &mut p,
        num_heads as usize,
        head_dim as usize,
        kv_stride,
        true,
        logit_shift,
    ))
}

/// Execute one block (without any residual connection).
pub fn run_block(block: &BlockSpec, input: &Tensor, params: &mut Params) -> Result<Tensor, ExecError> {
    let expected = block
        .output_shape(input.shape)
        .map_err(|reason| IrError::InvalidBlock { block_index: 0, reason })?;
    let y = match *block {
        BlockSpec::Conv2d {
            kernel,
            stride,
            out,
            followed_by_bn,
            bias,
        } => {
            let mut y = conv_bn(input, params, kernel, stride, out, followed_by_bn, bias);
            ops::relu(&mut y);
            y
        }
        BlockSpec::Dwconv {
            kernel,
            stride,
            followed_by_bn,
        } => {
            let mut y = dw_bn(input, params, kernel, stride, followed_by_bn);
            ops::relu(&mut y);
            y
        }
        BlockSpec::FusedIb {
            kernel,
            stride,
            expanded,
            out,
        } => {
            let mut y = conv_bn(input, params, kernel, stride, expanded, true, false);
            ops::relu(&mut y);
            conv_bn(&y, params, Kernel::K1, Stride::ONE, out, true, false)
        }
        BlockSpec::Uib {
            start_dw,
            mid_dw,
            expanded,
            out,
            stride,
            se,
        } => uib(input, params, start_dw, mid_dw, expanded, out, stride, se),
        BlockSpec::Mqa {
            num_heads,
            head_dim,
            kv_stride,
        } => {
            attention(
                input,
                params,
                num_heads as usize,
                head_dim as usize,
                kv_stride,
                true,
                0.0,
            )
            .0
        }
        BlockSpec::Mhsa { num_heads, head_dim } => {
            attention(
                input,
                params,
                num_heads as usize,
                head_dim as usize,
                Stride::ONE,
                false,
                0.0,
            )
            .0
        }
        BlockSpec::Avgpool => ops::global_avg_pool(input),
        BlockSpec::Dense { out, bias } => {
            let c = input.shape.c as usize;
            let w = params.take(c * out as usize);
            let b = bias.then(|| params.take(out as usize));
            ops::conv2d(input, &w, 1, 1, out as usize, b.as_deref())
        }
    };
    debug_assert_eq!(y.shape, expected);
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExecOptions {
    pub seed: u64,
    /// Run at this input side instead of the network's own.
    pub resolution: Option<u32>,
    pub init: WeightInit,
}

/// Final output plus the executed output shape of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecTrace {
    pub output: Tensor,
    pub block_shapes: Vec<TensorShape>,
}

pub fn run_network_traced(net: &NetworkSpec, opts: ExecOptions) -> Result<ExecTrace, ExecError> {
    let net = match opts.resolution {
        Some(r) => net.with_resolution(r),
        None => net.clone(),
    };
    let shapes = propagate_shapes(&net)?;
    let mut x = Tensor::random(net.input_shape(), opts.seed);
    let mut block_shapes = Vec::with_capacity(net.blocks.len());
    for (i, (block, s)) in net.blocks.iter().zip(&shapes).enumerate() {
        if x.shape != s.input {
            return Err(ExecError::InputShape {
                block_index: i,
                expected: s.input,
                found: x.shape,
            });
        }
        let mut params = Params::new(opts.seed, i, opts.init);
        let mut y = run_block(block, &x, &mut params)?;
        if s.residual {
            y.data.iter_mut().zip(&x.data).for_each(|(a, b)| *a += b);
        }
        if !y.is_finite() {
            return Err(ExecError::NonFinite { block_index: i });
        }
        block_shapes.push(y.shape);
        x = y;
    }
    Ok(ExecTrace {
        output: x,
        block_shapes,
    })
}

/// Execute a whole network on a seeded random input, optionally at a
/// different input resolution.
pub fn run_network(net: &NetworkSpec, seed: u64, resolution: Option<u32>) -> Result<Tensor, ExecError> {
    run_network_traced(
        net,
        ExecOptions {
            seed,
            resolution,
            init: WeightInit::Uniform,
        },
    )
    .map(|t| t.output)
}
