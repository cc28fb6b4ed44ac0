//! Naive HWC f32 kernels. Convolutions use "same" padding of `k / 2`.

use super::Tensor;
use crate::ir::TensorShape;

/// Full convolution. `weights` is laid out `[ky][kx][c_in][c_out]`.
pub fn conv2d(input: &Tensor, weights: &[f32], k: usize, stride: usize, c_out: usize, bias: Option<&[f32]>) -> Tensor {
    let TensorShape { h, w, c } = input.shape;
    let (h, w, c_in) = (h as usize, w as usize, c as usize);
    assert_eq!(weights.len(), k * k * c_in * c_out, "conv2d weight size");
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let pad = (k / 2) as isize;
    let mut out = vec![0f32; ho * wo * c_out];
    for oy in 0..ho {
        for ox in 0..wo {
            let acc = &mut out[(oy * wo + ox) * c_out..][..c_out];
            if let Some(b) = bias {
                acc.copy_from_slice(b);
            }
            for ky in 0..k {
                let iy = (oy * stride) as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride) as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = &input.data[(iy as usize * w + ix as usize) * c_in..][..c_in];
                    let wk = &weights[(ky * k + kx) * c_in * c_out..][..c_in * c_out];
                    for (ci, &a) in px.iter().enumerate() {
                        let row = &wk[ci * c_out..][..c_out];
                        for (o, &wv) in acc.iter_mut().zip(row) {
                            *o += a * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(TensorShape::new(ho as u32, wo as u32, c_out as u32), out)
}

/// Depthwise convolution. `weights` is laid out `[ky][kx][c]`.
pub fn depthwise(input: &Tensor, weights: &[f32], k: usize, stride: usize) -> Tensor {
    let TensorShape { h, w, c } = input.shape;
    let (h, w, c) = (h as usize, w as usize, c as usize);
    assert_eq!(weights.len(), k * k * c, "depthwise weight size");
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let pad = (k / 2) as isize;
    let mut out = vec![0f32; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let acc = &mut out[(oy * wo + ox) * c..][..c];
            for ky in 0..k {
                let iy = (oy * stride) as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride) as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = &input.data[(iy as usize * w + ix as usize) * c..][..c];
                    let wk = &weights[(ky * k + kx) * c..][..c];
                    for ((o, &a), &wv) in acc.iter_mut().zip(px).zip(wk) {
                        *o += a * wv;
                    }
                }
            }
        }
    }
    Tensor::new(TensorShape::new(ho as u32, wo as u32, c as u32), out)
}

/// `[rows x inner] * [inner x cols]`, both row-major.
pub fn matmul(a: &[f32], b: &[f32], rows: usize, inner: usize, cols: usize) -> Vec<f32> {
    assert_eq!(a.len(), rows * inner);
    assert_eq!(b.len(), inner * cols);
    let mut out = vec![0f32; rows * cols];
    for r in 0..rows {
        let acc = &mut out[r * cols..][..cols];
        for (i, &x) in a[r * inner..][..inner].iter().enumerate() {
            for (o, &y) in acc.iter_mut().zip(&b[i * cols..][..cols]) {
                *o += x * y;
            }
        }
    }
    out
}

/// Per-channel affine, the inference form of batch norm.
pub fn affine(t: &mut Tensor, scale: &[f32], shift: &[f32]) {
    let c = t.shape.c as usize;
    for px in t.data.chunks_exact_mut(c) {
        for ((v, s), b) in px.iter_mut().zip(scale).zip(shift) {
            *v = *v * s + b;
        }
    }
}

pub fn relu(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn global_avg_pool(t: &Tensor) -> Tensor {
    let c = t.shape.c as usize;
    let n = t.shape.pixels() as f32;
    let mut out = vec![0f32; c];
    for px in t.data.chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    Tensor::new(TensorShape::square(1, c as u32), out)
}

/// Row-wise softmax with the max subtracted first.
pub fn softmax_rows(x: &mut [f32], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_identity_weights() {
        let c = 5;
        let data: Vec<f32> = (0..3 * 4 * c).map(|i| i as f32 * 0.25 - 3.0).collect();
        let x = Tensor::new(TensorShape::new(3, 4, c as u32), data);
        let mut eye = vec![0f32; c * c];
        (0..c).for_each(|i| eye[i * c + i] = 1.0);
        assert_eq!(conv2d(&x, &eye, 1, 1, c, None), x);
    }

    #[test]
    fn depthwise_matches_hand_sum() {
        // 3x3 ones kernel on a 3x3 single-channel ramp: the centre output
        // sums all nine inputs, a corner sums its four neighbours.
        let x = Tensor::new(TensorShape::square(3, 1), (1..=9).map(|v| v as f32).collect());
        let y = depthwise(&x, &[1.0; 9], 3, 1);
        assert_eq!(y.data[4], 45.0);
        assert_eq!(y.data[0], 1.0 + 2.0 + 4.0 + 5.0);
        let s2 = depthwise(&x, &[1.0; 9], 3, 2);
        assert_eq!(s2.shape, TensorShape::square(2, 1));
        assert_eq!(s2.data[3], 5.0 + 6.0 + 8.0 + 9.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = vec![1.0, 2.0, 3.0, -1.0, 0.0, 1000.0];
        softmax_rows(&mut x, 3);
        assert!((x[..3].iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((x[3..].iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
