//! Convolution, pooling and activation kernels with hand-written backward passes.
//!
//! All kernels loop over the batch and work on one `[C, H, W]` sample at a time,
//! lowering convolutions to GEMM through an im2col buffer.

use super::tensor::{gemm, Real, Tensor};
use super::NnError;

/// Gradients of a convolution-like layer.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

fn im2col3<T: Real>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Pixel-major variant of [`im2col3`]: row `p` holds the `c * 9` taps of pixel `p`.
fn im2col3_t<T: Real>(x: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let k = c * 9;
    let hw = h * w;
    for y in 0..h {
        for xx in 0..w {
            let dst = &mut out[(y * w + xx) * k..][..k];
            for ci in 0..c {
                let plane = &x[ci * hw..(ci + 1) * hw];
                for ky in 0..3 {
                    let d = &mut dst[ci * 9 + ky * 3..][..3];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        d.fill(T::zero());
                        continue;
                    }
                    let row = &plane[sy as usize * w..][..w];
                    d[0] = if xx > 0 { row[xx - 1] } else { T::zero() };
                    d[1] = row[xx];
                    d[2] = if xx + 1 < w { row[xx + 1] } else { T::zero() };
                }
            }
        }
    }
}

fn check_conv_shapes<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    k: usize,
) -> Result<(), NnError> {
    let [co, ci, kh, kw] = weight.shape();
    if ci != input.channels() || kh != k || kw != k || bias.is_some_and(|b| b.len() != co) {
        return Err(NnError::ShapeMismatch(format!(
            "input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.map(<[T]>::len)
        )));
    }
    Ok(())
}

/// 3x3 cross-correlation, stride 1, zero padding 1. `weight` is `[out, in, 3, 3]`.
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>, NnError> {
    check_conv_shapes(input, weight, Some(bias), 3)?;
    let [n, ci, h, w] = input.shape();
    let co = weight.shape()[0];
    let hw = h * w;
    let mut out = Tensor::zeros([n, co, h, w]);
    let mut cols = vec![T::zero(); ci * 9 * hw];
    for s in 0..n {
        im2col3(input.sample(s), ci, h, w, &mut cols);
        let y = out.sample_mut(s);
        for (o, plane) in y.chunks_mut(hw).enumerate() {
            plane.fill(bias[o]);
        }
        gemm(false, false, co, hw, ci * 9, weight.data(), &cols, T::one(), y);
    }
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    check_conv_shapes(input, weight, None, 3)?;
    let [n, ci, h, w] = input.shape();
    let co = weight.shape()[0];
    if grad_out.shape() != [n, co, h, w] {
        return Err(NnError::ShapeMismatch(format!(
            "grad_out {:?} for conv output [{n}, {co}, {h}, {w}]",
            grad_out.shape()
        )));
    }
    let hw = h * w;
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = vec![T::zero(); co];
    let mut cols = vec![T::zero(); ci * 9 * hw];
    for s in 0..n {
        let dy = grad_out.sample(s);
        im2col3_t(input.sample(s), ci, h, w, &mut cols);
        gemm(false, false, co, ci * 9, hw, dy, &cols, T::one(), gw.data_mut());
        for (o, plane) in dy.chunks(hw).enumerate() {
            gb[o] += plane.iter().copied().sum::<T>();
        }
    }
    // The input gradient is a same-padded correlation of the output gradient
    // with the spatially flipped, channel-transposed kernel.
    let mut flipped = Tensor::zeros([ci, co, 3, 3]);
    for o in 0..co {
        for i in 0..ci {
            for t in 0..9 {
                flipped.data_mut()[(i * co + o) * 9 + 8 - t] = weight.data()[(o * ci + i) * 9 + t];
            }
        }
    }
    let gi = conv2d(grad_out, &flipped, &vec![T::zero(); ci])?;
    Ok(ConvGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

/// 1x1 convolution (per-pixel linear map across channels). `weight` is `[out, in, 1, 1]`.
pub fn pointwise_conv<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>, NnError> {
    check_conv_shapes(input, weight, Some(bias), 1)?;
    let [n, ci, h, w] = input.shape();
    let co = weight.shape()[0];
    let hw = h * w;
    let mut out = Tensor::zeros([n, co, h, w]);
    for s in 0..n {
        let y = out.sample_mut(s);
        for (o, plane) in y.chunks_mut(hw).enumerate() {
            plane.fill(bias[o]);
        }
        gemm(false, false, co, hw, ci, weight.data(), input.sample(s), T::one(), y);
    }
    Ok(out)
}

pub fn pointwise_conv_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    check_conv_shapes(input, weight, None, 1)?;
    let [n, ci, h, w] = input.shape();
    let co = weight.shape()[0];
    if grad_out.shape() != [n, co, h, w] {
        return Err(NnError::ShapeMismatch(format!("grad_out {:?}", grad_out.shape())));
    }
    let hw = h * w;
    let mut gi = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = vec![T::zero(); co];
    for s in 0..n {
        let dy = grad_out.sample(s);
        gemm(false, true, co, ci, hw, dy, input.sample(s), T::one(), gw.data_mut());
        gemm(true, false, ci, hw, co, weight.data(), dy, T::zero(), gi.sample_mut(s));
        for (o, plane) in dy.chunks(hw).enumerate() {
            gb[o] += plane.iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

fn check_tconv_shapes<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(), NnError> {
    let [ci, _, kh, kw] = weight.shape();
    if ci != input.channels() || kh != 2 || kw != 2 {
        return Err(NnError::ShapeMismatch(format!(
            "transposed conv input {:?}, weight {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    Ok(())
}

/// 2x2 transposed convolution with stride 2 (no bias); doubles height and width.
/// `weight` is `[in, out, 2, 2]`.
pub fn transposed_conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    check_tconv_shapes(input, weight)?;
    let [n, ci, h, w] = input.shape();
    let co = weight.shape()[1];
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, co, oh, ow]);
    let mut taps = vec![T::zero(); co * 4 * hw];
    for s in 0..n {
        // taps[(o, ky, kx), p] = sum_i weight[i, (o, ky, kx)] * x[i, p]
        gemm(true, false, co * 4, hw, ci, weight.data(), input.sample(s), T::zero(), &mut taps);
        let y = out.sample_mut(s);
        for o in 0..co {
            for ky in 0..2 {
                for kx in 0..2 {
                    let row = &taps[((o * 2 + ky) * 2 + kx) * hw..][..hw];
                    for yy in 0..h {
                        let dst = &mut y[(o * oh + 2 * yy + ky) * ow..][..ow];
                        for xx in 0..w {
                            dst[2 * xx + kx] = row[yy * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weight)`.
pub fn transposed_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    check_tconv_shapes(input, weight)?;
    let [n, ci, h, w] = input.shape();
    let co = weight.shape()[1];
    let (oh, ow) = (2 * h, 2 * w);
    if grad_out.shape() != [n, co, oh, ow] {
        return Err(NnError::ShapeMismatch(format!("grad_out {:?}", grad_out.shape())));
    }
    let hw = h * w;
    let mut gi = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut dtaps = vec![T::zero(); co * 4 * hw];
    for s in 0..n {
        let dy = grad_out.sample(s);
        for o in 0..co {
            for ky in 0..2 {
                for kx in 0..2 {
                    let row = &mut dtaps[((o * 2 + ky) * 2 + kx) * hw..][..hw];
                    for yy in 0..h {
                        let src = &dy[(o * oh + 2 * yy + ky) * ow..][..ow];
                        for xx in 0..w {
                            row[yy * w + xx] = src[2 * xx + kx];
                        }
                    }
                }
            }
        }
        gemm(false, false, ci, hw, co * 4, weight.data(), &dtaps, T::zero(), gi.sample_mut(s));
        gemm(false, true, ci, co * 4, hw, input.sample(s), &dtaps, T::one(), gw.data_mut());
    }
    Ok((gi, gw))
}

/// Flat input index selected by each pooled output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: [usize; 4],
    pub argmax: Vec<usize>,
}

/// 3x3 max pooling, stride 2, padding 1 (padding never wins). Halves H and W.
/// Ties resolve to the first maximum in row-major window order.
pub fn maxpool2d<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices), NnError> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::OddSpatialDims { height: h, width: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    let y = out.data_mut();
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = 0;
                for iy in (2 * oy).saturating_sub(1)..=(2 * oy + 1).min(h - 1) {
                    for ix in (2 * ox).saturating_sub(1)..=(2 * ox + 1).min(w - 1) {
                        let i = base + iy * w + ix;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                y[k] = best;
                argmax.push(best_i);
                k += 1;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: input.shape(),
            argmax,
        },
    ))
}

pub fn maxpool2d_backward<T: Real>(grad_out: &Tensor<T>, idx: &PoolIndices) -> Result<Tensor<T>, NnError> {
    if grad_out.len() != idx.argmax.len() {
        return Err(NnError::ShapeMismatch(format!(
            "pool grad {:?} for {} indices",
            grad_out.shape(),
            idx.argmax.len()
        )));
    }
    let mut gi = Tensor::zeros(idx.input_shape);
    let g = gi.data_mut();
    for (&i, &d) in idx.argmax.iter().zip(grad_out.data()) {
        g[i] += d;
    }
    Ok(gi)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x.flush() } else { T::zero() })
}

/// Passes the gradient where the forward input was positive (zero at the kink).
/// Both ReLU passes also flush subnormals to zero.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g.flush() } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("relu shapes agree")
}

/// Per-pixel softmax over exactly two channels.
pub fn softmax2<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let [n, c, h, w] = logits.shape();
    if c != 2 {
        return Err(NnError::ChannelCount(c));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(logits.shape());
    for s in 0..n {
        let z = logits.sample(s);
        let p = out.sample_mut(s);
        for i in 0..hw {
            let (a, b) = (z[i], z[hw + i]);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let sum = ea + eb;
            p[i] = (ea / sum).flush();
            p[hw + i] = (eb / sum).flush();
        }
    }
    Ok(out)
}

/// Back-propagates through [`softmax2`] given its output probabilities.
pub fn softmax2_backward<T: Real>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let [n, c, h, w] = probs.shape();
    if c != 2 {
        return Err(NnError::ChannelCount(c));
    }
    if grad_out.shape() != probs.shape() {
        return Err(NnError::ShapeMismatch(format!("softmax grad {:?}", grad_out.shape())));
    }
    let hw = h * w;
    let mut gz = Tensor::zeros(probs.shape());
    for s in 0..n {
        let (p, g) = (probs.sample(s), grad_out.sample(s));
        let dz = gz.sample_mut(s);
        for i in 0..hw {
            let dot = p[i] * g[i] + p[hw + i] * g[hw + i];
            dz[i] = (p[i] * (g[i] - dot)).flush();
            dz[hw + i] = (p[hw + i] * (g[hw + i] - dot)).flush();
        }
    }
    Ok(gz)
}
