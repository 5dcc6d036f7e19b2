//! Strided "same" convolution and its adjoint.
//!
//! Layout is NHWC for activations and `[kh, kw, in_ch, out_ch]` for kernels.
//! Convolution is cross-correlation (no kernel flip). Padding is chosen so the
//! output has `ceil(in / stride)` rows and columns; when the total padding is
//! odd the extra row/column goes on the bottom/right.

use super::Tensor;
use crate::error::{Error, Result};

/// Weights `[kh, kw, in_ch, out_ch]` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

impl ConvKernel {
    pub fn new(weights: Tensor, bias: Vec<f32>) -> Result<Self> {
        let dims = kernel_dims(&weights)?;
        if bias.len() != dims[3] {
            return Err(Error::Shape(format!(
                "bias has {} entries but kernel {:?} has {} output channels",
                bias.len(),
                weights.shape(),
                dims[3]
            )));
        }
        Ok(Self { weights, bias })
    }

    /// `[kh, kw, in_ch, out_ch]`
    pub fn dims(&self) -> [usize; 4] {
        kernel_dims(&self.weights).expect("validated at construction")
    }

    pub fn in_channels(&self) -> usize {
        self.dims()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.dims()[3]
    }
}

fn kernel_dims(weights: &Tensor) -> Result<[usize; 4]> {
    match weights.shape() {
        &[kh, kw, ci, co] => Ok([kh, kw, ci, co]),
        s => Err(Error::Shape(format!(
            "kernel must be [kh, kw, in_ch, out_ch], got {s:?}"
        ))),
    }
}

/// Output length and leading pad for one spatial axis under "same" padding.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

/// Geometry shared by the forward map and its adjoint. `h, w, cin` describe
/// the convolution input side, `oh, ow, cout` the output side.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    oh: usize,
    ow: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn new(batch: usize, h: usize, w: usize, kernel: [usize; 4], stride: usize) -> Result<Self> {
        let [kh, kw, cin, cout] = kernel;
        if stride == 0 {
            return Err(Error::Argument("stride must be at least 1".into()));
        }
        if h < kh || w < kw {
            return Err(Error::Shape(format!(
                "spatial size {h}x{w} is smaller than the {kh}x{kw} kernel"
            )));
        }
        let (oh, pad_top) = same_padding(h, kh, stride);
        let (ow, pad_left) = same_padding(w, kw, stride);
        Ok(Self {
            batch,
            h,
            w,
            cin,
            oh,
            ow,
            cout,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
        })
    }

    /// Input coordinate touched by output `o` at kernel tap `k`, if inside.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < len).then_some(pos)
    }

    fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.h, self.w, self.cin]
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.oh, self.ow, self.cout]
    }
}

/// Forward cross-correlation over the geometry, optionally adding a bias.
fn correlate(input: &[f32], weights: &[f32], bias: Option<&[f32]>, g: &Geometry) -> Vec<f32> {
    let mut out = vec![0f32; g.batch * g.oh * g.ow * g.cout];
    let mut acc = vec![0f64; g.cout];
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                acc.fill(0.0);
                for ky in 0..g.kh {
                    let Some(iy) = Geometry::source(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = Geometry::source(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let x = &input[((b * g.h + iy) * g.w + ix) * g.cin..][..g.cin];
                        let tap = &weights[(ky * g.kw + kx) * g.cin * g.cout..];
                        for (ci, &xv) in x.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let xv = xv as f64;
                            let row = &tap[ci * g.cout..][..g.cout];
                            for (a, &wv) in acc.iter_mut().zip(row) {
                                *a += xv * wv as f64;
                            }
                        }
                    }
                }
                let dst = &mut out[((b * g.oh + oy) * g.ow + ox) * g.cout..][..g.cout];
                match bias {
                    Some(bias) => {
                        for ((d, &a), &bv) in dst.iter_mut().zip(&acc).zip(bias) {
                            *d = (a + bv as f64) as f32;
                        }
                    }
                    None => {
                        for (d, &a) in dst.iter_mut().zip(&acc) {
                            *d = a as f32;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`correlate`] without bias: scatters output-side values back
/// onto the input grid.
fn scatter(upstream: &[f32], weights: &[f32], g: &Geometry) -> Vec<f64> {
    let mut out = vec![0f64; g.batch * g.h * g.w * g.cin];
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let up = &upstream[((b * g.oh + oy) * g.ow + ox) * g.cout..][..g.cout];
                if up.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for ky in 0..g.kh {
                    let Some(iy) = Geometry::source(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = Geometry::source(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let tap = &weights[(ky * g.kw + kx) * g.cin * g.cout..];
                        let dst = &mut out[((b * g.h + iy) * g.w + ix) * g.cin..][..g.cin];
                        for (ci, d) in dst.iter_mut().enumerate() {
                            let row = &tap[ci * g.cout..][..g.cout];
                            let s: f64 = row
                                .iter()
                                .zip(up)
                                .map(|(&wv, &uv)| wv as f64 * uv as f64)
                                .sum();
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `<output_side, correlate(input_side)>` with respect to the
/// weights.
fn weight_grad(input: &[f32], output_side: &[f32], g: &Geometry) -> Vec<f64> {
    let mut gw = vec![0f64; g.kh * g.kw * g.cin * g.cout];
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let up = &output_side[((b * g.oh + oy) * g.ow + ox) * g.cout..][..g.cout];
                if up.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for ky in 0..g.kh {
                    let Some(iy) = Geometry::source(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = Geometry::source(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let x = &input[((b * g.h + iy) * g.w + ix) * g.cin..][..g.cin];
                        let tap = &mut gw[(ky * g.kw + kx) * g.cin * g.cout..];
                        for (ci, &xv) in x.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let xv = xv as f64;
                            let row = &mut tap[ci * g.cout..][..g.cout];
                            for (d, &uv) in row.iter_mut().zip(up) {
                                *d += xv * uv as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    gw
}

fn channel_sums(values: &[f32], channels: usize) -> Vec<f32> {
    let mut sums = vec![0f64; channels];
    for px in values.chunks_exact(channels) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v as f64;
        }
    }
    sums.into_iter().map(|s| s as f32).collect()
}

fn narrow(values: Vec<f64>) -> Vec<f32> {
    values.into_iter().map(|v| v as f32).collect()
}

fn forward_geometry(input: &Tensor, weights: &Tensor, stride: usize) -> Result<Geometry> {
    let [b, h, w, c] = input.dims4()?;
    let kdims = kernel_dims(weights)?;
    if kdims[2] != c {
        return Err(Error::Shape(format!(
            "input {:?} has {c} channels but kernel {:?} expects {}",
            input.shape(),
            weights.shape(),
            kdims[2]
        )));
    }
    Geometry::new(b, h, w, kdims, stride)
}

fn transpose_geometry(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    out_spatial: (usize, usize),
) -> Result<Geometry> {
    let [b, h, w, c] = input.dims4()?;
    let kdims = kernel_dims(weights)?;
    if kdims[3] != c {
        return Err(Error::Shape(format!(
            "transposed input {:?} has {c} channels but kernel {:?} produces {}",
            input.shape(),
            weights.shape(),
            kdims[3]
        )));
    }
    let g = Geometry::new(b, out_spatial.0, out_spatial.1, kdims, stride)?;
    if (g.oh, g.ow) != (h, w) {
        return Err(Error::Shape(format!(
            "output size {}x{} with stride {stride} implies a {}x{} input, got {h}x{w}",
            out_spatial.0, out_spatial.1, g.oh, g.ow
        )));
    }
    Ok(g)
}

/// Strided "same" cross-correlation plus bias:
/// `[B, H, W, Cin] -> [B, ceil(H/s), ceil(W/s), Cout]`.
pub fn conv2d_forward(input: &Tensor, kernel: &ConvKernel, stride: usize) -> Result<Tensor> {
    let g = forward_geometry(input, &kernel.weights, stride)?;
    let out = correlate(input.data(), kernel.weights.data(), Some(&kernel.bias), &g);
    Tensor::from_parts(g.output_shape(), out)
}

/// The exact adjoint of [`conv2d_forward`]'s linear part for the same kernel,
/// stride and padding, plus a bias over the `Cin` channels it produces:
/// `[B, h, w, Cout] -> [B, H, W, Cin]`, where `out_spatial = (H, W)` must
/// satisfy `ceil(H/s) == h` and `ceil(W/s) == w`.
pub fn conv2d_transpose_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    stride: usize,
    out_spatial: (usize, usize),
) -> Result<Tensor> {
    let g = transpose_geometry(input, weights, stride, out_spatial)?;
    if bias.len() != g.cin {
        return Err(Error::Shape(format!(
            "transposed bias has {} entries, expected {}",
            bias.len(),
            g.cin
        )));
    }
    let mut out = scatter(input.data(), weights.data(), &g);
    for px in out.chunks_exact_mut(g.cin) {
        for (v, &bv) in px.iter_mut().zip(bias) {
            *v += bv as f64;
        }
    }
    Tensor::from_parts(g.input_shape(), narrow(out))
}

/// Gradients of a scalar objective with respect to one layer's input, kernel
/// weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

/// Gradients of `sum(upstream * conv2d_forward(input, kernel, stride))`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &ConvKernel,
    stride: usize,
    upstream: &Tensor,
) -> Result<ConvGradients> {
    let g = forward_geometry(input, &kernel.weights, stride)?;
    if upstream.shape() != g.output_shape() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match forward output {:?}",
            upstream.shape(),
            g.output_shape()
        )));
    }
    let grad_input = scatter(upstream.data(), kernel.weights.data(), &g);
    let grad_weights = weight_grad(input.data(), upstream.data(), &g);
    Ok(ConvGradients {
        input: Tensor::from_parts(g.input_shape(), narrow(grad_input))?,
        weights: Tensor::from_parts(kernel.weights.shape().to_vec(), narrow(grad_weights))?,
        bias: channel_sums(upstream.data(), g.cout),
    })
}

/// Gradients of `sum(upstream * conv2d_transpose_forward(input, weights, ..))`.
/// The bias gradient has one entry per produced (`Cin`) channel.
pub fn conv2d_transpose_backward(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    upstream: &Tensor,
) -> Result<ConvGradients> {
    let [_, uh, uw, _] = upstream.dims4()?;
    let g = transpose_geometry(input, weights, stride, (uh, uw))?;
    if upstream.shape() != g.input_shape() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match transposed output {:?}",
            upstream.shape(),
            g.input_shape()
        )));
    }
    // The transpose of the transpose is the forward correlation, and the
    // weight gradient swaps the roles of the two sides.
    let grad_input = correlate(upstream.data(), weights.data(), None, &g);
    let grad_weights = weight_grad(upstream.data(), input.data(), &g);
    Ok(ConvGradients {
        input: Tensor::from_parts(g.output_shape(), grad_input)?,
        weights: Tensor::from_parts(weights.shape().to_vec(), narrow(grad_weights))?,
        bias: channel_sums(upstream.data(), g.cin),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_kernel(k: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> ConvKernel {
        let w = random(&[k, k, cin, cout], rng);
        let b = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
        ConvKernel::new(w, b).unwrap()
    }

    /// Direct nested-loop evaluation written from the definition: zero pad,
    /// slide, multiply, sum.
    fn naive_conv(x: &Tensor, k: &ConvKernel, stride: usize) -> Tensor {
        let [b, h, w, cin] = x.dims4().unwrap();
        let [kh, kw, _, cout] = k.dims();
        let (oh, pt) = same_padding(h, kh, stride);
        let (ow, pl) = same_padding(w, kw, stride);
        let at = |bb: usize, y: isize, xx: isize, c: usize| -> f64 {
            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                0.0
            } else {
                x.data()[((bb * h + y as usize) * w + xx as usize) * cin + c] as f64
            }
        };
        let mut out = vec![0f32; b * oh * ow * cout];
        for bb in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..cout {
                        let mut s = k.bias[co] as f64;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                for ci in 0..cin {
                                    let y = (oy * stride + ky) as isize - pt as isize;
                                    let xx = (ox * stride + kx) as isize - pl as isize;
                                    s += at(bb, y, xx, ci)
                                        * k.weights.data()[((ky * kw + kx) * cin + ci) * cout + co]
                                            as f64;
                                }
                            }
                        }
                        out[((bb * oh + oy) * ow + ox) * cout + co] = s as f32;
                    }
                }
            }
        }
        Tensor::new(vec![b, oh, ow, cout], out).unwrap()
    }

    #[test]
    fn padding_table() {
        assert_eq!(same_padding(256, 5, 2), (128, 1));
        assert_eq!(same_padding(5, 3, 2), (3, 1));
        assert_eq!(same_padding(4, 3, 1), (4, 1));
        // odd total: the extra row goes after
        assert_eq!(same_padding(6, 4, 1), (6, 1));
        assert_eq!(same_padding(7, 5, 2), (4, 2));
    }

    #[test]
    fn default_first_layer_shape() {
        let x = Tensor::zeros(&[1, 256, 256, 1]);
        let k = ConvKernel::new(Tensor::zeros(&[5, 5, 1, 15]), vec![0.0; 15]).unwrap();
        assert_eq!(conv2d_forward(&x, &k, 2).unwrap().shape(), &[1, 128, 128, 15]);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 5, 7, 1], &mut rng);
        let k = ConvKernel::new(Tensor::filled(&[1, 1, 1, 1], 1.0), vec![0.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &k, 1).unwrap(), x);
    }

    #[test]
    fn all_ones_center_is_total_sum() {
        let x = Tensor::new(vec![1, 3, 3, 1], (1..=9).map(|v| v as f32).collect()).unwrap();
        let k = ConvKernel::new(Tensor::filled(&[3, 3, 1, 1], 1.0), vec![0.0]).unwrap();
        let y = conv2d_forward(&x, &k, 1).unwrap();
        assert_eq!(y.data()[4], 45.0);
        assert_eq!(y, naive_conv(&x, &k, 1));
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(h, w, k, s, cin, cout) in &[
            (8, 8, 5, 2, 2, 3),
            (7, 9, 3, 2, 1, 2),
            (6, 6, 5, 1, 3, 1),
            (9, 5, 4, 3, 2, 2),
        ] {
            let x = random(&[2, h, w, cin], &mut rng);
            let kern = random_kernel(k, cin, cout, &mut rng);
            let fast = conv2d_forward(&x, &kern, s).unwrap();
            let slow = naive_conv(&x, &kern, s);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[1, 8, 8, 2]);
        let k = ConvKernel::new(Tensor::zeros(&[5, 5, 3, 4]), vec![0.0; 4]).unwrap();
        let err = conv2d_forward(&x, &k, 2).unwrap_err().to_string();
        assert!(err.contains("[1, 8, 8, 2]") && err.contains("[5, 5, 3, 4]"), "{err}");
    }

    #[test]
    fn transposed_shape_and_bias_broadcast() {
        let w = Tensor::filled(&[5, 5, 10, 10], 0.3);
        let bias: Vec<f32> = (0..10).map(|i| i as f32).collect();
        let y = conv2d_transpose_forward(&Tensor::zeros(&[1, 8, 8, 10]), &w, &bias, 2, (16, 16))
            .unwrap();
        assert_eq!(y.shape(), &[1, 16, 16, 10]);
        for px in y.data().chunks(10) {
            assert_eq!(px, &bias[..]);
        }
    }

    #[test]
    fn transposed_rejects_inconsistent_size() {
        let w = Tensor::zeros(&[3, 3, 1, 1]);
        let x = Tensor::zeros(&[1, 4, 4, 1]);
        assert!(conv2d_transpose_forward(&x, &w, &[0.0], 2, (9, 8)).is_err());
        assert!(conv2d_transpose_forward(&x, &w, &[0.0], 2, (8, 7)).is_ok());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 6, 6, 2], &mut rng);
        let k = random_kernel(3, 2, 3, &mut rng);
        let g = conv2d_backward(&x, &k, 2, &Tensor::zeros(&[1, 3, 3, 3])).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_identity_backward() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![0.7]).unwrap();
        let k = ConvKernel::new(Tensor::filled(&[1, 1, 1, 1], 1.0), vec![0.0]).unwrap();
        let up = Tensor::new(vec![1, 1, 1, 1], vec![-1.25]).unwrap();
        let g = conv2d_backward(&x, &k, 1, &up).unwrap();
        assert_eq!(g.input, up);
        assert_eq!(g.weights.data(), &[0.7f32 * -1.25]);
        assert_eq!(g.bias, vec![-1.25]);
    }

    #[test]
    fn backward_rejects_wrong_upstream() {
        let x = Tensor::zeros(&[1, 6, 6, 1]);
        let k = ConvKernel::new(Tensor::zeros(&[3, 3, 1, 1]), vec![0.0]).unwrap();
        assert!(conv2d_backward(&x, &k, 2, &Tensor::zeros(&[1, 6, 6, 1])).is_err());
    }

    #[test]
    fn linearity_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut k = random_kernel(5, 2, 3, &mut rng);
        k.bias.fill(0.0);
        let x = random(&[1, 9, 9, 2], &mut rng);
        let y = random(&[1, 9, 9, 2], &mut rng);
        let (a, b) = (0.75f32, -1.5f32);
        let combo = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let lhs = conv2d_forward(&combo, &k, 2).unwrap();
        let fx = conv2d_forward(&x, &k, 2).unwrap();
        let fy = conv2d_forward(&y, &k, 2).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(fx.data()).zip(fy.data()) {
            assert!((l - (a * p + b * q)).abs() < 1e-5);
        }
    }
}
