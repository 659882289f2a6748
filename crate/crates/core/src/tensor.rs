//! Dense tensor arithmetic and the layer primitives used by the FCN:
//! 2-D convolution, ReLU, nearest-neighbour upsampling and softmax
//! cross-entropy, each with a hand-derived backward pass, plus the SGD
//! parameter update.
//!
//! All math is 64-bit. Operations are pure functions of their inputs.

use crate::error::{Error, Result};
use crate::label::LabelMap;

/// N-dimensional row-major array of f64 values.
///
/// Activations use `[channels, height, width]` with channel-planar layout;
/// convolution weights use `[out_channels, in_channels, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {n} values but {} were provided",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Channel plane `c` of a rank-3 tensor.
    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.shape[1] * self.shape[2];
        &self.data[c * hw..(c + 1) * hw]
    }

    /// Mutable channel plane `c` of a rank-3 tensor.
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.shape[1] * self.shape[2];
        &mut self.data[c * hw..(c + 1) * hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += a * other`; shapes must match.
    pub fn axpy(&mut self, a: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "axpy operands {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (d, s) in self.data.iter_mut().zip(&other.data) {
            *d += a * s;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }
}

/// Parameters of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[out_channels, in_channels, kh, kw]`
    pub weights: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<ConvParams> {
        if weights.shape().len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv weights must be rank 4, got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias {:?} does not match {} output channels",
                bias.shape(),
                weights.shape()[0]
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        Ok(ConvParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_h(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn kernel_w(&self) -> usize {
        self.weights.shape()[3]
    }

    /// Number of scalar parameters (weights + biases).
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvBackward {
    pub input_grad: Tensor,
    pub weight_grad: Tensor,
    pub bias_grad: Tensor,
}

/// Running count of multiply-accumulate operations.
#[derive(Debug, Clone, Default)]
pub struct MacCounter {
    total: u64,
}

impl MacCounter {
    pub fn new() -> MacCounter {
        MacCounter { total: 0 }
    }

    pub fn add(&mut self, macs: u64) {
        self.total += macs;
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Output extent of a convolution along one axis.
///
/// Rejects geometries where `(extent + 2*padding - kernel) / stride` is not
/// an exact non-negative integer.
pub fn conv_output_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "conv kernel and stride must be >= 1".into(),
        ));
    }
    let padded = extent + 2 * padding;
    if padded < kernel || (padded - kernel) % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "conv output extent ({extent} + 2*{padding} - {kernel}) / {stride} + 1 \
             is not a positive integer"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Nominal multiply-accumulate count of one convolution forward pass
/// (`K * H' * W' * L * kh * kw`, padded positions included).
pub fn conv_mac_count(params: &ConvParams, out_h: usize, out_w: usize) -> u64 {
    params.out_channels() as u64
        * out_h as u64
        * out_w as u64
        * params.in_channels() as u64
        * params.kernel_h() as u64
        * params.kernel_w() as u64
}

fn check_conv_input(input: &Tensor, params: &ConvParams) -> Result<(usize, usize, usize)> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "conv input must be rank 3 [channels, h, w], got {shape:?}"
        )));
    }
    if shape[0] != params.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "conv input has {} channels but the kernel expects {}",
            shape[0],
            params.in_channels()
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Range of output columns `j` for which `j*s + n - p` lands inside `[0, w)`.
/// Returns an empty range as `(1, 0)`.
fn col_range(out_w: usize, w: usize, s: usize, p: usize, n: usize) -> (usize, usize) {
    let j_lo = if p > n { (p - n).div_ceil(s) } else { 0 };
    let hi = w as isize - 1 + p as isize - n as isize;
    if hi < 0 || out_w == 0 {
        return (1, 0);
    }
    let j_hi = ((hi as usize) / s).min(out_w - 1);
    (j_lo, j_hi)
}

/// 2-D convolution: `y[k,i,j] = sum_{l,m,n} x[l, i*s+m-p, j*s+n-p] * w[k,l,m,n] + b[k]`,
/// out-of-bounds input treated as zero.
pub fn conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let (in_c, h, w) = check_conv_input(input, params)?;
    let out_h = conv_output_extent(h, params.kernel_h(), params.stride, params.padding)?;
    let out_w = conv_output_extent(w, params.kernel_w(), params.stride, params.padding)?;
    let (k_out, kh, kw) = (params.out_channels(), params.kernel_h(), params.kernel_w());
    let (s, p) = (params.stride, params.padding);

    let mut out = Tensor::zeros(&[k_out, out_h, out_w]);
    let wdat = params.weights.data();
    for k in 0..k_out {
        let bias = params.bias.data()[k];
        let out_plane = out.plane_mut(k);
        out_plane.fill(bias);
        for l in 0..in_c {
            let in_plane = input.plane(l);
            for m in 0..kh {
                let wrow = &wdat[((k * in_c + l) * kh + m) * kw..][..kw];
                for i in 0..out_h {
                    let yy = (i * s + m) as isize - p as isize;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let x_row = &in_plane[yy as usize * w..][..w];
                    let out_row = &mut out_plane[i * out_w..][..out_w];
                    for (n, &wv) in wrow.iter().enumerate() {
                        let (j_lo, j_hi) = col_range(out_w, w, s, p, n);
                        if j_lo > j_hi {
                            continue;
                        }
                        if s == 1 {
                            let off = j_lo + n - p;
                            let count = j_hi - j_lo + 1;
                            for (o, x) in out_row[j_lo..j_lo + count]
                                .iter_mut()
                                .zip(&x_row[off..off + count])
                            {
                                *o += wv * x;
                            }
                        } else {
                            for j in j_lo..=j_hi {
                                out_row[j] += wv * x_row[j * s + n - p];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact partial derivatives of `sum(upstream .* conv2d_forward(input))`
/// with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvParams,
    upstream: &Tensor,
) -> Result<ConvBackward> {
    let (in_c, h, w) = check_conv_input(input, params)?;
    let out_h = conv_output_extent(h, params.kernel_h(), params.stride, params.padding)?;
    let out_w = conv_output_extent(w, params.kernel_w(), params.stride, params.padding)?;
    let (k_out, kh, kw) = (params.out_channels(), params.kernel_h(), params.kernel_w());
    if upstream.shape() != [k_out, out_h, out_w] {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?} does not match conv output [{k_out}, {out_h}, {out_w}]",
            upstream.shape()
        )));
    }
    let (s, p) = (params.stride, params.padding);

    let mut input_grad = Tensor::zeros(input.shape());
    let mut weight_grad = Tensor::zeros(params.weights.shape());
    let mut bias_grad = Tensor::zeros(&[k_out]);

    let wdat = params.weights.data();
    let dwdat = weight_grad.data_mut();
    for k in 0..k_out {
        let g_plane = upstream.plane(k);
        bias_grad.data_mut()[k] = g_plane.iter().sum();
        for l in 0..in_c {
            let in_plane = input.plane(l);
            let dx_plane = input_grad.plane_mut(l);
            for m in 0..kh {
                let wrow_base = ((k * in_c + l) * kh + m) * kw;
                for i in 0..out_h {
                    let yy = (i * s + m) as isize - p as isize;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let x_row = &in_plane[yy as usize * w..][..w];
                    let dx_row = &mut dx_plane[yy as usize * w..][..w];
                    let g_row = &g_plane[i * out_w..][..out_w];
                    for n in 0..kw {
                        let (j_lo, j_hi) = col_range(out_w, w, s, p, n);
                        if j_lo > j_hi {
                            continue;
                        }
                        let wv = wdat[wrow_base + n];
                        let mut dw = 0.0;
                        if s == 1 {
                            let off = j_lo + n - p;
                            let count = j_hi - j_lo + 1;
                            for ((dx, x), g) in dx_row[off..off + count]
                                .iter_mut()
                                .zip(&x_row[off..off + count])
                                .zip(&g_row[j_lo..j_lo + count])
                            {
                                *dx += wv * g;
                                dw += x * g;
                            }
                        } else {
                            for j in j_lo..=j_hi {
                                let xx = j * s + n - p;
                                dx_row[xx] += wv * g_row[j];
                                dw += x_row[xx] * g_row[j];
                            }
                        }
                        dwdat[wrow_base + n] += dw;
                    }
                }
            }
        }
    }
    Ok(ConvBackward {
        input_grad,
        weight_grad,
        bias_grad,
    })
}

/// Elementwise `max(0, z)`.
pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&z| z.max(0.0)).collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}

/// Upstream gradient masked by `indicator(z > 0)`; the derivative at
/// exactly `z == 0` is 0.
pub fn relu_backward(preactivation: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if preactivation.shape() != upstream.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu backward {:?} vs upstream {:?}",
            preactivation.shape(),
            upstream.shape()
        )));
    }
    let data = preactivation
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: preactivation.shape().to_vec(),
        data,
    })
}

/// Nearest-neighbour upsampling: `out[k,i,j] = in[k, floor(i/s), floor(j/s)]`.
pub fn upsample_nearest(input: &Tensor, s: usize) -> Result<Tensor> {
    if s == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "upsample input must be rank 3, got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = Tensor::zeros(&[c, s * h, s * w]);
    let ow = s * w;
    for k in 0..c {
        let src = input.plane(k);
        let dst = out.plane_mut(k);
        for i in 0..s * h {
            let src_row = &src[(i / s) * w..][..w];
            let dst_row = &mut dst[i * ow..][..ow];
            for (j, d) in dst_row.iter_mut().enumerate() {
                *d = src_row[j / s];
            }
        }
    }
    Ok(out)
}

/// Backward of [`upsample_nearest`]: sums each `s x s` block of the upstream
/// gradient into its source cell.
pub fn upsample_nearest_backward(upstream: &Tensor, s: usize) -> Result<Tensor> {
    if s == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let shape = upstream.shape();
    if shape.len() != 3 || shape[1] % s != 0 || shape[2] % s != 0 {
        return Err(Error::ShapeMismatch(format!(
            "upsample backward expects rank-3 extents divisible by {s}, got {shape:?}"
        )));
    }
    let (c, oh, ow) = (shape[0], shape[1], shape[2]);
    let (h, w) = (oh / s, ow / s);
    let mut out = Tensor::zeros(&[c, h, w]);
    for k in 0..c {
        let src = upstream.plane(k);
        let dst = out.plane_mut(k);
        for i in 0..oh {
            let src_row = &src[i * ow..][..ow];
            let dst_row = &mut dst[(i / s) * w..][..w];
            for (j, g) in src_row.iter().enumerate() {
                dst_row[j / s] += g;
            }
        }
    }
    Ok(out)
}

/// Mean per-pixel softmax cross-entropy and its logit gradient.
///
/// `loss = -(1/N) * sum_i sum_c t[i,c] * ln p[i,c]` with `N = h*w` and the
/// softmax computed with per-pixel max subtraction; `grad = (p - t) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &LabelMap) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "logits must be rank 3 [classes, h, w], got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if labels.height() != h || labels.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "labels {}x{} do not match logits {h}x{w}",
            labels.width(),
            labels.height()
        )));
    }
    let n_pix = h * w;
    let inv_n = 1.0 / n_pix as f64;
    let mut grad = Tensor::zeros(shape);
    let mut loss = 0.0;
    let ldat = logits.data();
    let gdat = grad.data_mut();
    let plane = h * w;
    for (pix, &id) in labels.ids().iter().enumerate() {
        let t = id as usize;
        if t >= c {
            return Err(Error::InvalidArgument(format!(
                "label {t} out of range for {c} classes at pixel {pix}"
            )));
        }
        let mut max = f64::NEG_INFINITY;
        for ch in 0..c {
            max = max.max(ldat[ch * plane + pix]);
        }
        let mut denom = 0.0;
        for ch in 0..c {
            denom += (ldat[ch * plane + pix] - max).exp();
        }
        for ch in 0..c {
            let p = (ldat[ch * plane + pix] - max).exp() / denom;
            let tgt = if ch == t { 1.0 } else { 0.0 };
            gdat[ch * plane + pix] = (p - tgt) * inv_n;
        }
        loss -= (ldat[t * plane + pix] - max) - denom.ln();
    }
    Ok((loss * inv_n, grad))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One SGD step with L2/L1 penalties applied as additive gradient terms:
/// `theta <- theta - lr * (g + 2*l2*theta + l1*sign(theta))`, `sign(0) = 0`.
pub fn sgd_update(theta: &mut Tensor, grad: &Tensor, lr: f64, l2: f64, l1: f64) -> Result<()> {
    if theta.shape() != grad.shape() {
        return Err(Error::ShapeMismatch(format!(
            "sgd update parameter {:?} vs gradient {:?}",
            theta.shape(),
            grad.shape()
        )));
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    for (t, g) in theta.data.iter_mut().zip(grad.data()) {
        *t -= lr * (g + 2.0 * l2 * *t + l1 * sign(*t));
    }
    Ok(())
}

/// Apply [`sgd_update`] to a conv layer's weights and bias.
pub fn sgd_step(
    params: &mut ConvParams,
    weight_grad: &Tensor,
    bias_grad: &Tensor,
    lr: f64,
    l2: f64,
    l1: f64,
) -> Result<()> {
    sgd_update(&mut params.weights, weight_grad, lr, l2, l1)?;
    sgd_update(&mut params.bias, bias_grad, lr, l2, l1)
}
