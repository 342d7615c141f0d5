use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Parameters of one 2-D convolution or transposed-convolution layer.
///
/// Convolution is cross-correlation (the kernel is not flipped). Weights are
/// laid out `[out, in, kh, kw]` for ordinary convolution and `[in, out, kh, kw]`
/// for transposed convolution, so a convolution's weight tensor is directly
/// usable as the weight of its adjoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_pad_h: usize,
    pub out_pad_w: usize,
    pub transposed: bool,
    pub activation: Activation,
}

impl ConvSpec {
    /// Square-kernel convolution with identity activation.
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            pad_h: pad,
            pad_w: pad,
            out_pad_h: 0,
            out_pad_w: 0,
            transposed: false,
            activation: Activation::Identity,
        }
    }

    /// Square-kernel transposed convolution with identity activation.
    pub fn deconv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Self {
        Self {
            out_pad_h: out_pad,
            out_pad_w: out_pad,
            transposed: true,
            ..Self::conv(in_channels, out_channels, kernel, stride, pad)
        }
    }

    pub fn with_kernel(mut self, kernel_h: usize, kernel_w: usize) -> Self {
        self.kernel_h = kernel_h;
        self.kernel_w = kernel_w;
        self
    }

    pub fn with_out_pad(mut self, out_pad_h: usize, out_pad_w: usize) -> Self {
        self.out_pad_h = out_pad_h;
        self.out_pad_w = out_pad_w;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec("channel counts must be positive".into()));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::InvalidSpec("kernel dimensions must be >= 1".into()));
        }
        if self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::InvalidSpec("strides must be >= 1".into()));
        }
        if self.transposed {
            if self.out_pad_h >= self.stride_h || self.out_pad_w >= self.stride_w {
                return Err(Error::InvalidSpec(format!(
                    "out_pad ({}, {}) must be smaller than stride ({}, {})",
                    self.out_pad_h, self.out_pad_w, self.stride_h, self.stride_w
                )));
            }
        } else if self.out_pad_h != 0 || self.out_pad_w != 0 {
            return Err(Error::InvalidSpec("out_pad is only valid for transposed convolution".into()));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        if self.transposed {
            [self.in_channels, self.out_channels, self.kernel_h, self.kernel_w]
        } else {
            [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
        }
    }

    /// Spatial output size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.transposed {
            let oh = ((h - 1) * self.stride_h + self.kernel_h + self.out_pad_h) as isize - 2 * self.pad_h as isize;
            let ow = ((w - 1) * self.stride_w + self.kernel_w + self.out_pad_w) as isize - 2 * self.pad_w as isize;
            if oh < 1 || ow < 1 {
                return Err(Error::InvalidSpec(format!(
                    "transposed convolution of {h}x{w} yields empty output"
                )));
            }
            Ok((oh as usize, ow as usize))
        } else {
            let span_h = h + 2 * self.pad_h;
            let span_w = w + 2 * self.pad_w;
            if span_h < self.kernel_h || span_w < self.kernel_w {
                return Err(Error::InvalidSpec(format!(
                    "kernel {}x{} larger than padded input {span_h}x{span_w}",
                    self.kernel_h, self.kernel_w
                )));
            }
            Ok((
                (span_h - self.kernel_h) / self.stride_h + 1,
                (span_w - self.kernel_w) / self.stride_w + 1,
            ))
        }
    }

    /// Output shape `[out_channels, h', w']` for an input of shape `[in_channels, h, w]`.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        if input.len() != 3 || input[0] != self.in_channels {
            return Err(Error::shape(
                "layer input [C, H, W]",
                &[self.in_channels, input.get(1).copied().unwrap_or(0), input.get(2).copied().unwrap_or(0)],
                input,
            ));
        }
        let (h, w) = self.output_hw(input[1], input[2])?;
        Ok([self.out_channels, h, w])
    }

    fn check(&self, x: &Tensor, w: &Tensor, transposed: bool) -> Result<[usize; 3]> {
        self.validate()?;
        if self.transposed != transposed {
            return Err(Error::InvalidSpec(format!(
                "spec has transposed={} but was passed to the {} kernel",
                self.transposed,
                if transposed { "transposed" } else { "ordinary" }
            )));
        }
        w.expect_shape("weight", &self.weight_shape())?;
        self.output_shape(x.shape())
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

const PAD: usize = usize::MAX;

/// Gather table of a sliding window. For each position `p` of the small grid
/// and each kernel tap `k = (c * kh + ky) * kw + kx`, entry `p * K + k` is the
/// flat index into the `[channels, big_h, big_w]` tensor at
/// `(c, p_y * stride + ky - pad, p_x * stride + kx - pad)`, or `PAD` when that
/// falls outside. Convolution gathers its input at output positions;
/// transposed convolution scatters to its output from input positions.
fn patch_index(spec: &ConvSpec, channels: usize, big: (usize, usize), small: (usize, usize)) -> Vec<usize> {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let k_len = channels * kh * kw;
    let mut idx = vec![PAD; small.0 * small.1 * k_len];
    for sy in 0..small.0 {
        for sx in 0..small.1 {
            let row = &mut idx[(sy * small.1 + sx) * k_len..][..k_len];
            for ky in 0..kh {
                let by = (sy * spec.stride_h + ky) as isize - spec.pad_h as isize;
                if by < 0 || by >= big.0 as isize {
                    continue;
                }
                for kx in 0..kw {
                    let bx = (sx * spec.stride_w + kx) as isize - spec.pad_w as isize;
                    if bx < 0 || bx >= big.1 as isize {
                        continue;
                    }
                    for c in 0..channels {
                        row[(c * kh + ky) * kw + kx] = (c * big.0 + by as usize) * big.1 + bx as usize;
                    }
                }
            }
        }
    }
    idx
}

fn gather(src: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| if i == PAD { 0.0 } else { src[i] }).collect()
}

fn scatter_add(dst: &mut [f64], idx: &[usize], cols: &[f64]) {
    for (&i, &v) in idx.iter().zip(cols) {
        if i != PAD {
            dst[i] += v;
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

fn apply_activation(y: &mut Tensor, act: Activation) {
    if act == Activation::Relu {
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

/// Gradient at the pre-activation, given the post-activation output `y`.
/// ReLU uses subgradient 0 at exactly 0.
fn activation_grad(y: &Tensor, grad_out: &Tensor, act: Activation) -> Tensor {
    let mut g = grad_out.clone();
    if act == Activation::Relu {
        for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
            if yv <= 0.0 {
                *gv = 0.0;
            }
        }
    }
    g
}

fn check_bias(spec: &ConvSpec, b: &Tensor) -> Result<()> {
    b.expect_shape("bias", &[spec.out_channels])
}

pub fn conv2d_forward(x: &Tensor, spec: &ConvSpec, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [co, oh, ow] = spec.check(x, w, false)?;
    check_bias(spec, b)?;
    let (ci, h, wd) = (spec.in_channels, x.shape()[1], x.shape()[2]);
    let k_len = ci * spec.kernel_h * spec.kernel_w;
    let cols = gather(x.data(), &patch_index(spec, ci, (h, wd), (oh, ow)));

    let mut out = Tensor::zeros(&[co, oh, ow]);
    let od = out.data_mut();
    for (oc, (plane, wrow)) in od.chunks_mut(oh * ow).zip(w.data().chunks(k_len)).enumerate() {
        for (o, col) in plane.iter_mut().zip(cols.chunks(k_len)) {
            *o = b.data()[oc] + super::dot(wrow, col);
        }
    }
    apply_activation(&mut out, spec.activation);
    Ok(out)
}

/// Gradients of an ordinary convolution layer. `y` is the forward output,
/// used to recover the activation mask.
pub fn conv2d_backward(
    x: &Tensor,
    spec: &ConvSpec,
    w: &Tensor,
    y: &Tensor,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let out_shape = spec.check(x, w, false)?;
    grad_out.expect_shape("grad_out", &out_shape)?;
    y.expect_shape("forward output", &out_shape)?;
    let [co, oh, ow] = out_shape;
    let (ci, h, wd) = (spec.in_channels, x.shape()[1], x.shape()[2]);
    let k_len = ci * spec.kernel_h * spec.kernel_w;
    let idx = patch_index(spec, ci, (h, wd), (oh, ow));
    let cols = gather(x.data(), &idx);

    let g = activation_grad(y, grad_out, spec.activation);
    let mut grad_w = Tensor::zeros(w.shape());
    let mut grad_b = Tensor::zeros(&[co]);
    let mut grad_cols = vec![0.0; cols.len()];
    let gw = grad_w.data_mut();
    for (oc, gplane) in g.data().chunks(oh * ow).enumerate() {
        grad_b.data_mut()[oc] = gplane.iter().sum();
        let wrow = &w.data()[oc * k_len..][..k_len];
        let gwrow = &mut gw[oc * k_len..][..k_len];
        for (p, &gv) in gplane.iter().enumerate() {
            if gv != 0.0 {
                axpy(gv, &cols[p * k_len..][..k_len], gwrow);
                axpy(gv, wrow, &mut grad_cols[p * k_len..][..k_len]);
            }
        }
    }
    let mut grad_x = Tensor::zeros(x.shape());
    scatter_add(grad_x.data_mut(), &idx, &grad_cols);
    Ok(ConvGrads { grad_x, grad_w, grad_b })
}

pub fn deconv2d_forward(x: &Tensor, spec: &ConvSpec, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [co, oh, ow] = spec.check(x, w, true)?;
    check_bias(spec, b)?;
    let (h, wd) = (x.shape()[1], x.shape()[2]);
    let m_len = co * spec.kernel_h * spec.kernel_w;
    let idx = patch_index(spec, co, (oh, ow), (h, wd));

    // cols[p] = sum over input channels of x[ic, p] * W[ic]
    let mut cols = vec![0.0; h * wd * m_len];
    for (xplane, wrow) in x.data().chunks(h * wd).zip(w.data().chunks(m_len)) {
        for (p, &xv) in xplane.iter().enumerate() {
            if xv != 0.0 {
                axpy(xv, wrow, &mut cols[p * m_len..][..m_len]);
            }
        }
    }
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for (plane, &bv) in out.data_mut().chunks_mut(oh * ow).zip(b.data()) {
        plane.fill(bv);
    }
    scatter_add(out.data_mut(), &idx, &cols);
    apply_activation(&mut out, spec.activation);
    Ok(out)
}

/// Gradients of a transposed convolution layer; see [`conv2d_backward`].
pub fn deconv2d_backward(
    x: &Tensor,
    spec: &ConvSpec,
    w: &Tensor,
    y: &Tensor,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let out_shape = spec.check(x, w, true)?;
    grad_out.expect_shape("grad_out", &out_shape)?;
    y.expect_shape("forward output", &out_shape)?;
    let [co, oh, ow] = out_shape;
    let (h, wd) = (x.shape()[1], x.shape()[2]);
    let m_len = co * spec.kernel_h * spec.kernel_w;

    let g = activation_grad(y, grad_out, spec.activation);
    let grad_cols = gather(g.data(), &patch_index(spec, co, (oh, ow), (h, wd)));
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_w = Tensor::zeros(w.shape());
    let mut grad_b = Tensor::zeros(&[co]);
    for (gb, gplane) in grad_b.data_mut().iter_mut().zip(g.data().chunks(oh * ow)) {
        *gb = gplane.iter().sum();
    }
    let planes = x.data().chunks(h * wd).zip(grad_x.data_mut().chunks_mut(h * wd));
    for ((xplane, gxplane), (wrow, gwrow)) in planes.zip(w.data().chunks(m_len).zip(grad_w.data_mut().chunks_mut(m_len))) {
        for (p, (&xv, gxv)) in xplane.iter().zip(gxplane.iter_mut()).enumerate() {
            let gcol = &grad_cols[p * m_len..][..m_len];
            *gxv = super::dot(wrow, gcol);
            if xv != 0.0 {
                axpy(xv, gcol, gwrow);
            }
        }
    }
    Ok(ConvGrads { grad_x, grad_w, grad_b })
}
