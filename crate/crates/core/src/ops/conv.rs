//! 2-D convolution (cross-correlation, no kernel flip) with zero padding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::tensor::{axpy, dot};
use crate::{Scalar, Tensor};

use super::init_bound;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `out × in × k × k`
    pub weights: Tensor<T>,
    /// `out`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let &[out, _, kh, kw] = weights.shape() else {
            return Err(Error::InvalidShape {
                op: "ConvParams::new",
                msg: format!("weights must be out×in×k×k, got {:?}", weights.shape()),
            });
        };
        if kh != kw {
            return Err(Error::InvalidShape {
                op: "ConvParams::new",
                msg: format!("kernel must be square, got {kh}×{kw}"),
            });
        }
        bias.expect_shape("ConvParams::new", &[out])?;
        if stride == 0 {
            return Err(Error::Invalid("convolution stride must be positive".into()));
        }
        Ok(ConvParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    /// Uniform initialization in `±sqrt(1 / fan_in)`, stride 1, shape-preserving padding.
    pub fn init<R: Rng + ?Sized>(out: usize, inp: usize, kernel: usize, rng: &mut R) -> Self {
        let bound = init_bound(inp * kernel * kernel);
        ConvParams {
            weights: Tensor::uniform(&[out, inp, kernel, kernel], -bound, bound, rng),
            bias: Tensor::uniform(&[out], -bound, bound, rng),
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn zeros(out: usize, inp: usize, kernel: usize) -> Self {
        ConvParams {
            weights: Tensor::zeros(&[out, inp, kernel, kernel]),
            bias: Tensor::zeros(&[out]),
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        let &[c, h, w] = input else {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("expected a C×H×W input, got {input:?}"),
            });
        };
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: self.weights.shape().to_vec(),
                got: input.to_vec(),
            });
        }
        let oh = out_extent(h, self.kernel(), self.stride, self.padding)?;
        let ow = out_extent(w, self.kernel(), self.stride, self.padding)?;
        Ok([self.out_channels(), oh, ow])
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(input, self)
    }

    /// Backward pass that adds the parameter gradients into `grads` and
    /// returns the input gradient.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut ConvParams<T>,
    ) -> Result<Tensor<T>> {
        let mut grad_input = Tensor::zeros(input.shape());
        backward_into(
            input,
            self,
            grad_out,
            &mut grad_input,
            &mut grads.weights,
            &mut grads.bias,
        )?;
        Ok(grad_input)
    }
}

impl<T: Scalar> Parameters<T> for ConvParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weights);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weights);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::InvalidShape {
            op: "conv2d",
            msg: format!("padded extent {padded} is smaller than the kernel {kernel}"),
        });
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::InvalidShape {
            op: "conv2d",
            msg: format!(
                "extent {input} with padding {padding} is not covered exactly by kernel {kernel} at stride {stride}"
            ),
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output positions `o` in `0..out` with `0 <= o*stride + k - pad < len`.
#[inline]
fn valid_range(out: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let offset = k as isize - pad as isize;
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let [oc_n, oh, ow] = params.output_shape(input.shape())?;
    let (ic_n, h, w) = input.dims3()?;
    let k = params.kernel();
    let (s, p) = (params.stride, params.padding);
    let weights = params.weights.data();
    let x = input.data();

    let mut out = vec![T::zero(); oc_n * oh * ow];
    for (oc, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        plane.fill(params.bias.data()[oc]);
        for ic in 0..ic_n {
            let in_plane = &x[ic * h * w..(ic + 1) * h * w];
            for kh in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, kh, s, p);
                for kw in 0..k {
                    let wv = weights[((oc * ic_n + ic) * k + kh) * k + kw];
                    let (ox_lo, ox_hi) = valid_range(ow, w, kw, s, p);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + kh - p;
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = ox_lo + kw - p;
                            axpy(
                                wv,
                                &in_row[ix0..ix0 + (ox_hi - ox_lo)],
                                &mut out_row[ox_lo..ox_hi],
                            );
                        } else {
                            for ox in ox_lo..ox_hi {
                                out_row[ox] += wv * in_row[ox * s + kw - p];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oc_n, oh, ow], out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weights = Tensor::zeros(params.weights.shape());
    let mut grad_bias = Tensor::zeros(params.bias.shape());
    backward_into(
        input,
        params,
        grad_out,
        &mut grad_input,
        &mut grad_weights,
        &mut grad_bias,
    )?;
    Ok(ConvGrads {
        grad_input,
        grad_weights,
        grad_bias,
    })
}

fn backward_into<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
    grad_input: &mut Tensor<T>,
    grad_weights: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<()> {
    let out_shape = params.output_shape(input.shape())?;
    grad_out.expect_shape("conv2d_backward", &out_shape)?;
    let [_, oh, ow] = out_shape;
    let (ic_n, h, w) = input.dims3()?;
    let k = params.kernel();
    let (s, p) = (params.stride, params.padding);
    let weights = params.weights.data();
    let x = input.data();
    let gx = grad_input.data_mut();
    let gw = grad_weights.data_mut();
    let gb = grad_bias.data_mut();

    for (oc, g_plane) in grad_out.data().chunks_exact(oh * ow).enumerate() {
        gb[oc] += g_plane.iter().copied().sum::<T>();
        for ic in 0..ic_n {
            let in_plane = &x[ic * h * w..(ic + 1) * h * w];
            let gx_plane = &mut gx[ic * h * w..(ic + 1) * h * w];
            for kh in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, kh, s, p);
                for kw in 0..k {
                    let widx = ((oc * ic_n + ic) * k + kh) * k + kw;
                    let wv = weights[widx];
                    let (ox_lo, ox_hi) = valid_range(ow, w, kw, s, p);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + kh - p;
                        let g_row = &g_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                        if s == 1 {
                            let ix0 = iy * w + ox_lo + kw - p;
                            let ix1 = ix0 + (ox_hi - ox_lo);
                            acc += dot(g_row, &in_plane[ix0..ix1]);
                            axpy(wv, g_row, &mut gx_plane[ix0..ix1]);
                        } else {
                            for (j, &g) in g_row.iter().enumerate() {
                                let ix = iy * w + (ox_lo + j) * s + kw - p;
                                acc += g * in_plane[ix];
                                gx_plane[ix] += wv * g;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok(())
}
