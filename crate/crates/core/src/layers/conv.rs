use crate::layers::{output_len, tap_coord};
use crate::tensor::Dims;
use crate::{Error, Result, Scalar, Tensor};

/// Geometry of a convolution.
///
/// Weights are stored as a `(kernel_h, kernel_w, out_channels * in_channels)`
/// tensor holding `out_channels` kernels of shape `kernel_h x kernel_w x
/// in_channels` side by side: tap `(a, b)` of kernel `c` on input channel `d`
/// sits at channel index `c * in_channels + d`. The bias, when present, is a
/// `(1, 1, out_channels)` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub pad: usize,
    pub est: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Stride 1, no padding, `est = 1`, with bias.
    pub fn new(kernel_h: usize, kernel_w: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec { kernel_h, kernel_w, in_channels, out_channels, stride: 1, pad: 0, est: 1, has_bias: true }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn with_est(mut self, est: usize) -> Self {
        self.est = est;
        self
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn weight_dims(&self) -> Dims {
        Dims::new(self.kernel_h, self.kernel_w, self.out_channels * self.in_channels)
    }

    pub fn bias_dims(&self) -> Dims {
        Dims::new(1, 1, self.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 || self.est == 0 {
            return Err(Error::Shape(format!("kernel, stride and est must be >= 1: {self:?}")));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Shape(format!("channel counts must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.c
            )));
        }
        let h = output_len(input.h, self.kernel_h, self.stride, self.pad, self.est);
        let w = output_len(input.w, self.kernel_w, self.stride, self.pad, self.est);
        match (h, w) {
            (Some(h), Some(w)) => Ok(Dims::new(h, w, self.out_channels)),
            _ => Err(Error::Shape(format!(
                "conv {}x{} (est {}, pad {}) leaves no output on {input}",
                self.kernel_h, self.kernel_w, self.est, self.pad
            ))),
        }
    }

    fn check_params<T: Scalar>(&self, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<()> {
        if weights.dims() != self.weight_dims() {
            return Err(Error::Shape(format!(
                "conv weights must be {}, got {}",
                self.weight_dims(),
                weights.dims()
            )));
        }
        match (self.has_bias, bias) {
            (true, Some(b)) if b.dims() != self.bias_dims() => Err(Error::Shape(format!(
                "conv bias must be {}, got {}",
                self.bias_dims(),
                b.dims()
            ))),
            (true, None) => Err(Error::Shape("conv declares a bias but none was given".into())),
            (false, Some(_)) => Err(Error::Shape("conv has no bias but one was given".into())),
            _ => Ok(()),
        }
    }
}

/// Convolution forward pass.
///
/// Each output element is accumulated in the fixed order kernel row, kernel
/// column, input channel, and the bias is added last. Taps that land in the
/// zero padding are skipped. Two calls that visit the same input values in
/// the same order therefore produce bit-identical results, which is what
/// makes the dense and the original network agree exactly.
pub fn conv_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_dims = spec.output_dims(input.dims())?;
    spec.check_params(weights, bias)?;

    let in_dims = input.dims();
    let x = input.data();
    let w = weights.data();
    let depth = spec.in_channels;
    let wstride = spec.out_channels * depth;
    let mut out = Tensor::zeros(out_dims)?;
    let y = out.data_mut();

    for i in 0..out_dims.h {
        for j in 0..out_dims.w {
            for c in 0..out_dims.c {
                let mut acc = T::zero();
                for a in 0..spec.kernel_h {
                    let Some(r) = tap_coord(i, a, spec.stride, spec.pad, spec.est, in_dims.h) else {
                        continue;
                    };
                    for b in 0..spec.kernel_w {
                        let Some(s) = tap_coord(j, b, spec.stride, spec.pad, spec.est, in_dims.w) else {
                            continue;
                        };
                        let xin = &x[in_dims.index(r, s, 0)..][..depth];
                        let ker = &w[(a * spec.kernel_w + b) * wstride + c * depth..][..depth];
                        for d in 0..depth {
                            acc += ker[d] * xin[d];
                        }
                    }
                }
                if let Some(bias) = bias {
                    acc += bias.data()[c];
                }
                y[out_dims.index(i, j, c)] = acc;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T = f64> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Reverse-mode gradients of [`conv_forward`].
pub fn conv_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let out_dims = spec.output_dims(input.dims())?;
    if weights.dims() != spec.weight_dims() {
        return Err(Error::Shape(format!(
            "conv weights must be {}, got {}",
            spec.weight_dims(),
            weights.dims()
        )));
    }
    if grad_out.dims() != out_dims {
        return Err(Error::Shape(format!(
            "conv grad_out must be {out_dims}, got {}",
            grad_out.dims()
        )));
    }

    let in_dims = input.dims();
    let x = input.data();
    let w = weights.data();
    let g = grad_out.data();
    let depth = spec.in_channels;
    let wstride = spec.out_channels * depth;
    let mut gx = Tensor::zeros(in_dims)?;
    let mut gw = Tensor::zeros(spec.weight_dims())?;
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        for i in 0..out_dims.h {
            for j in 0..out_dims.w {
                for c in 0..out_dims.c {
                    let go = g[out_dims.index(i, j, c)];
                    if go == T::zero() {
                        continue;
                    }
                    for a in 0..spec.kernel_h {
                        let Some(r) = tap_coord(i, a, spec.stride, spec.pad, spec.est, in_dims.h) else {
                            continue;
                        };
                        for b in 0..spec.kernel_w {
                            let Some(s) = tap_coord(j, b, spec.stride, spec.pad, spec.est, in_dims.w) else {
                                continue;
                            };
                            let xi = in_dims.index(r, s, 0);
                            let wi = (a * spec.kernel_w + b) * wstride + c * depth;
                            for d in 0..depth {
                                gwd[wi + d] += go * x[xi + d];
                                gxd[xi + d] += go * w[wi + d];
                            }
                        }
                    }
                }
            }
        }
    }

    let bias = if spec.has_bias {
        let mut gb = Tensor::zeros(spec.bias_dims())?;
        for i in 0..out_dims.h {
            for j in 0..out_dims.w {
                for c in 0..out_dims.c {
                    gb.data_mut()[c] += g[out_dims.index(i, j, c)];
                }
            }
        }
        Some(gb)
    } else {
        None
    };

    Ok(ConvGrads { input: gx, weights: gw, bias })
}
