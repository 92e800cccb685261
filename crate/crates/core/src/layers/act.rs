use crate::tensor::Dims;
use crate::{Error, Result, Scalar, Tensor};

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the input is strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.dims() != grad_out.dims() {
        return Err(Error::Shape(format!(
            "relu grad_out must be {}, got {}",
            input.dims(),
            grad_out.dims()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.dims(), data)
}

/// Per-channel mean over all spatial positions; output is `(1, 1, C)`.
pub fn gap_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let d = input.dims();
    let mut sums = vec![T::zero(); d.c];
    for px in input.data().chunks_exact(d.c) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    let n = T::of((d.h * d.w) as f64);
    let data = sums.into_iter().map(|s| s / n).collect();
    Tensor::from_vec((1, 1, d.c), data).expect("gap output dims are valid")
}

pub fn gap_backward<T: Scalar>(input_dims: Dims, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.dims() != Dims::new(1, 1, input_dims.c) {
        return Err(Error::Shape(format!(
            "gap grad_out must be 1x1x{}, got {}",
            input_dims.c,
            grad_out.dims()
        )));
    }
    let n = T::of((input_dims.h * input_dims.w) as f64);
    let g = grad_out.data();
    Tensor::from_fn(input_dims, |_, _, k| g[k] / n)
}
