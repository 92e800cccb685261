use crate::layers::{dilated_extent, output_len, tap_coord};
use crate::tensor::Dims;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub est: usize,
}

impl PoolSpec {
    /// No padding, `est = 1`.
    pub fn new(kernel_h: usize, kernel_w: usize, stride: usize) -> Self {
        PoolSpec { kernel_h, kernel_w, stride, pad: 0, est: 1 }
    }

    pub fn with_pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn with_est(mut self, est: usize) -> Self {
        self.est = est;
        self
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 || self.est == 0 {
            return Err(Error::Shape(format!("kernel, stride and est must be >= 1: {self:?}")));
        }
        if self.pad >= dilated_extent(self.kernel_h, self.est) || self.pad >= dilated_extent(self.kernel_w, self.est)
        {
            return Err(Error::Shape(format!("pool pad {} covers a whole window", self.pad)));
        }
        let h = output_len(input.h, self.kernel_h, self.stride, self.pad, self.est);
        let w = output_len(input.w, self.kernel_w, self.stride, self.pad, self.est);
        match (h, w) {
            (Some(h), Some(w)) => Ok(Dims::new(h, w, input.c)),
            _ => Err(Error::Shape(format!(
                "pool {}x{} (est {}, pad {}) leaves no output on {input}",
                self.kernel_h, self.kernel_w, self.est, self.pad
            ))),
        }
    }
}

/// Winning input coordinate `(row, col)` for every pooled output element,
/// stored in the output's row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolArgmax {
    pub input_dims: Dims,
    pub output_dims: Dims,
    pub coords: Vec<(usize, usize)>,
}

/// Max pooling over `est`-dilated windows.
///
/// Padding behaves as negative infinity. Ties go to the first tap in
/// row-major window order.
pub fn pool_forward<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, PoolArgmax)> {
    let in_dims = input.dims();
    let out_dims = spec.output_dims(in_dims)?;
    let x = input.data();
    let mut out = Tensor::zeros(out_dims)?;
    let mut coords = Vec::with_capacity(out_dims.len());
    let y = out.data_mut();

    for i in 0..out_dims.h {
        for j in 0..out_dims.w {
            for d in 0..out_dims.c {
                let mut best: Option<(T, usize, usize)> = None;
                for a in 0..spec.kernel_h {
                    let Some(r) = tap_coord(i, a, spec.stride, spec.pad, spec.est, in_dims.h) else {
                        continue;
                    };
                    for b in 0..spec.kernel_w {
                        let Some(s) = tap_coord(j, b, spec.stride, spec.pad, spec.est, in_dims.w) else {
                            continue;
                        };
                        let v = x[in_dims.index(r, s, d)];
                        if best.is_none_or(|(m, _, _)| v > m) {
                            best = Some((v, r, s));
                        }
                    }
                }
                let (v, r, s) = best.ok_or_else(|| {
                    Error::Shape(format!("pool window at ({i},{j}) has no tap inside {in_dims}"))
                })?;
                y[out_dims.index(i, j, d)] = v;
                coords.push((r, s));
            }
        }
    }
    Ok((out, PoolArgmax { input_dims: in_dims, output_dims: out_dims, coords }))
}

/// Routes each output gradient to its recorded winner, accumulating where
/// windows overlap.
pub fn pool_backward<T: Scalar>(argmax: &PoolArgmax, input_dims: Dims, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.dims() != argmax.output_dims {
        return Err(Error::Shape(format!(
            "pool grad_out must be {}, got {}",
            argmax.output_dims,
            grad_out.dims()
        )));
    }
    if input_dims != argmax.input_dims || argmax.coords.len() != argmax.output_dims.len() {
        return Err(Error::Consistency("pool argmax was recorded for different dims".into()));
    }
    let out_dims = argmax.output_dims;
    let mut gx = Tensor::zeros(input_dims)?;
    let g = grad_out.data();
    let gxd = gx.data_mut();
    for (n, &(r, s)) in argmax.coords.iter().enumerate() {
        if r >= input_dims.h || s >= input_dims.w {
            return Err(Error::Consistency(format!("argmax ({r},{s}) outside {input_dims}")));
        }
        let d = n % out_dims.c;
        gxd[input_dims.index(r, s, d)] += g[n];
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn grid(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn((h, w, 1), |i, j, _| f(i, j)).unwrap()
    }

    #[test]
    fn max_of_four() {
        let x = Tensor::from_vec((2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, am) = pool_forward(&x, &PoolSpec::new(2, 2, 2)).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(am.coords, vec![(1, 1)]);
    }

    #[test]
    fn constant_input_ties_pick_window_origin() {
        let x = Tensor::new((4, 4, 2), 0.5).unwrap();
        let spec = PoolSpec::new(2, 2, 1);
        let (y, am) = pool_forward(&x, &spec).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        let od = am.output_dims;
        for i in 0..od.h {
            for j in 0..od.w {
                for d in 0..od.c {
                    assert_eq!(am.coords[od.index(i, j, d)], (i, j));
                }
            }
        }
    }

    #[test]
    fn dilated_windows_on_4x4() {
        let x = grid(4, 4, |i, j| (i * 4 + j + 1) as f64);
        let spec = PoolSpec::new(2, 2, 1).with_est(2);
        let (y, _) = pool_forward(&x, &spec).unwrap();
        let brute = grid(2, 2, |i, j| {
            [(0, 0), (0, 2), (2, 0), (2, 2)].iter().map(|&(a, b)| x.get(i + a, j + b, 0)).fold(f64::MIN, f64::max)
        });
        assert_eq!(brute.data(), &[11.0, 12.0, 15.0, 16.0]);
        assert_eq!(y.data(), brute.data());
    }

    #[test]
    fn padding_never_wins() {
        let x = Tensor::new((3, 3, 1), -5.0).unwrap();
        let (y, am) = pool_forward(&x, &PoolSpec::new(2, 2, 2).with_pad(1)).unwrap();
        assert!(y.data().iter().all(|&v| v == -5.0));
        assert_eq!(am.coords[0], (0, 0));
    }

    #[test]
    fn est_one_matches_naive_max_pool() {
        let mut rng = Rng::new(5);
        let x = Tensor::<f64>::rand_uniform((9, 7, 3), &mut rng, -1.0, 1.0).unwrap();
        for (k, s) in [(2, 2), (3, 2), (2, 1), (3, 3)] {
            let (y, _) = pool_forward(&x, &PoolSpec::new(k, k, s)).unwrap();
            let oh = (9 - k) / s + 1;
            let ow = (7 - k) / s + 1;
            let naive = Tensor::from_fn((oh, ow, 3), |i, j, d| {
                let mut m = f64::NEG_INFINITY;
                for a in 0..k {
                    for b in 0..k {
                        let v = x.get(i * s + a, j * s + b, d);
                        if v > m {
                            m = v;
                        }
                    }
                }
                m
            })
            .unwrap();
            assert!(y.bit_eq(&naive));
        }
    }

    #[test]
    fn too_small_input_is_shape_error() {
        let x = Tensor::<f64>::zeros((3, 3, 1)).unwrap();
        assert!(matches!(pool_forward(&x, &PoolSpec::new(2, 2, 1).with_est(3)), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_zero_and_partition() {
        let mut rng = Rng::new(9);
        let x = Tensor::<f64>::rand_uniform((4, 4, 1), &mut rng, -1.0, 1.0).unwrap();
        let spec = PoolSpec::new(2, 2, 2);
        let (_, am) = pool_forward(&x, &spec).unwrap();
        let g0 = Tensor::<f64>::zeros(am.output_dims).unwrap();
        assert!(pool_backward(&am, x.dims(), &g0).unwrap().data().iter().all(|&v| v == 0.0));

        let g1 = Tensor::new(am.output_dims, 1.0).unwrap();
        let gx = pool_backward(&am, x.dims(), &g1).unwrap();
        for wi in 0..2 {
            for wj in 0..2 {
                let nz = (0..2)
                    .flat_map(|a| (0..2).map(move |b| (a, b)))
                    .filter(|&(a, b)| gx.get(2 * wi + a, 2 * wj + b, 0) != 0.0)
                    .count();
                assert_eq!(nz, 1);
            }
        }
    }

    #[test]
    fn overlapping_windows_accumulate() {
        // strictly decreasing: (0,0) is the largest element
        let x = grid(3, 3, |i, j| 100.0 - (i * 3 + j) as f64);
        let (_, am) = pool_forward(&x, &PoolSpec::new(2, 2, 1)).unwrap();
        assert_eq!(am.coords, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let g = Tensor::new(am.output_dims, 1.0).unwrap();
        let gx = pool_backward(&am, x.dims(), &g).unwrap();
        assert_eq!(gx.get(0, 0, 0), 1.0);

        let x = grid(3, 3, |i, j| (i * 3 + j) as f64);
        let (_, am) = pool_forward(&x, &PoolSpec::new(2, 2, 1)).unwrap();
        let gx = pool_backward(&am, x.dims(), &g).unwrap();
        assert_eq!(gx.get(2, 2, 0), 1.0);
        assert_eq!(gx.get(1, 1, 0), 1.0);
        assert_eq!(gx.data().iter().sum::<f64>(), 4.0);

        let x = grid(3, 3, |_, j| if j == 1 { 10.0 } else { 0.0 });
        let (_, am) = pool_forward(&x, &PoolSpec::new(2, 2, 1)).unwrap();
        let gx = pool_backward(&am, x.dims(), &g).unwrap();
        // (0,1) wins both top windows, (1,1) both bottom ones
        assert_eq!(gx.get(0, 1, 0), 2.0);
        assert_eq!(gx.get(1, 1, 0), 2.0);
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = Rng::new(21);
        let x = Tensor::<f64>::rand_uniform((7, 7, 2), &mut rng, -1.0, 1.0).unwrap();
        let spec = PoolSpec::new(2, 2, 1).with_est(2).with_pad(1);
        let r = Tensor::<f64>::rand_uniform(spec.output_dims(x.dims()).unwrap(), &mut rng, -1.0, 1.0).unwrap();
        let loss = |x: &Tensor<f64>| -> f64 {
            let (y, _) = pool_forward(x, &spec).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let (y, am) = pool_forward(&x, &spec).unwrap();
        assert_eq!(y.dims(), r.dims());
        let gx = pool_backward(&am, x.dims(), &r).unwrap();
        let eps = 1e-5;
        for k in 0..x.data().len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[k] += eps;
            xm.data_mut()[k] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            let a = gx.data()[k];
            let scale = a.abs().max(fd.abs());
            let err = if scale == 0.0 { 0.0 } else { (a - fd).abs() / scale };
            assert!(err <= 1e-6, "element {k}: analytic {a}, numeric {fd}");
        }
    }

    #[test]
    fn out_of_bounds_argmax_is_consistency_error() {
        let x = Tensor::<f64>::zeros((2, 2, 1)).unwrap();
        let (_, mut am) = pool_forward(&x, &PoolSpec::new(2, 2, 2)).unwrap();
        am.coords[0] = (5, 0);
        let g = Tensor::new((1, 1, 1), 1.0).unwrap();
        assert!(matches!(pool_backward(&am, x.dims(), &g), Err(Error::Consistency(_))));
    }
}
