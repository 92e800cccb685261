use crate::layers::{
    conv_backward, conv_backward_im2col, conv_forward, conv_forward_im2col, gap_backward, gap_forward, pool_backward,
    pool_forward, relu_backward, relu_forward, PoolArgmax,
};
use crate::network::{LayerOp, NetworkSpec, ParamStore};
use crate::{Error, Result, Scalar, Tensor};

/// Which convolution kernel a pass uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvPath {
    /// Direct loops with the fixed accumulation order; bit-reproducible.
    #[default]
    Canonical,
    /// Gather + matrix product; agrees with `Canonical` to about 1e-9.
    Im2col,
}

/// Per-layer inputs and pooling winners retained for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T = f64> {
    path: ConvPath,
    inputs: Vec<Tensor<T>>,
    argmax: Vec<Option<PoolArgmax>>,
}

/// Which pool tap won each window and which ReLU inputs were positive.
/// Two forward passes with equal patterns differentiate through the same
/// piecewise-linear branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern(Vec<u64>);

impl<T: Scalar> ForwardCache<T> {
    pub fn layer_input(&self, layer: usize) -> Option<&Tensor<T>> {
        self.inputs.get(layer)
    }

    pub fn argmax(&self, layer: usize) -> Option<&PoolArgmax> {
        self.argmax.get(layer).and_then(Option::as_ref)
    }

    pub fn pattern(&self, net: &NetworkSpec) -> ActivationPattern {
        let mut out = Vec::new();
        for (idx, l) in net.layers.iter().enumerate() {
            match l.op {
                LayerOp::Pool(_) => {
                    if let Some(am) = self.argmax(idx) {
                        out.extend(am.coords.iter().map(|&(r, s)| ((r as u64) << 32) | s as u64));
                    }
                }
                LayerOp::Relu => {
                    if let Some(x) = self.inputs.get(idx) {
                        for chunk in x.data().chunks(64) {
                            let mut bits = 0u64;
                            for (b, &v) in chunk.iter().enumerate() {
                                if v > T::zero() {
                                    bits |= 1 << b;
                                }
                            }
                            out.push(bits);
                        }
                    }
                }
                _ => {}
            }
        }
        ActivationPattern(out)
    }
}

pub fn forward<T: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    forward_with(net, params, input, ConvPath::Canonical)
}

pub fn forward_with<T: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
    path: ConvPath,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    if input.dims() != net.input_dims {
        return Err(Error::Shape(format!(
            "network expects input {}, got {}",
            net.input_dims,
            input.dims()
        )));
    }
    check_params(net, params)?;

    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut argmax = Vec::with_capacity(net.layers.len());
    let mut cur = input.clone();
    for l in &net.layers {
        let wrap = |e: Error| match e {
            Error::Shape(m) => Error::Shape(format!("layer `{}`: {m}", l.name)),
            other => other,
        };
        let (next, am) = match &l.op {
            LayerOp::Conv(spec) => {
                let w = params.require(&l.weight_key())?;
                let b = if spec.has_bias { Some(params.require(&l.bias_key())?) } else { None };
                let y = match path {
                    ConvPath::Canonical => conv_forward(&cur, w, b, spec),
                    ConvPath::Im2col => conv_forward_im2col(&cur, w, b, spec),
                }
                .map_err(wrap)?;
                (y, None)
            }
            LayerOp::Pool(spec) => {
                let (y, am) = pool_forward(&cur, spec).map_err(wrap)?;
                (y, Some(am))
            }
            LayerOp::Relu => (relu_forward(&cur), None),
            LayerOp::Gap => (gap_forward(&cur), None),
        };
        inputs.push(std::mem::replace(&mut cur, next));
        argmax.push(am);
    }
    Ok((cur, ForwardCache { path, inputs, argmax }))
}

fn check_params<T: Scalar>(net: &NetworkSpec, params: &ParamStore<T>) -> Result<()> {
    for (k, d) in net.param_demands() {
        let t = params.require(&k)?;
        if t.dims() != d {
            return Err(Error::param(k, format!("expected shape {d}, found {}", t.dims())));
        }
    }
    Ok(())
}

/// Reverse pass. Returns gradients keyed like `params` and the gradient
/// with respect to the network input.
pub fn backward<T: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    cache: &ForwardCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(ParamStore<T>, Tensor<T>)> {
    if cache.inputs.len() != net.layers.len() {
        return Err(Error::Consistency(format!(
            "cache holds {} layers, network has {}",
            cache.inputs.len(),
            net.layers.len()
        )));
    }
    let shapes = net.infer_shapes()?;
    if cache.inputs.first().map(|t| t.dims()) != Some(net.input_dims) && !net.layers.is_empty() {
        return Err(Error::Consistency("cache was recorded for a different input size".into()));
    }
    for (idx, t) in cache.inputs.iter().enumerate().skip(1) {
        if t.dims() != shapes[idx - 1] {
            return Err(Error::Consistency(format!("cached input of layer {idx} has stale dims {}", t.dims())));
        }
    }
    let out_dims = shapes.last().copied().unwrap_or(net.input_dims);
    if grad_out.dims() != out_dims {
        return Err(Error::Shape(format!("grad_out must be {out_dims}, got {}", grad_out.dims())));
    }
    check_params(net, params)?;

    let mut grads = ParamStore::zeros_for(net)?;
    let mut g = grad_out.clone();
    for (idx, l) in net.layers.iter().enumerate().rev() {
        let x = &cache.inputs[idx];
        g = match &l.op {
            LayerOp::Conv(spec) => {
                let w = params.require(&l.weight_key())?;
                let cg = match cache.path {
                    ConvPath::Canonical => conv_backward(x, w, spec, &g)?,
                    ConvPath::Im2col => conv_backward_im2col(x, w, spec, &g)?,
                };
                grads.insert(l.weight_key(), cg.weights);
                if let Some(b) = cg.bias {
                    grads.insert(l.bias_key(), b);
                }
                cg.input
            }
            LayerOp::Pool(_) => {
                let am = cache.argmax[idx]
                    .as_ref()
                    .ok_or_else(|| Error::Consistency(format!("no argmax cached for pool `{}`", l.name)))?;
                pool_backward(am, x.dims(), &g)?
            }
            LayerOp::Relu => relu_backward(x, &g)?,
            LayerOp::Gap => gap_backward(x.dims(), &g)?,
        };
    }
    Ok((grads, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{ConvSpec, PoolSpec};
    use crate::network::{LayerSpec, NetworkSpec};
    use crate::rng::Rng;

    fn net() -> NetworkSpec {
        NetworkSpec::new(
            (12, 12, 2),
            vec![
                LayerSpec::conv("c1", ConvSpec::new(3, 3, 2, 3)),
                LayerSpec::relu("r1"),
                LayerSpec::pool("p1", PoolSpec::new(2, 2, 2)),
                LayerSpec::conv("c2", ConvSpec::new(2, 2, 3, 2).with_bias(false)),
                LayerSpec::pool("p2", PoolSpec::new(2, 2, 2)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_net_returns_input() {
        let net = NetworkSpec::new((4, 4, 1), vec![LayerSpec::conv("id", ConvSpec::new(1, 1, 1, 1).with_bias(false))])
            .unwrap();
        let mut p = ParamStore::new();
        p.insert("id.weight", Tensor::new((1, 1, 1), 1.0).unwrap());
        let x = Tensor::rand_uniform((4, 4, 1), &mut Rng::new(1), -1.0, 1.0).unwrap();
        let (y, _) = forward(&net, &p, &x).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn zero_weights_zero_output() {
        let n = net();
        let p = ParamStore::<f64>::zeros_for(&n).unwrap();
        let x = Tensor::rand_uniform((12, 12, 2), &mut Rng::new(1), -1.0, 1.0).unwrap();
        let (y, _) = forward(&n, &p, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let n = net();
        let mut rng = Rng::new(4);
        let p = ParamStore::<f64>::init(&n, &mut rng).unwrap();
        let x = Tensor::rand_uniform((12, 12, 2), &mut rng, -1.0, 1.0).unwrap();
        let (a, _) = forward(&n, &p, &x).unwrap();
        let (b, _) = forward(&n, &p, &x).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn missing_param_named() {
        let n = net();
        let mut p = ParamStore::<f64>::zeros_for(&n).unwrap();
        p.remove("c2.weight");
        let x = Tensor::zeros((12, 12, 2)).unwrap();
        match forward(&n, &p, &x) {
            Err(Error::Param { key, .. }) => assert_eq!(key, "c2.weight"),
            other => panic!("expected parameter error, got {other:?}"),
        }
        let mut p = ParamStore::<f64>::zeros_for(&n).unwrap();
        p.insert("c1.bias", Tensor::zeros((1, 1, 4)).unwrap());
        assert!(matches!(forward(&n, &p, &x), Err(Error::Param { .. })));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads_with_same_keys() {
        let n = net();
        let mut rng = Rng::new(2);
        let p = ParamStore::<f64>::init(&n, &mut rng).unwrap();
        let x = Tensor::rand_uniform((12, 12, 2), &mut rng, -1.0, 1.0).unwrap();
        let (y, cache) = forward(&n, &p, &x).unwrap();
        let (g, gx) = backward(&n, &p, &cache, &Tensor::zeros(y.dims()).unwrap()).unwrap();
        assert_eq!(g.keys().collect::<Vec<_>>(), p.keys().collect::<Vec<_>>());
        assert!(g.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_conv_matches_layer_backward() {
        let spec = ConvSpec::new(3, 3, 2, 2).with_est(2);
        let n = NetworkSpec::new((7, 7, 2), vec![LayerSpec::conv("c", spec)]).unwrap();
        let mut rng = Rng::new(8);
        let p = ParamStore::<f64>::init(&n, &mut rng).unwrap();
        let x = Tensor::rand_uniform((7, 7, 2), &mut rng, -1.0, 1.0).unwrap();
        let (y, cache) = forward(&n, &p, &x).unwrap();
        let go = Tensor::rand_uniform(y.dims(), &mut rng, -1.0, 1.0).unwrap();
        let (g, gx) = backward(&n, &p, &cache, &go).unwrap();
        let direct = conv_backward(&x, p.get("c.weight").unwrap(), &spec, &go).unwrap();
        assert!(g.get("c.weight").unwrap().bit_eq(&direct.weights));
        assert!(g.get("c.bias").unwrap().bit_eq(direct.bias.as_ref().unwrap()));
        assert!(gx.bit_eq(&direct.input));
    }

    #[test]
    fn stale_cache_rejected() {
        let n = net();
        let mut rng = Rng::new(2);
        let p = ParamStore::<f64>::init(&n, &mut rng).unwrap();
        let x = Tensor::rand_uniform((12, 12, 2), &mut rng, -1.0, 1.0).unwrap();
        let (y, cache) = forward(&n, &p, &x).unwrap();
        let other = n.with_input((14, 14, 2));
        assert!(matches!(backward(&other, &p, &cache, &y), Err(Error::Consistency(_))));
        let shorter = NetworkSpec::new((12, 12, 2), n.layers[..2].to_vec()).unwrap();
        assert!(matches!(backward(&shorter, &p, &cache, &y), Err(Error::Consistency(_))));
    }

    #[test]
    fn im2col_path_agrees() {
        let n = net();
        let mut rng = Rng::new(6);
        let p = ParamStore::<f64>::init(&n, &mut rng).unwrap();
        let x = Tensor::rand_uniform((12, 12, 2), &mut rng, -1.0, 1.0).unwrap();
        let (a, _) = forward(&n, &p, &x).unwrap();
        let (b, _) = forward_with(&n, &p, &x, ConvPath::Im2col).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-9);
    }
}
