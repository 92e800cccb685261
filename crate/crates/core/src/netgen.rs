//! Random small networks for property tests.

use crate::densify::densify;
use crate::layers::{ConvSpec, PoolSpec};
use crate::network::{LayerOp, LayerSpec, NetworkSpec};
use crate::{Dims, Error, Result, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct NetGen {
    pub input: Dims,
    /// Inclusive range of convolution counts.
    pub convs: (usize, usize),
    /// Inclusive range of stride-2 pool counts; never more than the convolutions.
    pub pools: (usize, usize),
    pub max_kernel: usize,
    pub max_channels: usize,
    pub relu_prob: f64,
    /// Padding is drawn below half the kernel extent when set, otherwise 0.
    pub padded: bool,
    /// Output channels of the last convolution; random when `None`.
    pub classes: Option<usize>,
}

impl Default for NetGen {
    fn default() -> Self {
        NetGen {
            input: Dims::new(24, 24, 1),
            convs: (2, 4),
            pools: (1, 2),
            max_kernel: 3,
            max_channels: 4,
            relu_prob: 0.5,
            padded: false,
            classes: None,
        }
    }
}

const ATTEMPTS: usize = 1000;

impl NetGen {
    /// A network that is valid on `input` and stays valid when densified
    /// from its first pool.
    pub fn sample(&self, rng: &mut Rng) -> Result<NetworkSpec> {
        for _ in 0..ATTEMPTS {
            let net = self.draw(rng)?;
            if net.infer_shapes().is_err() {
                continue;
            }
            let first = net.layers.iter().position(|l| matches!(l.op, LayerOp::Pool(_)));
            match first {
                Some(idx) if densify(&net, idx)?.0.infer_shapes().is_err() => continue,
                _ => return Ok(net),
            }
        }
        Err(Error::Precondition(format!("no valid network found in {ATTEMPTS} draws for input {}", self.input)))
    }

    fn draw(&self, rng: &mut Rng) -> Result<NetworkSpec> {
        let n_conv = rng.range_inclusive(self.convs.0, self.convs.1);
        let n_pool = rng.range_inclusive(self.pools.0, self.pools.1.min(n_conv));
        let mut slots: Vec<bool> = (0..n_conv).map(|i| i < n_pool).collect();
        for i in (1..slots.len()).rev() {
            slots.swap(i, rng.range_inclusive(0, i));
        }
        let mut layers = Vec::new();
        let mut channels = self.input.c;
        for (i, &pool_after) in slots.iter().enumerate() {
            let kh = rng.range_inclusive(1, self.max_kernel);
            let kw = rng.range_inclusive(1, self.max_kernel);
            let out = match self.classes {
                Some(k) if i + 1 == n_conv => k,
                _ => rng.range_inclusive(1, self.max_channels),
            };
            let pad = if self.padded { rng.range_inclusive(0, kh.min(kw) / 2) } else { 0 };
            layers.push(LayerSpec::conv(format!("conv{i}"), ConvSpec::new(kh, kw, channels, out).with_pad(pad)));
            channels = out;
            if rng.next_unit() < self.relu_prob {
                layers.push(LayerSpec::relu(format!("relu{i}")));
            }
            if pool_after {
                let k = rng.range_inclusive(2, 3);
                let pad = if self.padded { rng.range_inclusive(0, (k - 1) / 2) } else { 0 };
                layers.push(LayerSpec::pool(format!("pool{i}"), PoolSpec::new(k, k, 2).with_pad(pad)));
            }
        }
        NetworkSpec::new(self.input, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn respects_ranges() {
        let g = NetGen::default();
        let mut rng = Rng::new(0);
        for _ in 0..50 {
            let net = g.sample(&mut rng).unwrap();
            let convs = net.layers.iter().filter(|l| matches!(l.op, LayerOp::Conv(_))).count();
            let pools = net.pool_indices().len();
            assert!((2..=4).contains(&convs) && (1..=2).contains(&pools));
            assert!(net.infer_shapes().is_ok());
        }
    }

    #[test]
    fn deterministic_and_class_head() {
        let g = NetGen { classes: Some(3), ..Default::default() };
        let a = g.sample(&mut Rng::new(5)).unwrap();
        assert_eq!(a, g.sample(&mut Rng::new(5)).unwrap());
        assert_eq!(a.output_dims().unwrap().c, 3);
    }

    #[test]
    fn impossible_request() {
        let g = NetGen { input: Dims::new(2, 2, 1), convs: (4, 4), pools: (4, 4), ..Default::default() };
        assert!(matches!(g.sample(&mut Rng::new(0)), Err(Error::Precondition(_))));
    }
}
