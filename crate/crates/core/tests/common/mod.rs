#![allow(dead_code)]

use econv::layers::{ConvSpec, PoolSpec};
use econv::{LabelMap, LayerSpec, NetworkSpec, ParamStore, Rng, Tensor};

/// He initialization with every entry, biases included, shifted by up to 0.1.
pub fn random_params(net: &NetworkSpec, rng: &mut Rng) -> ParamStore<f64> {
    let mut p = ParamStore::init(net, rng).unwrap();
    for (_, t) in p.iter_mut() {
        for v in t.data_mut() {
            *v += rng.uniform(-0.1, 0.1);
        }
    }
    p
}

pub fn random_input(net: &NetworkSpec, rng: &mut Rng) -> Tensor<f64> {
    Tensor::rand_uniform(net.input_dims, rng, -1.0, 1.0).unwrap()
}

pub fn random_labels(net: &NetworkSpec, classes: usize, rng: &mut Rng) -> LabelMap {
    let o = net.output_dims().unwrap();
    let data = (0..o.h * o.w).map(|_| rng.range_inclusive(0, classes - 1) as i32).collect();
    LabelMap::from_vec(o.h, o.w, data).unwrap()
}

/// conv 3x3 -> pool 2x2/2 -> conv 3x3 -> pool 2x2/2 -> conv 3x3, no padding.
pub fn five_layer(input: usize, channels: usize) -> NetworkSpec {
    NetworkSpec::new(
        (input, input, 1),
        vec![
            LayerSpec::conv("conv1", ConvSpec::new(3, 3, 1, channels)),
            LayerSpec::pool("pool2", PoolSpec::new(2, 2, 2)),
            LayerSpec::conv("conv3", ConvSpec::new(3, 3, channels, channels)),
            LayerSpec::pool("pool4", PoolSpec::new(2, 2, 2)),
            LayerSpec::conv("conv5", ConvSpec::new(3, 3, channels, channels)),
        ],
    )
    .unwrap()
}

/// The thirteen 3x3 pad-1 convolutions and five 2x2/2 pools of VGG-16.
pub fn vgg16(input: usize) -> NetworkSpec {
    let blocks: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut layers = Vec::new();
    let mut c = 3;
    for (b, widths) in blocks.iter().enumerate() {
        for (i, &w) in widths.iter().enumerate() {
            layers.push(LayerSpec::conv(format!("conv{}_{}", b + 1, i + 1), ConvSpec::new(3, 3, c, w).with_pad(1)));
            layers.push(LayerSpec::relu(format!("relu{}_{}", b + 1, i + 1)));
            c = w;
        }
        layers.push(LayerSpec::pool(format!("pool{}", b + 1), PoolSpec::new(2, 2, 2)));
    }
    NetworkSpec::new((input, input, 3), layers).unwrap()
}
