//! Sequential networks: layer lists, parameters, forward/backward passes,
//! loss heads and the SGD update.

mod graph;
mod loss;
mod params;

use std::collections::{BTreeMap, HashSet};

pub use graph::{backward, forward, forward_with, ActivationPattern, ConvPath, ForwardCache};
pub use loss::{loss_forward, LossKind};
pub use params::{sgd_step, ParamStore, PARAMS_MAGIC, PARAMS_VERSION};

use crate::layers::{ConvSpec, PoolSpec};
use crate::tensor::Dims;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerOp {
    Conv(ConvSpec),
    Pool(PoolSpec),
    Relu,
    Gap,
}

impl LayerOp {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerOp::Conv(_) => "conv",
            LayerOp::Pool(_) => "pool",
            LayerOp::Relu => "relu",
            LayerOp::Gap => "gap",
        }
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        match self {
            LayerOp::Conv(c) => c.output_dims(input),
            LayerOp::Pool(p) => p.output_dims(input),
            LayerOp::Relu => Ok(input),
            LayerOp::Gap => Ok(Dims::new(1, 1, input.c)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub name: String,
    pub op: LayerOp,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, spec: ConvSpec) -> Self {
        LayerSpec { name: name.into(), op: LayerOp::Conv(spec) }
    }

    pub fn pool(name: impl Into<String>, spec: PoolSpec) -> Self {
        LayerSpec { name: name.into(), op: LayerOp::Pool(spec) }
    }

    pub fn relu(name: impl Into<String>) -> Self {
        LayerSpec { name: name.into(), op: LayerOp::Relu }
    }

    pub fn gap(name: impl Into<String>) -> Self {
        LayerSpec { name: name.into(), op: LayerOp::Gap }
    }

    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    pub input_dims: Dims,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Checks name uniqueness. Shape consistency is checked by
    /// [`NetworkSpec::infer_shapes`].
    pub fn new(input_dims: impl Into<Dims>, layers: Vec<LayerSpec>) -> Result<Self> {
        let input_dims = input_dims.into();
        if input_dims.is_empty() {
            return Err(Error::Dimension(format!("network input must be non-empty, got {input_dims}")));
        }
        let mut seen = HashSet::new();
        for l in &layers {
            if l.name.is_empty() || !seen.insert(l.name.as_str()) {
                return Err(Error::Shape(format!("layer name `{}` is empty or repeated", l.name)));
            }
        }
        Ok(NetworkSpec { input_dims, layers })
    }

    /// Output dims of every layer, in order.
    pub fn infer_shapes(&self) -> Result<Vec<Dims>> {
        let mut cur = self.input_dims;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            cur = l.op.output_dims(cur).map_err(|e| Error::Shape(format!("layer `{}`: {e}", l.name)))?;
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn output_dims(&self) -> Result<Dims> {
        Ok(self.infer_shapes()?.last().copied().unwrap_or(self.input_dims))
    }

    /// The same layers on a different input size.
    pub fn with_input(&self, input_dims: impl Into<Dims>) -> Self {
        NetworkSpec { input_dims: input_dims.into(), layers: self.layers.clone() }
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn pool_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.op, LayerOp::Pool(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Parameter keys and shapes this network needs. Depends only on kernel
    /// sizes and channel counts, never on stride, padding or `est`.
    pub fn param_demands(&self) -> BTreeMap<String, Dims> {
        let mut out = BTreeMap::new();
        for l in &self.layers {
            if let LayerOp::Conv(c) = &l.op {
                out.insert(l.weight_key(), c.weight_dims());
                if c.has_bias {
                    out.insert(l.bias_key(), c.bias_dims());
                }
            }
        }
        out
    }
}
