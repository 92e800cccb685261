//! The dense-equivalent rewrite.
//!
//! Starting at a chosen pooling layer, every pooling layer has its stride set
//! to 1. The equivalent stride starts at 1 and is multiplied by a pool's
//! original stride once that pool has been converted; every later
//! convolution and pooling layer takes the equivalent stride in force at its
//! position as its `est`, and has its padding scaled by the same factor. The
//! parameters are untouched, so one [`ParamStore`] serves both networks, and
//! the dense output sampled every `grid_stride` positions reproduces the
//! original output.

use crate::network::{LayerOp, NetworkSpec, ParamStore};
use crate::tensor::Dims;
use crate::labels::{LabelMap, IGNORE};
use crate::{Error, Result, Scalar};

/// New geometry of a convolution or pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerAssignment {
    pub stride: usize,
    pub est: usize,
    pub pad: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DensifyPlan {
    pub from_pool: usize,
    /// Geometry after the rewrite; `None` for ReLU and GAP layers.
    pub assignments: Vec<Option<LayerAssignment>>,
    /// Equivalent stride in force at each layer boundary: entry `k` applies
    /// to the input of layer `k`, the last entry to the network output.
    pub accumulated_est: Vec<usize>,
    /// Indices of the pools whose stride was set to 1, with their original strides.
    pub converted: Vec<(usize, usize)>,
}

impl DensifyPlan {
    /// Spacing of the original output positions inside the dense output.
    pub fn grid_stride(&self) -> usize {
        *self.accumulated_est.last().unwrap_or(&1)
    }
}

/// Rewrites `net` from pooling layer `from_pool` onwards.
pub fn densify(net: &NetworkSpec, from_pool: usize) -> Result<(NetworkSpec, DensifyPlan)> {
    match net.layers.get(from_pool).map(|l| &l.op) {
        Some(LayerOp::Pool(p)) if p.stride > 1 => {}
        Some(LayerOp::Pool(_)) => {
            return Err(Error::Plan(format!("layer {from_pool} already has stride 1")));
        }
        Some(other) => {
            return Err(Error::Plan(format!("layer {from_pool} is a {} layer, not a pool", other.kind())));
        }
        None => return Err(Error::Plan(format!("layer index {from_pool} out of range"))),
    }

    let mut acc = 1usize;
    let mut accumulated = Vec::with_capacity(net.layers.len() + 1);
    let mut assignments = Vec::with_capacity(net.layers.len());
    let mut converted = Vec::new();
    let mut layers = net.layers.clone();
    for (idx, layer) in layers.iter_mut().enumerate() {
        accumulated.push(acc);
        let active = idx >= from_pool;
        let assignment = match &mut layer.op {
            LayerOp::Conv(c) => {
                if active {
                    c.est *= acc;
                    c.pad *= acc;
                }
                Some(LayerAssignment { stride: c.stride, est: c.est, pad: c.pad })
            }
            LayerOp::Pool(p) => {
                if active {
                    p.est *= acc;
                    p.pad *= acc;
                    if p.stride > 1 {
                        converted.push((idx, p.stride));
                        acc *= p.stride;
                        p.stride = 1;
                    }
                }
                Some(LayerAssignment { stride: p.stride, est: p.est, pad: p.pad })
            }
            LayerOp::Relu | LayerOp::Gap => None,
        };
        assignments.push(assignment);
    }
    accumulated.push(acc);

    let dense = NetworkSpec { input_dims: net.input_dims, layers };
    Ok((dense, DensifyPlan { from_pool, assignments, accumulated_est: accumulated, converted }))
}

/// [`densify`] addressed by layer name.
pub fn densify_named(net: &NetworkSpec, from_pool: &str) -> Result<(NetworkSpec, DensifyPlan)> {
    let idx = net
        .layer_index(from_pool)
        .ok_or_else(|| Error::Plan(format!("no layer named `{from_pool}`")))?;
    densify(net, idx)
}

/// Recovers the plan that turns `original` into `dense`, or errors if
/// `dense` is not a densification of `original`.
pub fn recover_plan(original: &NetworkSpec, dense: &NetworkSpec) -> Result<DensifyPlan> {
    if original.input_dims != dense.input_dims || original.layers.len() != dense.layers.len() {
        return Err(Error::Plan("networks differ in input or depth".into()));
    }
    if original == dense {
        let n = original.layers.len();
        return Ok(DensifyPlan {
            from_pool: n,
            assignments: original
                .layers
                .iter()
                .map(|l| match l.op {
                    LayerOp::Conv(c) => Some(LayerAssignment { stride: c.stride, est: c.est, pad: c.pad }),
                    LayerOp::Pool(p) => Some(LayerAssignment { stride: p.stride, est: p.est, pad: p.pad }),
                    _ => None,
                })
                .collect(),
            accumulated_est: vec![1; n + 1],
            converted: Vec::new(),
        });
    }
    let from_pool = original
        .layers
        .iter()
        .zip(&dense.layers)
        .position(|(a, b)| a != b)
        .expect("networks differ somewhere");
    let (expected, plan) = densify(original, from_pool)
        .map_err(|e| Error::Plan(format!("dense network is not derived from the original: {e}")))?;
    if &expected != dense {
        return Err(Error::Plan("dense network is not the densification of the original".into()));
    }
    Ok(plan)
}

/// Receptive-field geometry of one layer output along both axes, in input
/// pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RFReport {
    /// Field extent `(rows, cols)`.
    pub size: (usize, usize),
    /// Distance between the fields of adjacent outputs.
    pub step: (usize, usize),
    /// Top-left pixel of output `(0, 0)`'s field; negative when it starts in padding.
    pub offset: (i64, i64),
}

#[derive(Clone, Copy)]
struct Axis {
    size: usize,
    step: usize,
    offset: i64,
}

impl Axis {
    fn apply(self, k: usize, stride: usize, pad: usize, est: usize) -> Self {
        Axis {
            size: self.size + (k - 1) * est * self.step,
            step: self.step * stride,
            offset: self.offset - (pad * self.step) as i64,
        }
    }
}

/// Receptive fields of every layer output.
pub fn receptive_fields(net: &NetworkSpec) -> Result<Vec<RFReport>> {
    let mut rows = Axis { size: 1, step: 1, offset: 0 };
    let mut cols = rows;
    let mut dims = net.input_dims;
    let mut out = Vec::with_capacity(net.layers.len());
    for l in &net.layers {
        match &l.op {
            LayerOp::Conv(c) => {
                rows = rows.apply(c.kernel_h, c.stride, c.pad, c.est);
                cols = cols.apply(c.kernel_w, c.stride, c.pad, c.est);
            }
            LayerOp::Pool(p) => {
                rows = rows.apply(p.kernel_h, p.stride, p.pad, p.est);
                cols = cols.apply(p.kernel_w, p.stride, p.pad, p.est);
            }
            LayerOp::Relu => {}
            LayerOp::Gap => {
                rows = rows.apply(dims.h, 1, 0, 1);
                cols = cols.apply(dims.w, 1, 0, 1);
            }
        }
        dims = l.op.output_dims(dims).map_err(|e| Error::Shape(format!("layer `{}`: {e}", l.name)))?;
        out.push(RFReport {
            size: (rows.size, cols.size),
            step: (rows.step, cols.step),
            offset: (rows.offset, cols.offset),
        });
    }
    Ok(out)
}

pub fn receptive_field(net: &NetworkSpec, layer: usize) -> Result<RFReport> {
    if layer >= net.layers.len() {
        return Err(Error::Precondition(format!(
            "layer {layer} out of range for a {}-layer network",
            net.layers.len()
        )));
    }
    let mut prefix = net.clone();
    prefix.layers.truncate(layer + 1);
    Ok(receptive_fields(&prefix)?[layer])
}

/// Number of spatial output positions.
pub fn output_positions(net: &NetworkSpec) -> Result<usize> {
    let d = net.output_dims()?;
    Ok(d.h * d.w)
}

/// Copies original parameters into the dense network.
pub fn init_dense_params<T: Scalar>(
    original: &NetworkSpec,
    dense: &NetworkSpec,
    params: &ParamStore<T>,
) -> Result<ParamStore<T>> {
    params.check_against(original)?;
    params.check_against(dense)?;
    Ok(params.clone())
}

/// Dense network's parameters, original network's architecture: copies
/// parameters learned in the dense network back into `original`.
pub fn dpoa_transfer<T: Scalar>(dense_params: &ParamStore<T>, original: &NetworkSpec) -> Result<ParamStore<T>> {
    dense_params.check_against(original)?;
    Ok(dense_params.clone())
}

/// Input pixel that labels each output position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub output: Dims,
    pub input: Dims,
    /// `(row, col)` per output position in row-major order; `None` when the
    /// receptive field leaves the image.
    pub pixels: Vec<Option<(usize, usize)>>,
}

impl Alignment {
    pub fn pixel(&self, i: usize, j: usize) -> Option<(usize, usize)> {
        self.pixels[i * self.output.w + j]
    }

    /// Output-resolution labels read from a full-resolution label map.
    pub fn labels_for(&self, full: &LabelMap) -> Result<LabelMap> {
        if full.h != self.input.h || full.w != self.input.w {
            return Err(Error::Shape(format!(
                "labels are {}x{}, alignment expects {}x{}",
                full.h, full.w, self.input.h, self.input.w
            )));
        }
        let data = self.pixels.iter().map(|p| p.map_or(IGNORE, |(r, c)| full.get(r, c))).collect();
        LabelMap::from_vec(self.output.h, self.output.w, data)
    }
}

/// Maps each output position to the center pixel of its receptive field
/// (`offset + step * position + floor((size - 1) / 2)` per axis).
pub fn label_alignment(rf: &RFReport, output: Dims, input: Dims) -> Alignment {
    let axis = |pos: usize, size: usize, step: usize, offset: i64, len: usize| -> Option<usize> {
        let start = offset + (step * pos) as i64;
        let end = start + size as i64 - 1;
        (start >= 0 && end < len as i64).then(|| (start + (size as i64 - 1) / 2) as usize)
    };
    let mut pixels = Vec::with_capacity(output.h * output.w);
    for i in 0..output.h {
        for j in 0..output.w {
            let r = axis(i, rf.size.0, rf.step.0, rf.offset.0, input.h);
            let c = axis(j, rf.size.1, rf.step.1, rf.offset.1, input.w);
            pixels.push(r.zip(c));
        }
    }
    Alignment { output, input, pixels }
}

/// Alignment of `net`'s final output.
pub fn alignment_for(net: &NetworkSpec) -> Result<Alignment> {
    let out = net.output_dims()?;
    let rf = receptive_fields(net)?
        .last()
        .copied()
        .unwrap_or(RFReport { size: (1, 1), step: (1, 1), offset: (0, 0) });
    Ok(label_alignment(&rf, out, net.input_dims))
}
