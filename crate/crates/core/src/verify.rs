//! Independent checks of the dense rewrite: stride-grid equivalence, the
//! fragments forward pass, and finite-difference gradients.

use std::fmt;

use rand::seq::index::sample;

use crate::densify::{densify, receptive_fields, recover_plan, DensifyPlan, RFReport};
use crate::layers::{conv_forward, pool_forward};
use crate::network::{backward, forward, loss_forward, LayerOp, LossKind, NetworkSpec, ParamStore};
use crate::{Dims, Error, LabelMap, Result, Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub grid_stride: usize,
    pub positions_compared: usize,
    pub max_abs_diff: f64,
    pub bit_exact: bool,
    pub pass: bool,
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "equiv S={} pos={} maxdiff={:e} exact={} pass={}",
            self.grid_stride,
            self.positions_compared,
            self.max_abs_diff,
            self.bit_exact as u8,
            self.pass as u8
        )
    }
}

#[derive(Default)]
struct Tally {
    positions: usize,
    max_diff: f64,
    exact: bool,
}

impl Tally {
    fn new() -> Self {
        Tally { positions: 0, max_diff: 0.0, exact: true }
    }

    fn compare<T: Scalar>(&mut self, a: &Tensor<T>, ai: usize, aj: usize, b: &Tensor<T>, bi: usize, bj: usize) {
        for k in 0..a.dims().c {
            let (x, y) = (a.get(ai, aj, k).as_f64(), b.get(bi, bj, k).as_f64());
            self.exact &= x.to_bits() == y.to_bits();
            let d = (x - y).abs();
            if d > self.max_diff || d.is_nan() {
                self.max_diff = d;
            }
        }
        self.positions += 1;
    }

    fn report(self, grid_stride: usize, tolerance: f64, what: &str) -> Result<EquivalenceReport> {
        if self.positions == 0 {
            return Err(Error::Coverage(format!("no interior positions to compare for {what}")));
        }
        Ok(EquivalenceReport {
            grid_stride,
            positions_compared: self.positions,
            max_abs_diff: self.max_diff,
            bit_exact: self.exact,
            pass: self.max_diff <= tolerance,
        })
    }
}

fn interior(rf: &RFReport, i: usize, j: usize, input: Dims) -> bool {
    let inside = |pos: usize, size: usize, step: usize, offset: i64, len: usize| {
        let start = offset + (pos * step) as i64;
        start >= 0 && start + size as i64 <= len as i64
    };
    inside(i, rf.size.0, rf.step.0, rf.offset.0, input.h) && inside(j, rf.size.1, rf.step.1, rf.offset.1, input.w)
}

fn final_rf(net: &NetworkSpec) -> Result<RFReport> {
    if net.layers.iter().any(|l| l.op == LayerOp::Gap) {
        return Err(Error::Unsupported(
            "equivalence is checked on spatial outputs; remove the global pooling head".into(),
        ));
    }
    Ok(receptive_fields(net)?
        .last()
        .copied()
        .unwrap_or(RFReport { size: (1, 1), step: (1, 1), offset: (0, 0) }))
}

/// Compares the dense output at `(a*S, b*S)` with the original output at
/// `(a, b)` for every original position whose receptive field lies inside
/// the input.
pub fn check_equivalence<T: Scalar>(
    original: &NetworkSpec,
    dense: &NetworkSpec,
    plan: &DensifyPlan,
    params: &ParamStore<T>,
    input: &Tensor<T>,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    check_equivalence_split(original, dense, plan, params, params, input, tolerance)
}

/// [`check_equivalence`] with separate parameters for the dense network.
pub fn check_equivalence_split<T: Scalar>(
    original: &NetworkSpec,
    dense: &NetworkSpec,
    plan: &DensifyPlan,
    params: &ParamStore<T>,
    dense_params: &ParamStore<T>,
    input: &Tensor<T>,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let recovered = recover_plan(original, dense)?;
    if recovered.accumulated_est != plan.accumulated_est || recovered.converted != plan.converted {
        return Err(Error::Precondition("plan does not describe the given networks".into()));
    }
    let rf = final_rf(original)?;
    let s = plan.grid_stride();
    let (o, _) = forward(original, params, input)?;
    let (d, _) = forward(dense, dense_params, input)?;
    let (od, dd) = (o.dims(), d.dims());
    let mut tally = Tally::new();
    for i in 0..od.h {
        for j in 0..od.w {
            if i * s < dd.h && j * s < dd.w && interior(&rf, i, j, input.dims()) {
                tally.compare(&o, i, j, &d, i * s, j * s);
            }
        }
    }
    tally.report(s, tolerance, "the original network")
}

/// Result of [`fragments_forward`].
#[derive(Clone, Debug)]
pub struct FragmentsOutput<T = f64> {
    /// Interleaved fragment outputs on the dense grid.
    pub output: Tensor<T>,
    /// Which dense positions some fragment produced, row-major.
    pub covered: Vec<bool>,
    /// Number of fragments alive at the end.
    pub fragments: usize,
    pub grid_stride: usize,
}

struct Fragment<T> {
    data: Tensor<T>,
    offset: (usize, usize),
}

/// Runs the original strided layers on every phase-shifted fragment: each
/// stride-2 pool splits every fragment into four, one per `(row, col)`
/// shift in `{0, 1}^2`. Convolutions must have stride 1.
pub fn fragments_forward<T: Scalar>(
    original: &NetworkSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
) -> Result<FragmentsOutput<T>> {
    if input.dims() != original.input_dims {
        return Err(Error::Shape(format!("network expects input {}, got {}", original.input_dims, input.dims())));
    }
    let mut frags = vec![Fragment { data: input.clone(), offset: (0, 0) }];
    let mut spacing = 1usize;
    for l in &original.layers {
        let wrap = |e: Error| match e {
            Error::Shape(m) => Error::Shape(format!("layer `{}` on a fragment: {m}", l.name)),
            other => other,
        };
        match &l.op {
            LayerOp::Conv(c) => {
                if c.stride != 1 {
                    return Err(Error::Unsupported(format!("conv `{}` has stride {}", l.name, c.stride)));
                }
                let w = params.require(&l.weight_key())?;
                let b = if c.has_bias { Some(params.require(&l.bias_key())?) } else { None };
                for f in &mut frags {
                    f.data = conv_forward(&f.data, w, b, c).map_err(wrap)?;
                }
            }
            LayerOp::Pool(p) if p.stride == 1 => {
                for f in &mut frags {
                    f.data = pool_forward(&f.data, p).map_err(wrap)?.0;
                }
            }
            LayerOp::Pool(p) if p.stride == 2 => {
                let mut next = Vec::with_capacity(frags.len() * 4);
                for f in &frags {
                    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let shifted = f.data.subsample(a, b, 1).map_err(wrap)?;
                        next.push(Fragment {
                            data: pool_forward(&shifted, p).map_err(wrap)?.0,
                            offset: (f.offset.0 + spacing * a, f.offset.1 + spacing * b),
                        });
                    }
                }
                frags = next;
                spacing *= 2;
            }
            LayerOp::Pool(p) => {
                return Err(Error::Unsupported(format!("pool `{}` has stride {}", l.name, p.stride)));
            }
            LayerOp::Relu => {
                for f in &mut frags {
                    f.data = f.data.map(|v| v.max(T::zero()));
                }
            }
            LayerOp::Gap => {
                return Err(Error::Unsupported("global pooling has no fragment decomposition".into()));
            }
        }
    }

    let dense_dims = dense_counterpart(original)?.output_dims()?;
    let mut output = Tensor::zeros(dense_dims)?;
    let mut covered = vec![false; dense_dims.h * dense_dims.w];
    for f in &frags {
        let fd = f.data.dims();
        for i in 0..fd.h {
            let r = f.offset.0 + spacing * i;
            if r >= dense_dims.h {
                break;
            }
            for j in 0..fd.w {
                let c = f.offset.1 + spacing * j;
                if c >= dense_dims.w {
                    break;
                }
                for k in 0..fd.c {
                    output.set(r, c, k, f.data.get(i, j, k));
                }
                covered[r * dense_dims.w + c] = true;
            }
        }
    }
    Ok(FragmentsOutput { output, covered, fragments: frags.len(), grid_stride: spacing })
}

/// `original` densified from its first strided pool, or `original` itself.
fn dense_counterpart(original: &NetworkSpec) -> Result<NetworkSpec> {
    let first = original
        .layers
        .iter()
        .position(|l| matches!(l.op, LayerOp::Pool(p) if p.stride > 1));
    match first {
        Some(idx) => Ok(densify(original, idx)?.0),
        None => Ok(original.clone()),
    }
}

/// Compares [`fragments_forward`] with the forward pass of `original`
/// densified from its first strided pool, on covered interior positions.
pub fn check_fragments<T: Scalar>(
    original: &NetworkSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let frag = fragments_forward(original, params, input)?;
    let dense = dense_counterpart(original)?;
    let rf = final_rf(&dense)?;
    let (d, _) = forward(&dense, params, input)?;
    let dd = d.dims();
    let mut tally = Tally::new();
    for i in 0..dd.h {
        for j in 0..dd.w {
            if frag.covered[i * dd.w + j] && interior(&rf, i, j, input.dims()) {
                tally.compare(&frag.output, i, j, &d, i, j);
            }
        }
    }
    tally.report(frag.grid_stride, tolerance, "the fragments")
}

/// Denominator floor of the relative error `|a - n| / max(|a|, |n|, floor)`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
/// Parameter coordinates sampled per check.
pub const GRAD_CHECK_COORDS: usize = 200;
/// Input regenerations allowed after a kink is crossed.
pub const GRAD_CHECK_RETRIES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Inputs discarded because a perturbation changed a pooling winner or ReLU sign.
    pub regenerated: usize,
}

/// Central differences of the loss against the analytic parameter
/// gradient. When a perturbation changes which pool tap wins or which ReLU
/// is active, the input is redrawn uniformly from `[-1, 1]` with `rng`.
pub fn grad_check<T: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
    labels: &LabelMap,
    kind: LossKind,
    eps: f64,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Precondition(format!("step must be positive and finite, got {eps}")));
    }
    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(k, t)| (0..t.data().len()).map(move |i| (k.to_string(), i)))
        .collect();
    let picked: Vec<&(String, usize)> = if coords.len() <= GRAD_CHECK_COORDS {
        coords.iter().collect()
    } else {
        let mut idx = sample(rng, coords.len(), GRAD_CHECK_COORDS).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &coords[i]).collect()
    };

    let mut x = input.clone();
    for attempt in 0..=GRAD_CHECK_RETRIES {
        if attempt > 0 {
            x = Tensor::rand_uniform(input.dims(), rng, -T::one(), T::one())?;
        }
        if let Some(max_rel_error) = check_once(net, params, &x, labels, kind, eps, &picked)? {
            return Ok(GradCheckReport { max_rel_error, coords_checked: picked.len(), regenerated: attempt });
        }
    }
    Err(Error::Tie(format!("activation pattern changed under perturbation on {} inputs", GRAD_CHECK_RETRIES + 1)))
}

fn check_once<T: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
    labels: &LabelMap,
    kind: LossKind,
    eps: f64,
    picked: &[&(String, usize)],
) -> Result<Option<f64>> {
    let (out, cache) = forward(net, params, input)?;
    let base = cache.pattern(net);
    let (_, grad_out) = loss_forward(&out, labels, kind)?;
    let (grads, _) = backward(net, params, &cache, &grad_out)?;

    let mut work = params.clone();
    let mut worst = 0f64;
    for (key, i) in picked {
        let orig = params.require(key)?.data()[*i];
        let mut eval = |v: T| -> Result<Option<f64>> {
            work.get_mut(key).expect("cloned store").data_mut()[*i] = v;
            let (o, c) = forward(net, &work, input)?;
            if c.pattern(net) != base {
                return Ok(None);
            }
            Ok(Some(loss_forward(&o, labels, kind)?.0.as_f64()))
        };
        let plus = eval(orig + T::of(eps))?;
        let minus = eval(orig - T::of(eps))?;
        work.get_mut(key).expect("cloned store").data_mut()[*i] = orig;
        let (Some(lp), Some(lm)) = (plus, minus) else {
            return Ok(None);
        };
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = grads.require(key)?.data()[*i].as_f64();
        let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(Some(worst))
}
