//! Minibatch SGD over labeled images, and full-resolution evaluation.

use rayon::prelude::*;

use crate::densify::{alignment_for, receptive_fields};
use crate::labels::{LabelMap, IGNORE};
use crate::network::{backward, forward, loss_forward, sgd_step, LayerOp, LossKind, NetworkSpec, ParamStore};
use crate::synthdata::{Confusion, Sample};
use crate::{Error, Result, Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, lr: 0.1, batch_size: 8, seed: 0, loss: LossKind::PixelSoftmaxCe }
    }
}

/// Most frequent non-background class, or 0 for an all-background image.
/// Ties go to the smaller class id.
pub fn global_label(labels: &LabelMap) -> i32 {
    let mut counts = std::collections::BTreeMap::new();
    for &l in &labels.data {
        if l > 0 {
            *counts.entry(l).or_insert(0usize) += 1;
        }
    }
    counts.into_iter().fold((0, 0), |best, (l, n)| if n > best.1 { (l, n) } else { best }).0
}

/// Loss targets for `net`'s output, one per sample.
pub fn targets<T: Scalar>(net: &NetworkSpec, samples: &[Sample<T>], kind: LossKind) -> Result<Vec<LabelMap>> {
    match kind {
        LossKind::GlobalSoftmaxCe => Ok(samples.iter().map(|s| LabelMap::single(global_label(&s.labels))).collect()),
        LossKind::PixelSoftmaxCe => {
            let al = alignment_for(net)?;
            samples.iter().map(|s| al.labels_for(&s.labels)).collect()
        }
    }
}

/// Trains `params` in place and returns the mean loss of every epoch.
/// `on_epoch` sees the 1-based epoch number and its mean loss.
pub fn train<T: Scalar>(
    net: &NetworkSpec,
    params: &mut ParamStore<T>,
    samples: &[Sample<T>],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    train_until(net, params, samples, cfg, on_epoch, |_| false)
}

/// Stops once the best loss of the last `window` epochs is within a
/// relative `tolerance` of the best loss before them, or after
/// `cfg.epochs` epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plateau {
    pub window: usize,
    pub tolerance: f64,
}

impl Plateau {
    pub fn reached(&self, history: &[f64]) -> bool {
        if self.window == 0 || history.len() <= self.window {
            return false;
        }
        let (before, recent) = history.split_at(history.len() - self.window);
        let best = |h: &[f64]| h.iter().copied().fold(f64::INFINITY, f64::min);
        let (b, r) = (best(before), best(recent));
        b - r <= self.tolerance * b.abs()
    }
}

pub fn train_to_plateau<T: Scalar>(
    net: &NetworkSpec,
    params: &mut ParamStore<T>,
    samples: &[Sample<T>],
    cfg: &TrainConfig,
    plateau: Plateau,
    on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    train_until(net, params, samples, cfg, on_epoch, |h| plateau.reached(h))
}

fn train_until<T: Scalar>(
    net: &NetworkSpec,
    params: &mut ParamStore<T>,
    samples: &[Sample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
    stop: impl Fn(&[f64]) -> bool,
) -> Result<Vec<f64>> {
    if cfg.batch_size == 0 {
        return Err(Error::Precondition("batch size must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::Precondition("no training samples".into()));
    }
    params.check_against(net)?;
    let tgt = targets(net, samples, cfg.loss)?;
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.range_inclusive(0, i));
        }
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(T, ParamStore<T>)> = batch
                .par_iter()
                .map(|&k| sample_gradient(net, params, &samples[k].image, &tgt[k], cfg.loss))
                .collect::<Result<_>>()?;
            let mut iter = results.into_iter();
            let (l0, mut sum) = iter.next().expect("chunks are non-empty");
            total += l0.as_f64();
            for (l, g) in iter {
                total += l.as_f64();
                for (key, acc) in sum.iter_mut() {
                    let src = g.get(key).expect("gradients share keys");
                    for (a, &b) in acc.data_mut().iter_mut().zip(src.data()) {
                        *a += b;
                    }
                }
            }
            sgd_step(params, &sum, T::of(cfg.lr / batch.len() as f64))?;
        }
        let mean = total / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Consistency(format!("loss diverged at epoch {epoch}")));
        }
        on_epoch(epoch, mean);
        history.push(mean);
        if stop(&history) {
            break;
        }
    }
    Ok(history)
}

fn sample_gradient<T: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    image: &Tensor<T>,
    target: &LabelMap,
    kind: LossKind,
) -> Result<(T, ParamStore<T>)> {
    let (out, cache) = forward(net, params, image)?;
    let (loss, grad) = loss_forward(&out, target, kind)?;
    let (grads, _) = backward(net, params, &cache, &grad)?;
    Ok((loss, grads))
}

/// Mean loss over `samples` without updating anything.
pub fn mean_loss<T: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    samples: &[Sample<T>],
    kind: LossKind,
) -> Result<f64> {
    let tgt = targets(net, samples, kind)?;
    let losses: Vec<f64> = samples
        .par_iter()
        .zip(&tgt)
        .map(|(s, t)| {
            let (out, _) = forward(net, params, &s.image)?;
            Ok(loss_forward(&out, t, kind)?.0.as_f64())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len().max(1) as f64)
}

/// Class index with the largest score at every output position.
pub fn argmax_map<T: Scalar>(output: &Tensor<T>) -> LabelMap {
    let d = output.dims();
    let mut out = LabelMap::new(d.h, d.w, IGNORE);
    for i in 0..d.h {
        for j in 0..d.w {
            let mut best = 0;
            for k in 1..d.c {
                if output.get(i, j, k) > output.get(i, j, best) {
                    best = k;
                }
            }
            out.set(i, j, best as i32);
        }
    }
    out
}

/// Per-pixel prediction: every input pixel takes the class predicted at the
/// output position whose receptive-field center is nearest, clamped to the
/// output grid. A pixel halfway between two centers takes the earlier one.
pub fn predict<T: Scalar>(net: &NetworkSpec, params: &ParamStore<T>, image: &Tensor<T>) -> Result<LabelMap> {
    let (out, _) = forward(net, params, image)?;
    let coarse = argmax_map(&out);
    let input = net.input_dims;
    if net.layers.iter().any(|l| l.op == LayerOp::Gap) {
        return Ok(LabelMap::new(input.h, input.w, coarse.get(0, 0)));
    }
    let rf = receptive_fields(net)?.last().copied();
    let (size, step, offset) = rf.map_or(((1, 1), (1, 1), (0, 0)), |r| (r.size, r.step, r.offset));
    let nearest = |pixel: usize, size: usize, step: usize, offset: i64, len: usize| -> usize {
        let center0 = offset as f64 + ((size - 1) / 2) as f64;
        let pos = ((pixel as f64 - center0) / step as f64 - 0.5).ceil();
        pos.clamp(0.0, (len - 1) as f64) as usize
    };
    let mut pred = LabelMap::new(input.h, input.w, 0);
    for r in 0..input.h {
        let i = nearest(r, size.0, step.0, offset.0, coarse.h);
        for c in 0..input.w {
            let j = nearest(c, size.1, step.1, offset.1, coarse.w);
            pred.set(r, c, coarse.get(i, j));
        }
    }
    Ok(pred)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
}

/// Dataset-level pixel accuracy and mean IoU of [`predict`].
pub fn evaluate<T: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    samples: &[Sample<T>],
    num_classes: usize,
) -> Result<EvalReport> {
    let preds: Vec<LabelMap> = samples.par_iter().map(|s| predict(net, params, &s.image)).collect::<Result<_>>()?;
    let mut conf = Confusion::new(num_classes);
    for (p, s) in preds.iter().zip(samples) {
        conf.add(p, &s.labels)?;
    }
    Ok(EvalReport { pixel_accuracy: conf.pixel_accuracy(), mean_iou: conf.mean_iou() })
}
