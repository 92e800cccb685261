use crate::labels::{LabelMap, IGNORE};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy at every labeled output position.
    PixelSoftmaxCe,
    /// Softmax cross-entropy on a `1 x 1 x C` output (after global average
    /// pooling) against one image-level label.
    GlobalSoftmaxCe,
}

/// Mean softmax cross-entropy and its exact gradient.
///
/// `labels` has one entry per output position (a `1 x 1` map for
/// [`LossKind::GlobalSoftmaxCe`]). Positions labeled [`IGNORE`] contribute
/// nothing; when every position is ignored the loss is 0 with a zero
/// gradient.
pub fn loss_forward<T: Scalar>(output: &Tensor<T>, labels: &LabelMap, kind: LossKind) -> Result<(T, Tensor<T>)> {
    let d = output.dims();
    if kind == LossKind::GlobalSoftmaxCe && (d.h != 1 || d.w != 1) {
        return Err(Error::Shape(format!("global loss needs a 1x1xC output, got {d}")));
    }
    if labels.h != d.h || labels.w != d.w {
        return Err(Error::Shape(format!("labels are {}x{}, output is {d}", labels.h, labels.w)));
    }
    let classes = d.c;
    for &l in &labels.data {
        if l != IGNORE && (l < 0 || l as usize >= classes) {
            return Err(Error::Label(format!("label {l} outside 0..{classes}")));
        }
    }

    let count = labels.data.iter().filter(|&&l| l != IGNORE).count();
    let mut grad = Tensor::zeros(d)?;
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let scale = T::one() / T::of(count as f64);
    let mut total = T::zero();
    let x = output.data();
    let g = grad.data_mut();
    for (p, &l) in labels.data.iter().enumerate() {
        if l == IGNORE {
            continue;
        }
        let logits = &x[p * classes..][..classes];
        let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = logits.iter().map(|&v| (v - m).exp()).sum();
        let log_z = z.ln() + m;
        total += log_z - logits[l as usize];
        for (c, gv) in g[p * classes..][..classes].iter_mut().enumerate() {
            let prob = (logits[c] - log_z).exp();
            let target = if c == l as usize { T::one() } else { T::zero() };
            *gv = (prob - target) * scale;
        }
    }
    Ok((total * scale, grad))
}
