//! Synthetic pixel-labeling data: rectangles and discs in per-class
//! intensity bands on a noisy background, plus the segmentation metrics.

use std::fs;
use std::path::{Path, PathBuf};

use crate::labels::{LabelMap, IGNORE};
use crate::{Error, Result, Rng, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Including the background class 0.
    pub num_classes: usize,
    /// Inclusive range of shapes drawn per image.
    pub shapes_per_image: (usize, usize),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { image_size: 48, num_classes: 3, shapes_per_image: (1, 3), noise_sigma: 0.1, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Range(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.image_size < 16 {
            return Err(Error::Range(format!("image size must be at least 16, got {}", self.image_size)));
        }
        let (lo, hi) = self.shapes_per_image;
        if lo > hi {
            return Err(Error::Range(format!("empty shape range {lo}..={hi}")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Range(format!("noise sigma must be finite and non-negative, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// Center of class `k`'s intensity band.
    pub fn band_center(&self, class: usize) -> f64 {
        class as f64 / (self.num_classes - 1) as f64
    }
}

pub const BAND_HALF_WIDTH: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T = f64> {
    pub image: Tensor<T>,
    pub labels: LabelMap,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { top: usize, left: usize, h: usize, w: usize },
    Disc { ci: f64, cj: f64, r: f64 },
}

impl Shape {
    fn contains(&self, i: usize, j: usize) -> bool {
        match *self {
            Shape::Rect { top, left, h, w } => i >= top && i < top + h && j >= left && j < left + w,
            Shape::Disc { ci, cj, r } => {
                let (di, dj) = (i as f64 - ci, j as f64 - cj);
                di * di + dj * dj <= r * r
            }
        }
    }
}

/// Odd classes are rectangles, even classes discs.
fn draw_shape(rng: &mut Rng, n: usize, class: usize) -> Shape {
    let (lo, hi) = ((n / 8).max(2), (n / 3).max(3));
    if class % 2 == 1 {
        let h = rng.range_inclusive(lo, hi);
        let w = rng.range_inclusive(lo, hi);
        Shape::Rect { top: rng.range_inclusive(0, n - h), left: rng.range_inclusive(0, n - w), h, w }
    } else {
        let d = rng.range_inclusive(lo, hi);
        let r = d as f64 / 2.0;
        let ci = rng.range_inclusive(0, n - d) as f64 + r - 0.5;
        let cj = rng.range_inclusive(0, n - d) as f64 + r - 0.5;
        Shape::Disc { ci, cj, r }
    }
}

fn gen_labels(cfg: &SynthConfig, rng: &mut Rng) -> LabelMap {
    let n = cfg.image_size;
    loop {
        let count = rng.range_inclusive(cfg.shapes_per_image.0, cfg.shapes_per_image.1);
        let shapes: Vec<(usize, Shape)> = (0..count)
            .map(|_| {
                let class = rng.range_inclusive(1, cfg.num_classes - 1);
                (class, draw_shape(rng, n, class))
            })
            .collect();
        let mut labels = LabelMap::new(n, n, 0);
        let mut owner = vec![usize::MAX; n * n];
        for (s, (class, shape)) in shapes.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    if shape.contains(i, j) {
                        labels.set(i, j, *class as i32);
                        owner[i * n + j] = s;
                    }
                }
            }
        }
        let visible = (0..count).all(|s| owner.contains(&s));
        if visible {
            return labels;
        }
    }
}

fn gen_sample<T: Scalar>(cfg: &SynthConfig, rng: &mut Rng) -> Result<Sample<T>> {
    let labels = gen_labels(cfg, rng);
    let n = cfg.image_size;
    let mut image = Tensor::zeros((n, n, 1))?;
    for i in 0..n {
        for j in 0..n {
            let c = cfg.band_center(labels.get(i, j) as usize);
            let mut v = rng.uniform(c - BAND_HALF_WIDTH, c + BAND_HALF_WIDTH);
            if cfg.noise_sigma > 0.0 {
                v += cfg.noise_sigma * rng.normal();
            }
            image.set(i, j, 0, T::of(v));
        }
    }
    Ok(Sample { image, labels })
}

/// `n` samples, fully determined by `cfg` (including its seed) and `n`.
pub fn gen_dataset<T: Scalar>(cfg: &SynthConfig, n: usize) -> Result<Vec<Sample<T>>> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    (0..n).map(|_| gen_sample(cfg, &mut rng)).collect()
}

/// Nearest intensity band per pixel.
pub fn threshold_classifier<T: Scalar>(image: &Tensor<T>, num_classes: usize) -> LabelMap {
    let d = image.dims();
    let k = (num_classes - 1) as f64;
    let mut out = LabelMap::new(d.h, d.w, 0);
    for i in 0..d.h {
        for j in 0..d.w {
            let c = (image.get(i, j, 0).as_f64() * k).round().clamp(0.0, k);
            out.set(i, j, c as i32);
        }
    }
    out
}

/// Per-class intersection and union counts accumulated over label maps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    num_classes: usize,
    intersection: Vec<u64>,
    union: Vec<u64>,
    correct: u64,
    counted: u64,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Confusion {
            num_classes,
            intersection: vec![0; num_classes],
            union: vec![0; num_classes],
            correct: 0,
            counted: 0,
        }
    }

    /// Adds one prediction; positions labeled [`IGNORE`] are skipped.
    pub fn add(&mut self, pred: &LabelMap, labels: &LabelMap) -> Result<()> {
        if pred.dims() != labels.dims() {
            return Err(Error::Shape(format!(
                "prediction is {}x{}, labels are {}x{}",
                pred.h, pred.w, labels.h, labels.w
            )));
        }
        let k = self.num_classes as i32;
        for (&p, &l) in pred.data.iter().zip(&labels.data) {
            if l == IGNORE {
                continue;
            }
            if !(0..k).contains(&p) || !(0..k).contains(&l) {
                return Err(Error::Label(format!("class pair ({p}, {l}) outside 0..{k}")));
            }
            self.counted += 1;
            if p == l {
                self.correct += 1;
                self.intersection[p as usize] += 1;
                self.union[p as usize] += 1;
            } else {
                self.union[p as usize] += 1;
                self.union[l as usize] += 1;
            }
        }
        Ok(())
    }

    /// Fraction of counted positions predicted correctly; 0 when none were counted.
    pub fn pixel_accuracy(&self) -> f64 {
        if self.counted == 0 {
            0.0
        } else {
            self.correct as f64 / self.counted as f64
        }
    }

    /// IoU per class; `None` for classes absent from both prediction and labels.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        self.intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect()
    }

    /// Mean over classes present in prediction or labels; 0 when none are.
    pub fn mean_iou(&self) -> f64 {
        let present: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

pub fn pixel_accuracy(pred: &LabelMap, labels: &LabelMap) -> Result<f64> {
    let k = pred.data.iter().chain(&labels.data).copied().max().unwrap_or(0).max(0) as usize + 1;
    let mut c = Confusion::new(k);
    c.add(pred, labels)?;
    Ok(c.pixel_accuracy())
}

pub fn mean_iou(pred: &LabelMap, labels: &LabelMap, num_classes: usize) -> Result<f64> {
    let mut c = Confusion::new(num_classes);
    c.add(pred, labels)?;
    Ok(c.mean_iou())
}

pub fn image_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.img.eten"))
}

pub fn label_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.lbl.eten"))
}

/// Writes `sample_0000.img.eten`, `sample_0000.lbl.eten`, ... into `dir`.
pub fn save_dataset<T: Scalar>(dir: &Path, samples: &[Sample<T>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        let stem = format!("sample_{i:04}");
        fs::write(image_path(dir, &stem), s.image.to_bytes())?;
        fs::write(label_path(dir, &stem), s.labels.to_tensor::<T>()?.to_bytes())?;
    }
    Ok(())
}

/// Reads every `<stem>.img.eten` with a matching `<stem>.lbl.eten`, in stem order.
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Vec<Sample<T>>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".img.eten")) {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    let mut out = Vec::with_capacity(stems.len());
    for stem in stems {
        let image = Tensor::from_bytes(&fs::read(image_path(dir, &stem))?)?;
        let lbl_file = label_path(dir, &stem);
        if !lbl_file.exists() {
            return Err(Error::Label(format!("{} has no label file", stem)));
        }
        let labels = LabelMap::from_tensor(&Tensor::<T>::from_bytes(&fs::read(lbl_file)?)?)?;
        let d = image.dims();
        if labels.h != d.h || labels.w != d.w {
            return Err(Error::Shape(format!("{stem}: image {d} with {}x{} labels", labels.h, labels.w)));
        }
        out.push(Sample { image, labels });
    }
    Ok(out)
}
