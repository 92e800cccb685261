use crate::tensor::Dims;
use crate::{Error, Result, Scalar, Tensor};

/// Marker for positions that carry no label.
pub const IGNORE: i32 = -1;

/// Integer class map of size `h x w`; [`IGNORE`] marks unlabeled positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<i32>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, fill: i32) -> Self {
        LabelMap { h, w, data: vec![fill; h * w] }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<i32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Dimension(format!("label data length {} is not {h}x{w}", data.len())));
        }
        Ok(LabelMap { h, w, data })
    }

    /// A `1 x 1` map holding one image-level class.
    pub fn single(class: i32) -> Self {
        LabelMap { h: 1, w: 1, data: vec![class] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.data[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: i32) {
        self.data[i * self.w + j] = v;
    }

    /// Stored as an `(h, w, 1)` tensor of exact small integers.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec((self.h, self.w, 1), self.data.iter().map(|&v| T::of(v as f64)).collect())
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let d = t.dims();
        if d.c != 1 {
            return Err(Error::Dimension(format!("label tensor must have one channel, got {d}")));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| {
                let f = v.as_f64();
                if f.fract() != 0.0 || f < IGNORE as f64 || f > i32::MAX as f64 {
                    Err(Error::Label(format!("label value {f} is not a class id")))
                } else {
                    Ok(f as i32)
                }
            })
            .collect::<Result<_>>()?;
        Ok(LabelMap { h: d.h, w: d.w, data })
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.h, self.w, 1)
    }
}
