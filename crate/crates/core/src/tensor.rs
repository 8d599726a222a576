//! Spike-time tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample feature-map shape. Dense activations use `h = w = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn flat(f: usize) -> Self {
        Self { c: f, h: 1, w: 1 }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// First-spike times, row-major. `+inf` marks a neuron that never fired.
///
/// The leading axis is the batch: shape is `[B, C, H, W]` for feature maps or
/// `[B, F]` for dense activations.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TimeTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.len() < 2 || expected != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} does not describe {} values",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|t| t.is_nan() || **t < 0.0) {
            return Err(Error::Domain(format!("invalid spike time {bad}")));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    /// Stacks per-sample maps of a common shape into a `[B, C, H, W]` tensor.
    pub fn from_samples(shape: Shape3, samples: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(samples.len() * shape.len());
        for s in samples {
            if s.len() != shape.len() {
                return Err(Error::Contract(format!(
                    "sample of {} values does not match {shape}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        Self::new(vec![samples.len(), shape.c, shape.h, shape.w], data)
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Shape of one sample, interpreting `[B, F]` as `F x 1 x 1`.
    pub fn sample_shape(&self) -> Result<Shape3> {
        match self.shape.as_slice() {
            [_, f] => Ok(Shape3::flat(*f)),
            [_, c, h, w] => Ok(Shape3::new(*c, *h, *w)),
            other => Err(Error::Contract(format!(
                "unsupported tensor rank {}",
                other.len()
            ))),
        }
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.data.len() / self.batch();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        let n = self.data.len() / self.batch().max(1);
        self.data.chunks_exact(n.max(1))
    }

    /// Values that are actual spikes (sentinels excluded).
    pub fn finite(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied().filter(|t| t.is_finite())
    }
}
