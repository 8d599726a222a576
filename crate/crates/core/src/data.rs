//! In-memory labeled image datasets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Shape3;

/// Samples stored contiguously as `f32`, one `u16` label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Per-sample dimensions, e.g. `[28, 28]` or `[1, 64, 64]`.
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
    pub labels: Vec<u16>,
}

impl Dataset {
    pub fn new(dims: Vec<usize>, data: Vec<f32>, labels: Vec<u16>) -> Result<Self> {
        let per: usize = dims.iter().product();
        if data.len() != per * labels.len() {
            return Err(Error::Dataset(format!(
                "{} values do not hold {} samples of {dims:?}",
                data.len(),
                labels.len()
            )));
        }
        Ok(Self { dims, data, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Network input shape: 2-D samples are single-channel.
    pub fn shape(&self) -> Result<Shape3> {
        match self.dims[..] {
            [h, w] => Ok(Shape3::new(1, h, w)),
            [c, h, w] => Ok(Shape3::new(c, h, w)),
            [f] => Ok(Shape3::flat(f)),
            _ => Err(Error::Dataset(format!(
                "unsupported sample dims {:?}",
                self.dims
            ))),
        }
    }

    /// Number of classes implied by the largest label.
    pub fn classes(&self) -> usize {
        self.labels
            .iter()
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        Dataset {
            dims: self.dims.clone(),
            data,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Images and labels of the given samples, widened for the network.
    pub fn batch(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            x.extend(self.sample(i).iter().map(|&v| v as f64));
        }
        (x, idx.iter().map(|&i| self.labels[i] as usize).collect())
    }

    /// Deterministic shuffled split into `(train, test)` with
    /// `floor(test_fraction * n)` test samples.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::Domain(format!(
                "test fraction {test_fraction} outside [0, 1]"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (test_fraction * self.len() as f64).floor() as usize;
        let (test, train) = idx.split_at(n_test);
        let (mut train, mut test) = (train.to_vec(), test.to_vec());
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }
}
