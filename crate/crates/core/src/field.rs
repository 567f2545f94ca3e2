//! Per-pixel label distributions and binary masks.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Binary `H x W` mask, row-major, values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} given {} values",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("mask values must be 0 or 1".into()));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_extents(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Per-pixel distribution over `L` labels stored as `[L, H, W]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityField {
    pub labels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<Scalar>,
}

impl ProbabilityField {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (labels, height, width) = t.chw()?;
        Ok(ProbabilityField {
            labels,
            height,
            width,
            data: t.data().to_vec(),
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.labels, self.height, self.width], self.data.clone())
            .expect("field dimensions are consistent")
    }

    /// Two-label field from a foreground probability map.
    pub fn from_foreground(height: usize, width: usize, fg: &[Scalar]) -> Result<Self> {
        if fg.len() != height * width {
            return Err(Error::Shape(format!(
                "{} probabilities for {height}x{width}",
                fg.len()
            )));
        }
        let mut data = Vec::with_capacity(2 * fg.len());
        data.extend(fg.iter().map(|p| 1.0 - p));
        data.extend_from_slice(fg);
        Ok(ProbabilityField {
            labels: 2,
            height,
            width,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, label: usize) -> &[Scalar] {
        let n = self.pixels();
        &self.data[label * n..(label + 1) * n]
    }

    /// Probability of label 1.
    pub fn foreground(&self) -> &[Scalar] {
        self.channel(1)
    }

    /// Most probable label per pixel; ties go to the lower label.
    pub fn argmax(&self) -> Vec<u8> {
        let n = self.pixels();
        (0..n)
            .map(|i| {
                let mut best = 0;
                for l in 1..self.labels {
                    if self.data[l * n + i] > self.data[best * n + i] {
                        best = l;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn mask(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.argmax().into_iter().map(|l| (l > 0) as u8).collect(),
        }
    }

    /// Largest deviation of any pixel's total probability from 1.
    pub fn max_normalization_error(&self) -> Scalar {
        let n = self.pixels();
        (0..n)
            .map(|i| {
                ((0..self.labels)
                    .map(|l| self.data[l * n + i])
                    .sum::<Scalar>()
                    - 1.0)
                    .abs()
            })
            .fold(0.0, Scalar::max)
    }
}
