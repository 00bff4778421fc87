use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A video of `frames` frames, each a `dim`-vector, stored row-major
/// (frame-major). The flattened index of coordinate `k` in frame `i` is
/// `i * dim + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Video {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Video {
    pub fn zeros(frames: usize, dim: usize) -> Self {
        Video {
            frames,
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn from_flat(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(Error::Shape {
                expected: format!("{} values ({frames} frames x {dim})", frames * dim),
                got: format!("{} values", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("video entries must be finite, found {bad}")));
        }
        Ok(Video { frames, dim, data })
    }

    /// Repeats `frame` across all `frames` frames.
    pub fn broadcast(frame: &[f64], frames: usize) -> Self {
        let dim = frame.len();
        let mut data = Vec::with_capacity(frames * dim);
        for _ in 0..frames {
            data.extend_from_slice(frame);
        }
        Video { frames, dim, data }
    }

    /// A video with i.i.d. standard normal entries.
    pub fn standard_normal<R: Rng + ?Sized>(frames: usize, dim: usize, rng: &mut R) -> Self {
        let data = (0..frames * dim).map(|_| rng.sample(StandardNormal)).collect();
        Video { frames, dim, data }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flattened dimension `frames * dim`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn same_shape(&self, other: &Video) -> bool {
        self.frames == other.frames && self.dim == other.dim
    }

    pub(crate) fn check_shape(&self, frames: usize, dim: usize) -> Result<()> {
        if self.frames != frames || self.dim != dim {
            return Err(Error::Shape {
                expected: format!("{frames}x{dim} video"),
                got: format!("{}x{} video", self.frames, self.dim),
            });
        }
        Ok(())
    }

    /// `a * self + b * other`, elementwise.
    pub fn lin_comb(&self, a: f64, other: &Video, b: f64) -> Video {
        debug_assert!(self.same_shape(other));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Video {
            frames: self.frames,
            dim: self.dim,
            data,
        }
    }

    pub fn scaled(&self, a: f64) -> Video {
        Video {
            frames: self.frames,
            dim: self.dim,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Video) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Video {
    type Output = f64;

    fn index(&self, (i, k): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + k]
    }
}

impl IndexMut<(usize, usize)> for Video {
    fn index_mut(&mut self, (i, k): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + k]
    }
}
