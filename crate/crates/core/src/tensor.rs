//! Dense feature grids.
//!
//! A [`FeatureGrid`] stores `rows x cols` tokens of `channels` values each,
//! row-major, so token `p = y * cols + x` occupies
//! `data[p * channels..(p + 1) * channels]`.

use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f32>,
}

/// The full-resolution token map (`H/P x W/P` tokens).
pub type TokenGrid = FeatureGrid;

/// The reduced map of `h x w` cluster centers.
pub type ClusterGrid = FeatureGrid;

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return param(format!("grid dimensions must be positive, got {rows}x{cols}x{channels}"));
        }
        if data.len() != rows * cols * channels {
            return shape(format!(
                "grid {rows}x{cols}x{channels} needs {} values, got {}",
                rows * cols * channels,
                data.len()
            ));
        }
        Ok(Self { rows, cols, channels, data })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Result<Self> {
        Self::new(rows, cols, channels, vec![0.0; rows * cols * channels])
    }

    /// Builds a grid from `f(y, x, c)`.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols * channels);
        for y in 0..rows {
            for x in 0..cols {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(rows, cols, channels, data)
    }

    /// Reinterprets a flat list of `n` token vectors as an `n x 1` column grid.
    pub fn from_tokens(tokens: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(tokens, 1, channels, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of tokens, `rows * cols`.
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn token(&self, p: usize) -> &[f32] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    #[inline]
    pub fn token_mut(&mut self, p: usize) -> &mut [f32] {
        &mut self.data[p * self.channels..(p + 1) * self.channels]
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> &[f32] {
        self.token(y * self.cols + x)
    }

    pub fn tokens(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels)
    }

    /// Same data, new spatial layout; the token count must be preserved.
    pub fn reshaped(self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.len() {
            return shape(format!(
                "cannot reshape {} tokens into {rows}x{cols}",
                self.len()
            ));
        }
        Self::new(rows, cols, self.channels, self.data)
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-channel `(min, max)` over all tokens.
    pub fn channel_bounds(&self) -> Vec<(f32, f32)> {
        let mut bounds = vec![(f32::INFINITY, f32::NEG_INFINITY); self.channels];
        for token in self.tokens() {
            for (b, &v) in bounds.iter_mut().zip(token) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        bounds
    }

    /// Largest absolute element-wise difference; `None` if dimensions differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f32> {
        if !self.same_dims(other) {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(FeatureGrid::new(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(FeatureGrid::new(0, 2, 3, vec![]).is_err());
    }

    #[test]
    fn token_layout_is_row_major() {
        let g = FeatureGrid::from_fn(2, 3, 2, |y, x, c| (y * 100 + x * 10 + c) as f32).unwrap();
        assert_eq!(g.at(1, 2), &[120.0, 121.0]);
        assert_eq!(g.token(4), &[110.0, 111.0]);
    }

    #[test]
    fn bounds_per_channel() {
        let g = FeatureGrid::new(1, 3, 2, vec![1.0, -1.0, 3.0, 0.0, 2.0, 5.0]).unwrap();
        assert_eq!(g.channel_bounds(), vec![(1.0, 3.0), (-1.0, 5.0)]);
    }
}
