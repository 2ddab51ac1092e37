//! Window token clustering and reconstruction for shifted-window transformers.
//!
//! A token grid is cut into non-overlapping `K x K` windows. Each window is
//! clustered to `k x k` tokens and later reconstructed back to `K x K`
//! independently; windows never exchange information. The relative position
//! table used by window attention is resized from side `2K - 1` to `2k - 1`.
//!
//! Cyclic shifts are the caller's job (see [`crate::vit::cyclic_shift`]).

use rayon::prelude::*;

use crate::clustering::{token_clustering, ClusteringConfig, LocalityMap};
use crate::error::{param, shape, Error, Result};
use crate::reconstruction::{compute_relations, reconstruct, ReconstructionConfig};
use crate::resample::bilinear_resize;
use crate::tensor::{FeatureGrid, TokenGrid};

/// Windows in row-major window order.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    windows: Vec<FeatureGrid>,
    layout: (usize, usize),
}

impl WindowBatch {
    /// Checks that `windows` fill a `layout.0 x layout.1` arrangement of equally sized tiles.
    pub fn new(windows: Vec<FeatureGrid>, layout: (usize, usize)) -> Result<Self> {
        let Some(first) = windows.first() else {
            return param("window batch is empty");
        };
        if layout.0 * layout.1 != windows.len() {
            return shape(format!(
                "{} windows cannot fill a {}x{} layout",
                windows.len(),
                layout.0,
                layout.1
            ));
        }
        if windows.iter().any(|w| !w.same_dims(first)) {
            return shape("windows differ in size");
        }
        Ok(Self { windows, layout })
    }

    pub fn windows(&self) -> &[FeatureGrid] {
        &self.windows
    }

    pub fn layout(&self) -> (usize, usize) {
        self.layout
    }

    /// `(rows, cols)` of every window.
    pub fn window_dims(&self) -> (usize, usize) {
        (self.windows[0].rows(), self.windows[0].cols())
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Dimensions of the grid [`merge_windows`] would produce.
    pub fn merged_dims(&self) -> (usize, usize) {
        let (wr, wc) = self.window_dims();
        (self.layout.0 * wr, self.layout.1 * wc)
    }

    fn map_windows<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(usize, &FeatureGrid) -> Result<FeatureGrid> + Sync,
    {
        let windows = self
            .windows
            .par_iter()
            .enumerate()
            .map(|(i, w)| f(i, w))
            .collect::<Result<Vec<_>>>()?;
        Self::new(windows, self.layout)
    }
}

/// Cuts `src` into row-major `window x window` tiles.
pub fn partition_windows(src: &TokenGrid, window: usize) -> Result<WindowBatch> {
    if window == 0 || !src.rows().is_multiple_of(window) || !src.cols().is_multiple_of(window) {
        return param(format!(
            "grid {}x{} is not divisible into {window}x{window} windows",
            src.rows(),
            src.cols()
        ));
    }
    let (wr, wc) = (src.rows() / window, src.cols() / window);
    let c = src.channels();
    let mut windows = Vec::with_capacity(wr * wc);
    for by in 0..wr {
        for bx in 0..wc {
            let mut data = Vec::with_capacity(window * window * c);
            for y in 0..window {
                let row = by * window + y;
                let start = (row * src.cols() + bx * window) * c;
                data.extend_from_slice(&src.data()[start..start + window * c]);
            }
            windows.push(FeatureGrid::new(window, window, c, data)?);
        }
    }
    WindowBatch::new(windows, (wr, wc))
}

/// Stitches windows back into one grid; inverse of [`partition_windows`].
pub fn merge_windows(batch: &WindowBatch) -> Result<TokenGrid> {
    let (wh, ww) = batch.window_dims();
    let (rows, cols) = batch.merged_dims();
    let c = batch.windows[0].channels();
    let mut data = vec![0.0f32; rows * cols * c];
    for (i, win) in batch.windows.iter().enumerate() {
        let (by, bx) = (i / batch.layout.1, i % batch.layout.1);
        for y in 0..wh {
            let dst = ((by * wh + y) * cols + bx * ww) * c;
            let src = y * ww * c;
            data[dst..dst + ww * c].copy_from_slice(&win.data()[src..src + ww * c]);
        }
    }
    FeatureGrid::new(rows, cols, c, data)
}

/// Clusters every window to `k_side x k_side` tokens.
///
/// `cfg.target_h` / `cfg.target_w` are ignored; the remaining fields apply
/// to each window. Returns the clustered batch and one locality map per
/// window for the matching reconstruction.
pub fn window_token_clustering(
    batch: &WindowBatch,
    k_side: usize,
    cfg: &ClusteringConfig,
) -> Result<(WindowBatch, Vec<LocalityMap>)> {
    let (wh, ww) = batch.window_dims();
    if k_side == 0 || k_side > wh.min(ww) {
        return param(format!("clustered window side {k_side} must lie in 1..={}", wh.min(ww)));
    }
    let cfg = ClusteringConfig { target_h: k_side, target_w: k_side, ..*cfg };
    let results = batch
        .windows
        .par_iter()
        .map(|w| token_clustering(w, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let (windows, maps): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((WindowBatch::new(windows, batch.layout)?, maps))
}

/// Reconstructs `K x K` windows from refined `k x k` windows.
///
/// Relations come from `pre` (tokens before clustering) and `clustered_pre`
/// (centers before refinement). `maps` is needed only for the locality
/// candidate mode.
pub fn window_token_reconstruction(
    pre: &WindowBatch,
    clustered_pre: &WindowBatch,
    refined: &WindowBatch,
    maps: Option<&[LocalityMap]>,
    cfg: &ReconstructionConfig,
) -> Result<WindowBatch> {
    if pre.layout != clustered_pre.layout || pre.layout != refined.layout {
        return shape("window layouts differ between batches");
    }
    if clustered_pre.window_dims() != refined.window_dims() {
        return shape("clustered and refined windows differ in size");
    }
    if let Some(maps) = maps {
        if maps.len() != pre.len() {
            return shape(format!("{} locality maps for {} windows", maps.len(), pre.len()));
        }
    }
    pre.map_windows(|i, tokens| {
        let map = maps.map(|m| &m[i]);
        let weights = compute_relations(tokens, &clustered_pre.windows[i], map, cfg)?;
        reconstruct(&weights, &refined.windows[i])
    })
}

/// Relative position bias table: `side x side` offsets, one value per head.
///
/// Entry `(dy + K - 1, dx + K - 1)` holds the bias for relative offset
/// `(dy, dx)` within a `K x K` window.
#[derive(Clone, Debug, PartialEq)]
pub struct RpeTable {
    table: FeatureGrid,
}

impl RpeTable {
    pub fn new(side: usize, heads: usize, values: Vec<f32>) -> Result<Self> {
        if side.is_multiple_of(2) {
            return param(format!("position table side must be odd, got {side}"));
        }
        let table = FeatureGrid::new(side, side, heads, values)?;
        if !table.is_finite() {
            return Err(Error::NonFinite("position table".into()));
        }
        Ok(Self { table })
    }

    /// Table for a `window x window` window: side `2 * window - 1`.
    pub fn for_window(window: usize, heads: usize, values: Vec<f32>) -> Result<Self> {
        if window == 0 {
            return param("window must be positive");
        }
        Self::new(2 * window - 1, heads, values)
    }

    pub fn side(&self) -> usize {
        self.table.rows()
    }

    pub fn heads(&self) -> usize {
        self.table.channels()
    }

    /// Window size this table serves, `(side + 1) / 2`.
    pub fn window(&self) -> usize {
        self.side().div_ceil(2)
    }

    pub fn values(&self) -> &[f32] {
        self.table.data()
    }

    /// Bias for relative offset `(dy, dx)` and `head`.
    pub fn bias(&self, dy: isize, dx: isize, head: usize) -> f32 {
        let r = self.window() as isize - 1;
        self.table.at((dy + r) as usize, (dx + r) as usize)[head]
    }
}

/// Resizes a table from window `K` to window `k_side` with corner-aligned bilinear sampling.
pub fn interpolate_rpe_table(table: &RpeTable, k_side: usize) -> Result<RpeTable> {
    if k_side == 0 || k_side > table.window() {
        return param(format!("target window {k_side} must lie in 1..={}", table.window()));
    }
    let side = 2 * k_side - 1;
    Ok(RpeTable { table: bilinear_resize(&table.table, side, side, true)? })
}
