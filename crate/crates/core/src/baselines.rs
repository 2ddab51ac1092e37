//! Comparison operators: resampling in place of clustering/reconstruction,
//! uniform downsampling, and score-based token selection.

use std::cmp::Ordering;

use crate::error::{param, Result};
use crate::reconstruction::{gather_tokens, reconstruct_from_subset, ReconstructionConfig};
use crate::resample::{adaptive_average_pool, bilinear_resize};
use crate::tensor::{ClusterGrid, FeatureGrid, TokenGrid};

/// Pooling in the clustering slot.
pub fn pool_reduce(tokens: &TokenGrid, h: usize, w: usize) -> Result<ClusterGrid> {
    adaptive_average_pool(tokens, h, w)
}

/// Bilinear upsampling (half-pixel) in the reconstruction slot.
pub fn bilinear_expand(refined: &ClusterGrid, rows: usize, cols: usize) -> Result<TokenGrid> {
    bilinear_resize(refined, rows, cols, false)
}

/// Resizes the token grid down to `out_h x out_w`, standing in for a lower-resolution input.
pub fn uniform_downsample_tokens(z: &TokenGrid, out_h: usize, out_w: usize) -> Result<TokenGrid> {
    if out_h > z.rows() || out_w > z.cols() {
        return param(format!(
            "downsampling target {out_h}x{out_w} exceeds the {}x{} grid",
            z.rows(),
            z.cols()
        ));
    }
    bilinear_resize(z, out_h, out_w, false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    /// Kept token indices, strictly increasing.
    pub kept: Vec<usize>,
    pub scores: Vec<f32>,
    pub keep_ratio: f64,
}

/// Number of tokens kept out of `n` at ratio `rho`: `max(1, round(rho * n))`.
pub fn keep_count(n: usize, rho: f64) -> usize {
    ((rho * n as f64).round() as usize).clamp(1, n)
}

/// Keeps the highest-scoring tokens; ties go to the lower index. NaN scores rank last.
pub fn select_topk_tokens(scores: &[f32], rho: f64) -> Result<SelectionResult> {
    if scores.is_empty() {
        return param("no scores to select from");
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return param(format!("keep ratio must lie in (0, 1], got {rho}"));
    }
    let count = keep_count(scores.len(), rho);
    let rank = |v: f32| if v.is_nan() { f32::NEG_INFINITY } else { v };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        rank(scores[b]).partial_cmp(&rank(scores[a])).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    let mut kept = order[..count].to_vec();
    kept.sort_unstable();
    Ok(SelectionResult { kept, scores: scores.to_vec(), keep_ratio: rho })
}

/// Keeps the top `rho` share of tokens, refines them with `refine` and
/// rebuilds the full grid from the refined subset.
///
/// `refine` receives the kept tokens as an `n x 1` grid in index order and
/// must return a grid of the same size. Chaining calls gives the multi-stage
/// variant.
pub fn sparsify_and_reconstruct<F>(
    z_pre: &TokenGrid,
    scores: &[f32],
    rho: f64,
    refine: F,
    cfg: &ReconstructionConfig,
) -> Result<TokenGrid>
where
    F: FnOnce(&FeatureGrid) -> Result<FeatureGrid>,
{
    if scores.len() != z_pre.len() {
        return param(format!("{} scores for {} tokens", scores.len(), z_pre.len()));
    }
    let sel = select_topk_tokens(scores, rho)?;
    let subset = gather_tokens(z_pre, &sel.kept)?;
    let refined = refine(&subset)?;
    reconstruct_from_subset(z_pre, &sel.kept, &refined, cfg)
}
