use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Result};
use crate::tensor::FeatureGrid;

/// Per-token cosine similarity between two feature grids.
///
/// Tokens where either vector has zero norm are recorded as `None` and left
/// out of `mean` and `min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub per_token: Vec<Option<f64>>,
    pub mean: f64,
    pub min: f64,
}

impl SimilarityReport {
    pub fn excluded(&self) -> usize {
        self.per_token.iter().filter(|v| v.is_none()).count()
    }
}

pub fn cosine_similarity(a: &FeatureGrid, b: &FeatureGrid) -> Result<SimilarityReport> {
    if !a.same_dims(b) {
        return shape(format!(
            "cosine similarity needs equal grids, got {}x{}x{} and {}x{}x{}",
            a.rows(),
            a.cols(),
            a.channels(),
            b.rows(),
            b.cols(),
            b.channels()
        ));
    }
    let per_token: Vec<Option<f64>> = a
        .tokens()
        .zip(b.tokens())
        .map(|(u, v)| {
            let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
            for (&x, &y) in u.iter().zip(v) {
                let (x, y) = (f64::from(x), f64::from(y));
                dot += x * y;
                nu += x * x;
                nv += y * y;
            }
            (nu > 0.0 && nv > 0.0).then(|| (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
        })
        .collect();

    let valid: Vec<f64> = per_token.iter().flatten().copied().collect();
    if valid.is_empty() {
        return param("every token has a zero-norm vector");
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    let min = valid.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SimilarityReport { per_token, mean, min })
}
