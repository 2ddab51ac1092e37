//! Token reconstruction: rebuild a full-resolution token grid from refined
//! cluster features.
//!
//! Relations are estimated once, between the tokens and the cluster centers
//! *before* refinement. Each token keeps its k nearest centers (every center
//! tied with the k-th distance is kept as well) and weighs them by a softmax
//! over `-d^2 / tau`. The same weights are then applied to the refined
//! centers.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{softmax_in_place, squared_distance, validate_tau, LocalityMap};
use crate::error::{param, shape, Error, Result};
use crate::tensor::{ClusterGrid, FeatureGrid, TokenGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// k nearest centers over the whole cluster grid.
    #[default]
    KnnGlobal,
    /// The clustering layer's locality window; `k` is ignored.
    Locality,
}

/// Logit applied to a token/center pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKernel {
    /// `-||z - s||^2 / tau`
    #[default]
    SquaredOverTau,
    /// `-tau * ||z - s||`, kept for compatibility with existing checkpoints tuned for it.
    DistanceTimesTau,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub k: usize,
    pub tau: f64,
    #[serde(default)]
    pub candidate_mode: CandidateMode,
    #[serde(default)]
    pub kernel: WeightKernel,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            k: 20,
            tau: 50.0,
            candidate_mode: CandidateMode::KnnGlobal,
            kernel: WeightKernel::SquaredOverTau,
        }
    }
}

impl ReconstructionConfig {
    pub fn new(k: usize, tau: f64) -> Self {
        Self { k, tau, ..Self::default() }
    }

    pub fn with_mode(mut self, mode: CandidateMode) -> Self {
        self.candidate_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return param("k must be at least 1");
        }
        validate_tau(self.tau)
    }

    #[inline]
    fn logit(&self, d2: f64) -> f64 {
        match self.kernel {
            WeightKernel::SquaredOverTau => -d2 / self.tau,
            WeightKernel::DistanceTimesTau => -self.tau * d2.sqrt(),
        }
    }
}

/// Per-token `(cluster, weight)` lists in compressed rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionWeights {
    token_rows: usize,
    token_cols: usize,
    num_clusters: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl ReconstructionWeights {
    pub fn token_dims(&self) -> (usize, usize) {
        (self.token_rows, self.token_cols)
    }

    pub fn num_tokens(&self) -> usize {
        self.token_rows * self.token_cols
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    /// Cluster indices (ascending) and weights selected for token `p`.
    pub fn neighbors(&self, p: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[p]..self.offsets[p + 1];
        (&self.indices[r.clone()], &self.weights[r])
    }

    /// Builds weights from explicit per-token lists.
    pub fn from_lists(
        token_rows: usize,
        token_cols: usize,
        num_clusters: usize,
        lists: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        if lists.len() != token_rows * token_cols {
            return shape(format!(
                "{} neighbour lists for a {token_rows}x{token_cols} grid",
                lists.len()
            ));
        }
        let mut offsets = vec![0];
        let (mut indices, mut weights) = (vec![], vec![]);
        for list in lists {
            if list.is_empty() {
                return param("every token needs at least one neighbour");
            }
            for (i, w) in list {
                indices.push(i);
                weights.push(w);
            }
            offsets.push(indices.len());
        }
        Ok(Self { token_rows, token_cols, num_clusters, offsets, indices, weights })
    }
}

/// Indices of the `k` smallest distances plus every index tied with the k-th.
fn select_knn(d2: &[f64], k: usize) -> Vec<usize> {
    if k >= d2.len() {
        return (0..d2.len()).collect();
    }
    let mut sorted = d2.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let kth = *kth;
    (0..d2.len()).filter(|&i| d2[i] <= kth).collect()
}

/// Estimates reconstruction weights from pre-refinement tokens and centers.
///
/// `map` is required for [`CandidateMode::Locality`] and ignored otherwise.
pub fn compute_relations(
    tokens_pre: &TokenGrid,
    centers_pre: &ClusterGrid,
    map: Option<&LocalityMap>,
    cfg: &ReconstructionConfig,
) -> Result<ReconstructionWeights> {
    cfg.validate()?;
    if tokens_pre.channels() != centers_pre.channels() {
        return shape(format!(
            "token channels {} != center channels {}",
            tokens_pre.channels(),
            centers_pre.channels()
        ));
    }
    let hw = centers_pre.len();
    let n = tokens_pre.len();
    let map = match cfg.candidate_mode {
        CandidateMode::KnnGlobal => {
            if cfg.k > hw {
                return param(format!("k = {} exceeds the {hw} available clusters", cfg.k));
            }
            None
        }
        CandidateMode::Locality => {
            let map = map.ok_or_else(|| {
                Error::Parameter("locality candidate mode needs a locality map".into())
            })?;
            if map.token_dims() != (tokens_pre.rows(), tokens_pre.cols()) || map.num_clusters() != hw {
                return shape("locality map does not match the token and cluster grids");
            }
            Some(map)
        }
    };

    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|p| {
            let z = tokens_pre.token(p);
            let (selected, d2): (Vec<usize>, Vec<f64>) = match map {
                Some(map) => map
                    .candidates(p)
                    .iter()
                    .map(|&i| (i, squared_distance(z, centers_pre.token(i))))
                    .unzip(),
                None => {
                    let all: Vec<f64> = centers_pre.tokens().map(|s| squared_distance(z, s)).collect();
                    let sel = select_knn(&all, cfg.k);
                    let d = sel.iter().map(|&i| all[i]).collect();
                    (sel, d)
                }
            };
            let mut w: Vec<f64> = d2.into_iter().map(|d| cfg.logit(d)).collect();
            softmax_in_place(&mut w);
            (selected, w)
        })
        .collect();

    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    let (mut indices, mut weights) = (Vec::new(), Vec::new());
    for (sel, w) in rows {
        indices.extend(sel);
        weights.extend(w);
        offsets.push(indices.len());
    }
    Ok(ReconstructionWeights {
        token_rows: tokens_pre.rows(),
        token_cols: tokens_pre.cols(),
        num_clusters: hw,
        offsets,
        indices,
        weights,
    })
}

/// Applies reconstruction weights to refined centers: `z_p = sum_i w[p, i] s_i`.
pub fn reconstruct(weights: &ReconstructionWeights, refined: &ClusterGrid) -> Result<TokenGrid> {
    if let Some(&bad) = weights.indices.iter().find(|&&i| i >= refined.len()) {
        return Err(Error::Index(format!(
            "cluster {bad} out of range for {} refined centers",
            refined.len()
        )));
    }
    let c = refined.channels();
    let data: Vec<f32> = (0..weights.num_tokens())
        .into_par_iter()
        .flat_map_iter(|p| {
            let (idx, w) = weights.neighbors(p);
            let mut acc = vec![0.0f64; c];
            for (&i, &wi) in idx.iter().zip(w) {
                for (a, &v) in acc.iter_mut().zip(refined.token(i)) {
                    *a += wi * f64::from(v);
                }
            }
            acc.into_iter().map(|v| v as f32)
        })
        .collect();
    FeatureGrid::new(weights.token_rows, weights.token_cols, c, data)
}

/// Gathers the listed tokens into an `n x 1` grid.
pub fn gather_tokens(grid: &TokenGrid, indices: &[usize]) -> Result<FeatureGrid> {
    let mut data = Vec::with_capacity(indices.len() * grid.channels());
    for &i in indices {
        if i >= grid.len() {
            return Err(Error::Index(format!("token {i} out of range for {} tokens", grid.len())));
        }
        data.extend_from_slice(grid.token(i));
    }
    FeatureGrid::from_tokens(indices.len(), grid.channels(), data)
}

/// Reconstructs a full grid from a refined subset of its tokens.
///
/// The kept tokens' pre-refinement features act as cluster centers and
/// relations are always k-NN over the subset (`cfg.candidate_mode` is not
/// consulted). Kept positions are reconstructed through the same weights as
/// every other token rather than copied through.
pub fn reconstruct_from_subset(
    tokens_pre: &TokenGrid,
    kept: &[usize],
    refined_subset: &FeatureGrid,
    cfg: &ReconstructionConfig,
) -> Result<TokenGrid> {
    if kept.is_empty() {
        return param("at least one token must be kept");
    }
    let mut seen = vec![false; tokens_pre.len()];
    for &i in kept {
        if i >= tokens_pre.len() {
            return Err(Error::Index(format!("kept token {i} out of range")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return param(format!("kept token {i} listed twice"));
        }
    }
    if refined_subset.len() != kept.len() || refined_subset.channels() != tokens_pre.channels() {
        return shape(format!(
            "refined subset has {} tokens x {} channels, expected {} x {}",
            refined_subset.len(),
            refined_subset.channels(),
            kept.len(),
            tokens_pre.channels()
        ));
    }
    if cfg.k > kept.len() {
        return param(format!("k = {} exceeds the {} kept tokens", cfg.k, kept.len()));
    }
    let centers_pre = gather_tokens(tokens_pre, kept)?;
    let knn = ReconstructionConfig { candidate_mode: CandidateMode::KnnGlobal, ..*cfg };
    let weights = compute_relations(tokens_pre, &centers_pre, None, &knn)?;
    reconstruct(&weights, refined_subset)
}
