//! Token clustering: locality-masked soft k-means over a token grid.
//!
//! Centers start from adaptive average pooling of the token grid and are
//! refined by `kappa` rounds of
//!
//! * an E-step, where each token takes a softmax over `-||z_p - s_i||^2 / tau`
//!   restricted to the cluster cells in a `lambda_h x lambda_w` window around
//!   its home cell, and
//! * an M-step, where each center becomes the assignment-weighted mean of the
//!   tokens that reach it (each cluster's column of weights is renormalized to
//!   sum to one, so centers stay inside the convex hull of the tokens).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Result};
use crate::resample::adaptive_average_pool;
use crate::tensor::{ClusterGrid, FeatureGrid, TokenGrid};

/// Column mass below which a cluster counts as empty and keeps its previous center.
pub const EMPTY_CLUSTER_MASS: f64 = 1e-16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub target_h: usize,
    pub target_w: usize,
    pub lambda_h: usize,
    pub lambda_w: usize,
    pub kappa: usize,
    pub tau: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { target_h: 28, target_w: 28, lambda_h: 5, lambda_w: 5, kappa: 5, tau: 50.0 }
    }
}

impl ClusteringConfig {
    pub fn new(target_h: usize, target_w: usize) -> Self {
        Self { target_h, target_w, ..Self::default() }
    }

    pub fn with_lambda(mut self, lambda_h: usize, lambda_w: usize) -> Self {
        self.lambda_h = lambda_h;
        self.lambda_w = lambda_w;
        self
    }

    pub fn with_kappa(mut self, kappa: usize) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    /// Checks the hyper-parameters alone, without a token grid.
    pub fn validate_params(&self) -> Result<()> {
        validate_lambda(self.lambda_h, self.lambda_w)?;
        validate_tau(self.tau)
    }

    pub fn validate_for(&self, token_rows: usize, token_cols: usize) -> Result<()> {
        self.validate_params()?;
        validate_dims(token_rows, token_cols, self.target_h, self.target_w)
    }
}

pub(crate) fn validate_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return param(format!("temperature must be positive and finite, got {tau}"));
    }
    Ok(())
}

fn validate_lambda(lh: usize, lw: usize) -> Result<()> {
    if lh == 0 || lw == 0 || lh.is_multiple_of(2) || lw.is_multiple_of(2) {
        return param(format!("locality window sides must be odd and >= 1, got {lh}x{lw}"));
    }
    Ok(())
}

fn validate_dims(rows: usize, cols: usize, h: usize, w: usize) -> Result<()> {
    if rows == 0 || cols == 0 || h == 0 || w == 0 || h > rows || w > cols {
        return param(format!(
            "cluster grid {h}x{w} must be non-empty and no larger than token grid {rows}x{cols}"
        ));
    }
    Ok(())
}

/// Candidate cluster cells for every token, stored in compressed rows.
///
/// Candidates of token `p` are `indices[offsets[p]..offsets[p + 1]]`, a
/// row-major walk of a rectangle of cluster cells, so they are sorted
/// ascending. The inverse lists map each cluster to the `(token, slot)` pairs
/// that reference it, with tokens ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalityMap {
    token_rows: usize,
    token_cols: usize,
    cluster_rows: usize,
    cluster_cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    member_offsets: Vec<usize>,
    members: Vec<(usize, usize)>,
}

impl LocalityMap {
    pub fn token_dims(&self) -> (usize, usize) {
        (self.token_rows, self.token_cols)
    }

    pub fn cluster_dims(&self) -> (usize, usize) {
        (self.cluster_rows, self.cluster_cols)
    }

    pub fn num_tokens(&self) -> usize {
        self.token_rows * self.token_cols
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_rows * self.cluster_cols
    }

    pub fn candidates(&self, p: usize) -> &[usize] {
        &self.indices[self.offsets[p]..self.offsets[p + 1]]
    }

    /// Slot range of token `p` in any per-candidate array aligned with this map.
    pub fn slots(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p]..self.offsets[p + 1]
    }

    /// `(token, slot)` pairs whose candidate is cluster `i`.
    pub fn members(&self, i: usize) -> &[(usize, usize)] {
        &self.members[self.member_offsets[i]..self.member_offsets[i + 1]]
    }

    pub fn total_slots(&self) -> usize {
        self.indices.len()
    }

    /// Cluster cell whose pooling block contains token `(y, x)`.
    pub fn home_cell(&self, y: usize, x: usize) -> (usize, usize) {
        (y * self.cluster_rows / self.token_rows, x * self.cluster_cols / self.token_cols)
    }

    fn matches(&self, tokens: &FeatureGrid, clusters: &FeatureGrid) -> Result<()> {
        if tokens.rows() != self.token_rows
            || tokens.cols() != self.token_cols
            || clusters.len() != self.num_clusters()
            || tokens.channels() != clusters.channels()
        {
            return shape(format!(
                "locality map {}x{} -> {}x{} does not fit tokens {}x{}x{} / clusters {}x{}x{}",
                self.token_rows,
                self.token_cols,
                self.cluster_rows,
                self.cluster_cols,
                tokens.rows(),
                tokens.cols(),
                tokens.channels(),
                clusters.rows(),
                clusters.cols(),
                clusters.channels()
            ));
        }
        Ok(())
    }
}

/// Builds the candidate lists: the `lambda_h x lambda_w` rectangle of cluster
/// cells centered on each token's home cell, clipped to the cluster grid.
pub fn build_locality_map(
    token_rows: usize,
    token_cols: usize,
    h: usize,
    w: usize,
    lambda_h: usize,
    lambda_w: usize,
) -> Result<LocalityMap> {
    validate_dims(token_rows, token_cols, h, w)?;
    validate_lambda(lambda_h, lambda_w)?;
    let (rh, rw) = (lambda_h / 2, lambda_w / 2);
    let n = token_rows * token_cols;

    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    offsets.push(0);
    for y in 0..token_rows {
        let hy = y * h / token_rows;
        let (y0, y1) = (hy.saturating_sub(rh), (hy + rh).min(h - 1));
        for x in 0..token_cols {
            let hx = x * w / token_cols;
            let (x0, x1) = (hx.saturating_sub(rw), (hx + rw).min(w - 1));
            for cy in y0..=y1 {
                indices.extend((x0..=x1).map(|cx| cy * w + cx));
            }
            offsets.push(indices.len());
        }
    }

    let mut counts = vec![0usize; h * w];
    for &i in &indices {
        counts[i] += 1;
    }
    let mut member_offsets = Vec::with_capacity(h * w + 1);
    member_offsets.push(0);
    for c in &counts {
        member_offsets.push(member_offsets.last().unwrap() + c);
    }
    let mut cursor = member_offsets.clone();
    let mut members = vec![(0, 0); indices.len()];
    for p in 0..n {
        for slot in offsets[p]..offsets[p + 1] {
            let i = indices[slot];
            members[cursor[i]] = (p, slot);
            cursor[i] += 1;
        }
    }

    Ok(LocalityMap {
        token_rows,
        token_cols,
        cluster_rows: h,
        cluster_cols: w,
        offsets,
        indices,
        member_offsets,
        members,
    })
}

/// Soft assignments `Q[p, i]` aligned slot-for-slot with a [`LocalityMap`].
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentWeights {
    weights: Vec<f64>,
}

impl AssignmentWeights {
    /// Wraps raw per-slot weights; the length must match the map.
    pub fn from_slots(map: &LocalityMap, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != map.total_slots() {
            return shape(format!(
                "expected {} assignment weights, got {}",
                map.total_slots(),
                weights.len()
            ));
        }
        Ok(Self { weights })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Weights of token `p`, in the order of `map.candidates(p)`.
    pub fn row<'a>(&'a self, map: &LocalityMap, p: usize) -> &'a [f64] {
        &self.weights[map.slots(p)]
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Softmax of `logits` in place, with max subtraction.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// E-step: `Q[p, i] = softmax_i(-||z_p - s_i||^2 / tau)` over the candidates of `p`.
pub fn e_step(
    tokens: &TokenGrid,
    centers: &ClusterGrid,
    map: &LocalityMap,
    tau: f64,
) -> Result<AssignmentWeights> {
    map.matches(tokens, centers)?;
    validate_tau(tau)?;
    let weights = (0..map.num_tokens())
        .into_par_iter()
        .flat_map_iter(|p| {
            let z = tokens.token(p);
            let mut row: Vec<f64> = map
                .candidates(p)
                .iter()
                .map(|&i| -squared_distance(z, centers.token(i)) / tau)
                .collect();
            softmax_in_place(&mut row);
            row
        })
        .collect();
    Ok(AssignmentWeights { weights })
}

/// M-step: each center becomes `sum_p (Q[p, i] / W_i) z_p` with `W_i = sum_p Q[p, i]`.
///
/// Clusters whose mass `W_i` is below [`EMPTY_CLUSTER_MASS`] keep their
/// center from `previous`.
pub fn m_step(
    tokens: &TokenGrid,
    assignments: &AssignmentWeights,
    map: &LocalityMap,
    previous: &ClusterGrid,
) -> Result<ClusterGrid> {
    map.matches(tokens, previous)?;
    if assignments.weights.len() != map.total_slots() {
        return shape("assignment weights do not match the locality map");
    }
    let c = tokens.channels();
    let data: Vec<f32> = (0..map.num_clusters())
        .into_par_iter()
        .flat_map_iter(|i| {
            let members = map.members(i);
            let mass: f64 = members.iter().map(|&(_, slot)| assignments.weights[slot]).sum();
            if mass < EMPTY_CLUSTER_MASS {
                return previous.token(i).to_vec();
            }
            let mut acc = vec![0.0f64; c];
            for &(p, slot) in members {
                let q = assignments.weights[slot] / mass;
                for (a, &v) in acc.iter_mut().zip(tokens.token(p)) {
                    *a += q * f64::from(v);
                }
            }
            acc.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    FeatureGrid::new(previous.rows(), previous.cols(), c, data)
}

/// Runs the full clustering layer: pooled initialization followed by
/// `kappa` E/M rounds. Returns the centers and the locality map so the
/// reconstruction layer can reuse the same neighbourhoods.
pub fn token_clustering(
    tokens: &TokenGrid,
    cfg: &ClusteringConfig,
) -> Result<(ClusterGrid, LocalityMap)> {
    cfg.validate_for(tokens.rows(), tokens.cols())?;
    let map = build_locality_map(
        tokens.rows(),
        tokens.cols(),
        cfg.target_h,
        cfg.target_w,
        cfg.lambda_h,
        cfg.lambda_w,
    )?;
    let mut centers = adaptive_average_pool(tokens, cfg.target_h, cfg.target_w)?;
    for _ in 0..cfg.kappa {
        let q = e_step(tokens, &centers, &map, cfg.tau)?;
        centers = m_step(tokens, &q, &map, &centers)?;
    }
    Ok((centers, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_covering_grid_selects_all_clusters() {
        let map = build_locality_map(4, 4, 2, 2, 3, 3).unwrap();
        for p in 0..16 {
            assert_eq!(map.candidates(p), &[0, 1, 2, 3]);
        }
    }

    #[test]
    fn unit_window_selects_home_cell() {
        let map = build_locality_map(6, 6, 3, 3, 1, 1).unwrap();
        assert_eq!(map.candidates(0), &[0]);
        assert_eq!(map.candidates(5 * 6 + 5), &[8]);
        assert_eq!(map.candidates(2 * 6 + 3), &[4]);
    }

    #[test]
    fn interior_token_window_matches_enumeration() {
        let map = build_locality_map(8, 8, 4, 4, 3, 3).unwrap();
        let p = 3 * 8 + 3;
        assert_eq!(map.home_cell(3, 3), (1, 1));
        // cells (cy, cx) with |cy - 1| <= 1 and |cx - 1| <= 1
        let mut expected = vec![];
        for cell in 0..16usize {
            let (cy, cx) = ((cell / 4) as isize, (cell % 4) as isize);
            if (cy - 1).abs() <= 1 && (cx - 1).abs() <= 1 {
                expected.push(cell);
            }
        }
        assert_eq!(expected, vec![0, 1, 2, 4, 5, 6, 8, 9, 10]);
        assert_eq!(map.candidates(p), expected.as_slice());
    }

    #[test]
    fn invalid_map_parameters() {
        assert!(build_locality_map(4, 4, 5, 2, 3, 3).is_err());
        assert!(build_locality_map(4, 4, 2, 2, 2, 3).is_err());
        assert!(build_locality_map(4, 4, 0, 2, 3, 3).is_err());
    }

    #[test]
    fn inverse_lists_agree_with_rows() {
        let map = build_locality_map(7, 5, 3, 2, 3, 1).unwrap();
        for i in 0..map.num_clusters() {
            for &(p, slot) in map.members(i) {
                assert!(map.slots(p).contains(&slot));
                assert_eq!(map.indices[slot], i);
            }
        }
        let total: usize = (0..map.num_clusters()).map(|i| map.members(i).len()).sum();
        assert_eq!(total, map.total_slots());
    }

    fn one_token(v: &[f32]) -> FeatureGrid {
        FeatureGrid::new(1, 1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn single_candidate_gets_full_weight() {
        let map = build_locality_map(1, 1, 1, 1, 1, 1).unwrap();
        let q = e_step(&one_token(&[3.0]), &one_token(&[-7.0]), &map, 50.0).unwrap();
        assert_eq!(q.as_slice(), &[1.0]);
    }

    #[test]
    fn equidistant_candidates_split_evenly() {
        let tokens = FeatureGrid::new(1, 2, 1, vec![1.0, 1.0]).unwrap();
        let centers = FeatureGrid::new(1, 2, 1, vec![0.0, 2.0]).unwrap();
        let map = build_locality_map(1, 2, 1, 2, 1, 3).unwrap();
        let q = e_step(&tokens, &centers, &map, 3.0).unwrap();
        assert_eq!(q.row(&map, 0), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_of_zero_and_tau() {
        let tau = 4.0;
        let tokens = FeatureGrid::new(1, 2, 1, vec![0.0, 0.0]).unwrap();
        let centers = FeatureGrid::new(1, 2, 1, vec![0.0, 2.0]).unwrap();
        let map = build_locality_map(1, 2, 1, 2, 1, 3).unwrap();
        let q = e_step(&tokens, &centers, &map, tau).unwrap();
        let e = (-1.0f64).exp();
        let row = q.row(&map, 0);
        assert!((row[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((row[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((row[0] - 0.7311).abs() < 1e-4 && (row[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn m_step_single_cluster_is_mean() {
        let tokens = FeatureGrid::new(2, 2, 2, vec![1.0, 0.0, 2.0, 4.0, 3.0, -4.0, 6.0, 2.0]).unwrap();
        let map = build_locality_map(2, 2, 1, 1, 1, 1).unwrap();
        let q = AssignmentWeights::from_slots(&map, vec![1.0; 4]).unwrap();
        let prev = FeatureGrid::zeros(1, 1, 2).unwrap();
        let s = m_step(&tokens, &q, &map, &prev).unwrap();
        assert_eq!(s.data(), &[3.0, 0.5]);
    }

    #[test]
    fn m_step_convex_combination() {
        let tokens = FeatureGrid::new(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let map = build_locality_map(1, 2, 1, 1, 1, 1).unwrap();
        let q = AssignmentWeights::from_slots(&map, vec![0.25, 0.75]).unwrap();
        let prev = FeatureGrid::zeros(1, 1, 1).unwrap();
        assert_eq!(m_step(&tokens, &q, &map, &prev).unwrap().data(), &[2.5]);
    }

    #[test]
    fn empty_cluster_keeps_previous_center() {
        let tokens = FeatureGrid::new(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let map = build_locality_map(1, 2, 1, 2, 1, 3).unwrap();
        // all mass on cluster 0
        let q = AssignmentWeights::from_slots(&map, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let prev = FeatureGrid::new(1, 2, 1, vec![9.0, -9.0]).unwrap();
        let s = m_step(&tokens, &q, &map, &prev).unwrap();
        assert_eq!(s.data(), &[2.0, -9.0]);
    }

    #[test]
    fn zero_iterations_is_pooling() {
        let z = FeatureGrid::from_fn(6, 5, 3, |y, x, c| ((y * 13 + x * 7 + c * 3) % 11) as f32).unwrap();
        let cfg = ClusteringConfig::new(3, 2).with_kappa(0);
        let (s, _) = token_clustering(&z, &cfg).unwrap();
        assert_eq!(s, adaptive_average_pool(&z, 3, 2).unwrap());
        let (same, _) = token_clustering(&z, &ClusteringConfig::new(6, 5).with_kappa(0)).unwrap();
        assert_eq!(same, z);
    }

    #[test]
    fn rejects_bad_config() {
        let z = FeatureGrid::zeros(4, 4, 1).unwrap();
        assert!(token_clustering(&z, &ClusteringConfig::new(5, 2)).is_err());
        assert!(token_clustering(&z, &ClusteringConfig::new(2, 2).with_tau(0.0)).is_err());
        assert!(token_clustering(&z, &ClusteringConfig::new(2, 2).with_lambda(4, 3)).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (FeatureGrid, ClusteringConfig)> {
        (1usize..9, 1usize..9, 1usize..4).prop_flat_map(|(r, c, ch)| {
            (
                prop::collection::vec(-5.0f32..5.0, r * c * ch),
                1..=r,
                1..=c,
                0usize..3,
                0usize..3,
                0usize..4,
                0.05f64..100.0,
            )
                .prop_map(move |(v, h, w, lh, lw, kappa, tau)| {
                    let grid = FeatureGrid::new(r, c, ch, v).unwrap();
                    let cfg = ClusteringConfig {
                        target_h: h,
                        target_w: w,
                        lambda_h: 2 * lh + 1,
                        lambda_w: 2 * lw + 1,
                        kappa,
                        tau,
                    };
                    (grid, cfg)
                })
        })
    }

    proptest! {
        #[test]
        fn e_rows_normalized_and_centers_in_hull((z, cfg) in arb_case()) {
            let (s, map) = token_clustering(&z, &cfg).unwrap();
            let q = e_step(&z, &s, &map, cfg.tau).unwrap();
            for p in 0..map.num_tokens() {
                let sum: f64 = q.row(&map, p).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-5);
                prop_assert!(q.row(&map, p).iter().all(|&w| w >= 0.0));
            }
            let bounds = z.channel_bounds();
            for center in s.tokens() {
                for (&v, &(lo, hi)) in center.iter().zip(&bounds) {
                    prop_assert!(v >= lo && v <= hi);
                }
            }
        }

        #[test]
        fn constant_input_is_a_fixed_point((z, cfg) in arb_case(), value in -10.0f32..10.0) {
            let constant = FeatureGrid::new(z.rows(), z.cols(), z.channels(), vec![value; z.data().len()]).unwrap();
            let (s, _) = token_clustering(&constant, &cfg).unwrap();
            prop_assert!(s.data().iter().all(|&v| v == value));
        }

        #[test]
        fn locality_is_monotone_in_window(r in 1usize..10, c in 1usize..10, fh in 0.0f64..1.0, fw in 0.0f64..1.0, l in 0usize..3) {
            let h = 1 + (fh * (r - 1) as f64) as usize;
            let w = 1 + (fw * (c - 1) as f64) as usize;
            let small = build_locality_map(r, c, h, w, 2 * l + 1, 2 * l + 1).unwrap();
            let large = build_locality_map(r, c, h, w, 2 * l + 3, 2 * l + 3).unwrap();
            for p in 0..r * c {
                prop_assert!(!small.candidates(p).is_empty());
                for i in small.candidates(p) {
                    prop_assert!(large.candidates(p).contains(i));
                }
            }
        }
    }
}
