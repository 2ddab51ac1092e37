//! High-to-low-to-high pipeline: `alpha` layers on all tokens, `beta` layers
//! on cluster centers, `gamma` layers on reconstructed tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::layers::transformer_layer_forward;
use super::weights::LayerWeights;
use crate::clustering::{build_locality_map, token_clustering, ClusteringConfig, LocalityMap};
use crate::error::{shape, Error, Result};
use crate::reconstruction::{compute_relations, reconstruct, ReconstructionConfig};
use crate::resample::{adaptive_average_pool, bilinear_resize};
use crate::similarity::{cosine_similarity, SimilarityReport};
use crate::tensor::{FeatureGrid, TokenGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// All layers on the full token grid.
    Plain,
    #[default]
    Clustered,
}

/// Operator that shrinks the token grid after layer `alpha`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    #[default]
    TokenClustering,
    /// Pooling only; equivalent to clustering with `kappa = 0`.
    AdaptivePool,
}

/// Operator that restores the token grid after layer `alpha + beta`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expander {
    #[default]
    TokenReconstruction,
    /// Bilinear upsampling with half-pixel sampling.
    Bilinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub mode: PipelineMode,
    #[serde(default)]
    pub reducer: Reducer,
    #[serde(default)]
    pub expander: Expander,
}

impl PipelineConfig {
    pub fn new(alpha: usize, beta: usize, gamma: usize) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            clustering: ClusteringConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            mode: PipelineMode::Clustered,
            reducer: Reducer::TokenClustering,
            expander: Expander::TokenReconstruction,
        }
    }

    pub fn layers(&self) -> usize {
        self.alpha + self.beta + self.gamma
    }

    pub fn with_mode(mut self, mode: PipelineMode) -> Self {
        self.mode = mode;
        self
    }

    /// Token count seen by layer `l` (0-based) for an `n`-token input.
    pub fn tokens_at_layer(&self, l: usize, n: usize) -> usize {
        let clustered = self.mode == PipelineMode::Clustered && (self.alpha..self.alpha + self.beta).contains(&l);
        if clustered {
            self.clustering.target_h * self.clustering.target_w
        } else {
            n
        }
    }
}

/// Named snapshots along the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    /// Tokens after `alpha` layers.
    ZAlpha,
    /// Cluster centers right after clustering.
    SAlpha,
    /// Cluster centers after the `beta` low-resolution layers.
    SAlphaBeta,
    /// High-resolution tokens after `alpha + beta` layers (reconstructed in clustered mode).
    ZAlphaBeta,
    /// Output of the last layer.
    ZFinal,
}

impl Checkpoint {
    pub fn name(self) -> &'static str {
        match self {
            Checkpoint::ZAlpha => "z_alpha",
            Checkpoint::SAlpha => "s_alpha",
            Checkpoint::SAlphaBeta => "s_alpha_beta",
            Checkpoint::ZAlphaBeta => "z_alpha_beta",
            Checkpoint::ZFinal => "z_final",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineTrace {
    pub mode: PipelineMode,
    pub checkpoints: BTreeMap<Checkpoint, FeatureGrid>,
    /// Tokens processed by each layer.
    pub token_counts: Vec<usize>,
}

impl PipelineTrace {
    pub fn get(&self, cp: Checkpoint) -> Result<&FeatureGrid> {
        self.checkpoints
            .get(&cp)
            .ok_or_else(|| Error::Missing(format!("checkpoint {}", cp.name())))
    }

    pub fn output(&self) -> &FeatureGrid {
        &self.checkpoints[&Checkpoint::ZFinal]
    }
}

fn run_layers(mut x: FeatureGrid, layers: &[LayerWeights], counts: &mut Vec<usize>) -> Result<FeatureGrid> {
    for w in layers {
        counts.push(x.len());
        x = transformer_layer_forward(&x, w)?;
    }
    Ok(x)
}

/// Runs the layer stack in plain or clustered mode. Weights are only read.
pub fn run_pipeline(z0: &TokenGrid, weights: &[LayerWeights], cfg: &PipelineConfig) -> Result<PipelineTrace> {
    if weights.len() != cfg.layers() {
        return shape(format!(
            "{} layer weights for alpha + beta + gamma = {}",
            weights.len(),
            cfg.layers()
        ));
    }
    for w in weights {
        w.validate()?;
        if w.channels != z0.channels() {
            return shape(format!("tokens have {} channels, weights expect {}", z0.channels(), w.channels));
        }
    }
    if !z0.is_finite() {
        return Err(Error::NonFinite("input tokens".into()));
    }
    let (a, b) = (cfg.alpha, cfg.alpha + cfg.beta);
    let mut counts = Vec::with_capacity(cfg.layers());
    let mut checkpoints = BTreeMap::new();

    let z_alpha = run_layers(z0.clone(), &weights[..a], &mut counts)?;
    checkpoints.insert(Checkpoint::ZAlpha, z_alpha.clone());

    let z_ab = match cfg.mode {
        PipelineMode::Plain => run_layers(z_alpha, &weights[a..b], &mut counts)?,
        PipelineMode::Clustered => {
            let cl = &cfg.clustering;
            cl.validate_for(z_alpha.rows(), z_alpha.cols())?;
            let (s_alpha, map): (FeatureGrid, Option<LocalityMap>) = match cfg.reducer {
                Reducer::TokenClustering => {
                    let (s, m) = token_clustering(&z_alpha, cl)?;
                    (s, Some(m))
                }
                Reducer::AdaptivePool => (adaptive_average_pool(&z_alpha, cl.target_h, cl.target_w)?, None),
            };
            let s_ab = run_layers(s_alpha.clone(), &weights[a..b], &mut counts)?;
            let z = match cfg.expander {
                Expander::TokenReconstruction => {
                    let map = match map {
                        Some(m) => m,
                        None => build_locality_map(
                            z_alpha.rows(),
                            z_alpha.cols(),
                            cl.target_h,
                            cl.target_w,
                            cl.lambda_h,
                            cl.lambda_w,
                        )?,
                    };
                    let rel = compute_relations(&z_alpha, &s_alpha, Some(&map), &cfg.reconstruction)?;
                    reconstruct(&rel, &s_ab)?
                }
                Expander::Bilinear => bilinear_resize(&s_ab, z_alpha.rows(), z_alpha.cols(), false)?,
            };
            checkpoints.insert(Checkpoint::SAlpha, s_alpha);
            checkpoints.insert(Checkpoint::SAlphaBeta, s_ab);
            z
        }
    };
    checkpoints.insert(Checkpoint::ZAlphaBeta, z_ab.clone());
    let z_final = run_layers(z_ab, &weights[b..], &mut counts)?;
    checkpoints.insert(Checkpoint::ZFinal, z_final);
    Ok(PipelineTrace { mode: cfg.mode, checkpoints, token_counts: counts })
}

/// Cosine similarity at the high-resolution checkpoints `ZAlphaBeta` and `ZFinal`.
pub fn measure_fidelity(
    clustered: &PipelineTrace,
    plain: &PipelineTrace,
) -> Result<BTreeMap<Checkpoint, SimilarityReport>> {
    [Checkpoint::ZAlphaBeta, Checkpoint::ZFinal]
        .into_iter()
        .map(|cp| Ok((cp, cosine_similarity(clustered.get(cp)?, plain.get(cp)?)?)))
        .collect()
}
