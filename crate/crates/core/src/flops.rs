//! Analytic floating-point operation counts for plain and clustered pipelines.
//!
//! Counts are exact integers. A multiply-add is 2 operations; see
//! [`CONVENTIONS`] for the full itemization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::reconstruction::CandidateMode;
use crate::vit::{Expander, PipelineConfig, PipelineMode, Reducer};

pub const CONVENTIONS: &str = "multiply-add = 2 ops; \
qkv projections 6nC^2, output projection 2nC^2; \
attention scores 2n*span*C, attention apply 2n*span*C (span = n, or window tokens); \
ffn 4m*n*C^2; layer norm 8 ops/element x2; softmax 6 ops/logit; \
bias adds (5+m)nC; gelu 8 ops/hidden element; residual adds 2nC; \
clustering: pool nC+hwC, per EM round distance 2n*lambda*C, softmax 5n*lambda, \
mass n*lambda, weighted sum 2n*lambda*C, normalize hwC; \
reconstruction: distances 2n*cand*C (+ n*hw selection for global k-NN), \
softmax 5n*k, weighted sum 2n*k*C; bilinear 7nC";

/// Backbone shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: usize,
    pub channels: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub token_rows: usize,
    pub token_cols: usize,
    /// Attention window side for windowed backbones.
    #[serde(default)]
    pub window: Option<usize>,
}

impl ArchSpec {
    /// ViT-L/16 on a 40x40 token grid.
    pub fn vit_large() -> Self {
        Self { layers: 24, channels: 1024, heads: 16, mlp_ratio: 4, token_rows: 40, token_cols: 40, window: None }
    }

    pub fn tokens(&self) -> usize {
        self.token_rows * self.token_cols
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.layers, self.channels, self.heads, self.mlp_ratio, self.token_rows, self.token_cols];
        if dims.contains(&0) {
            return param("architecture dimensions must be positive");
        }
        if !self.channels.is_multiple_of(self.heads) {
            return param(format!("{} channels are not divisible by {} heads", self.channels, self.heads));
        }
        if let Some(k) = self.window {
            if k == 0 || !self.token_rows.is_multiple_of(k) || !self.token_cols.is_multiple_of(k) {
                return param(format!("window {k} does not tile the {}x{} grid", self.token_rows, self.token_cols));
            }
        }
        Ok(())
    }

    fn num_windows(&self) -> u64 {
        match self.window {
            Some(k) => ((self.token_rows / k) * (self.token_cols / k)) as u64,
            None => 1,
        }
    }
}

/// Itemized cost of one transformer layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub qkv_projection: u64,
    pub attention_scores: u64,
    pub attention_apply: u64,
    pub output_projection: u64,
    pub ffn: u64,
    pub layer_norm: u64,
    pub softmax: u64,
    pub bias_adds: u64,
    pub gelu: u64,
    pub residual: u64,
    pub position_bias: u64,
}

impl LayerFlops {
    pub fn total(&self) -> u64 {
        self.qkv_projection
            + self.attention_scores
            + self.attention_apply
            + self.output_projection
            + self.ffn
            + self.layer_norm
            + self.softmax
            + self.bias_adds
            + self.gelu
            + self.residual
            + self.position_bias
    }
}

/// Layer cost for `n` tokens where each query attends to `span` keys.
fn layer_with_span(n: u64, span: u64, spec: &ArchSpec, windowed: bool) -> LayerFlops {
    let c = spec.channels as u64;
    let m = spec.mlp_ratio as u64;
    let h = spec.heads as u64;
    LayerFlops {
        qkv_projection: 6 * n * c * c,
        attention_scores: 2 * n * span * c,
        attention_apply: 2 * n * span * c,
        output_projection: 2 * n * c * c,
        ffn: 4 * m * n * c * c,
        layer_norm: 2 * 8 * n * c,
        softmax: 6 * h * n * span,
        bias_adds: (5 + m) * n * c,
        gelu: 8 * m * n * c,
        residual: 2 * n * c,
        position_bias: if windowed { h * n * span } else { 0 },
    }
}

/// Cost of one layer on `n` tokens. Windowed specs attend within `n / windows` tokens.
pub fn flops_transformer_layer(n: usize, spec: &ArchSpec) -> LayerFlops {
    let n = n as u64;
    let span = (n / spec.num_windows()).max(1);
    layer_with_span(n, span, spec, spec.window.is_some())
}

/// Cost of the clustering layer; `lambda` is the candidate count per token.
pub fn flops_clustering(n: usize, hw: usize, lambda: usize, kappa: usize, channels: usize) -> u64 {
    let (n, hw, l, c) = (n as u64, hw as u64, lambda as u64, channels as u64);
    let pool = n * c + hw * c;
    let round = 2 * n * l * c + 5 * n * l + n * l + 2 * n * l * c + hw * c;
    pool + kappa as u64 * round
}

/// Cost of the reconstruction layer. For global k-NN `neighbors` is `k`;
/// for the locality mode it is the candidate count.
pub fn flops_reconstruction(n: usize, hw: usize, neighbors: usize, channels: usize, mode: CandidateMode) -> u64 {
    let (n, hw, k, c) = (n as u64, hw as u64, neighbors as u64, channels as u64);
    let distances = match mode {
        CandidateMode::KnnGlobal => 2 * n * hw * c + n * hw,
        CandidateMode::Locality => 2 * n * k * c,
    };
    distances + 5 * n * k + 2 * n * k * c
}

fn flops_bilinear(n: usize, channels: usize) -> u64 {
    7 * (n * channels) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub component: String,
    pub n_tokens: usize,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub conventions: String,
    pub rows: Vec<FlopsRow>,
    pub total: u64,
    /// Plain pipeline: every layer on all tokens.
    pub baseline_total: u64,
    pub ratio: f64,
}

impl FlopsReport {
    pub fn gflops(&self) -> f64 {
        self.total as f64 / 1e9
    }

    /// Sum of the rows whose component name starts with `prefix`.
    pub fn component_total(&self, prefix: &str) -> u64 {
        self.rows.iter().filter(|r| r.component.starts_with(prefix)).map(|r| r.flops).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// CSV with columns `component,n_tokens,flops`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Candidate count of a `lambda_h x lambda_w` window on an `h x w` cluster grid.
fn lambda_count(cfg: &PipelineConfig) -> usize {
    let cl = &cfg.clustering;
    cl.lambda_h.min(cl.target_h) * cl.lambda_w.min(cl.target_w)
}

/// Costs of `cfg` on `spec`, itemized per layer plus the inserted layers.
pub fn flops_pipeline(cfg: &PipelineConfig, spec: &ArchSpec) -> Result<FlopsReport> {
    spec.validate()?;
    if cfg.layers() != spec.layers {
        return param(format!("alpha + beta + gamma = {} but the backbone has {} layers", cfg.layers(), spec.layers));
    }
    let n = spec.tokens();
    let c = spec.channels;
    let hw = cfg.clustering.target_h * cfg.clustering.target_w;
    if cfg.mode == PipelineMode::Clustered && (hw == 0 || hw > n) {
        return param(format!("cluster grid of {hw} tokens for {n} input tokens"));
    }
    let mut rows = Vec::with_capacity(spec.layers + 2);
    let layer_row = |rows: &mut Vec<FlopsRow>, l: usize| {
        let tokens = cfg.tokens_at_layer(l, n);
        rows.push(FlopsRow {
            component: format!("layer{l:02}"),
            n_tokens: tokens,
            flops: flops_transformer_layer(tokens, spec).total(),
        });
    };
    for l in 0..cfg.alpha {
        layer_row(&mut rows, l);
    }
    if cfg.mode == PipelineMode::Clustered {
        let kappa = match cfg.reducer {
            Reducer::TokenClustering => cfg.clustering.kappa,
            Reducer::AdaptivePool => 0,
        };
        rows.push(FlopsRow {
            component: "clustering".into(),
            n_tokens: n,
            flops: flops_clustering(n, hw, lambda_count(cfg), kappa, c),
        });
    }
    for l in cfg.alpha..cfg.alpha + cfg.beta {
        layer_row(&mut rows, l);
    }
    if cfg.mode == PipelineMode::Clustered {
        let flops = match cfg.expander {
            Expander::TokenReconstruction => {
                let mode = cfg.reconstruction.candidate_mode;
                let k = match mode {
                    CandidateMode::KnnGlobal => cfg.reconstruction.k.min(hw),
                    CandidateMode::Locality => lambda_count(cfg),
                };
                flops_reconstruction(n, hw, k, c, mode)
            }
            Expander::Bilinear => flops_bilinear(n, c),
        };
        rows.push(FlopsRow { component: "reconstruction".into(), n_tokens: n, flops });
    }
    for l in cfg.alpha + cfg.beta..cfg.layers() {
        layer_row(&mut rows, l);
    }
    let total = rows.iter().map(|r| r.flops).sum();
    let baseline_total = spec.layers as u64 * flops_transformer_layer(n, spec).total();
    Ok(FlopsReport {
        conventions: CONVENTIONS.into(),
        rows,
        total,
        baseline_total,
        ratio: total as f64 / baseline_total as f64,
    })
}
