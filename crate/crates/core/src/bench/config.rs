use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::flops::ArchSpec;
use crate::vit::PipelineConfig;

fn default_octaves() -> usize {
    3
}

fn default_reps() -> usize {
    5
}

fn default_warmup() -> usize {
    1
}

fn default_id() -> String {
    "run".into()
}

/// Synthetic input settings; grid size and channels come from the architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_octaves")]
    pub octaves: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { octaves: default_octaves() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default)]
    pub report_json: Option<PathBuf>,
    #[serde(default)]
    pub report_csv: Option<PathBuf>,
    /// Write inputs and high-resolution checkpoints to `features_path`.
    #[serde(default)]
    pub dump_features: bool,
    #[serde(default)]
    pub features_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { reps: default_reps(), warmup: default_warmup() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_id")]
    pub id: String,
    pub seed: u64,
    pub arch: ArchSpec,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    /// Weight container to load instead of seeded random weights.
    #[serde(default)]
    pub weights_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.arch.window.is_some() {
            return param("windowed backbones can be costed with `flops` but not executed");
        }
        if self.pipeline.layers() != self.arch.layers {
            return param(format!(
                "alpha + beta + gamma = {} but the backbone has {} layers",
                self.pipeline.layers(),
                self.arch.layers
            ));
        }
        self.pipeline.clustering.validate_for(self.arch.token_rows, self.arch.token_cols)?;
        self.pipeline.reconstruction.validate()?;
        if self.timing.reps == 0 {
            return param("timing needs at least one repetition");
        }
        let empty = |p: &Option<PathBuf>| p.as_ref().is_some_and(|p| p.as_os_str().is_empty());
        if empty(&self.outputs.report_json) || empty(&self.outputs.report_csv) {
            return param("report paths must be non-empty");
        }
        if self.outputs.dump_features && self.outputs.features_path.as_ref().is_none_or(|p| p.as_os_str().is_empty()) {
            return param("dump_features needs a features_path");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Reads and validates a JSON run configuration.
pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    RunConfig::from_json(&std::fs::read_to_string(path)?)
}

/// Hyper-parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Side of a square cluster grid.
    ClusterSize,
    /// Side of a square locality window.
    Lambda,
    Kappa,
    /// Temperature shared by clustering and reconstruction.
    Tau,
    K,
    /// Clustering position; `beta` absorbs the change so the depth is kept.
    Alpha,
    /// Clustered depth; `gamma` absorbs the change so the depth is kept.
    Beta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ClusterSize => "cluster_size",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Kappa => "kappa",
            SweepAxis::Tau => "tau",
            SweepAxis::K => "k",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let int = || -> Result<usize> {
            if value >= 0.0 && value.fract() == 0.0 && value.is_finite() {
                Ok(value as usize)
            } else {
                param(format!("{} takes non-negative integers, got {value}", self.name()))
            }
        };
        let p = &mut cfg.pipeline;
        let depth = p.layers();
        match self {
            SweepAxis::ClusterSize => {
                let side = int()?;
                p.clustering.target_h = side;
                p.clustering.target_w = side;
            }
            SweepAxis::Lambda => {
                let side = int()?;
                p.clustering.lambda_h = side;
                p.clustering.lambda_w = side;
            }
            SweepAxis::Kappa => p.clustering.kappa = int()?,
            SweepAxis::Tau => {
                p.clustering.tau = value;
                p.reconstruction.tau = value;
            }
            SweepAxis::K => p.reconstruction.k = int()?,
            SweepAxis::Alpha => {
                let alpha = int()?;
                if alpha + p.gamma > depth {
                    return param(format!("alpha {alpha} leaves no room in {depth} layers"));
                }
                p.alpha = alpha;
                p.beta = depth - alpha - p.gamma;
            }
            SweepAxis::Beta => {
                let beta = int()?;
                if p.alpha + beta > depth {
                    return param(format!("beta {beta} leaves no room in {depth} layers"));
                }
                p.beta = beta;
                p.gamma = depth - p.alpha - beta;
            }
        }
        cfg.id = format!("{}={value}", self.name());
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Parameter(format!("unknown sweep axis `{s}`")))
    }
}
