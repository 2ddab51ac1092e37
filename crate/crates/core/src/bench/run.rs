use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SweepAxis};
use super::synth::generate_synthetic_tokens;
use crate::container::{save_container, NamedTensorContainer};
use crate::error::{Error, Result};
use crate::flops::{flops_pipeline, FlopsReport};
use crate::tensor::FeatureGrid;
use crate::vit::{
    init_weights, measure_fidelity, run_pipeline, weights_from_container, Checkpoint, LayerWeights, PipelineMode,
    PipelineTrace,
};

/// One configuration's measurements. Field names double as JSON keys and CSV columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub config_id: String,
    pub flops_total: u64,
    pub flops_ratio: f64,
    pub wall_ms_plain: f64,
    pub wall_ms_clustered: f64,
    pub fidelity_mean_alpha_beta: f64,
    pub fidelity_min_alpha_beta: f64,
    pub fidelity_mean_final: f64,
    pub fidelity_min_final: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Process exit code for an error: 2 for configuration problems, 3 for non-finite numbers, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) => 3,
        Error::Io(_) => 1,
        Error::Config(_) | Error::Parameter(_) | Error::Shape(_) | Error::Missing(_) => 2,
        _ => 1,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Median wall time in milliseconds of `reps` calls after `warmup` discarded calls.
pub fn time_median<T>(warmup: usize, reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let out = f()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        last = Some(out);
    }
    Ok((median(times), last.expect("at least one repetition")))
}

/// Inputs and weights a configuration runs on.
pub fn prepare_inputs(cfg: &RunConfig) -> Result<(FeatureGrid, Vec<LayerWeights>)> {
    let a = &cfg.arch;
    let z0 = generate_synthetic_tokens(cfg.seed, a.token_rows, a.token_cols, a.channels, cfg.synth.octaves)?;
    let weights = match &cfg.weights_path {
        Some(path) => weights_from_container(&crate::container::load_container(path)?, a.heads)?,
        None => init_weights(cfg.seed, a.layers, a.channels, a.heads, a.mlp_ratio)?,
    };
    Ok((z0, weights))
}

fn check_finite(trace: &PipelineTrace, label: &str) -> Result<()> {
    for (cp, grid) in &trace.checkpoints {
        if !grid.is_finite() {
            return Err(Error::NonFinite(format!("{label} checkpoint {}", cp.name())));
        }
    }
    Ok(())
}

fn dump(cfg: &RunConfig, z0: &FeatureGrid, plain: &PipelineTrace, clustered: &PipelineTrace) -> Result<()> {
    let Some(path) = cfg.outputs.features_path.as_ref().filter(|_| cfg.outputs.dump_features) else {
        return Ok(());
    };
    let mut c = NamedTensorContainer::new();
    let mut add = |name: String, g: &FeatureGrid| c.push(name, vec![g.rows(), g.cols(), g.channels()], g.data().to_vec());
    add("input".into(), z0)?;
    for (label, trace) in [("plain", plain), ("clustered", clustered)] {
        for (cp, g) in &trace.checkpoints {
            add(format!("{label}.{}", cp.name()), g)?;
        }
    }
    save_container(path, &c)
}

/// Runs the plain and clustered pipelines on the same inputs and weights.
pub fn cmd_run(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let (z0, weights) = prepare_inputs(cfg)?;
    let clustered_cfg = cfg.pipeline.with_mode(PipelineMode::Clustered);
    let plain_cfg = cfg.pipeline.with_mode(PipelineMode::Plain);
    let t = &cfg.timing;
    let (wall_ms_plain, plain) = time_median(t.warmup, t.reps, || run_pipeline(&z0, &weights, &plain_cfg))?;
    let (wall_ms_clustered, clustered) = time_median(t.warmup, t.reps, || run_pipeline(&z0, &weights, &clustered_cfg))?;
    check_finite(&plain, "plain")?;
    check_finite(&clustered, "clustered")?;
    let fid = measure_fidelity(&clustered, &plain)?;
    let flops = flops_pipeline(&clustered_cfg, &cfg.arch)?;
    dump(cfg, &z0, &plain, &clustered)?;
    let (ab, fin) = (&fid[&Checkpoint::ZAlphaBeta], &fid[&Checkpoint::ZFinal]);
    Ok(BenchReport {
        rows: vec![BenchRow {
            config_id: cfg.id.clone(),
            flops_total: flops.total,
            flops_ratio: flops.ratio,
            wall_ms_plain,
            wall_ms_clustered,
            fidelity_mean_alpha_beta: ab.mean,
            fidelity_min_alpha_beta: ab.min,
            fidelity_mean_final: fin.mean,
            fidelity_min_final: fin.min,
        }],
    })
}

/// One [`cmd_run`] per value, rows in the order given.
pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for &v in values {
        report.rows.extend(cmd_run(&axis.apply(cfg, v)?)?.rows);
    }
    Ok(report)
}

/// Analytic cost of the clustered pipeline; nothing is executed.
pub fn cmd_flops(cfg: &RunConfig) -> Result<FlopsReport> {
    cfg.arch.validate()?;
    flops_pipeline(&cfg.pipeline.with_mode(PipelineMode::Clustered), &cfg.arch)
}
