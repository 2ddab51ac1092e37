//! Benchmark harness: synthetic inputs, run/sweep/flops commands and reports.

mod config;
mod run;
mod synth;

pub use config::{load_run_config, OutputConfig, RunConfig, SweepAxis, SynthConfig, TimingConfig};
pub use run::{cmd_flops, cmd_run, cmd_sweep, exit_code, prepare_inputs, time_median, BenchReport, BenchRow};
pub use synth::generate_synthetic_tokens;
