use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hilo::bench::{cmd_flops, cmd_run, cmd_sweep, exit_code, load_run_config, BenchReport, RunConfig, SweepAxis};
use hilo::error::{Error, Result};

#[derive(Parser)]
#[command(name = "hilo-bench", about = "Run, sweep and cost clustered transformer pipelines")]
struct Cli {
    /// Worker threads for the numeric kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for report files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Plain and clustered pipelines on one configuration.
    Run(Common),
    /// One run per value of a hyper-parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// cluster_size, lambda, kappa, tau, k, alpha or beta.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `8,16,24,40`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Analytic FLOPs report without running anything.
    Flops(Common),
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = load_run_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_bench(report: &BenchReport, cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let mut json_paths: Vec<PathBuf> = cfg.outputs.report_json.iter().cloned().collect();
    let mut csv_paths: Vec<PathBuf> = cfg.outputs.report_csv.iter().cloned().collect();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        json_paths.push(dir.join("report.json"));
        csv_paths.push(dir.join("report.csv"));
    }
    let json = report.to_json()?;
    for p in json_paths {
        std::fs::write(p, &json)?;
    }
    for p in csv_paths {
        report.write_csv(File::create(p)?)?;
    }
    println!("{json}");
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Parameter(e.to_string()))?;
    }
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            write_bench(&cmd_run(&cfg)?, &cfg, common.out.as_deref())
        }
        Command::Sweep { common, axis, values } => {
            let cfg = load(&common)?;
            let axis: SweepAxis = axis.parse()?;
            write_bench(&cmd_sweep(&cfg, axis, &values)?, &cfg, common.out.as_deref())
        }
        Command::Flops(common) => {
            let cfg = load(&common)?;
            let report = cmd_flops(&cfg)?;
            let json = report.to_json()?;
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("flops.json"), &json)?;
                report.write_csv(File::create(dir.join("flops.csv"))?)?;
            }
            println!("{json}");
            eprintln!("total {:.1} GFLOPs, ratio {:.4} vs plain", report.gflops(), report.ratio);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
