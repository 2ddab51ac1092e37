//! Analytic cost of ViT-L with clustering at a few split points.
use hilo::clustering::ClusteringConfig;
use hilo::flops::{flops_pipeline, ArchSpec};
use hilo::vit::PipelineConfig;

fn main() -> hilo::error::Result<()> {
    let spec = ArchSpec::vit_large();
    for (alpha, beta) in [(6, 18), (8, 16), (10, 14), (12, 12)] {
        let mut cfg = PipelineConfig::new(alpha, beta, 0);
        cfg.clustering = ClusteringConfig::new(28, 28);
        let r = flops_pipeline(&cfg, &spec)?;
        println!(
            "alpha {alpha:2} beta {beta:2}: {:7.1} GFLOPs (ratio {:.3}), clustering {:.2} GFLOPs, reconstruction {:.2} GFLOPs",
            r.gflops(),
            r.ratio,
            r.component_total("clustering") as f64 / 1e9,
            r.component_total("reconstruction") as f64 / 1e9
        );
    }
    let r = flops_pipeline(&PipelineConfig::new(10, 14, 0), &spec)?;
    r.write_csv(std::io::stdout())?;
    Ok(())
}
