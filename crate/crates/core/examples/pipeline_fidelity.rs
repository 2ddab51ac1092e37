//! Plain versus clustered backbone on synthetic features, across cluster grid sizes.
use hilo::bench::generate_synthetic_tokens;
use hilo::clustering::ClusteringConfig;
use hilo::reconstruction::ReconstructionConfig;
use hilo::vit::{init_weights, measure_fidelity, run_pipeline, Checkpoint, Expander, PipelineConfig, PipelineMode, Reducer};

fn main() -> hilo::error::Result<()> {
    let z0 = generate_synthetic_tokens(0, 40, 40, 64, 3)?;
    let weights = init_weights(0, 6, 64, 4, 4)?;
    let base = PipelineConfig::new(2, 4, 0);
    let plain = run_pipeline(&z0, &weights, &base.with_mode(PipelineMode::Plain))?;
    println!("side  clustered  pool+bilinear");
    for side in [8, 16, 20, 24, 28, 40] {
        let mut cfg = base;
        cfg.clustering = ClusteringConfig::new(side, side).with_tau(1.0);
        cfg.reconstruction = ReconstructionConfig::new(20.min(side * side), 1.0);
        let ours = run_pipeline(&z0, &weights, &cfg)?;
        cfg.reducer = Reducer::AdaptivePool;
        cfg.expander = Expander::Bilinear;
        let theirs = run_pipeline(&z0, &weights, &cfg)?;
        let f = |t| measure_fidelity(t, &plain).map(|m| m[&Checkpoint::ZAlphaBeta].mean);
        println!("{side:4}  {:9.4}  {:13.4}   tokens per layer {:?}", f(&ours)?, f(&theirs)?, ours.token_counts);
    }
    Ok(())
}
