//! Rebuilding a full token grid from cluster centers, in both candidate modes.
use hilo::bench::generate_synthetic_tokens;
use hilo::clustering::{token_clustering, ClusteringConfig};
use hilo::reconstruction::{compute_relations, reconstruct, CandidateMode, ReconstructionConfig};
use hilo::similarity::cosine_similarity;

fn main() -> hilo::error::Result<()> {
    let z = generate_synthetic_tokens(3, 40, 40, 32, 3)?;
    for side in [10, 20, 28] {
        let (s, map) = token_clustering(&z, &ClusteringConfig::new(side, side).with_tau(1.0))?;
        for (mode, k) in [(CandidateMode::KnnGlobal, 1), (CandidateMode::KnnGlobal, 20), (CandidateMode::Locality, 1)] {
            let cfg = ReconstructionConfig::new(k.min(side * side), 1.0).with_mode(mode);
            let out = reconstruct(&compute_relations(&z, &s, Some(&map), &cfg)?, &s)?;
            let sim = cosine_similarity(&out, &z)?;
            println!("{side:2}^2 {mode:?} k={k:2}: mean cosine {:.4}, min {:.4}", sim.mean, sim.min);
        }
    }
    Ok(())
}
