//! Locality-masked soft k-means on a synthetic token grid.
use hilo::bench::generate_synthetic_tokens;
use hilo::clustering::{build_locality_map, e_step, token_clustering, ClusteringConfig};
use hilo::resample::adaptive_average_pool;

fn main() -> hilo::error::Result<()> {
    let z = generate_synthetic_tokens(7, 40, 40, 16, 3)?;
    let map = build_locality_map(40, 40, 28, 28, 5, 5)?;
    println!("{} candidate slots, token (0,0) sees clusters {:?}", map.total_slots(), map.candidates(0));
    let init = adaptive_average_pool(&z, 28, 28)?;
    for kappa in [0, 1, 5, 10] {
        let cfg = ClusteringConfig::new(28, 28).with_kappa(kappa).with_tau(1.0);
        let (s, map) = token_clustering(&z, &cfg)?;
        let q = e_step(&z, &s, &map, cfg.tau)?;
        let peak: f64 = (0..z.len()).map(|p| q.row(&map, p).iter().cloned().fold(0.0, f64::max)).sum::<f64>() / z.len() as f64;
        println!(
            "kappa {kappa:2}: drift from pooled init {:.4}, mean peak assignment {peak:.3}",
            s.max_abs_diff(&init).unwrap_or(f32::NAN)
        );
    }
    Ok(())
}
