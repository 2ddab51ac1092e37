//! Window partitioning, per-window clustering and RPE table resizing.
use hilo::bench::generate_synthetic_tokens;
use hilo::clustering::ClusteringConfig;
use hilo::reconstruction::ReconstructionConfig;
use hilo::similarity::cosine_similarity;
use hilo::vit::{init_weights, window_layer_forward};
use hilo::windowed::{
    interpolate_rpe_table, merge_windows, partition_windows, window_token_clustering, window_token_reconstruction,
    RpeTable,
};

fn main() -> hilo::error::Result<()> {
    let z = generate_synthetic_tokens(1, 24, 24, 32, 3)?;
    let batch = partition_windows(&z, 12)?;
    println!("{} windows of {:?}", batch.len(), batch.window_dims());
    assert_eq!(merge_windows(&batch)?, z);

    let cfg = ClusteringConfig::default().with_lambda(3, 3).with_kappa(5).with_tau(1.0);
    let (clustered, maps) = window_token_clustering(&batch, 8, &cfg)?;
    println!("clustered windows {:?}, first map has {} slots", clustered.window_dims(), maps[0].total_slots());

    let heads = 4;
    let table = RpeTable::for_window(12, heads, (0..23 * 23 * heads).map(|i| (i % 17) as f32 * 0.01).collect())?;
    let small = interpolate_rpe_table(&table, 8)?;
    println!("RPE side {} -> {}", table.side(), small.side());

    let w = &init_weights(2, 1, 32, heads, 4)?[0];
    let refined = clustered
        .windows()
        .iter()
        .map(|win| window_layer_forward(win, w, 8, 0, &small))
        .collect::<hilo::error::Result<Vec<_>>>()?;
    let refined = hilo::windowed::WindowBatch::new(refined, clustered.layout())?;
    let rebuilt = window_token_reconstruction(&batch, &clustered, &refined, None, &ReconstructionConfig::new(20, 1.0))?;
    let full = merge_windows(&rebuilt)?;
    let direct = merge_windows(&hilo::windowed::WindowBatch::new(
        batch.windows().iter().map(|win| window_layer_forward(win, w, 12, 0, &table)).collect::<hilo::error::Result<Vec<_>>>()?,
        batch.layout(),
    )?)?;
    println!("clustered window layer vs full window layer: mean cosine {:.4}", cosine_similarity(&full, &direct)?.mean);
    Ok(())
}
