//! Top-k token selection by attention scores, refinement of the kept set, and reconstruction.
use hilo::baselines::{select_topk_tokens, sparsify_and_reconstruct, uniform_downsample_tokens};
use hilo::bench::generate_synthetic_tokens;
use hilo::reconstruction::ReconstructionConfig;
use hilo::similarity::cosine_similarity;
use hilo::vit::{attention_column_scores, init_weights, transformer_layer_forward};

fn main() -> hilo::error::Result<()> {
    let z = generate_synthetic_tokens(4, 24, 24, 32, 3)?;
    let weights = init_weights(4, 2, 32, 4, 4)?;
    let scores = attention_column_scores(&z, &weights[0])?;
    let reference = transformer_layer_forward(&z, &weights[1])?;
    for rho in [0.1, 0.25, 0.5, 1.0] {
        let sel = select_topk_tokens(&scores, rho)?;
        let out = sparsify_and_reconstruct(&z, &scores, rho, |kept| transformer_layer_forward(kept, &weights[1]), &ReconstructionConfig::new(4, 1.0))?;
        println!("rho {rho:4}: kept {:3} tokens, fidelity {:.4}", sel.kept.len(), cosine_similarity(&out, &reference)?.mean);
    }
    let small = uniform_downsample_tokens(&z, 12, 12)?;
    println!("uniform downsample to {}x{}", small.rows(), small.cols());
    Ok(())
}
