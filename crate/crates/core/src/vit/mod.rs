//! Minimal pre-norm vision transformer and the high-to-low-to-high pipeline.

mod layers;
mod pipeline;
mod weights;

pub use layers::{
    attention_column_scores, cyclic_shift, layer_norm, mhsa_forward, transformer_layer_forward,
    window_layer_forward, LN_EPS,
};
pub use pipeline::{
    measure_fidelity, run_pipeline, Checkpoint, Expander, PipelineConfig, PipelineMode, PipelineTrace,
    Reducer,
};
pub use weights::{init_weights, weights_from_container, weights_to_container, LayerWeights, INIT_STD};
