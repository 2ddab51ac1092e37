//! Saving weights to a named tensor container and loading them back.
use hilo::container::{load_container, save_container};
use hilo::vit::{init_weights, weights_from_container, weights_to_container};

fn main() -> hilo::error::Result<()> {
    let weights = init_weights(11, 2, 16, 2, 4)?;
    let container = weights_to_container(&weights)?;
    let path = std::env::temp_dir().join("hilo-weights.bin");
    save_container(&path, &container)?;
    let loaded = load_container(&path)?;
    for e in loaded.entries().iter().take(6) {
        println!("{:24} {:?}", e.name, e.shape);
    }
    println!("... {} tensors", loaded.len());
    let back = weights_from_container(&loaded, 2)?;
    assert_eq!(back, weights);
    println!("round trip exact");
    std::fs::remove_file(path)?;
    Ok(())
}
