//! Adaptive average pooling and the two bilinear conventions on a small ramp.
use hilo::resample::{adaptive_average_pool, bilinear_resize};
use hilo::tensor::FeatureGrid;

fn show(label: &str, g: &FeatureGrid) {
    println!("{label} ({}x{}):", g.rows(), g.cols());
    for y in 0..g.rows() {
        let row: Vec<String> = (0..g.cols()).map(|x| format!("{:6.2}", g.at(y, x)[0])).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> hilo::error::Result<()> {
    let z = FeatureGrid::from_fn(5, 7, 1, |y, x, _| (y * 7 + x) as f32)?;
    show("input", &z);
    // 5 -> 2 rows: partitions overlap on the middle row
    show("pooled", &adaptive_average_pool(&z, 2, 3)?);
    show("corner-aligned", &bilinear_resize(&z, 3, 4, true)?);
    show("half-pixel", &bilinear_resize(&z, 3, 4, false)?);
    Ok(())
}
