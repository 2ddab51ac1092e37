use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{param, Result};
use crate::tensor::TokenGrid;

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise on a `cells x cells` lattice sampled at `rows x cols` points.
fn value_noise(lattice: &[f64], cells: usize, rows: usize, cols: usize, out: &mut [f64], amp: f64) {
    let side = cells + 1;
    for y in 0..rows {
        let fy = (y as f64 + 0.5) / rows as f64 * cells as f64;
        let iy = (fy.floor() as usize).min(cells - 1);
        let ty = smoothstep(fy - iy as f64);
        for x in 0..cols {
            let fx = (x as f64 + 0.5) / cols as f64 * cells as f64;
            let ix = (fx.floor() as usize).min(cells - 1);
            let tx = smoothstep(fx - ix as f64);
            let v00 = lattice[iy * side + ix];
            let v01 = lattice[iy * side + ix + 1];
            let v10 = lattice[(iy + 1) * side + ix];
            let v11 = lattice[(iy + 1) * side + ix + 1];
            let top = v00 + (v01 - v00) * tx;
            let bottom = v10 + (v11 - v10) * tx;
            out[y * cols + x] += amp * (top + (bottom - top) * ty);
        }
    }
}

/// Seeded smooth features, normalized to zero mean and unit variance per channel.
///
/// Octave `o` (0-based) is value noise on a `2^(o+1)`-cell lattice with
/// amplitude `0.5^o`. `octaves = 0` gives independent uniform noise per token.
/// Every channel draws from its own stream, so results do not depend on
/// thread count.
pub fn generate_synthetic_tokens(
    seed: u64,
    rows: usize,
    cols: usize,
    channels: usize,
    octaves: usize,
) -> Result<TokenGrid> {
    if rows == 0 || cols == 0 || channels == 0 {
        return param(format!("synthetic grid {rows}x{cols}x{channels} must be non-empty"));
    }
    if octaves > 16 {
        return param(format!("at most 16 octaves are supported, got {octaves}"));
    }
    let n = rows * cols;
    let planes: Vec<Vec<f64>> = (0..channels)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut plane = vec![0.0f64; n];
            if octaves == 0 {
                plane.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
            for o in 0..octaves {
                let cells = 1usize << (o + 1);
                let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
                value_noise(&lattice, cells, rows, cols, &mut plane, 0.5f64.powi(o as i32));
            }
            let mean = plane.iter().sum::<f64>() / n as f64;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
            plane.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            plane
        })
        .collect();
    let mut data = vec![0.0f32; n * channels];
    for (c, plane) in planes.iter().enumerate() {
        for (p, v) in plane.iter().enumerate() {
            data[p * channels + c] = *v as f32;
        }
    }
    TokenGrid::new(rows, cols, channels, data)
}
