//! Resampling primitives: adaptive average pooling and bilinear resize.

use crate::error::{param, Result};
use crate::tensor::{ClusterGrid, FeatureGrid, TokenGrid};

/// Half-open source range `[floor(i*n/m), ceil((i+1)*n/m))` of output cell `i`.
#[inline]
pub(crate) fn pool_range(i: usize, out: usize, inp: usize) -> (usize, usize) {
    let start = i * inp / out;
    let end = ((i + 1) * inp).div_ceil(out);
    (start, end)
}

/// Adaptive average pooling of `src` down to `h x w` cells.
///
/// Cells follow the floor/ceil partition, so neighbouring cells may share a
/// source row or column when the sizes do not divide evenly.
pub fn adaptive_average_pool(src: &TokenGrid, h: usize, w: usize) -> Result<ClusterGrid> {
    if h == 0 || h > src.rows() || w == 0 || w > src.cols() {
        return param(format!(
            "pool target {h}x{w} must lie within 1x1..={}x{}",
            src.rows(),
            src.cols()
        ));
    }
    let c = src.channels();
    let mut out = Vec::with_capacity(h * w * c);
    let mut acc = vec![0.0f64; c];
    for i in 0..h {
        let (y0, y1) = pool_range(i, h, src.rows());
        for j in 0..w {
            let (x0, x1) = pool_range(j, w, src.cols());
            acc.fill(0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    for (a, &v) in acc.iter_mut().zip(src.at(y, x)) {
                        *a += f64::from(v);
                    }
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            out.extend(acc.iter().map(|a| (a / count) as f32));
        }
    }
    FeatureGrid::new(h, w, c, out)
}

/// Source coordinate sampled by output index `dst`.
#[inline]
fn source_coord(dst: usize, out: usize, inp: usize, align_corners: bool) -> f64 {
    if align_corners {
        if out == 1 {
            0.0
        } else {
            (dst * (inp - 1)) as f64 / (out - 1) as f64
        }
    } else {
        let scale = inp as f64 / out as f64;
        ((dst as f64 + 0.5) * scale - 0.5).max(0.0)
    }
}

/// `(lo, hi, frac)` taps along one axis.
fn axis_taps(out: usize, inp: usize, align_corners: bool) -> Vec<(usize, usize, f64)> {
    (0..out)
        .map(|d| {
            let s = source_coord(d, out, inp, align_corners);
            let lo = (s.floor() as usize).min(inp - 1);
            let hi = (lo + 1).min(inp - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Separable bilinear resize to `out_h x out_w`.
///
/// `align_corners = true` maps corner samples onto corner samples, which is
/// what position-embedding tables need. `false` uses half-pixel centers,
/// matching the usual feature-map upsampling convention.
pub fn bilinear_resize(
    src: &FeatureGrid,
    out_h: usize,
    out_w: usize,
    align_corners: bool,
) -> Result<FeatureGrid> {
    if out_h == 0 || out_w == 0 {
        return param(format!("resize target {out_h}x{out_w} must be positive"));
    }
    let c = src.channels();
    let ys = axis_taps(out_h, src.rows(), align_corners);
    let xs = axis_taps(out_w, src.cols(), align_corners);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (a, b, cc, d) = (src.at(y0, x0), src.at(y0, x1), src.at(y1, x0), src.at(y1, x1));
            for ch in 0..c {
                let top = f64::from(a[ch]) * (1.0 - fx) + f64::from(b[ch]) * fx;
                let bottom = f64::from(cc[ch]) * (1.0 - fx) + f64::from(d[ch]) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    FeatureGrid::new(out_h, out_w, c, out)
}
