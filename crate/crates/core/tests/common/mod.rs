//! Dense brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use hilo::tensor::FeatureGrid;
use hilo::vit::LayerWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Matrix = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize, c: usize, scale: f32) -> FeatureGrid {
    let data = (0..rows * cols * c).map(|_| rng.random_range(-scale..scale)).collect();
    FeatureGrid::new(rows, cols, c, data).unwrap()
}

pub fn to_f64(g: &FeatureGrid) -> Matrix {
    g.tokens().map(|t| t.iter().map(|&v| f64::from(v)).collect()).collect()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Adaptive average pooling by summing every covered token.
pub fn pool(z: &FeatureGrid, h: usize, w: usize) -> Matrix {
    let (rows, cols) = (z.rows(), z.cols());
    let mut out = vec![];
    for i in 0..h {
        let (r0, r1) = (i * rows / h, ((i + 1) * rows).div_ceil(h));
        for j in 0..w {
            let (c0, c1) = (j * cols / w, ((j + 1) * cols).div_ceil(w));
            let mut acc = vec![0.0; z.channels()];
            for y in r0..r1 {
                for x in c0..c1 {
                    for (a, &v) in acc.iter_mut().zip(z.at(y, x)) {
                        *a += f64::from(v);
                    }
                }
            }
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            out.push(acc.into_iter().map(|v| v / n).collect());
        }
    }
    out
}

/// `mask[p][i]`: cluster `i` lies within the locality window of token `p`.
pub fn mask(rows: usize, cols: usize, h: usize, w: usize, lh: usize, lw: usize) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; h * w]; rows * cols];
    for y in 0..rows {
        for x in 0..cols {
            let (hy, hx) = ((y * h / rows) as i64, (x * w / cols) as i64);
            for cy in 0..h as i64 {
                for cx in 0..w as i64 {
                    m[y * cols + x][(cy * w as i64 + cx) as usize] =
                        (cy - hy).abs() <= (lh / 2) as i64 && (cx - hx).abs() <= (lw / 2) as i64;
                }
            }
        }
    }
    m
}

fn masked_softmax(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    let max = logits.iter().zip(allowed).filter(|(_, &a)| a).map(|(&l, _)| l).fold(f64::MIN, f64::max);
    let ex: Vec<f64> = logits.iter().zip(allowed).map(|(&l, &a)| if a { (l - max).exp() } else { 0.0 }).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|e| e / s).collect()
}

/// Full `N x hw` assignment matrix, zero outside the mask.
pub fn e_step(z: &Matrix, s: &Matrix, mask: &[Vec<bool>], tau: f64) -> Matrix {
    z.iter()
        .zip(mask)
        .map(|(zp, allowed)| {
            let logits: Vec<f64> = s.iter().map(|si| -sq_dist(zp, si) / tau).collect();
            masked_softmax(&logits, allowed)
        })
        .collect()
}

/// Column-normalized weighted means; columns with mass below 1e-16 keep `prev`.
pub fn m_step(z: &Matrix, q: &Matrix, prev: &Matrix) -> Matrix {
    (0..prev.len())
        .map(|i| {
            let mass: f64 = q.iter().map(|row| row[i]).sum();
            if mass < 1e-16 {
                return prev[i].clone();
            }
            (0..prev[i].len()).map(|c| z.iter().zip(q).map(|(zp, row)| row[i] / mass * zp[c]).sum()).collect()
        })
        .collect()
}

pub fn clustering(z: &FeatureGrid, h: usize, w: usize, lh: usize, lw: usize, kappa: usize, tau: f64) -> Matrix {
    let zm = to_f64(z);
    let m = mask(z.rows(), z.cols(), h, w, lh, lw);
    let mut s = pool(z, h, w);
    for _ in 0..kappa {
        let q = e_step(&zm, &s, &m, tau);
        s = m_step(&zm, &q, &s);
    }
    s
}

/// Dense k-NN reconstruction weights: every center at or below the k-th smallest distance.
pub fn knn_weights(z: &Matrix, s: &Matrix, k: usize, tau: f64) -> Matrix {
    z.iter()
        .map(|zp| {
            let d: Vec<f64> = s.iter().map(|si| sq_dist(zp, si)).collect();
            let mut sorted = d.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let kth = sorted[k - 1];
            let allowed: Vec<bool> = d.iter().map(|&v| v <= kth).collect();
            masked_softmax(&d.iter().map(|v| -v / tau).collect::<Vec<_>>(), &allowed)
        })
        .collect()
}

pub fn locality_weights(z: &Matrix, s: &Matrix, mask: &[Vec<bool>], tau: f64) -> Matrix {
    e_step(z, s, mask, tau)
}

pub fn apply(weights: &Matrix, s: &Matrix) -> Matrix {
    weights
        .iter()
        .map(|row| (0..s[0].len()).map(|c| row.iter().zip(s).map(|(w, si)| w * si[c]).sum()).collect())
        .collect()
}

/// Scalar evaluation of one pre-norm transformer layer.
pub fn layer(x: &Matrix, w: &LayerWeights) -> Matrix {
    let c = w.channels;
    let n = x.len();
    let f = |v: &[f32], i: usize| f64::from(v[i]);
    let ln = |t: &[f64], s: &[f32], b: &[f32]| -> Vec<f64> {
        let mean = t.iter().sum::<f64>() / c as f64;
        let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        (0..c).map(|i| (t[i] - mean) / (var + 1e-6).sqrt() * f(s, i) + f(b, i)).collect()
    };
    let lin = |t: &[f64], m: &[f32], b: &[f32], out: usize| -> Vec<f64> {
        (0..out).map(|o| f(b, o) + (0..t.len()).map(|i| t[i] * f(m, i * out + o)).sum::<f64>()).collect()
    };
    let normed: Matrix = x.iter().map(|t| ln(t, &w.ln1_scale, &w.ln1_bias)).collect();
    let q: Matrix = normed.iter().map(|t| lin(t, &w.wq, &w.bq, c)).collect();
    let k: Matrix = normed.iter().map(|t| lin(t, &w.wk, &w.bk, c)).collect();
    let v: Matrix = normed.iter().map(|t| lin(t, &w.wv, &w.bv, c)).collect();
    let d = c / w.heads;
    (0..n)
        .map(|i| {
            let mut concat = vec![0.0; c];
            for h in 0..w.heads {
                let logits: Vec<f64> = (0..n)
                    .map(|j| (0..d).map(|e| q[i][h * d + e] * k[j][h * d + e]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let p = masked_softmax(&logits, &vec![true; n]);
                for e in 0..d {
                    concat[h * d + e] = (0..n).map(|j| p[j] * v[j][h * d + e]).sum();
                }
            }
            let attn = lin(&concat, &w.wo, &w.bo, c);
            let h1: Vec<f64> = (0..c).map(|e| x[i][e] + attn[e]).collect();
            let hidden: Vec<f64> = lin(&ln(&h1, &w.ln2_scale, &w.ln2_bias), &w.w1, &w.b1, w.hidden())
                .into_iter()
                .map(|u| 0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh()))
                .collect();
            let ffn = lin(&hidden, &w.w2, &w.b2, c);
            (0..c).map(|e| h1[e] + ffn[e]).collect()
        })
        .collect()
}

/// Mean cosine similarity over tokens, skipping zero-norm pairs.
pub fn mean_cosine(a: &Matrix, b: &Matrix) -> f64 {
    let vals: Vec<f64> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| {
            let (nx, ny) = (x.iter().map(|v| v * v).sum::<f64>().sqrt(), y.iter().map(|v| v * v).sum::<f64>().sqrt());
            (nx > 0.0 && ny > 0.0).then(|| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (nx * ny))
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

pub fn max_abs_diff(grid: &FeatureGrid, m: &Matrix) -> f64 {
    grid.tokens()
        .zip(m)
        .flat_map(|(t, r)| t.iter().zip(r).map(|(&a, b)| (f64::from(a) - b).abs()))
        .fold(0.0, f64::max)
}
