//! Forward pass of a pre-norm transformer layer.
//!
//! `Z' = MHSA(LN(Z)) + Z`, then `Z_out = FFN(LN(Z')) + Z'`. There are no
//! positional terms inside the layer, so a global layer is
//! permutation-equivariant over tokens.

use rayon::prelude::*;

use super::weights::LayerWeights;
use crate::error::{param, shape, Result};
use crate::tensor::FeatureGrid;
use crate::windowed::{merge_windows, partition_windows, RpeTable, WindowBatch};

pub const LN_EPS: f64 = 1e-6;

/// Rows per work item for matrix products; fixed so results do not depend on thread count.
const ROW_BLOCK: usize = 64;

/// `x * w + b` for `rows` row vectors of length `in_dim`.
pub(crate) fn linear(x: &[f32], rows: usize, in_dim: usize, w: &[f32], b: &[f32], out_dim: usize) -> Vec<f32> {
    debug_assert_eq!(x.len(), rows * in_dim);
    debug_assert_eq!(w.len(), in_dim * out_dim);
    let mut out = vec![0.0f32; rows * out_dim];
    out.par_chunks_mut(ROW_BLOCK * out_dim).enumerate().for_each(|(blk, out_blk)| {
        let r0 = blk * ROW_BLOCK;
        let m = out_blk.len() / out_dim;
        for row in out_blk.chunks_exact_mut(out_dim) {
            row.copy_from_slice(b);
        }
        // SAFETY: all pointers cover the strided ranges described by (m, k, n) and strides.
        unsafe {
            matrixmultiply::sgemm(
                m,
                in_dim,
                out_dim,
                1.0,
                x.as_ptr().add(r0 * in_dim),
                in_dim as isize,
                1,
                w.as_ptr(),
                out_dim as isize,
                1,
                1.0,
                out_blk.as_mut_ptr(),
                out_dim as isize,
                1,
            );
        }
    });
    out
}

/// Per-token normalization over channels followed by `scale * x + bias`.
pub fn layer_norm(x: &FeatureGrid, scale: &[f32], bias: &[f32], eps: f64) -> Result<FeatureGrid> {
    let c = x.channels();
    if scale.len() != c || bias.len() != c {
        return shape(format!("layer norm parameters have {}/{} values for {c} channels", scale.len(), bias.len()));
    }
    let mut out = x.clone();
    out.data_mut().par_chunks_mut(c).for_each(|t| {
        let mean = t.iter().map(|&v| f64::from(v)).sum::<f64>() / c as f64;
        let var = t.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, &s), &b) in t.iter_mut().zip(scale).zip(bias) {
            *v = ((f64::from(*v) - mean) * inv * f64::from(s) + f64::from(b)) as f32;
        }
    });
    Ok(out)
}

/// Softmax over each row of a `rows x n` block, in place.
fn softmax_rows(scores: &mut [f32], n: usize) {
    for row in scores.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += f64::from(*v);
        }
        let inv = (1.0 / sum) as f32;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Attention probabilities for query rows `r0..r0 + m` of one head, `m x n`.
#[allow(clippy::too_many_arguments)]
fn head_probabilities(
    q: &[f32],
    k: &[f32],
    n: usize,
    c: usize,
    d: usize,
    head: usize,
    r0: usize,
    m: usize,
    bias: Option<&[f32]>,
) -> Vec<f32> {
    let mut scores = vec![0.0f32; m * n];
    let scale = 1.0 / (d as f32).sqrt();
    // SAFETY: q rows r0..r0+m and k rows 0..n are read at column offset head*d with width d.
    unsafe {
        matrixmultiply::sgemm(
            m,
            d,
            n,
            scale,
            q.as_ptr().add(r0 * c + head * d),
            c as isize,
            1,
            k.as_ptr().add(head * d),
            1,
            c as isize,
            0.0,
            scores.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    if let Some(bias) = bias {
        let hb = &bias[head * n * n + r0 * n..head * n * n + (r0 + m) * n];
        scores.iter_mut().zip(hb).for_each(|(s, b)| *s += b);
    }
    softmax_rows(&mut scores, n);
    scores
}

/// Multi-head scaled dot-product attention over already projected `q`, `k`, `v` (`n x c`).
///
/// `bias`, when given, is `heads x n x n` and is added to the logits.
fn attend(q: &[f32], k: &[f32], v: &[f32], n: usize, c: usize, heads: usize, bias: Option<&[f32]>) -> Vec<f32> {
    let d = c / heads;
    let mut out = vec![0.0f32; n * c];
    out.par_chunks_mut(ROW_BLOCK * c).enumerate().for_each(|(blk, out_blk)| {
        let r0 = blk * ROW_BLOCK;
        let m = out_blk.len() / c;
        for h in 0..heads {
            let probs = head_probabilities(q, k, n, c, d, h, r0, m, bias);
            // SAFETY: probs is m x n, v rows 0..n at column offset h*d, output block m x c.
            unsafe {
                matrixmultiply::sgemm(
                    m,
                    n,
                    d,
                    1.0,
                    probs.as_ptr(),
                    n as isize,
                    1,
                    v.as_ptr().add(h * d),
                    c as isize,
                    1,
                    0.0,
                    out_blk.as_mut_ptr().add(h * d),
                    c as isize,
                    1,
                );
            }
        }
    });
    out
}

fn check_input(x: &FeatureGrid, w: &LayerWeights) -> Result<()> {
    if x.channels() != w.channels {
        return shape(format!("input has {} channels, layer expects {}", x.channels(), w.channels));
    }
    if !w.channels.is_multiple_of(w.heads) {
        return param(format!("{} channels are not divisible by {} heads", w.channels, w.heads));
    }
    Ok(())
}

fn project_qkv(x: &FeatureGrid, w: &LayerWeights) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (n, c) = (x.len(), x.channels());
    (
        linear(x.data(), n, c, &w.wq, &w.bq, c),
        linear(x.data(), n, c, &w.wk, &w.bk, c),
        linear(x.data(), n, c, &w.wv, &w.bv, c),
    )
}

/// Multi-head self-attention on a token set; the caller applies LN and the residual.
pub fn mhsa_forward(x: &FeatureGrid, w: &LayerWeights) -> Result<FeatureGrid> {
    check_input(x, w)?;
    let (n, c) = (x.len(), x.channels());
    let (q, k, v) = project_qkv(x, w);
    let attn = attend(&q, &k, &v, n, c, w.heads, None);
    FeatureGrid::new(x.rows(), x.cols(), c, linear(&attn, n, c, &w.wo, &w.bo, c))
}

/// tanh approximation of GELU.
#[inline]
fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

fn ffn_residual(h: FeatureGrid, w: &LayerWeights) -> Result<FeatureGrid> {
    let (n, c) = (h.len(), h.channels());
    let normed = layer_norm(&h, &w.ln2_scale, &w.ln2_bias, LN_EPS)?;
    let mut hidden = linear(normed.data(), n, c, &w.w1, &w.b1, w.hidden());
    hidden.par_iter_mut().for_each(|v| *v = gelu(*v));
    let ffn = linear(&hidden, n, w.hidden(), &w.w2, &w.b2, c);
    let mut out = h;
    out.data_mut().iter_mut().zip(&ffn).for_each(|(a, b)| *a += b);
    Ok(out)
}

/// One transformer layer with global attention.
pub fn transformer_layer_forward(x: &FeatureGrid, w: &LayerWeights) -> Result<FeatureGrid> {
    check_input(x, w)?;
    let normed = layer_norm(x, &w.ln1_scale, &w.ln1_bias, LN_EPS)?;
    let attn = mhsa_forward(&normed, w)?;
    let mut h = x.clone();
    h.data_mut().iter_mut().zip(attn.data()).for_each(|(a, b)| *a += b);
    ffn_residual(h, w)
}

/// Rolls the grid so that `out[y][x] = in[(y + shift) mod rows][(x + shift) mod cols]`.
pub fn cyclic_shift(x: &FeatureGrid, shift: isize) -> FeatureGrid {
    let (rows, cols) = (x.rows() as isize, x.cols() as isize);
    let c = x.channels();
    let mut data = Vec::with_capacity(x.data().len());
    for y in 0..rows {
        let sy = (y + shift).rem_euclid(rows) as usize;
        for xx in 0..cols {
            let sx = (xx + shift).rem_euclid(cols) as usize;
            data.extend_from_slice(x.at(sy, sx));
        }
    }
    FeatureGrid::new(x.rows(), x.cols(), c, data).expect("shift preserves dimensions")
}

/// `heads x n x n` logit bias for a `window x window` window.
fn window_bias(rpe: &RpeTable, window: usize) -> Vec<f32> {
    let n = window * window;
    let heads = rpe.heads();
    let mut bias = vec![0.0f32; heads * n * n];
    for h in 0..heads {
        for i in 0..n {
            let (yi, xi) = ((i / window) as isize, (i % window) as isize);
            for j in 0..n {
                let (yj, xj) = ((j / window) as isize, (j % window) as isize);
                bias[(h * n + i) * n + j] = rpe.bias(yi - yj, xi - xj, h);
            }
        }
    }
    bias
}

/// One transformer layer with (shifted) window attention and a relative position bias.
///
/// Tokens are rolled by `shift`, attention runs inside each
/// `window x window` tile with the table's bias added to the logits, and
/// the roll is undone. Cross-window masking for shifted layouts is not
/// applied.
pub fn window_layer_forward(
    x: &FeatureGrid,
    w: &LayerWeights,
    window: usize,
    shift: isize,
    rpe: &RpeTable,
) -> Result<FeatureGrid> {
    check_input(x, w)?;
    if rpe.window() != window || rpe.heads() != w.heads {
        return shape(format!(
            "position table serves window {} with {} heads, layer needs window {window} with {} heads",
            rpe.window(),
            rpe.heads(),
            w.heads
        ));
    }
    let c = x.channels();
    let normed = layer_norm(x, &w.ln1_scale, &w.ln1_bias, LN_EPS)?;
    let shifted = cyclic_shift(&normed, shift);
    let batch = partition_windows(&shifted, window)?;
    let bias = window_bias(rpe, window);
    let n = window * window;
    let attended: Vec<FeatureGrid> = batch
        .windows()
        .par_iter()
        .map(|win| {
            let (q, k, v) = project_qkv(win, w);
            let a = attend(&q, &k, &v, n, c, w.heads, Some(&bias));
            FeatureGrid::new(window, window, c, linear(&a, n, c, &w.wo, &w.bo, c))
        })
        .collect::<Result<_>>()?;
    let merged = merge_windows(&WindowBatch::new(attended, batch.layout())?)?;
    let attn = cyclic_shift(&merged, -shift);
    let mut h = x.clone();
    h.data_mut().iter_mut().zip(attn.data()).for_each(|(a, b)| *a += b);
    ffn_residual(h, w)
}

/// Mean attention each token receives in layer `w`, averaged over heads and queries.
///
/// A stand-in importance score for token selection demos; it is not the
/// class-token attention some pruning methods use.
pub fn attention_column_scores(x: &FeatureGrid, w: &LayerWeights) -> Result<Vec<f32>> {
    check_input(x, w)?;
    let normed = layer_norm(x, &w.ln1_scale, &w.ln1_bias, LN_EPS)?;
    let (n, c) = (x.len(), x.channels());
    let (q, k, _) = project_qkv(&normed, w);
    let d = c / w.heads;
    let blocks: Vec<Vec<f64>> = (0..n.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|blk| {
            let r0 = blk * ROW_BLOCK;
            let m = ROW_BLOCK.min(n - r0);
            let mut cols = vec![0.0f64; n];
            for h in 0..w.heads {
                let probs = head_probabilities(&q, &k, n, c, d, h, r0, m, None);
                for row in probs.chunks_exact(n) {
                    cols.iter_mut().zip(row).for_each(|(a, &p)| *a += f64::from(p));
                }
            }
            cols
        })
        .collect();
    let mut total = vec![0.0f64; n];
    for b in blocks {
        total.iter_mut().zip(b).for_each(|(a, v)| *a += v);
    }
    let denom = (n * w.heads) as f64;
    Ok(total.into_iter().map(|v| (v / denom) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::weights::init_weights;

    /// Direct per-element evaluation of a layer, independent of the blocked kernels.
    pub(crate) fn layer_oracle(x: &FeatureGrid, w: &LayerWeights) -> Vec<f64> {
        let (n, c) = (x.len(), x.channels());
        let get = |v: &[f32], i: usize| f64::from(v[i]);
        let ln = |t: &[f64], s: &[f32], b: &[f32]| -> Vec<f64> {
            let mean = t.iter().sum::<f64>() / c as f64;
            let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            (0..c).map(|i| (t[i] - mean) / (var + 1e-6).sqrt() * get(s, i) + get(b, i)).collect()
        };
        let lin = |t: &[f64], m: &[f32], b: &[f32], out: usize| -> Vec<f64> {
            (0..out)
                .map(|o| get(b, o) + (0..t.len()).map(|i| t[i] * get(m, i * out + o)).sum::<f64>())
                .collect()
        };
        let xs: Vec<Vec<f64>> = x.tokens().map(|t| t.iter().map(|&v| f64::from(v)).collect()).collect();
        let normed: Vec<Vec<f64>> = xs.iter().map(|t| ln(t, &w.ln1_scale, &w.ln1_bias)).collect();
        let q: Vec<_> = normed.iter().map(|t| lin(t, &w.wq, &w.bq, c)).collect();
        let k: Vec<_> = normed.iter().map(|t| lin(t, &w.wk, &w.bk, c)).collect();
        let v: Vec<_> = normed.iter().map(|t| lin(t, &w.wv, &w.bv, c)).collect();
        let d = c / w.heads;
        let mut out = vec![];
        for i in 0..n {
            let mut concat = vec![0.0; c];
            for h in 0..w.heads {
                let logits: Vec<f64> = (0..n)
                    .map(|j| (0..d).map(|e| q[i][h * d + e] * k[j][h * d + e]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let mx = logits.iter().copied().fold(f64::MIN, f64::max);
                let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let s: f64 = ex.iter().sum();
                for e in 0..d {
                    concat[h * d + e] = (0..n).map(|j| ex[j] / s * v[j][h * d + e]).sum();
                }
            }
            let attn = lin(&concat, &w.wo, &w.bo, c);
            let h1: Vec<f64> = (0..c).map(|e| xs[i][e] + attn[e]).collect();
            let n2 = ln(&h1, &w.ln2_scale, &w.ln2_bias);
            let hid: Vec<f64> = lin(&n2, &w.w1, &w.b1, w.hidden())
                .into_iter()
                .map(|u| 0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh()))
                .collect();
            let f = lin(&hid, &w.w2, &w.b2, c);
            out.extend((0..c).map(|e| h1[e] + f[e]));
        }
        out
    }

    fn sample(rows: usize, cols: usize, c: usize) -> FeatureGrid {
        FeatureGrid::from_fn(rows, cols, c, |y, x, ch| (((y * 31 + x * 17 + ch * 13) % 23) as f32 - 11.0) * 0.1)
            .unwrap()
    }

    #[test]
    fn layer_norm_constant_token_gives_bias() {
        let x = FeatureGrid::new(1, 1, 4, vec![3.0; 4]).unwrap();
        let out = layer_norm(&x, &[2.0; 4], &[0.5, -1.0, 0.0, 7.0], LN_EPS).unwrap();
        assert_eq!(out.data(), &[0.5, -1.0, 0.0, 7.0]);
    }

    #[test]
    fn layer_norm_standardized_input_is_unchanged() {
        let x = FeatureGrid::new(1, 1, 4, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let out = layer_norm(&x, &[1.0; 4], &[0.0; 4], LN_EPS).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn layer_norm_matches_formula() {
        let x = FeatureGrid::new(1, 1, 5, vec![0.3, -2.0, 4.5, 1.25, 0.0]).unwrap();
        let (s, b) = ([1.5, 0.5, -1.0, 2.0, 1.0], [0.1, 0.2, 0.3, 0.4, 0.5]);
        let out = layer_norm(&x, &s, &b, LN_EPS).unwrap();
        let vals: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
        let mean = vals.iter().sum::<f64>() / 5.0;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        for i in 0..5 {
            let expect = (vals[i] - mean) / (var + 1e-6).sqrt() * f64::from(s[i]) + f64::from(b[i]);
            assert!((f64::from(out.data()[i]) - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn single_token_attention_is_value_path() {
        let w = &init_weights(11, 1, 8, 2, 2).unwrap()[0];
        let mut w = w.clone();
        w.bv.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.01);
        w.bo.iter_mut().enumerate().for_each(|(i, v)| *v = -(i as f32) * 0.02);
        let x = FeatureGrid::new(1, 1, 8, vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75, 0.0, 1.0]).unwrap();
        let out = mhsa_forward(&x, &w).unwrap();
        // softmax over one key is 1, so the output is (x Wv + bv) Wo + bo
        let xv: Vec<f64> = (0..8)
            .map(|o| f64::from(w.bv[o]) + (0..8).map(|i| f64::from(x.data()[i]) * f64::from(w.wv[i * 8 + o])).sum::<f64>())
            .collect();
        for o in 0..8 {
            let expect = f64::from(w.bo[o]) + (0..8).map(|i| xv[i] * f64::from(w.wo[i * 8 + o])).sum::<f64>();
            assert!((f64::from(out.data()[o]) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_tokens_get_identical_outputs() {
        let w = &init_weights(2, 1, 8, 4, 2).unwrap()[0];
        let x = FeatureGrid::from_fn(3, 3, 8, |_, _, c| c as f32 * 0.3 - 1.0).unwrap();
        let out = transformer_layer_forward(&x, w).unwrap();
        let first = out.token(0).to_vec();
        assert!(out.tokens().all(|t| t == first.as_slice()));
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let w = &init_weights(5, 1, 8, 2, 4).unwrap()[0];
        let x = sample(3, 5, 8);
        let perm: Vec<usize> = (0..15).map(|i| (i * 7 + 3) % 15).collect();
        let permuted = FeatureGrid::new(3, 5, 8, perm.iter().flat_map(|&p| x.token(p).to_vec()).collect()).unwrap();
        let a = transformer_layer_forward(&x, w).unwrap();
        let b = transformer_layer_forward(&permuted, w).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (u, v) in b.token(i).iter().zip(a.token(p)) {
                assert!((u - v).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn zero_output_projections_give_identity() {
        let mut w = init_weights(9, 1, 8, 2, 4).unwrap().remove(0);
        w.wo.fill(0.0);
        w.w2.fill(0.0);
        let x = sample(4, 4, 8);
        assert_eq!(transformer_layer_forward(&x, &w).unwrap(), x);
    }

    #[test]
    fn layer_matches_scalar_oracle() {
        let mut w = init_weights(21, 1, 8, 2, 3).unwrap().remove(0);
        // larger weights so attention is far from uniform
        for m in [&mut w.wq, &mut w.wk, &mut w.wv, &mut w.wo, &mut w.w1, &mut w.w2] {
            m.iter_mut().for_each(|v| *v *= 20.0);
        }
        w.b1.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f32 * 0.37).sin());
        let x = sample(9, 10, 8);
        let got = transformer_layer_forward(&x, &w).unwrap();
        let expect = layer_oracle(&x, &w);
        for (a, b) in got.data().iter().zip(&expect) {
            assert!((f64::from(*a) - b).abs() < 1e-4 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn layer_equals_composed_sub_ops() {
        let w = &init_weights(4, 1, 8, 2, 2).unwrap()[0];
        let x = sample(2, 3, 8);
        let n1 = layer_norm(&x, &w.ln1_scale, &w.ln1_bias, LN_EPS).unwrap();
        let a = mhsa_forward(&n1, w).unwrap();
        let mut h = x.clone();
        h.data_mut().iter_mut().zip(a.data()).for_each(|(p, q)| *p += q);
        assert_eq!(ffn_residual(h, w).unwrap(), transformer_layer_forward(&x, w).unwrap());
    }

    #[test]
    fn heads_must_divide_channels() {
        let mut w = init_weights(1, 1, 8, 2, 2).unwrap().remove(0);
        w.heads = 3;
        assert!(mhsa_forward(&sample(2, 2, 8), &w).is_err());
    }

    #[test]
    fn cyclic_shift_round_trip() {
        let x = sample(4, 6, 2);
        let s = cyclic_shift(&x, 2);
        assert_eq!(s.at(0, 0), x.at(2, 2));
        assert_eq!(cyclic_shift(&s, -2), x);
    }

    #[test]
    fn full_window_without_bias_equals_global_layer() {
        let w = &init_weights(6, 1, 8, 2, 2).unwrap()[0];
        let x = sample(4, 4, 8);
        let rpe = RpeTable::for_window(4, 2, vec![0.0; 49 * 2]).unwrap();
        let a = window_layer_forward(&x, w, 4, 0, &rpe).unwrap();
        let b = transformer_layer_forward(&x, w).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
    }

    #[test]
    fn column_scores_average_to_one_over_n() {
        let w = &init_weights(8, 1, 8, 2, 2).unwrap()[0];
        let x = sample(5, 5, 8);
        let s = attention_column_scores(&x, w).unwrap();
        let total: f32 = s.iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
}
