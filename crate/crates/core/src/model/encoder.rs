//! Forward and backward passes of the pre-norm encoder for a single sequence.
//!
//! Only unmasked positions are materialized. Masked keys would receive zero
//! attention weight anyway, and masked query rows never reach the `[CLS]`
//! output, so dropping them is exact.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layout::LayerOffsets;
use super::ClassifierState;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `out[n×m] = a[n×k] · b[k×m] (+ bias[m])`
fn matmul(a: &[f64], b: &[f64], bias: Option<&[f64]>, n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        if let Some(bias) = bias {
            row.copy_from_slice(bias);
        }
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, w) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += x * w;
            }
        }
    }
    out
}

/// `out[n×k] = g[n×m] · w[k×m]ᵀ`
fn matmul_bt(g: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let gi = &g[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] = gi.iter().zip(&w[p * m..(p + 1) * m]).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// `out[k×m] += a[n×k]ᵀ · g[n×m]`
fn acc_at_b(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let gi = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, gv) in out[p * m..(p + 1) * m].iter_mut().zip(gi) {
                *o += x * gv;
            }
        }
    }
}

/// `out[m] += Σ_i g[i×m]`
fn acc_colsum(g: &[f64], out: &mut [f64], m: usize) {
    for row in g.chunks_exact(m) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct Norm {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], d: usize) -> (Vec<f64>, Norm) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = s;
        for c in 0..d {
            let h = (row[c] - mean) * s;
            xhat[i * d + c] = h;
            y[i * d + c] = h * gain[c] + bias[c];
        }
    }
    (y, Norm { xhat, inv_std })
}

/// Returns `∂L/∂x` and accumulates gain/bias gradients.
fn layer_norm_backward(
    dy: &[f64],
    norm: &Norm,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    d: usize,
) -> Vec<f64> {
    let n = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let dyi = &dy[i * d..(i + 1) * d];
        let xh = &norm.xhat[i * d..(i + 1) * d];
        for c in 0..d {
            dgain[c] += dyi[c] * xh[c];
            dbias[c] += dyi[c];
            dxhat[c] = dyi[c] * gain[c];
        }
        let sum: f64 = dxhat.iter().sum();
        let dot: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let k = norm.inv_std[i] / d as f64;
        for c in 0..d {
            dx[i * d + c] = k * (d as f64 * dxhat[c] - sum - xh[c] * dot);
        }
    }
    dx
}

/// Inverted-dropout mask with entries `0` or `1/(1-rate)`.
fn dropout_mask(rng: Option<&mut ChaCha8Rng>, rate: f64, len: usize) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

struct LayerCache {
    ln1: Norm,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    attn_drop: Option<Vec<f64>>,
    ln2: Norm,
    b: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    ffn_drop: Option<Vec<f64>>,
}

pub(super) struct Cache {
    ids: Vec<u32>,
    positions: Vec<usize>,
    layers: Vec<LayerCache>,
    final_norm: Norm,
    pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

pub(super) fn forward(
    state: &ClassifierState,
    input_ids: &[u32],
    positions: &[usize],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Cache {
    let cfg = &state.config;
    let lay = &state.layout;
    let p = &state.params;
    let (d, f, r) = (cfg.embed_dim, cfg.feedforward_dim, cfg.num_relations);
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let n = positions.len();
    let ids: Vec<u32> = positions.iter().map(|&i| input_ids[i]).collect();

    let mut x = vec![0.0; n * d];
    for (i, (&id, &pos)) in ids.iter().zip(positions).enumerate() {
        let tok = &p[lay.token_embedding + id as usize * d..][..d];
        let pe = &p[lay.position_embedding + pos * d..][..d];
        for c in 0..d {
            x[i * d + c] = tok[c] + pe[c];
        }
    }

    let mut layers = Vec::with_capacity(lay.layers.len());
    for lo in &lay.layers {
        let w = |off: usize, len: usize| &p[off..off + len];
        let (a, ln1) = layer_norm(&x, w(lo.ln1_gain, d), w(lo.ln1_bias, d), d);
        let q = matmul(&a, w(lo.wq, d * d), Some(w(lo.bq, d)), n, d, d);
        let k = matmul(&a, w(lo.wk, d * d), Some(w(lo.bk, d)), n, d, d);
        let v = matmul(&a, w(lo.wv, d * d), Some(w(lo.bv, d)), n, d, d);

        let mut probs = vec![0.0; heads * n * n];
        let mut ctx = vec![0.0; n * d];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q[i * d + cols.start..i * d + cols.end];
                for j in 0..n {
                    let kj = &k[j * d + cols.start..j * d + cols.end];
                    row[j] = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in row.iter_mut() {
                    *s /= sum;
                }
                for j in 0..n {
                    let pij = row[j];
                    for c in cols.clone() {
                        ctx[i * d + c] += pij * v[j * d + c];
                    }
                }
            }
        }

        let mut o = matmul(&ctx, w(lo.wo, d * d), Some(w(lo.bo, d)), n, d, d);
        let attn_drop = dropout_mask(rng.as_deref_mut(), cfg.dropout_rate, n * d);
        if let Some(m) = &attn_drop {
            o.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        let x1: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();

        let (b, ln2) = layer_norm(&x1, w(lo.ln2_gain, d), w(lo.ln2_bias, d), d);
        let pre = matmul(&b, w(lo.w1, d * f), Some(w(lo.b1, f)), n, d, f);
        let act: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
        let mut out = matmul(&act, w(lo.w2, f * d), Some(w(lo.b2, d)), n, f, d);
        let ffn_drop = dropout_mask(rng.as_deref_mut(), cfg.dropout_rate, n * d);
        if let Some(m) = &ffn_drop {
            out.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        x = x1.iter().zip(&out).map(|(a, b)| a + b).collect();

        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            attn_drop,
            ln2,
            b,
            pre,
            act,
            ffn_drop,
        });
    }

    // Pool the [CLS] row.
    let (pooled, final_norm) = layer_norm(
        &x[..d],
        &p[lay.final_gain..lay.final_gain + d],
        &p[lay.final_bias..lay.final_bias + d],
        d,
    );
    let logits = matmul(
        &pooled,
        &p[lay.head_weight..lay.head_weight + d * r],
        Some(&p[lay.head_bias..lay.head_bias + r]),
        1,
        d,
        r,
    );

    Cache {
        ids,
        positions: positions.to_vec(),
        layers,
        final_norm,
        pooled,
        logits,
    }
}

/// Accumulates `∂L/∂θ` into `grad` given `∂L/∂logits`.
pub(super) fn backward(state: &ClassifierState, cache: &Cache, dlogits: &[f64], grad: &mut [f64]) {
    let cfg = &state.config;
    let lay = &state.layout;
    let p = &state.params;
    let (d, f, r) = (cfg.embed_dim, cfg.feedforward_dim, cfg.num_relations);
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let n = cache.ids.len();

    let head_w = &p[lay.head_weight..lay.head_weight + d * r];
    acc_at_b(
        &cache.pooled,
        dlogits,
        &mut grad[lay.head_weight..lay.head_weight + d * r],
        1,
        d,
        r,
    );
    acc_colsum(dlogits, &mut grad[lay.head_bias..lay.head_bias + r], r);
    let dpooled = matmul_bt(dlogits, head_w, 1, d, r);

    let mut dx = vec![0.0; n * d];
    {
        let (dgain, dbias) = split_pair(grad, lay.final_gain, lay.final_bias, d);
        let drow = layer_norm_backward(
            &dpooled,
            &cache.final_norm,
            &p[lay.final_gain..lay.final_gain + d],
            dgain,
            dbias,
            d,
        );
        dx[..d].copy_from_slice(&drow);
    }

    for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
        dx = layer_backward(p, grad, lo, lc, dx, n, d, f, heads, dh, scale);
    }

    for (i, (&id, &pos)) in cache.ids.iter().zip(&cache.positions).enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        let tok = lay.token_embedding + id as usize * d;
        for (g, v) in grad[tok..tok + d].iter_mut().zip(row) {
            *g += v;
        }
        let pe = lay.position_embedding + pos * d;
        for (g, v) in grad[pe..pe + d].iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// Disjoint mutable views of two equal-length parameter slices, `a < b`.
fn split_pair(grad: &mut [f64], a: usize, b: usize, len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + len <= b);
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + len], &mut hi[..len])
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    p: &[f64],
    grad: &mut [f64],
    lo: &LayerOffsets,
    lc: &LayerCache,
    dx: Vec<f64>,
    n: usize,
    d: usize,
    f: usize,
    heads: usize,
    dh: usize,
    scale: f64,
) -> Vec<f64> {
    let w = |off: usize, len: usize| &p[off..off + len];

    // x_out = x1 + drop(gelu(b·W1 + b1)·W2 + b2)
    let mut dout = dx.clone();
    if let Some(m) = &lc.ffn_drop {
        dout.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
    }
    acc_at_b(&lc.act, &dout, &mut grad[lo.w2..lo.w2 + f * d], n, f, d);
    acc_colsum(&dout, &mut grad[lo.b2..lo.b2 + d], d);
    let dact = matmul_bt(&dout, w(lo.w2, f * d), n, f, d);
    let dpre: Vec<f64> = dact
        .iter()
        .zip(&lc.pre)
        .map(|(g, &z)| g * gelu_grad(z))
        .collect();
    acc_at_b(&lc.b, &dpre, &mut grad[lo.w1..lo.w1 + d * f], n, d, f);
    acc_colsum(&dpre, &mut grad[lo.b1..lo.b1 + f], f);
    let db = matmul_bt(&dpre, w(lo.w1, d * f), n, d, f);
    let dx1_ln = {
        let (dgain, dbias) = split_pair(grad, lo.ln2_gain, lo.ln2_bias, d);
        layer_norm_backward(&db, &lc.ln2, w(lo.ln2_gain, d), dgain, dbias, d)
    };
    let dx1: Vec<f64> = dx.iter().zip(&dx1_ln).map(|(a, b)| a + b).collect();

    // x1 = x + drop(attn(LN1(x))·Wo + bo)
    let mut dattn = dx1.clone();
    if let Some(m) = &lc.attn_drop {
        dattn.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
    }
    acc_at_b(&lc.ctx, &dattn, &mut grad[lo.wo..lo.wo + d * d], n, d, d);
    acc_colsum(&dattn, &mut grad[lo.bo..lo.bo + d], d);
    let dctx = matmul_bt(&dattn, w(lo.wo, d * d), n, d, d);

    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut dprob = vec![0.0; n];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..n {
            let prow = &lc.probs[(h * n + i) * n..(h * n + i + 1) * n];
            let dci = &dctx[i * d + c0..i * d + c0 + dh];
            for j in 0..n {
                let vj = &lc.v[j * d + c0..j * d + c0 + dh];
                dprob[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                for c in 0..dh {
                    dv[j * d + c0 + c] += prow[j] * dci[c];
                }
            }
            let dot: f64 = prow.iter().zip(&dprob).map(|(a, b)| a * b).sum();
            for j in 0..n {
                let ds = prow[j] * (dprob[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + c0 + c] += ds * lc.k[j * d + c0 + c];
                    dk[j * d + c0 + c] += ds * lc.q[i * d + c0 + c];
                }
            }
        }
    }

    let mut da = vec![0.0; n * d];
    for (dproj, wo, bo) in [(&dq, lo.wq, lo.bq), (&dk, lo.wk, lo.bk), (&dv, lo.wv, lo.bv)] {
        acc_at_b(&lc.a, dproj, &mut grad[wo..wo + d * d], n, d, d);
        acc_colsum(dproj, &mut grad[bo..bo + d], d);
        let part = matmul_bt(dproj, w(wo, d * d), n, d, d);
        da.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
    }
    let dx_ln = {
        let (dgain, dbias) = split_pair(grad, lo.ln1_gain, lo.ln1_bias, d);
        layer_norm_backward(&da, &lc.ln1, w(lo.ln1_gain, d), dgain, dbias, d)
    };
    dx1.iter().zip(&dx_ln).map(|(a, b)| a + b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn matmul_helpers_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3×2
        assert_eq!(matmul(&a, &b, None, 2, 3, 2), [4.0, 5.0, 10.0, 11.0]);
        // a · bᵀ with b viewed as 2×3 rows
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        assert_eq!(matmul_bt(&a, &bt, 2, 2, 3), [4.0, 5.0, 10.0, 11.0]);
        let mut out = [0.0; 6];
        acc_at_b(&a, &[1.0, 1.0, 1.0, 1.0], &mut out, 2, 3, 2);
        assert_eq!(out, [5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }
}
