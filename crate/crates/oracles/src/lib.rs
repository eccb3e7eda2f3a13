//! Straightforward reference implementations, written for clarity rather
//! than speed, that tests compare the optimized code against.

use latent_trace::model::LoopedModelParams;
use latent_trace::nn::{LayerWeights, Tensor2};

pub type Mat = Vec<Vec<f64>>;

fn to_mat(t: &Tensor2<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn vec_of(t: &Tensor2<f64>) -> Vec<f64> {
    t.data().to_vec()
}

fn affine(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    let cols = b.len();
    let mut out = b.to_vec();
    for c in 0..cols {
        for (i, xi) in x.iter().enumerate() {
            out[c] += xi * w[i][c];
        }
    }
    out
}

fn norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let s = (var + 1e-5).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) / s * g + b).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// One pre-norm block over a single sequence, causal or not.
pub fn layer(x: &Mat, w: &LayerWeights<Tensor2<f64>>, n_heads: usize, causal: bool) -> Mat {
    let n = x.len();
    let d = x[0].len();
    let dh = d / n_heads;
    let qkv_w = to_mat(&w.qkv_weight);
    let qkv_b = vec_of(&w.qkv_bias);
    let qkv: Mat = x
        .iter()
        .map(|row| affine(&norm(row, &vec_of(&w.attn_norm_gain), &vec_of(&w.attn_norm_bias)), &qkv_w, &qkv_b))
        .collect();
    let mut attn = vec![vec![0.0; d]; n];
    for h in 0..n_heads {
        for i in 0..n {
            let visible = if causal { i + 1 } else { n };
            let scores: Vec<f64> = (0..visible)
                .map(|j| (0..dh).map(|t| qkv[i][h * dh + t] * qkv[j][d + h * dh + t]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let p = softmax(&scores);
            for (j, pj) in p.iter().enumerate() {
                for t in 0..dh {
                    attn[i][h * dh + t] += pj * qkv[j][2 * d + h * dh + t];
                }
            }
        }
    }
    let out_w = to_mat(&w.attn_out_weight);
    let in_w = to_mat(&w.fc_in_weight);
    let fc_w = to_mat(&w.fc_out_weight);
    (0..n)
        .map(|i| {
            let proj = affine(&attn[i], &out_w, &vec_of(&w.attn_out_bias));
            let mid: Vec<f64> = x[i].iter().zip(&proj).map(|(a, b)| a + b).collect();
            let hidden: Vec<f64> = affine(
                &norm(&mid, &vec_of(&w.mlp_norm_gain), &vec_of(&w.mlp_norm_bias)),
                &in_w,
                &vec_of(&w.fc_in_bias),
            )
            .into_iter()
            .map(gelu)
            .collect();
            let mlp = affine(&hidden, &fc_w, &vec_of(&w.fc_out_bias));
            mid.iter().zip(&mlp).map(|(a, b)| a + b).collect()
        })
        .collect()
}

pub fn prelude(p: &LoopedModelParams<f64>, tokens: &[usize]) -> Mat {
    let w = &p.weights;
    let mut x: Mat = tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| w.token_embedding.row(t).iter().zip(w.position_embedding.row(i)).map(|(a, b)| a + b).collect())
        .collect();
    for l in &w.prelude {
        x = layer(&x, l, p.config.n_heads, true);
    }
    x
}

pub fn recurrent(p: &LoopedModelParams<f64>, h: &Mat) -> Mat {
    let mut x = h.clone();
    for l in &p.weights.recurrent {
        x = layer(&x, l, p.config.n_heads, true);
    }
    x
}

/// Coda, final norm, tied readout and softmax at the last position.
pub fn decode(p: &LoopedModelParams<f64>, h: &Mat) -> Vec<f64> {
    let w = &p.weights;
    let mut x = h.clone();
    for l in &w.coda {
        x = layer(&x, l, p.config.n_heads, true);
    }
    let last = norm(x.last().unwrap(), &vec_of(&w.final_norm_gain), &vec_of(&w.final_norm_bias));
    let logits: Vec<f64> = (0..w.token_embedding.rows())
        .map(|v| last.iter().zip(w.token_embedding.row(v)).map(|(a, b)| a * b).sum())
        .collect();
    softmax(&logits)
}

/// Backtracking events by enumerating every index interval, keeping the
/// maximal constant ones, and testing all ordered pairs.
/// Returns `(a, b, a_start, a_end, b_start, b_end)` sorted.
pub fn brute_force_backtracks(series: &[usize], min_run: usize) -> Vec<(usize, usize, usize, usize, usize, usize)> {
    let n = series.len();
    let mut segments = Vec::new();
    for s in 0..n {
        for e in s..n {
            let constant = series[s..=e].iter().all(|&x| x == series[s]);
            let left_max = s == 0 || series[s - 1] != series[s];
            let right_max = e + 1 == n || series[e + 1] != series[s];
            if constant && left_max && right_max && e - s + 1 >= min_run {
                segments.push((s, e));
            }
        }
    }
    let mut out = Vec::new();
    for &(as_, ae) in &segments {
        for &(bs, be) in &segments {
            let (a, b) = (series[as_], series[bs]);
            if bs > ae && a != b && b == series[n - 1] {
                out.push((a, b, as_, ae, bs, be));
            }
        }
    }
    out.sort_by_key(|t| (t.2, t.4));
    out
}

/// First start of a `window`-long stretch of values `≤ tol`, by checking
/// every candidate start.
pub fn naive_exploration_end(kl: &[f64], tol: f64, window: usize) -> Option<usize> {
    (0..kl.len()).find(|&i| i + window <= kl.len() && kl[i..i + window].iter().all(|&x| x <= tol))
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// Entropy via the compensated sum of `p·ln(1/p)`.
pub fn entropy(p: &[f64]) -> f64 {
    compensated_sum(p.iter().filter(|&&x| x > 0.0).map(|&x| x * (1.0 / x).ln()))
}

/// KL as cross-entropy minus entropy, both compensated, with the same floor
/// on `q`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let cross = compensated_sum(
        p.iter()
            .zip(q)
            .filter(|(&a, _)| a > 0.0)
            .map(|(&a, &b)| -a * b.max(1e-12).ln()),
    );
    cross - entropy(p)
}
