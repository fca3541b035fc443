//! Reference computations written independently of the library: plain
//! loops, log-domain arithmetic and brute-force enumeration.

use ndarray::Array2;
use protomm::encoder::{init_encoder, EncoderConfig, EncoderParams};
use protomm::nn::Act;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logsumexp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Entropic transport plan between uniform marginals `1/B` (rows) and `1/P`
/// (columns) for cost `−S`, by log-domain dual ascent run until the
/// marginal error is below `tol`. Returned scaled by `B`, so rows sum to 1.
pub fn transport_targets(scores: &Array2<f64>, epsilon: f64, tol: f64, max_iter: usize) -> Array2<f64> {
    let (b, p) = scores.dim();
    let log_r = -(b as f64).ln();
    let log_c = -(p as f64).ln();
    let mut f = vec![0.0; b];
    let mut g = vec![0.0; p];
    let k = |i: usize, j: usize, f: &[f64], g: &[f64]| scores[[i, j]] / epsilon + f[i] + g[j];
    for _ in 0..max_iter {
        for j in 0..p {
            g[j] = log_c - logsumexp((0..b).map(|i| scores[[i, j]] / epsilon + f[i]));
        }
        for i in 0..b {
            f[i] = log_r - logsumexp((0..p).map(|j| scores[[i, j]] / epsilon + g[j]));
        }
        // rows now exact; check columns
        let err = (0..p)
            .map(|j| ((0..b).map(|i| k(i, j, &f, &g).exp()).sum::<f64>() - 1.0 / p as f64).abs())
            .fold(0.0, f64::max);
        if err < tol {
            break;
        }
    }
    Array2::from_shape_fn((b, p), |(i, j)| b as f64 * k(i, j, &f, &g).exp())
}

/// Central differences of `f` at `x` along the listed coordinates.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    coords
        .iter()
        .map(|&c| {
            y[c] = x[c] + h;
            let up = f(&y);
            y[c] = x[c] - h;
            let down = f(&y);
            y[c] = x[c];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn row(m: &Array2<f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

/// NT-Xent by direct enumeration: 2B anchors, each with one positive and
/// 2B − 2 negatives. Rows are taken as unit vectors, so the dot product is
/// the cosine.
pub fn nt_xent_loops(z1: &Array2<f64>, z2: &Array2<f64>, tau: f64) -> f64 {
    let b = z1.nrows();
    let all: Vec<Vec<f64>> = (0..b).map(|i| row(z1, i)).chain((0..b).map(|i| row(z2, i))).collect();
    let cos = dot;
    let mut total = 0.0;
    for i in 0..2 * b {
        let pos = if i < b { i + b } else { i - b };
        let logits: Vec<f64> = (0..2 * b).filter(|&k| k != i).map(|k| cos(&all[i], &all[k]) / tau).collect();
        total += logsumexp(logits.into_iter()) - cos(&all[i], &all[pos]) / tau;
    }
    total / (2 * b) as f64
}

/// Symmetric CLIP cross-entropy by direct enumeration, logits
/// `⟨p, a⟩ / exp(log_t)` over unit rows.
pub fn clip_loops(zp: &Array2<f64>, za: &Array2<f64>, log_t: f64) -> f64 {
    let b = zp.nrows();
    let t = log_t.exp();
    let cos = dot;
    let sim = Array2::from_shape_fn((b, b), |(i, j)| cos(&row(zp, i), &row(za, j)) / t);
    let mut p_to_a = 0.0;
    let mut a_to_p = 0.0;
    for i in 0..b {
        p_to_a += logsumexp((0..b).map(|j| sim[[i, j]])) - sim[[i, i]];
        a_to_p += logsumexp((0..b).map(|j| sim[[j, i]])) - sim[[i, i]];
    }
    (p_to_a + a_to_p) / (2 * b) as f64
}

/// Counts of (target, prediction) cell pairs by enumerating all
/// quadruples `(m, a, m', b)`: same modality and distinct views, or
/// distinct modalities and any views.
pub fn term_counts(modalities: usize, views: usize) -> (usize, usize) {
    let (mut within, mut between) = (0, 0);
    for m in 0..modalities {
        for a in 0..views {
            for m2 in 0..modalities {
                for b in 0..views {
                    if m == m2 && a != b {
                        within += 1;
                    } else if m != m2 {
                        between += 1;
                    }
                }
            }
        }
    }
    (within, between)
}

/// Multimodal swapped-prediction loss by enumeration. `u` and `v` hold one
/// `B × P` matrix per cell `m·A + a`.
pub fn mpp_loops(u: &[Array2<f64>], v: &[Array2<f64>], modalities: usize, views: usize, alpha: f64) -> f64 {
    let ce = |t: &Array2<f64>, p: &Array2<f64>| {
        let mut acc = 0.0;
        for i in 0..t.nrows() {
            for j in 0..t.ncols() {
                acc -= t[[i, j]] * p[[i, j]].ln();
            }
        }
        acc / t.nrows() as f64
    };
    let (mut within, mut between) = (0.0, 0.0);
    for m in 0..modalities {
        for a in 0..views {
            for m2 in 0..modalities {
                for b in 0..views {
                    // target from view (m, a), prediction from (m2, b)
                    let term = || ce(&v[m * views + a], &u[m2 * views + b]);
                    if m == m2 && a != b {
                        within += term();
                    } else if m != m2 {
                        between += term();
                    }
                }
            }
        }
    }
    (alpha * within + (1.0 - alpha) * between) / (modalities * views) as f64
}

/// Row softmax of `s / tau`, written out.
pub fn softmax_rows(s: &Array2<f64>, tau: f64) -> Array2<f64> {
    let mut out = s.clone();
    for i in 0..s.nrows() {
        let lse = logsumexp((0..s.ncols()).map(|j| s[[i, j]] / tau));
        for j in 0..s.ncols() {
            out[[i, j]] = (s[[i, j]] / tau - lse).exp();
        }
    }
    out
}

/// `K × K` confusion counts, rows true class, columns predicted.
pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        c[l][p] += 1;
    }
    c
}

/// Macro-F1 from a confusion matrix over classes with support.
pub fn macro_f1_from_confusion(c: &[Vec<usize>]) -> f64 {
    let k = c.len();
    let mut f1s = Vec::new();
    for j in 0..k {
        let support: usize = c[j].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = c[j][j] as f64;
        let predicted: usize = (0..k).map(|i| c[i][j]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        f1s.push(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) });
    }
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

/// Top-k by cosine via a full sort of every index, ties by index.
pub fn top_k_by_sort(centroid: &[f64], embeddings: &Array2<f64>, k: usize) -> Vec<(usize, f64)> {
    let cn = dot(centroid, centroid).sqrt();
    let mut all: Vec<(usize, f64)> = (0..embeddings.nrows())
        .map(|i| {
            let r = row(embeddings, i);
            (i, dot(&r, centroid) / (cn * dot(&r, &r).sqrt()))
        })
        .collect();
    // insertion sort, descending similarity then ascending index
    for i in 1..all.len() {
        let mut j = i;
        while j > 0 && (all[j].1 > all[j - 1].1 || (all[j].1 == all[j - 1].1 && all[j].0 < all[j - 1].0)) {
            all.swap(j, j - 1);
            j -= 1;
        }
    }
    all.truncate(k);
    all
}

/// Finite-difference check of the encoder's parameter gradients for the
/// scalar `Σ c ⊙ embeddings` in training mode. Returns the worst
/// per-tensor relative error over `per_tensor` sampled coordinates.
pub fn encoder_gradient_error(cfg: &EncoderConfig, len: usize, batch: usize, per_tensor: usize, seed: u64) -> protomm::Result<f64> {
    let params: EncoderParams<f64> = init_encoder(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let windows: Vec<Array2<f32>> = (0..batch)
        .map(|_| Array2::from_shape_simple_fn((len, cfg.in_channels), || rng.random_range(-1.0f32..1.0)))
        .collect();
    let x: Act<f64> = Act::from_windows(windows.iter().map(|w| w.view()));
    let c = Array2::from_shape_simple_fn((batch, cfg.embed_dim), || rng.random_range(-1.0..1.0));

    let loss = |p: &EncoderParams<f64>| -> f64 {
        let mut p = p.clone();
        let (z, _) = p.forward_train(&x).expect("valid input");
        (&z * &c).sum()
    };
    let mut work = params.clone();
    let (_, tape) = work.forward_train(&x)?;
    let grads = params.backward(&tape, &c);
    let analytic: Vec<Vec<f64>> = grads.trainable().iter().map(|t| t.to_vec()).collect();

    let mut worst: f64 = 0.0;
    let n_tensors = analytic.len();
    for t in 0..n_tensors {
        let size = analytic[t].len();
        let coords: Vec<usize> = (0..per_tensor.min(size)).map(|_| rng.random_range(0..size)).collect();
        let base: Vec<f64> = params.trainable()[t].to_vec();
        let numeric = central_diff(
            |v| {
                let mut p = params.clone();
                p.trainable_mut()[t].copy_from_slice(v);
                loss(&p)
            },
            &base,
            &coords,
            1e-6,
        );
        let a: Vec<f64> = coords.iter().map(|&i| analytic[t][i]).collect();
        let err = relative_error(&a, &numeric);
        if err > worst {
            log::debug!("tensor {t}: relative error {err:e}");
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_enumeration_small_cases() {
        assert_eq!(term_counts(1, 2), (2, 0));
        assert_eq!(term_counts(2, 2), (4, 8));
        assert_eq!(term_counts(2, 1), (0, 2));
    }

    #[test]
    fn transport_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Array2::from_shape_simple_fn((5, 7), || rng.random_range(-1.0..1.0));
        let t = transport_targets(&s, 0.1, 1e-14, 100_000);
        for r in t.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        for c in t.columns() {
            assert!((c.sum() - 5.0 / 7.0).abs() < 1e-10);
        }
    }

    #[test]
    fn central_diff_of_quadratic() {
        let g = central_diff(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, 1.0], &[0, 1], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn sort_oracle_orders() {
        let e = ndarray::array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let top = top_k_by_sort(&[1.0, 0.0], &e, 2);
        assert_eq!(top[0].0, 0);
        assert_eq!(top[1].0, 2);
    }
}
