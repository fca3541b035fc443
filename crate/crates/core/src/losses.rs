//! Swapped-prediction objective over a modality × view grid, plus the
//! contrastive baselines (NT-Xent, CLIP, SLIP).
//!
//! Every loss comes with an analytic gradient. Targets `V` are constants:
//! nothing is propagated through the Sinkhorn step.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prototypes::soft_probs;

/// Floor applied before every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Protomm,
    Simclr,
    Clip,
    Slip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub objective: Objective,
    pub nt_xent_temperature: f64,
    pub clip_temperature_init: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            objective: Objective::Protomm,
            nt_xent_temperature: 0.1,
            clip_temperature_init: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config {
                path: "loss.alpha".into(),
                message: format!("must lie in [0, 1], got {}", self.alpha),
            });
        }
        for (name, v) in [
            ("nt_xent_temperature", self.nt_xent_temperature),
            ("clip_temperature_init", self.clip_temperature_init),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config {
                    path: format!("loss.{name}"),
                    message: "must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

/// Predictions `U` and targets `V` for every (modality, view) cell of an
/// `M × A` grid. Cell `(m, a)` lives at index `m·A + a`.
#[derive(Clone, Debug)]
pub struct ViewBundle {
    pub u: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub modalities: usize,
    pub views: usize,
}

impl ViewBundle {
    pub fn new(u: Vec<Array2<f64>>, v: Vec<Array2<f64>>, modalities: usize, views: usize) -> Result<Self> {
        let cells = modalities * views;
        if cells == 0 || u.len() != cells || v.len() != cells {
            return Err(Error::Shape(format!(
                "bundle needs {cells} cells for {modalities}×{views}, got {} predictions and {} targets",
                u.len(),
                v.len()
            )));
        }
        let dim = u[0].dim();
        if u.iter().chain(&v).any(|x| x.dim() != dim) {
            return Err(Error::Shape("bundle matrices must share B × P".into()));
        }
        Ok(Self {
            u,
            v,
            modalities,
            views,
        })
    }

    pub fn cell(&self, m: usize, a: usize) -> usize {
        m * self.views + a
    }
}

/// One summand: `ce_term(V[target], U[prediction])`, cells as (modality, view).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TermPair {
    pub target: (usize, usize),
    pub prediction: (usize, usize),
}

/// Ordered pairs `(V_m^(b), U_m^(a))` with `b ≠ a`.
pub fn within_terms(modalities: usize, views: usize) -> Vec<TermPair> {
    let mut out = Vec::new();
    for m in 0..modalities {
        for a in 0..views {
            for b in (0..views).filter(|&b| b != a) {
                out.push(TermPair {
                    target: (m, b),
                    prediction: (m, a),
                });
            }
        }
    }
    out
}

/// Ordered pairs `(V_n^(b), U_m^(a))` with `n ≠ m`, all view combinations.
pub fn between_terms(modalities: usize, views: usize) -> Vec<TermPair> {
    let mut out = Vec::new();
    for m in 0..modalities {
        for n in (0..modalities).filter(|&n| n != m) {
            for a in 0..views {
                for b in 0..views {
                    out.push(TermPair {
                        target: (n, b),
                        prediction: (m, a),
                    });
                }
            }
        }
    }
    out
}

/// Batch mean of `−Σ_j V_ij log U_ij`.
pub fn ce_term(v: &Array2<f64>, u: &Array2<f64>) -> f64 {
    let b = v.nrows().max(1) as f64;
    let mut acc = 0.0;
    Zip::from(v).and(u).for_each(|&t, &p| {
        if t != 0.0 {
            acc -= t * p.max(LOG_FLOOR).ln();
        }
    });
    acc / b
}

fn sum_terms(bundle: &ViewBundle, terms: &[TermPair]) -> f64 {
    terms
        .iter()
        .map(|t| {
            let v = &bundle.v[bundle.cell(t.target.0, t.target.1)];
            let u = &bundle.u[bundle.cell(t.prediction.0, t.prediction.1)];
            ce_term(v, u)
        })
        .sum()
}

pub fn within_mod_loss(bundle: &ViewBundle) -> Result<f64> {
    if bundle.views < 2 {
        return Err(Error::invalid("within-modality loss needs at least two views"));
    }
    Ok(sum_terms(bundle, &within_terms(bundle.modalities, bundle.views)))
}

pub fn between_mod_loss(bundle: &ViewBundle) -> Result<f64> {
    if bundle.modalities < 2 {
        return Err(Error::invalid("between-modality loss needs at least two modalities"));
    }
    Ok(sum_terms(bundle, &between_terms(bundle.modalities, bundle.views)))
}

/// `(α·within + (1−α)·between) / (A·M)`. A sub-loss whose weight is zero is
/// skipped, so `α = 1` accepts a single modality and `α = 0` a single view.
pub fn mpp_loss(bundle: &ViewBundle, alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    if alpha > 0.0 {
        total += alpha * within_mod_loss(bundle)?;
    }
    if alpha < 1.0 {
        total += (1.0 - alpha) * between_mod_loss(bundle)?;
    }
    Ok(total / (bundle.views * bundle.modalities) as f64)
}

/// Single-modality swapped prediction: `Σ_a Σ_{b≠a} ce_term(V^(b), U^(a))`.
pub fn swapped_prediction_loss(u: &[Array2<f64>], v: &[Array2<f64>]) -> Result<f64> {
    let bundle = ViewBundle::new(u.to_vec(), v.to_vec(), 1, u.len())?;
    within_mod_loss(&bundle)
}

/// Loss and gradient with respect to the raw scores `S` of every cell,
/// given `U = softmax(S/τ)` and constant targets.
pub fn mpp_loss_and_score_grad(
    scores: &[Array2<f64>],
    targets: &[Array2<f64>],
    modalities: usize,
    views: usize,
    alpha: f64,
    temperature: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let u: Vec<_> = scores.iter().map(|s| soft_probs(s, temperature)).collect();
    let bundle = ViewBundle::new(u, targets.to_vec(), modalities, views)?;
    let loss = mpp_loss(&bundle, alpha)?;

    let scale = 1.0 / (views * modalities) as f64;
    let mut weights: Vec<Array2<f64>> = bundle.u.iter().map(|x| Array2::zeros(x.dim())).collect();
    let mut add = |terms: Vec<TermPair>, w: f64| {
        for t in terms {
            let dst = bundle.cell(t.prediction.0, t.prediction.1);
            weights[dst].scaled_add(w * scale, &bundle.v[bundle.cell(t.target.0, t.target.1)]);
        }
    };
    if alpha > 0.0 {
        add(within_terms(modalities, views), alpha);
    }
    if alpha < 1.0 {
        add(between_terms(modalities, views), 1.0 - alpha);
    }

    let grads = bundle
        .u
        .iter()
        .zip(weights)
        .map(|(u, w)| {
            let b = u.nrows() as f64;
            // dℓ/dU_j = −W_j / (B·U_j) where U_j is above the floor; the
            // softmax Jacobian then turns U_j·dℓ/dU_j into −W_j / B.
            let mut g = Array2::zeros(u.dim());
            Zip::from(&mut g).and(u).and(&w).for_each(|g, &p, &t| {
                if p > LOG_FLOOR {
                    *g = -t / b;
                }
            });
            let row_sums = g.sum_axis(Axis(1));
            let mut ds = g;
            Zip::from(ds.rows_mut()).and(u.rows()).and(&row_sums).for_each(|mut d, p, &s| {
                d.scaled_add(-s, &p);
            });
            ds / temperature
        })
        .collect();
    Ok((loss, grads))
}

/// Loss with gradients for the per-cell embeddings `Z_c` (`B × E`, cells
/// ordered `m·A + a`) and the prototype matrix, with `S_c = Z_c · P` and
/// the targets held constant.
pub fn mpp_loss_with_grads(
    embeddings: &[Array2<f64>],
    prototypes: &Array2<f64>,
    targets: &[Array2<f64>],
    modalities: usize,
    views: usize,
    alpha: f64,
    temperature: f64,
) -> Result<(f64, Vec<Array2<f64>>, Array2<f64>)> {
    if let Some(z) = embeddings.iter().find(|z| z.ncols() != prototypes.nrows()) {
        return Err(Error::Shape(format!(
            "embeddings have dimension {}, prototypes {}",
            z.ncols(),
            prototypes.nrows()
        )));
    }
    let scores: Vec<_> = embeddings.iter().map(|z| z.dot(prototypes)).collect();
    let (loss, dscores) = mpp_loss_and_score_grad(&scores, targets, modalities, views, alpha, temperature)?;
    let mut dp = Array2::zeros(prototypes.dim());
    let dz = embeddings
        .iter()
        .zip(&dscores)
        .map(|(z, ds)| {
            dp += &z.t().dot(ds);
            ds.dot(&prototypes.t())
        })
        .collect();
    Ok((loss, dz, dp))
}

fn check_pair(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("paired batches differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.nrows() < 2 {
        return Err(Error::invalid("contrastive losses need a batch of at least two"));
    }
    Ok(())
}

/// Row-wise log-softmax cross-entropy against integer targets; returns the
/// mean loss and `(softmax − onehot)/rows`.
fn softmax_xent(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        loss += sum.ln() + max - logits[[i, targets[i]]];
        row.mapv_inplace(|v| v / sum);
        row[targets[i]] -= 1.0;
    }
    (loss / n, grad / n)
}

/// NT-Xent over the 2B instances of two paired batches: every instance is an
/// anchor, its partner is the positive and the other 2B−2 are negatives.
pub fn nt_xent(z1: &Array2<f64>, z2: &Array2<f64>, temperature: f64) -> Result<f64> {
    Ok(nt_xent_with_grad(z1, z2, temperature)?.0)
}

pub fn nt_xent_with_grad(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    temperature: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_pair(z1, z2)?;
    let b = z1.nrows();
    let z = ndarray::concatenate(Axis(0), &[z1.view(), z2.view()]).expect("matching widths");
    let mut logits = z.dot(&z.t()) / temperature;
    for i in 0..2 * b {
        logits[[i, i]] = f64::NEG_INFINITY;
    }
    let targets: Vec<usize> = (0..2 * b).map(|i| (i + b) % (2 * b)).collect();
    let (loss, mut dl) = softmax_xent(&logits, &targets);
    for i in 0..2 * b {
        dl[[i, i]] = 0.0;
    }
    let dz = (&dl + &dl.t()).dot(&z) / temperature;
    let dz1 = dz.slice(ndarray::s![..b, ..]).to_owned();
    let dz2 = dz.slice(ndarray::s![b.., ..]).to_owned();
    Ok((loss, dz1, dz2))
}

/// Symmetric InfoNCE over the B×B similarity matrix with the diagonal as
/// targets. Logits are `sim / exp(log_temperature)`.
pub fn clip_loss(zp: &Array2<f64>, za: &Array2<f64>, log_temperature: f64) -> Result<f64> {
    Ok(clip_loss_with_grad(zp, za, log_temperature)?.0)
}

/// Returns `(loss, d zp, d za, d log_temperature)`.
pub fn clip_loss_with_grad(
    zp: &Array2<f64>,
    za: &Array2<f64>,
    log_temperature: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>, f64)> {
    check_pair(zp, za)?;
    let b = zp.nrows();
    let inv_t = (-log_temperature).exp();
    let logits = zp.dot(&za.t()) * inv_t;
    let diag: Vec<usize> = (0..b).collect();
    let (l_rows, g_rows) = softmax_xent(&logits, &diag);
    let (l_cols, g_cols) = softmax_xent(&logits.t().to_owned(), &diag);
    let loss = 0.5 * (l_rows + l_cols);
    let dl = (g_rows + g_cols.t()) * 0.5;
    let dzp = dl.dot(za) * inv_t;
    let dza = dl.t().dot(zp) * inv_t;
    let dlog_t = -(&dl * &logits).sum();
    Ok((loss, dzp, dza, dlog_t))
}

/// Per-modality NT-Xent on each modality's two views plus CLIP on the
/// first-view pair of modalities 0 and 1. `views[m]` holds `[view0, view1]`.
pub fn slip_loss(views: &[[Array2<f64>; 2]], nt_temperature: f64, log_temperature: f64) -> Result<f64> {
    Ok(slip_loss_with_grad(views, nt_temperature, log_temperature)?.0)
}

/// Returns the loss, per-(modality, view) gradients and the log-temperature
/// gradient.
pub fn slip_loss_with_grad(
    views: &[[Array2<f64>; 2]],
    nt_temperature: f64,
    log_temperature: f64,
) -> Result<(f64, Vec<[Array2<f64>; 2]>, f64)> {
    if views.len() != 2 {
        return Err(Error::invalid("slip expects exactly two modalities"));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(2);
    for [a, b] in views {
        let (l, ga, gb) = nt_xent_with_grad(a, b, nt_temperature)?;
        loss += l;
        grads.push([ga, gb]);
    }
    let (l, gp, ga, gt) = clip_loss_with_grad(&views[0][0], &views[1][0], log_temperature)?;
    grads[0][0] += &gp;
    grads[1][0] += &ga;
    Ok((loss + l, grads, gt))
}

/// Linear `E → E` head used by the contrastive baselines.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ProjectionHead {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let std = (1.0 / dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Self {
            weight: Array2::from_shape_simple_fn((dim, dim), || normal.sample(rng)),
            bias: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns `(d weight, d bias, d x)`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        (x.t().dot(dy), dy.sum_axis(Axis(0)), dy.dot(&self.weight.t()))
    }
}

/// Row entropy `−Σ V log V`, batch-averaged.
pub fn entropy(v: &Array2<f64>) -> f64 {
    ce_term(v, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_bundle(m: usize, a: usize, b: usize, p: usize) -> ViewBundle {
        let cells = m * a;
        let x = Array2::from_elem((b, p), 1.0 / p as f64);
        ViewBundle::new(vec![x.clone(); cells], vec![x; cells], m, a).unwrap()
    }

    fn random_rows(rng: &mut impl Rng, b: usize, p: usize) -> Array2<f64> {
        let mut x = Array2::from_shape_simple_fn((b, p), || rng.random_range(0.01..1.0));
        for mut r in x.rows_mut() {
            let s = r.sum();
            r /= s;
        }
        x
    }

    fn unit_rows(rng: &mut impl Rng, b: usize, e: usize) -> Array2<f64> {
        let mut x = Array2::from_shape_simple_fn((b, e), || rng.random_range(-1.0f64..1.0));
        for mut r in x.rows_mut() {
            let n: f64 = r.dot(&r).sqrt();
            r /= n;
        }
        x
    }

    #[test]
    fn ce_examples() {
        assert_eq!(ce_term(&array![[0.0, 1.0]], &array![[0.3, 1.0]]), 0.0);
        let h = array![[0.5, 0.5]];
        assert!((ce_term(&h, &h) - 2f64.ln()).abs() < 1e-12);
        assert!((ce_term(&h, &h) - 0.6931).abs() < 1e-4);
        assert!(ce_term(&array![[1.0, 0.0]], &array![[0.0, 1.0]]).is_finite());
    }

    #[test]
    fn term_counts() {
        assert_eq!(within_terms(2, 2).len(), 4);
        assert_eq!(between_terms(2, 2).len(), 8);
        assert_eq!(between_terms(2, 1).len(), 2);
        assert_eq!(within_terms(2, 1).len(), 0);
    }

    #[test]
    fn uniform_closed_forms() {
        let bundle = uniform_bundle(2, 2, 3, 4);
        let l4 = 4f64.ln();
        assert!((within_mod_loss(&bundle).unwrap() - 4.0 * l4).abs() < 1e-12);
        assert!((mpp_loss(&bundle, 0.5).unwrap() - 1.5 * l4).abs() < 1e-12);
        assert!((mpp_loss(&bundle, 0.5).unwrap() - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(within_mod_loss(&uniform_bundle(2, 1, 2, 4)).is_err());
        assert!(between_mod_loss(&uniform_bundle(1, 2, 2, 4)).is_err());
        assert!(mpp_loss(&uniform_bundle(1, 2, 2, 4), 1.0).is_ok());
        assert!(mpp_loss(&uniform_bundle(2, 1, 2, 4), 0.0).is_ok());
        assert!(ViewBundle::new(vec![], vec![], 2, 2).is_err());
    }

    #[test]
    fn alpha_one_is_unimodal_swapped_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, a) = (2, 3);
        let u: Vec<_> = (0..m * a).map(|_| random_rows(&mut rng, 4, 5)).collect();
        let v: Vec<_> = (0..m * a).map(|_| random_rows(&mut rng, 4, 5)).collect();
        let bundle = ViewBundle::new(u.clone(), v.clone(), m, a).unwrap();
        let per_mod: f64 = (0..m)
            .map(|k| swapped_prediction_loss(&u[k * a..(k + 1) * a], &v[k * a..(k + 1) * a]).unwrap())
            .sum();
        let got = mpp_loss(&bundle, 1.0).unwrap();
        assert!((got - per_mod / (m * a) as f64).abs() < 1e-12);
    }

    #[test]
    fn symmetric_bundle_averages_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u0 = random_rows(&mut rng, 3, 4);
        let v0 = random_rows(&mut rng, 3, 4);
        let bundle = ViewBundle::new(vec![u0.clone(); 4], vec![v0.clone(); 4], 2, 2).unwrap();
        let w = within_mod_loss(&bundle).unwrap() / 4.0;
        let b = between_mod_loss(&bundle).unwrap() / 8.0;
        assert!((w - b).abs() < 1e-12);
    }

    #[test]
    fn score_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, a, b, p) = (2, 2, 3, 4);
        let scores: Vec<_> = (0..m * a)
            .map(|_| Array2::from_shape_simple_fn((b, p), || rng.random_range(-1.0..1.0)))
            .collect();
        let targets: Vec<_> = (0..m * a).map(|_| random_rows(&mut rng, b, p)).collect();
        let (_, grads) = mpp_loss_and_score_grad(&scores, &targets, m, a, 0.3, 0.1).unwrap();
        let h = 1e-6;
        for c in 0..m * a {
            for idx in [(0, 0), (1, 2), (2, 3)] {
                let mut plus = scores.clone();
                plus[c][idx] += h;
                let mut minus = scores.clone();
                minus[c][idx] -= h;
                let fp = mpp_loss_and_score_grad(&plus, &targets, m, a, 0.3, 0.1).unwrap().0;
                let fm = mpp_loss_and_score_grad(&minus, &targets, m, a, 0.3, 0.1).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - grads[c][idx]).abs() < 1e-6, "{fd} vs {}", grads[c][idx]);
            }
        }
    }

    #[test]
    fn nt_xent_closed_forms() {
        let eye = Array2::<f64>::eye(4);
        let z1 = eye.slice(ndarray::s![..2, ..]).to_owned();
        let z2 = eye.slice(ndarray::s![2.., ..]).to_owned();
        assert!((nt_xent(&z1, &z2, 1.0).unwrap() - 3f64.ln()).abs() < 1e-12);
        let e = std::f64::consts::E;
        let l = nt_xent(&z1, &z1, 1.0).unwrap();
        assert!((l - (1.0 + 2.0 / e).ln()).abs() < 1e-12);
        assert!(nt_xent(&z1, &z1, 0.01).unwrap() < 1e-12);
        assert!(nt_xent(&z1.slice(ndarray::s![..1, ..]).to_owned(), &z1.slice(ndarray::s![..1, ..]).to_owned(), 1.0).is_err());
    }

    #[test]
    fn clip_limits_and_rejections() {
        let z = Array2::<f64>::eye(3);
        assert!(clip_loss(&z, &z, (0.01f64).ln()).unwrap() < 1e-12);
        let one = Array2::<f64>::eye(1);
        assert!(clip_loss(&one, &one, 0.0).is_err());
    }

    #[test]
    fn contrastive_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z1 = unit_rows(&mut rng, 4, 6);
        let z2 = unit_rows(&mut rng, 4, 6);
        let h = 1e-6;
        let (_, g1, _) = nt_xent_with_grad(&z1, &z2, 0.5).unwrap();
        let (_, gp, _, gt) = clip_loss_with_grad(&z1, &z2, 0.2).unwrap();
        for idx in [(0, 0), (2, 3), (3, 5)] {
            let mut p = z1.clone();
            p[idx] += h;
            let mut q = z1.clone();
            q[idx] -= h;
            let fd = (nt_xent(&p, &z2, 0.5).unwrap() - nt_xent(&q, &z2, 0.5).unwrap()) / (2.0 * h);
            assert!((fd - g1[idx]).abs() < 1e-7);
            let fd = (clip_loss(&p, &z2, 0.2).unwrap() - clip_loss(&q, &z2, 0.2).unwrap()) / (2.0 * h);
            assert!((fd - gp[idx]).abs() < 1e-7);
        }
        let fd = (clip_loss(&z1, &z2, 0.2 + h).unwrap() - clip_loss(&z1, &z2, 0.2 - h).unwrap()) / (2.0 * h);
        assert!((fd - gt).abs() < 1e-7);
    }

    #[test]
    fn slip_decomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let views: Vec<[Array2<f64>; 2]> = (0..2).map(|_| [unit_rows(&mut rng, 5, 4), unit_rows(&mut rng, 5, 4)]).collect();
        let parts = nt_xent(&views[0][0], &views[0][1], 0.1).unwrap()
            + nt_xent(&views[1][0], &views[1][1], 0.1).unwrap()
            + clip_loss(&views[0][0], &views[1][0], 0.0).unwrap();
        assert!((slip_loss(&views, 0.1, 0.0).unwrap() - parts).abs() < 1e-12);
    }

    #[test]
    fn head_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = ProjectionHead::new(3, &mut rng);
        let x = Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0));
        let dy = Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0));
        let (dw, db, dx) = head.backward(&x, &dy);
        let f = |h: &ProjectionHead, x: &Array2<f64>| (h.forward(x) * &dy).sum();
        let eps = 1e-6;
        let mut hp = head.clone();
        hp.weight[(1, 2)] += eps;
        let mut hm = head.clone();
        hm.weight[(1, 2)] -= eps;
        assert!(((f(&hp, &x) - f(&hm, &x)) / (2.0 * eps) - dw[(1, 2)]).abs() < 1e-8);
        let mut hp = head.clone();
        hp.bias[0] += eps;
        assert!(((f(&hp, &x) - f(&head, &x)) / eps - db[0]).abs() < 1e-6);
        let mut xp = x.clone();
        xp[(1, 1)] += eps;
        let mut xm = x.clone();
        xm[(1, 1)] -= eps;
        assert!(((f(&head, &xp) - f(&head, &xm)) / (2.0 * eps) - dx[(1, 1)]).abs() < 1e-8);
    }

    #[test]
    fn alpha_bound_names_key() {
        let cfg = LossConfig {
            alpha: 1.5,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("loss.alpha"), "{err}");
    }

    proptest! {
        #[test]
        fn gibbs_inequality(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_rows(&mut rng, 3, 6);
            let u = random_rows(&mut rng, 3, 6);
            prop_assert!(ce_term(&v, &u) >= entropy(&v) - 1e-9);
            prop_assert!((ce_term(&v, &v) - entropy(&v)).abs() < 1e-12);
        }

        #[test]
        fn grid_relabeling_invariance(seed in 0u64..200, alpha in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, a) = (3, 3);
            let u: Vec<_> = (0..m * a).map(|_| random_rows(&mut rng, 2, 4)).collect();
            let v: Vec<_> = (0..m * a).map(|_| random_rows(&mut rng, 2, 4)).collect();
            let base = mpp_loss(&ViewBundle::new(u.clone(), v.clone(), m, a).unwrap(), alpha).unwrap();
            let mod_perm = [2usize, 0, 1];
            let view_perm = [1usize, 2, 0];
            let remap = |x: &Vec<Array2<f64>>| -> Vec<Array2<f64>> {
                (0..m * a).map(|c| x[mod_perm[c / a] * a + view_perm[c % a]].clone()).collect()
            };
            let permuted = mpp_loss(&ViewBundle::new(remap(&u), remap(&v), m, a).unwrap(), alpha).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12);
        }

        #[test]
        fn nt_xent_rotation_invariant(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z1 = unit_rows(&mut rng, 3, 3);
            let z2 = unit_rows(&mut rng, 3, 3);
            let (s, c) = (0.7f64.sin(), 0.7f64.cos());
            let r = array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
            let a = nt_xent(&z1, &z2, 0.1).unwrap();
            let b = nt_xent(&z1.dot(&r), &z2.dot(&r), 0.1).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn clip_permutation_invariant(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let zp = unit_rows(&mut rng, 4, 5);
            let za = unit_rows(&mut rng, 4, 5);
            let perm = [2usize, 3, 0, 1];
            let a = clip_loss(&zp, &za, 0.1).unwrap();
            let b = clip_loss(&zp.select(Axis(0), &perm), &za.select(Axis(0), &perm), 0.1).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
