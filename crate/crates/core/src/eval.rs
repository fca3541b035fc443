//! Frozen-encoder embedding extraction, linear probes and metrics.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::signal::{DatasetManifest, Label, Modality, Task};

/// Which embeddings feed the probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Composition {
    #[serde(rename = "P")]
    SingleP,
    #[serde(rename = "A")]
    SingleA,
    #[serde(rename = "P+A")]
    ConcatPA,
}

impl Composition {
    pub fn modalities(self) -> Vec<Modality> {
        match self {
            Self::SingleP => vec![Modality::Ppg],
            Self::SingleA => vec![Modality::Accel],
            Self::ConcatPA => vec![Modality::Ppg, Modality::Accel],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "P" | "PPG" | "SINGLE_P" => Some(Self::SingleP),
            "A" | "ACC" | "ACCEL" | "SINGLE_A" => Some(Self::SingleA),
            "P+A" | "PA" | "CONCAT_PA" => Some(Self::ConcatPA),
            _ => None,
        }
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SingleP => "P",
            Self::SingleA => "A",
            Self::ConcatPA => "P+A",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Classification,
    Regression,
}

/// The `evaluation` config section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub composition: Composition,
    /// Inferred from the manifest's task when absent.
    pub task_type: Option<TaskType>,
    /// Subject-wise cross-validation folds.
    pub folds: usize,
    /// L2 penalty of the logistic probe.
    pub l2: f64,
    pub ridge_lambda: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            composition: Composition::ConcatPA,
            task_type: None,
            folds: 5,
            l2: 1e-4,
            ridge_lambda: 1e-3,
            max_iter: 300,
            tolerance: 1e-7,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Error::Config {
            path: format!("evaluation.{path}"),
            message: message.into(),
        };
        if self.folds < 2 {
            return Err(bad("folds", "must be at least 2"));
        }
        if !(self.l2 >= 0.0) {
            return Err(bad("l2", "must be non-negative"));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(bad("ridge_lambda", "must be non-negative"));
        }
        if self.max_iter == 0 {
            return Err(bad("max_iter", "must be positive"));
        }
        Ok(())
    }
}

/// Probe inputs: one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub x: Array2<f64>,
    pub labels: Vec<Label>,
    pub subjects: Vec<String>,
    /// Samples dropped because a required modality or label was missing.
    pub skipped: usize,
}

/// Embeds every sample of `manifest` in inference mode. Concatenation puts
/// PPG columns first.
pub fn extract_embeddings(model: &Model, manifest: &DatasetManifest, composition: Composition) -> Result<Embeddings> {
    let mods = composition.modalities();
    for &m in &mods {
        model.encoder(m)?;
    }
    let keep: Vec<_> = manifest
        .samples
        .iter()
        .filter(|s| s.label.is_some() && mods.iter().all(|&m| s.window(m).is_some()))
        .collect();
    let skipped = manifest.len() - keep.len();
    if skipped > 0 {
        log::warn!("{skipped} samples lack a label or a {composition} modality and were skipped");
    }
    let mut blocks = Vec::new();
    for &m in &mods {
        let windows: Vec<ArrayView2<'_, f32>> = keep.iter().map(|s| s.window(m).unwrap().samples().view()).collect();
        if let Some(first) = windows.first() {
            if windows.iter().any(|w| w.dim() != first.dim()) {
                return Err(Error::Shape(format!("{m} windows differ in length")));
            }
        }
        blocks.push(model.embed(m, &windows)?.mapv(f64::from));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let x = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(Embeddings {
        x,
        labels: keep.iter().map(|s| s.label.clone().unwrap()).collect(),
        subjects: keep.iter().map(|s| s.subject_id.clone()).collect(),
        skipped,
    })
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Macro-F1 with the list of classes that were predicted but had no
/// support, and so were left out of the average.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroF1 {
    pub value: f64,
    pub per_class: BTreeMap<usize, f64>,
    pub excluded: Vec<usize>,
}

pub fn macro_f1_detailed(preds: &[usize], labels: &[usize]) -> Result<MacroF1> {
    check_lengths(preds.len(), labels.len())?;
    let mut tp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fne: BTreeMap<usize, usize> = BTreeMap::new();
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            *tp.entry(l).or_default() += 1;
        } else {
            *fp.entry(p).or_default() += 1;
            *fne.entry(l).or_default() += 1;
        }
    }
    let support: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let excluded: Vec<usize> = fp.keys().filter(|c| !support.contains(c)).copied().collect();
    if !excluded.is_empty() {
        log::warn!("classes {excluded:?} have no support and are left out of macro-F1");
    }
    let per_class: BTreeMap<usize, f64> = support
        .iter()
        .map(|&c| {
            let t = *tp.get(&c).unwrap_or(&0) as f64;
            let denom = 2.0 * t + *fp.get(&c).unwrap_or(&0) as f64 + *fne.get(&c).unwrap_or(&0) as f64;
            (c, if denom > 0.0 { 2.0 * t / denom } else { 0.0 })
        })
        .collect();
    let value = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(MacroF1 {
        value,
        per_class,
        excluded,
    })
}

pub fn macro_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    Ok(macro_f1_detailed(preds, labels)?.value)
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), targets.len())?;
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / targets.len() as f64)
}

pub fn r2(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), targets.len())?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("R² is undefined for constant targets"));
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Column means and standard deviations (zero spread replaced by one).
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Self { mean, std }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }
}

/// Limited-memory BFGS with Armijo backtracking. `f` returns the value and
/// gradient at a point.
pub fn lbfgs(mut x: Vec<f64>, f: impl Fn(&[f64]) -> (f64, Vec<f64>), max_iter: usize, tol: f64) -> Vec<f64> {
    const MEMORY: usize = 10;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (mut fx, mut g) = f(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    for _ in 0..max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < tol {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            q.iter_mut().for_each(|v| *v /= gnorm.max(1.0));
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = f(&cand);
            if fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, nf, ng)) = accepted else { break };
        let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ng.iter().zip(&g).map(|(a, b)| a - b).collect();
        let converged = (fx - nf).abs() <= tol * fx.abs().max(1.0);
        if dot(&s, &y) > 1e-12 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = nx;
        fx = nf;
        g = ng;
        if converged {
            break;
        }
    }
    x
}

/// Multinomial logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticProbe {
    pub scaler: Standardizer,
    /// `D × K`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LogisticProbe {
    pub fn fit(x: &Array2<f64>, y: &[usize], classes: usize, l2: f64, max_iter: usize, tol: f64) -> Self {
        let scaler = Standardizer::fit(x);
        let xs = scaler.apply(x);
        let (n, d) = xs.dim();
        let k = classes;
        let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
            let w = ArrayView2::from_shape((d, k), &theta[..d * k]).unwrap();
            let b = ndarray::ArrayView1::from(&theta[d * k..]);
            let mut logits = xs.dot(&w) + &b;
            let mut loss = 0.0;
            for (i, mut row) in logits.rows_mut().into_iter().enumerate() {
                let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
                loss -= row[y[i]].max(1e-300).ln();
                row[y[i]] -= 1.0;
            }
            let dl = logits / n as f64;
            let dw = xs.t().dot(&dl) + &w * l2;
            let db = dl.sum_axis(Axis(0));
            let value = loss / n as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
            let mut grad = dw.into_raw_vec_and_offset().0;
            grad.extend(db.iter());
            (value, grad)
        };
        let theta = lbfgs(vec![0.0; d * k + k], objective, max_iter, tol);
        Self {
            scaler,
            weight: Array2::from_shape_vec((d, k), theta[..d * k].to_vec()).unwrap(),
            bias: Array1::from(theta[d * k..].to_vec()),
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let logits = self.scaler.apply(x).dot(&self.weight) + &self.bias;
        logits
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().fold(0, |best, (i, &v)| if v > r[best] { i } else { best }))
            .collect()
    }
}

/// Closed-form ridge regression with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeProbe {
    pub scaler: Standardizer,
    pub weight: Array1<f64>,
    pub intercept: f64,
}

impl RidgeProbe {
    pub fn fit(x: &Array2<f64>, y: &[f64], lambda: f64) -> Result<Self> {
        let scaler = Standardizer::fit(x);
        let xs = scaler.apply(x);
        let (n, d) = xs.dim();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let xm = DMatrix::from_row_iterator(n, d, xs.iter().copied());
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let gram = xm.transpose() * &xm + DMatrix::identity(d, d) * lambda.max(1e-12);
        let rhs = xm.transpose() * yc;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::invalid("ridge normal equations are not positive definite"))?;
        let w = chol.solve(&rhs);
        Ok(Self {
            scaler,
            weight: Array1::from_iter(w.iter().copied()),
            intercept: y_mean,
        })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        (self.scaler.apply(x).dot(&self.weight) + self.intercept).to_vec()
    }
}

/// Subject-wise folds: subject `i` (first-seen order) goes to fold `i mod k`.
/// Returns, per fold, the held-out sample indices.
pub fn subject_folds(subjects: &[String], folds: usize) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<&str> = Vec::new();
    for s in subjects {
        if !order.contains(&s.as_str()) {
            order.push(s);
        }
    }
    if order.len() < 2 {
        return Err(Error::Dataset("cross-validation needs at least two subjects".into()));
    }
    let k = folds.min(order.len());
    let fold_of: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (*s, i % k)).collect();
    let mut out = vec![Vec::new(); k];
    for (i, s) in subjects.iter().enumerate() {
        out[fold_of[s.as_str()]].push(i);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub majority_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self { mean, std })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task: Option<Task>,
    pub task_type: Option<TaskType>,
    pub composition: Option<Composition>,
    pub n_samples: usize,
    pub n_skipped_samples: usize,
    pub classes: Vec<String>,
    pub folds: Vec<FoldMetrics>,
    pub skipped_folds: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub majority_accuracy: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<Summary>,
}

/// A fitted probe on the full data set.
#[derive(Clone, Debug, PartialEq)]
pub enum ProbeWeights {
    Logistic(LogisticProbe),
    Ridge(RidgeProbe),
}

fn rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

fn task_type_of(labels: &[Label]) -> Result<TaskType> {
    if labels.iter().all(|l| l.as_class().is_some()) {
        Ok(TaskType::Classification)
    } else if labels.iter().all(|l| l.as_value().is_some()) {
        Ok(TaskType::Regression)
    } else {
        Err(Error::Dataset("labels mix classes and values".into()))
    }
}

/// Fits the probe in subject-wise cross-validation, then once on all data.
pub fn train_linear_probe(emb: &Embeddings, cfg: &ProbeConfig) -> Result<(ProbeWeights, ProbeReport)> {
    cfg.validate()?;
    let task_type = match cfg.task_type {
        Some(t) => t,
        None => task_type_of(&emb.labels)?,
    };
    let folds = subject_folds(&emb.subjects, cfg.folds)?;
    let mut report = ProbeReport {
        task_type: Some(task_type),
        composition: Some(cfg.composition),
        n_samples: emb.x.nrows(),
        n_skipped_samples: emb.skipped,
        ..Default::default()
    };
    let all: Vec<usize> = (0..emb.x.nrows()).collect();
    match task_type {
        TaskType::Classification => {
            let names: Vec<String> = {
                let mut v: Vec<String> = emb
                    .labels
                    .iter()
                    .map(|l| l.as_class().map(str::to_string).ok_or_else(|| Error::Dataset("expected class labels".into())))
                    .collect::<Result<_>>()?;
                v.sort();
                v.dedup();
                v
            };
            if names.len() < 2 {
                return Err(Error::Dataset("classification probe needs at least two classes".into()));
            }
            let y: Vec<usize> = emb
                .labels
                .iter()
                .map(|l| names.binary_search(&l.as_class().unwrap().to_string()).unwrap())
                .collect();
            for (f, test) in folds.iter().enumerate() {
                let train: Vec<usize> = all.iter().copied().filter(|i| !test.contains(i)).collect();
                let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
                let yte: Vec<usize> = test.iter().map(|&i| y[i]).collect();
                let distinct: std::collections::BTreeSet<_> = ytr.iter().collect();
                if distinct.len() < 2 || test.is_empty() {
                    log::warn!("fold {f} has a single training class; skipped");
                    report.skipped_folds.push(f);
                    continue;
                }
                let probe = LogisticProbe::fit(&rows(&emb.x, &train), &ytr, names.len(), cfg.l2, cfg.max_iter, cfg.tolerance);
                let pred = probe.predict(&rows(&emb.x, test));
                let pred_tr = probe.predict(&rows(&emb.x, &train));
                let majority = (0..names.len())
                    .max_by_key(|c| ytr.iter().filter(|&&v| v == *c).count())
                    .unwrap_or(0);
                report.folds.push(FoldMetrics {
                    fold: f,
                    n_train: train.len(),
                    n_test: test.len(),
                    macro_f1: Some(macro_f1(&pred, &yte)?),
                    accuracy: Some(accuracy(&pred, &yte)?),
                    train_macro_f1: Some(macro_f1(&pred_tr, &ytr)?),
                    majority_accuracy: Some(accuracy(&vec![majority; yte.len()], &yte)?),
                    ..Default::default()
                });
            }
            let pick = |g: fn(&FoldMetrics) -> Option<f64>| Summary::of(&report.folds.iter().filter_map(g).collect::<Vec<_>>());
            report.macro_f1 = pick(|m| m.macro_f1);
            report.accuracy = pick(|m| m.accuracy);
            report.majority_accuracy = pick(|m| m.majority_accuracy);
            report.classes = names.clone();
            let full = LogisticProbe::fit(&emb.x, &y, names.len(), cfg.l2, cfg.max_iter, cfg.tolerance);
            Ok((ProbeWeights::Logistic(full), report))
        }
        TaskType::Regression => {
            let y: Vec<f64> = emb
                .labels
                .iter()
                .map(|l| l.as_value().ok_or_else(|| Error::Dataset("expected numeric targets".into())))
                .collect::<Result<_>>()?;
            let first = y[0];
            if y.iter().all(|&v| v == first) {
                return Err(Error::Dataset("regression probe needs at least two distinct targets".into()));
            }
            for (f, test) in folds.iter().enumerate() {
                let train: Vec<usize> = all.iter().copied().filter(|i| !test.contains(i)).collect();
                let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
                if test.len() < 2 || yte.iter().all(|&v| v == yte[0]) {
                    log::warn!("fold {f} has constant held-out targets; skipped");
                    report.skipped_folds.push(f);
                    continue;
                }
                let probe = RidgeProbe::fit(&rows(&emb.x, &train), &ytr, cfg.ridge_lambda)?;
                let pred = probe.predict(&rows(&emb.x, test));
                report.folds.push(FoldMetrics {
                    fold: f,
                    n_train: train.len(),
                    n_test: test.len(),
                    mae: Some(mae(&pred, &yte)?),
                    r2: Some(r2(&pred, &yte)?),
                    ..Default::default()
                });
            }
            let pick = |g: fn(&FoldMetrics) -> Option<f64>| Summary::of(&report.folds.iter().filter_map(g).collect::<Vec<_>>());
            report.mae = pick(|m| m.mae);
            report.r2 = pick(|m| m.r2);
            let full = RidgeProbe::fit(&emb.x, &y, cfg.ridge_lambda)?;
            Ok((ProbeWeights::Ridge(full), report))
        }
    }
}

/// Extraction followed by the cross-validated probe.
pub fn probe(model: &Model, manifest: &DatasetManifest, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let emb = extract_embeddings(model, manifest, cfg.composition)?;
    let (_, mut report) = train_linear_probe(&emb, cfg)?;
    report.task = Some(manifest.task);
    Ok(report)
}

/// Columns `from..to`; used to probe one half of a concatenation.
pub fn columns(x: &Array2<f64>, from: usize, to: usize) -> Array2<f64> {
    x.slice(s![.., from..to]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn confusion(cm: [[usize; 2]; 2]) -> (Vec<usize>, Vec<usize>) {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for (t, row) in cm.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                preds.extend(std::iter::repeat_n(p, n));
                labels.extend(std::iter::repeat_n(t, n));
            }
        }
        (preds, labels)
    }

    #[test]
    fn confusion_matrix_example() {
        let (p, l) = confusion([[8, 2], [3, 7]]);
        assert!((accuracy(&p, &l).unwrap() - 0.75).abs() < 1e-12);
        let f = macro_f1_detailed(&p, &l).unwrap();
        assert!((f.per_class[&0] - 16.0 / 21.0).abs() < 1e-12);
        assert!((f.per_class[&1] - 14.0 / 19.0).abs() < 1e-12);
        assert!((f.value - 0.749).abs() < 1e-3);
    }

    #[test]
    fn perfect_and_degenerate() {
        let l = [0, 1, 2, 1];
        assert_eq!(macro_f1(&l, &l).unwrap(), 1.0);
        assert_eq!(accuracy(&l, &l).unwrap(), 1.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        let t = [1.0, 2.0, 4.0, 5.0];
        assert!(r2(&[3.0; 4], &t).unwrap().abs() < 1e-15);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn unsupported_classes_are_reported() {
        let f = macro_f1_detailed(&[0, 2, 1], &[0, 1, 1]).unwrap();
        assert_eq!(f.excluded, vec![2]);
        assert_eq!(f.per_class.len(), 2);
    }

    fn blobs(rng: &mut ChaCha8Rng, n: usize, d: usize, subjects: usize) -> Embeddings {
        let mut x = Array2::zeros((n, d));
        let mut labels = Vec::new();
        let mut subj = Vec::new();
        for i in 0..n {
            let c = i % 2;
            for j in 0..d {
                x[[i, j]] = rng.random_range(-1.0..1.0) + if j == 0 { 4.0 * c as f64 - 2.0 } else { 0.0 };
            }
            labels.push(Label::Class(format!("c{c}")));
            subj.push(format!("s{}", i % subjects));
        }
        Embeddings {
            x,
            labels,
            subjects: subj,
            skipped: 0,
        }
    }

    #[test]
    fn separable_classes_fit_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = blobs(&mut rng, 60, 4, 6);
        let (_, report) = train_linear_probe(&emb, &ProbeConfig::default()).unwrap();
        assert!(report.folds.iter().all(|f| f.train_macro_f1 == Some(1.0)));
        assert_eq!(report.macro_f1.unwrap().mean, 1.0);
        assert_eq!(report.folds.len(), 5);
    }

    #[test]
    fn affine_targets_give_unit_r2() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((40, 3), || rng.random_range(-1.0..1.0));
        let y: Vec<f64> = x.rows().into_iter().map(|r| 2.0 * r[0] - r[1] + 0.5 * r[2] + 3.0).collect();
        let emb = Embeddings {
            x,
            labels: y.iter().map(|&v| Label::Value(v)).collect(),
            subjects: (0..40).map(|i| format!("s{}", i % 4)).collect(),
            skipped: 0,
        };
        let cfg = ProbeConfig {
            ridge_lambda: 1e-9,
            ..Default::default()
        };
        let (_, report) = train_linear_probe(&emb, &cfg).unwrap();
        assert!((report.r2.unwrap().mean - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shuffled_labels_sit_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 600;
        let x = Array2::from_shape_simple_fn((n, 5), || rng.random_range(-1.0..1.0));
        let labels: Vec<Label> = (0..n).map(|_| Label::Class(format!("c{}", rng.random_range(0..3)))).collect();
        let emb = Embeddings {
            x,
            labels,
            subjects: (0..n).map(|i| format!("s{}", i % 10)).collect(),
            skipped: 0,
        };
        let (_, report) = train_linear_probe(&emb, &ProbeConfig::default()).unwrap();
        let acc = report.accuracy.unwrap().mean;
        let sigma = ((1.0 / 3.0) * (2.0 / 3.0) / n as f64).sqrt();
        assert!((acc - 1.0 / 3.0).abs() < 3.0 * sigma, "{acc}");
    }

    #[test]
    fn folds_are_subject_disjoint() {
        let subjects: Vec<String> = (0..30).map(|i| format!("s{}", i % 7)).collect();
        let folds = subject_folds(&subjects, 5).unwrap();
        assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), 30);
        for (i, a) in folds.iter().enumerate() {
            for b in folds.iter().skip(i + 1) {
                assert!(a.iter().all(|&x| b.iter().all(|&y| subjects[x] != subjects[y])));
            }
        }
        assert!(subject_folds(&["a".to_string()], 5).is_err());
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let x = lbfgs(vec![-1.2, 1.0], f, 500, 1e-10);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4, "{x:?}");
    }

    proptest! {
        #[test]
        fn metrics_are_order_and_name_invariant(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40), seed in 0u64..100) {
            let (p, l): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rng);
            let ps: Vec<_> = idx.iter().map(|&i| p[i]).collect();
            let ls: Vec<_> = idx.iter().map(|&i| l[i]).collect();
            prop_assert!((macro_f1(&p, &l).unwrap() - macro_f1(&ps, &ls).unwrap()).abs() < 1e-12);
            prop_assert_eq!(accuracy(&p, &l).unwrap(), accuracy(&ps, &ls).unwrap());
            let rename = |c: usize| (c + 3) % 4;
            let pr: Vec<_> = p.iter().map(|&c| rename(c)).collect();
            let lr: Vec<_> = l.iter().map(|&c| rename(c)).collect();
            prop_assert!((macro_f1(&p, &l).unwrap() - macro_f1(&pr, &lr).unwrap()).abs() < 1e-12);
            let f = macro_f1(&p, &l).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
