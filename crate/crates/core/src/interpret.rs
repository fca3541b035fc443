//! Looking inside a trained prototype bank: k-means over the prototypes,
//! retrieval of the windows closest to each cluster centre, and a 2-D
//! t-SNE layout of the bank.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::prototypes::PrototypeBank;
use crate::signal::{DatasetManifest, Label, Modality};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Separate neighbour lists for each modality's embeddings.
    #[default]
    PerModality,
    /// One list per centroid over the mean of the modality embeddings.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretConfig {
    pub k: usize,
    pub top_k: usize,
    pub seed: u64,
    pub mode: RetrievalMode,
    pub max_iter: usize,
    pub perplexity: f64,
    pub tsne_iters: usize,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self {
            k: 15,
            top_k: 3,
            seed: 0,
            mode: RetrievalMode::PerModality,
            max_iter: 300,
            perplexity: 30.0,
            tsne_iters: 1000,
        }
    }
}

impl InterpretConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Error::Config {
            path: format!("interpret.{path}"),
            message: message.into(),
        };
        if self.k == 0 {
            return Err(bad("k", "must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(bad("top_k", "must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(bad("max_iter", "must be at least 1"));
        }
        if !(self.perplexity >= 1.0) {
            return Err(bad("perplexity", "must be at least 1"));
        }
        Ok(())
    }
}

/// k-means result over the prototype columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet {
    pub k: usize,
    /// `k × E`, each row unit norm.
    pub centroids: Array2<f64>,
    /// Prototype indices per centroid.
    pub members: Vec<Vec<usize>>,
    /// Centroid id per prototype.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step, measured
    /// against the unnormalized means.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centre per point, ties to the lower centre index.
fn assign(points: ArrayView2<'_, f64>, centers: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    points
        .rows()
        .into_iter()
        .map(|p| {
            centers
                .rows()
                .into_iter()
                .map(|c| sq_dist(p, c))
                .enumerate()
                .fold((0, f64::INFINITY), |best, (j, d)| if d < best.1 { (j, d) } else { best })
        })
        .unzip()
}

fn plus_plus_init(points: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            // Every remaining point coincides with a chosen one.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(next)));
        }
    }
    let mut centers = Array2::zeros((k, points.ncols()));
    for (row, &i) in chosen.iter().enumerate() {
        centers.row_mut(row).assign(&points.row(i));
    }
    centers
}

/// Lloyd iterations from a k-means++ start over the rows of `points`.
/// Returns the raw means, the assignment and the inertia trace.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize, seed: u64, max_iter: usize) -> Result<(Array2<f64>, Vec<usize>, Vec<f64>)> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 ≤ k ≤ {n}, got k = {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let (mut labels, mut dists) = assign(points, &centers);
    let mut inertia = vec![dists.iter().sum::<f64>()];
    for _ in 0..max_iter {
        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &points.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = sums.row(c).mapv(|v| v / counts[c] as f64);
                centers.row_mut(c).assign(&mean);
            } else {
                // Move the empty centre onto the point worst served by its own.
                let far = (0..n)
                    .fold(0, |best, i| if dists[i] > dists[best] { i } else { best });
                log::warn!("k-means cluster {c} emptied; reseeding from point {far}");
                centers.row_mut(c).assign(&points.row(far));
                let old = labels[far];
                labels[far] = c;
                dists[far] = 0.0;
                counts[c] = 1;
                counts[old] -= 1;
            }
        }
        let (next, next_d) = assign(points, &centers);
        inertia.push(next_d.iter().sum());
        let done = next == labels;
        labels = next;
        dists = next_d;
        if done {
            break;
        }
    }
    Ok((centers, labels, inertia))
}

/// Clusters the prototype columns of `bank` into `k` groups.
pub fn cluster_prototypes(bank: &PrototypeBank, k: usize, seed: u64, max_iter: usize) -> Result<CentroidSet> {
    let points = bank.matrix.t();
    if k > bank.count() {
        return Err(Error::Config {
            path: "interpret.k".into(),
            message: format!("k = {k} exceeds the {} prototypes", bank.count()),
        });
    }
    let (mut centroids, assignment, inertia) = kmeans(points, k, seed, max_iter)?;
    for (c, mut row) in centroids.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        } else {
            log::warn!("centroid {c} has zero norm and is left unnormalized");
        }
    }
    let mut members = vec![Vec::new(); k];
    for (p, &c) in assignment.iter().enumerate() {
        members[c].push(p);
    }
    Ok(CentroidSet {
        k,
        centroids,
        members,
        assignment,
        inertia,
    })
}

/// Indices of the `top_k` rows of `embeddings` most cosine-similar to
/// `centroid`, best first; ties go to the lower index.
pub fn nearest_segments(centroid: ArrayView1<'_, f64>, embeddings: ArrayView2<'_, f64>, top_k: usize) -> Result<Vec<(usize, f64)>> {
    if centroid.len() != embeddings.ncols() {
        return Err(Error::Shape(format!(
            "centroid has {} dims, embeddings {}",
            centroid.len(),
            embeddings.ncols()
        )));
    }
    let n = embeddings.nrows();
    if n < top_k {
        log::warn!("only {n} embeddings for top-{top_k} retrieval; returning all");
    }
    let cn = centroid.dot(&centroid).sqrt();
    let mut sims: Vec<(usize, f64)> = embeddings
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let denom = cn * row.dot(&row).sqrt();
            let s = if denom > 0.0 { row.dot(&centroid) / denom } else { 0.0 };
            (i, s.clamp(-1.0, 1.0))
        })
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(top_k);
    Ok(sims)
}

/// Gaussian affinities with the bandwidth of each row tuned to `perplexity`,
/// symmetrized and normalized to sum to one.
fn tsne_affinities(x: ArrayView2<'_, f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let d = Array2::from_shape_fn((n, n), |(i, j)| sq_dist(x.row(i), x.row(j)));
    let target = perplexity.ln();
    let mut p = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        let mut row = vec![0.0; n];
        for _ in 0..100 {
            let dmin = (0..n).filter(|&j| j != i).map(|j| d[[i, j]]).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d[[i, j]] - dmin) * beta).exp() };
                sum += row[j];
            }
            let mut h = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                *r /= sum;
                if j != i && *r > 0.0 {
                    h -= *r * r.ln();
                }
            }
            if (h - target).abs() < 1e-5 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        for j in 0..n {
            p[[i, j]] = row[j];
        }
    }
    let sym = (&p + &p.t()) / (2.0 * n as f64);
    sym.mapv(|v| v.max(1e-12))
}

/// Exact t-SNE of the rows of `x` into two dimensions.
pub fn tsne(x: ArrayView2<'_, f64>, perplexity: f64, iters: usize, seed: u64) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::invalid(format!("t-SNE needs at least 3 points, got {n}")));
    }
    let perplexity = perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = tsne_affinities(x, perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).map_err(|e| Error::invalid(e.to_string()))?;
    let mut y = Array2::from_shape_fn((n, 2), |_| init.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let lr = (n as f64 / 12.0 / 4.0).max(50.0);
    let exaggerate_until = 250.min(iters / 4);
    for it in 0..iters {
        let exaggeration = if it < exaggerate_until { 12.0 } else { 1.0 };
        let momentum = if it < exaggerate_until { 0.5 } else { 0.8 };
        let num = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                0.0
            } else {
                1.0 / (1.0 + sq_dist(y.row(i), y.row(j)))
            }
        });
        let z = num.sum().max(1e-300);
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = 4.0 * (exaggeration * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                for c in 0..2 {
                    grad[[i, c]] += w * (y[[i, c]] - y[[j, c]]);
                }
            }
        }
        ndarray::Zip::from(&mut gains)
            .and(&grad)
            .and(&velocity)
            .for_each(|g, &dy, &v| {
                *g = if (dy > 0.0) != (v > 0.0) { *g + 0.2 } else { (*g * 0.8).max(0.01) };
            });
        velocity = &velocity * momentum - &(&gains * &grad) * lr;
        y += &velocity;
        let mean = y.mean_axis(Axis(0)).unwrap();
        y -= &mean;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE coordinates".into()));
    }
    Ok(y)
}

/// 2-D layout of the prototype columns, one row per prototype.
pub fn project_2d(bank: &PrototypeBank, perplexity: f64, iters: usize, seed: u64) -> Result<Array2<f64>> {
    tsne(bank.matrix.t(), perplexity, iters, seed)
}

/// Where a retrieved window came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Position in the manifest.
    pub sample: usize,
    pub subject: String,
    pub window_start_s: f64,
    pub similarity: f64,
    pub label: Option<Label>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub centroid: usize,
    /// `None` for joint retrieval.
    pub modality: Option<Modality>,
    pub neighbors: Vec<Neighbor>,
}

/// Share of a neighbour list agreeing with its most common class label.
/// `None` when no neighbour carries a class label.
pub fn label_consistency(neighbors: &[Neighbor]) -> Option<f64> {
    let classes: Vec<&str> = neighbors
        .iter()
        .filter_map(|n| n.label.as_ref().and_then(Label::as_class))
        .collect();
    if classes.is_empty() {
        return None;
    }
    let mut counts = BTreeMap::new();
    for c in &classes {
        *counts.entry(*c).or_insert(0usize) += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    Some(top as f64 / neighbors.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    pub centroid: usize,
    pub modality: Option<Modality>,
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub top_k: usize,
    pub mode: RetrievalMode,
    pub entries: Vec<ConsistencyEntry>,
    /// Mean over entries with a defined rate.
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpretReport {
    pub centroids: CentroidSet,
    pub coords: Array2<f64>,
    pub retrievals: Vec<Retrieval>,
    pub consistency: ConsistencyReport,
}

impl InterpretReport {
    /// Writes `coords.csv`, `neighbors.json`, `consistency.json` and
    /// `centroids.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_coords(&dir.join("coords.csv"), &self.coords, &self.centroids.assignment)?;
        let json = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        json("neighbors.json", serde_json::to_string_pretty(&self.retrievals)?)?;
        json("consistency.json", serde_json::to_string_pretty(&self.consistency)?)?;
        let c = &self.centroids;
        let centroids = serde_json::json!({
            "k": c.k,
            "centroids": c.centroids.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
            "members": c.members,
            "inertia": c.inertia,
        });
        json("centroids.json", serde_json::to_string_pretty(&centroids)?)
    }
}

#[derive(Serialize)]
struct CoordRow {
    prototype_index: usize,
    x: f64,
    y: f64,
    centroid_id: usize,
}

pub fn write_coords(path: &Path, coords: &Array2<f64>, assignment: &[usize]) -> Result<()> {
    if coords.nrows() != assignment.len() {
        return Err(Error::Shape(format!(
            "{} coordinates for {} assignments",
            coords.nrows(),
            assignment.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for (i, row) in coords.rows().into_iter().enumerate() {
        w.serialize(CoordRow {
            prototype_index: i,
            x: row[0],
            y: row[1],
            centroid_id: assignment[i],
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Inference embeddings of every sample carrying `m`, with their manifest
/// positions.
fn modality_embeddings(model: &Model, manifest: &DatasetManifest, m: Modality) -> Result<(Vec<usize>, Array2<f64>)> {
    let idx: Vec<usize> = (0..manifest.len()).filter(|&i| manifest.samples[i].window(m).is_some()).collect();
    let windows: Vec<ArrayView2<'_, f32>> = idx
        .iter()
        .map(|&i| manifest.samples[i].window(m).unwrap().samples().view())
        .collect();
    if let Some(first) = windows.first() {
        if windows.iter().any(|w| w.dim() != first.dim()) {
            return Err(Error::Shape(format!("{m} windows differ in length")));
        }
    }
    Ok((idx, model.embed(m, &windows)?.mapv(f64::from)))
}

fn neighbors_for(centroid: ArrayView1<'_, f64>, idx: &[usize], emb: &Array2<f64>, manifest: &DatasetManifest, top_k: usize) -> Result<Vec<Neighbor>> {
    Ok(nearest_segments(centroid, emb.view(), top_k)?
        .into_iter()
        .map(|(row, similarity)| {
            let s = &manifest.samples[idx[row]];
            Neighbor {
                sample: idx[row],
                subject: s.subject_id.clone(),
                window_start_s: s.window_start_s,
                similarity,
                label: s.label.clone(),
            }
        })
        .collect())
}

/// Full pipeline over a trained ProtoMM model.
pub fn interpret(model: &Model, manifest: &DatasetManifest, cfg: &InterpretConfig) -> Result<InterpretReport> {
    cfg.validate()?;
    let bank = model
        .bank
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no prototype bank; interpretation needs a ProtoMM checkpoint"))?;
    let centroids = cluster_prototypes(bank, cfg.k, cfg.seed, cfg.max_iter)?;
    let coords = project_2d(bank, cfg.perplexity, cfg.tsne_iters, cfg.seed)?;

    let mut per_mod = BTreeMap::new();
    for m in model.modalities() {
        per_mod.insert(m, modality_embeddings(model, manifest, m)?);
    }
    let mut retrievals = Vec::new();
    match cfg.mode {
        RetrievalMode::PerModality => {
            for (m, (idx, emb)) in &per_mod {
                for c in 0..centroids.k {
                    retrievals.push(Retrieval {
                        centroid: c,
                        modality: Some(*m),
                        neighbors: neighbors_for(centroids.centroids.row(c), idx, emb, manifest, cfg.top_k)?,
                    });
                }
            }
        }
        RetrievalMode::Joint => {
            // Samples carrying every modality, embedded as the mean of their
            // per-modality embeddings.
            let mods: Vec<Modality> = per_mod.keys().copied().collect();
            let idx: Vec<usize> = (0..manifest.len())
                .filter(|&i| mods.iter().all(|&m| manifest.samples[i].window(m).is_some()))
                .collect();
            let mut emb = Array2::<f64>::zeros((idx.len(), bank.embed_dim()));
            for (pos_list, e) in per_mod.values() {
                let lookup: BTreeMap<usize, usize> = pos_list.iter().enumerate().map(|(r, &i)| (i, r)).collect();
                for (r, i) in idx.iter().enumerate() {
                    let mut row = emb.row_mut(r);
                    row += &e.row(lookup[i]);
                }
            }
            emb /= mods.len() as f64;
            for c in 0..centroids.k {
                retrievals.push(Retrieval {
                    centroid: c,
                    modality: None,
                    neighbors: neighbors_for(centroids.centroids.row(c), &idx, &emb, manifest, cfg.top_k)?,
                });
            }
        }
    }
    let entries: Vec<ConsistencyEntry> = retrievals
        .iter()
        .map(|r| ConsistencyEntry {
            centroid: r.centroid,
            modality: r.modality,
            rate: label_consistency(&r.neighbors),
        })
        .collect();
    let rates: Vec<f64> = entries.iter().filter_map(|e| e.rate).collect();
    let mean = (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64);
    Ok(InterpretReport {
        centroids,
        coords,
        retrievals,
        consistency: ConsistencyReport {
            top_k: cfg.top_k,
            mode: cfg.mode,
            entries,
            mean,
        },
    })
}

/// Unit-norm random rows, handy for retrieval checks.
pub fn random_unit_rows(n: usize, dim: usize, rng: &mut impl Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x: Array2<f64> = Array2::from_shape_fn((n, dim), |_| normal.sample(rng));
    for mut row in x.rows_mut() {
        let norm: f64 = row.dot(&row).sqrt().max(1e-12);
        row /= norm;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn bank_from_rows(rows: &Array2<f64>) -> PrototypeBank {
        PrototypeBank::from_matrix(rows.t().to_owned()).unwrap()
    }

    #[test]
    fn k_equals_count_gives_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = random_unit_rows(16, 8, &mut rng);
        let set = cluster_prototypes(&bank_from_rows(&rows), 16, 3, 100).unwrap();
        let mut seen: Vec<usize> = set.members.iter().map(|m| {
            assert_eq!(m.len(), 1);
            m[0]
        }).collect();
        seen.sort();
        assert_eq!(seen, (0..16).collect::<Vec<_>>());
        for (c, m) in set.members.iter().enumerate() {
            for e in 0..8 {
                assert!((set.centroids[[c, e]] - rows[[m[0], e]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn k_one_is_normalized_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = random_unit_rows(10, 6, &mut rng);
        let set = cluster_prototypes(&bank_from_rows(&rows), 1, 0, 100).unwrap();
        let mean = rows.mean_axis(Axis(0)).unwrap();
        let mean = &mean / mean.dot(&mean).sqrt();
        for e in 0..6 {
            assert!((set.centroids[[0, e]] - mean[e]).abs() < 1e-12);
        }
        assert_eq!(set.members[0].len(), 10);
    }

    #[test]
    fn separated_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Array2::zeros((20, 4));
        for i in 0..20 {
            let centre = if i < 10 { 5.0 } else { -5.0 };
            for e in 0..4 {
                rows[[i, e]] = centre + rng.random_range(-0.5..0.5);
            }
        }
        let (_, labels, _) = kmeans(rows.view(), 2, 9, 100).unwrap();
        assert!(labels[..10].iter().all(|&l| l == labels[0]));
        assert!(labels[10..].iter().all(|&l| l == labels[10]));
        assert_ne!(labels[0], labels[10]);
    }

    #[test]
    fn k_above_count_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows = random_unit_rows(4, 3, &mut rng);
        assert!(matches!(
            cluster_prototypes(&bank_from_rows(&rows), 5, 0, 10),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn coincident_points_converge_to_zero_inertia() {
        // two distinct points, three centres: one centre must stay empty
        let rows = Array2::from_shape_fn((6, 2), |(i, _)| if i < 4 { 1.0 } else { 0.0 });
        let (_, labels, inertia) = kmeans(rows.view(), 3, 0, 50).unwrap();
        assert_eq!(labels.len(), 6);
        assert_eq!(*inertia.last().unwrap(), 0.0);
    }

    #[test]
    fn exact_match_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = random_unit_rows(30, 8, &mut rng);
        let hits = nearest_segments(emb.row(17), emb.view(), 3).unwrap();
        assert_eq!(hits[0].0, 17);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aligned_beats_orthogonal_decoys() {
        let mut emb = Array2::zeros((5, 5));
        for i in 0..4 {
            emb[[i, i + 1]] = 1.0;
        }
        emb[[4, 0]] = 1.0;
        let c = Array1::from(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let hits = nearest_segments(c.view(), emb.view(), 3).unwrap();
        assert_eq!(hits[0], (4, 1.0));
        // the decoys tie at zero and keep index order
        assert_eq!(hits[1].0, 0);
        assert_eq!(hits[2].0, 1);
    }

    #[test]
    fn short_set_returns_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let emb = random_unit_rows(2, 4, &mut rng);
        assert_eq!(nearest_segments(emb.row(0), emb.view(), 3).unwrap().len(), 2);
    }

    #[test]
    fn tsne_shape_and_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut rows = random_unit_rows(16, 8, &mut rng);
        let dup = rows.row(2).to_owned();
        rows.row_mut(9).assign(&dup);
        let y = tsne(rows.view(), 30.0, 1000, 0).unwrap();
        assert_eq!(y.dim(), (16, 2));
        assert!(y.iter().all(|v| v.is_finite()));
        let mut dists = Vec::new();
        for i in 0..16 {
            for j in i + 1..16 {
                if (i, j) != (2, 9) {
                    dists.push(sq_dist(y.row(i), y.row(j)).sqrt());
                }
            }
        }
        let pair = sq_dist(y.row(2), y.row(9)).sqrt();
        dists.sort_by(f64::total_cmp);
        let p1 = dists[(dists.len() as f64 * 0.01).floor() as usize];
        assert!(pair < p1, "duplicate pair {pair} vs 1st percentile {p1}");
        assert_eq!(tsne(rows.view(), 30.0, 1000, 0).unwrap(), y);
    }

    #[test]
    fn consistency_rate() {
        let n = |label: &str| Neighbor {
            sample: 0,
            subject: "s".into(),
            window_start_s: 0.0,
            similarity: 1.0,
            label: Some(Label::Class(label.into())),
        };
        assert_eq!(label_consistency(&[n("a"), n("b"), n("a")]), Some(2.0 / 3.0));
        assert_eq!(label_consistency(&[]), None);
    }

    #[test]
    fn coords_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("coords.csv");
        let coords = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
        write_coords(&p, &coords, &[0, 1, 0]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "prototype_index,x,y,centroid_id");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "1,2.0,3.0,1");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn inertia_never_increases(seed in 0u64..1000, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_unit_rows(24, 5, &mut rng);
            let (_, _, inertia) = kmeans(rows.view(), k, seed, 100).unwrap();
            for w in inertia.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }

        #[test]
        fn retrieval_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let emb = random_unit_rows(40, 6, &mut rng);
            let c = random_unit_rows(1, 6, &mut rng);
            let mut perm: Vec<usize> = (0..40).collect();
            for i in (1..40).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let shuffled = emb.select(Axis(0), &perm);
            let a = nearest_segments(c.row(0), emb.view(), 3).unwrap();
            let b: Vec<(usize, f64)> = nearest_segments(c.row(0), shuffled.view(), 3)
                .unwrap()
                .into_iter()
                .map(|(i, s)| (perm[i], s))
                .collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn similarities_sorted_and_bounded(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let emb = random_unit_rows(20, 4, &mut rng);
            let c = random_unit_rows(1, 4, &mut rng);
            let hits = nearest_segments(c.row(0), emb.view(), 5).unwrap();
            for w in hits.windows(2) {
                prop_assert!(w[0].1 >= w[1].1);
            }
            prop_assert!(hits.iter().all(|h| (-1.0..=1.0).contains(&h.1)));
        }
    }
}
