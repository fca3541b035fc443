//! Shared prototype bank, score projection, temperature softmax and
//! Sinkhorn-Knopp equipartitioned targets.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `E × P` matrix whose columns are unit-norm prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    pub matrix: Array2<f64>,
}

impl PrototypeBank {
    /// Columns drawn uniformly on the unit sphere.
    pub fn random<R: Rng + ?Sized>(embed_dim: usize, count: usize, rng: &mut R) -> Self {
        let matrix = Array2::from_shape_simple_fn((embed_dim, count), || StandardNormal.sample(rng));
        let mut bank = Self { matrix };
        bank.renormalize(rng);
        bank
    }

    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prototype matrix".into()));
        }
        Ok(Self { matrix })
    }

    pub fn embed_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn count(&self) -> usize {
        self.matrix.ncols()
    }

    /// Prototype `j` as a vector.
    pub fn column(&self, j: usize) -> Array1<f64> {
        self.matrix.column(j).to_owned()
    }

    /// Divides every column by its norm. A zero column is replaced by a
    /// random unit vector.
    pub fn renormalize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let e = self.embed_dim();
        for (j, mut col) in self.matrix.axis_iter_mut(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            if norm > 1e-12 && norm.is_finite() {
                col.mapv_inplace(|v| v / norm);
            } else {
                log::warn!("prototype {j} has zero norm; reinitializing");
                let fresh: Array1<f64> = Array1::from_shape_simple_fn(e, || StandardNormal.sample(rng));
                let n = fresh.dot(&fresh).sqrt();
                col.assign(&(fresh / n));
            }
        }
    }
}

/// Free-function form of [`PrototypeBank::renormalize`].
pub fn renormalize_prototypes<R: Rng + ?Sized>(mut bank: PrototypeBank, rng: &mut R) -> PrototypeBank {
    bank.renormalize(rng);
    bank
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignmentConfig {
    /// Softmax temperature τ.
    pub temperature: f64,
    /// Entropic regularization ε of the Sinkhorn targets.
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            sinkhorn_epsilon: 0.05,
            sinkhorn_iters: 3,
        }
    }
}

impl AssignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str| Error::Config {
            path: format!("prototypes.{path}"),
            message: "must be positive".into(),
        };
        if !(self.temperature > 0.0) {
            return Err(bad("temperature"));
        }
        if !(self.sinkhorn_epsilon > 0.0) {
            return Err(bad("sinkhorn_epsilon"));
        }
        if self.sinkhorn_iters == 0 {
            return Err(bad("sinkhorn_iters"));
        }
        Ok(())
    }
}

/// The `prototypes` config section: bank size plus assignment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrototypeConfig {
    pub count: usize,
    pub temperature: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    /// Epochs during which the bank receives no updates. Off by default.
    pub freeze_epochs: usize,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        let a = AssignmentConfig::default();
        Self {
            count: 512,
            temperature: a.temperature,
            sinkhorn_epsilon: a.sinkhorn_epsilon,
            sinkhorn_iters: a.sinkhorn_iters,
            freeze_epochs: 0,
        }
    }
}

impl PrototypeConfig {
    pub fn assignment(&self) -> AssignmentConfig {
        AssignmentConfig {
            temperature: self.temperature,
            sinkhorn_epsilon: self.sinkhorn_epsilon,
            sinkhorn_iters: self.sinkhorn_iters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config {
                path: "prototypes.count".into(),
                message: "must be positive".into(),
            });
        }
        self.assignment().validate()
    }
}

/// Scores `S = E · P` for a batch of `B × E` embeddings.
pub fn project(embeddings: &Array2<f64>, bank: &PrototypeBank) -> Result<Array2<f64>> {
    if embeddings.ncols() != bank.embed_dim() {
        return Err(Error::Shape(format!(
            "embeddings have dimension {}, prototypes {}",
            embeddings.ncols(),
            bank.embed_dim()
        )));
    }
    Ok(embeddings.dot(&bank.matrix))
}

/// Row-wise `softmax(S / τ)` with max subtraction.
pub fn soft_probs(scores: &Array2<f64>, temperature: f64) -> Array2<f64> {
    let mut u = scores / temperature;
    for mut row in u.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    u
}

/// Sinkhorn-Knopp targets: `exp(S / ε)` normalized alternately so columns
/// sum to `1/P` and rows to `1/B`, then rescaled so each row sums to one.
/// The result is a constant with respect to the loss.
pub fn sinkhorn_targets(scores: &Array2<f64>, cfg: &AssignmentConfig) -> Array2<f64> {
    sinkhorn_with_trace(scores, cfg).0
}

/// As [`sinkhorn_targets`], also returning, after each round, the standard
/// deviation of the column masses of the (pre-rescale) plan.
pub fn sinkhorn_with_trace(scores: &Array2<f64>, cfg: &AssignmentConfig) -> (Array2<f64>, Vec<f64>) {
    let (b, p) = scores.dim();
    let max = scores.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let mut q = scores.mapv(|s| ((s - max) / cfg.sinkhorn_epsilon).exp());
    let total = q.sum();
    q /= total;
    let mut trace = Vec::with_capacity(cfg.sinkhorn_iters);
    for _ in 0..cfg.sinkhorn_iters {
        let col = q.sum_axis(Axis(0));
        for (j, mut c) in q.axis_iter_mut(Axis(1)).enumerate() {
            let s = col[j];
            if s > 0.0 {
                c.mapv_inplace(|v| v / (s * p as f64));
            }
        }
        let row = q.sum_axis(Axis(1));
        for (i, mut r) in q.axis_iter_mut(Axis(0)).enumerate() {
            let s = row[i];
            if s > 0.0 {
                r.mapv_inplace(|v| v / (s * b as f64));
            }
        }
        let masses = q.sum_axis(Axis(0));
        trace.push(masses.std(0.0));
    }
    q *= b as f64;
    (q, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_self_and_orthogonal() {
        let bank = PrototypeBank::from_matrix(array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        let e = array![[1.0, 0.0, 0.0]];
        let s = project(&e, &bank).unwrap();
        assert_eq!(s, array![[1.0, 0.0]]);
        assert!(project(&array![[1.0, 0.0]], &bank).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = soft_probs(&Array2::zeros((1, 4)), 0.1);
        assert!(u.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let u = soft_probs(&array![[1.0, 2.0]], 1.0);
        let e = std::f64::consts::E;
        assert!((u[[0, 0]] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((u[[0, 1]] - e / (1.0 + e)).abs() < 1e-15);
        assert!((u[[0, 0]] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn sinkhorn_uniform_fixed_point() {
        let cfg = AssignmentConfig::default();
        let v = sinkhorn_targets(&Array2::from_elem((4, 4), 0.3), &cfg);
        assert!(v.iter().all(|&x| (x - 0.25).abs() < 1e-12));
    }

    #[test]
    fn sinkhorn_diagonal_scores() {
        let cfg = AssignmentConfig {
            sinkhorn_epsilon: 0.05,
            sinkhorn_iters: 50,
            ..Default::default()
        };
        let s = array![[10.0, 0.0], [0.0, 10.0]];
        let v = sinkhorn_targets(&s, &cfg);
        assert!((&v - &array![[1.0, 0.0], [0.0, 1.0]]).iter().all(|d| d.abs() < 1e-3));
    }

    #[test]
    fn sinkhorn_row_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0));
        let perm = [3usize, 0, 4, 1, 2];
        let sp = s.select(Axis(0), &perm);
        let cfg = AssignmentConfig::default();
        let v = sinkhorn_targets(&s, &cfg);
        let vp = sinkhorn_targets(&sp, &cfg);
        assert!((&v.select(Axis(0), &perm) - &vp).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn renormalize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bank = PrototypeBank::from_matrix(array![[3.0, 0.0], [4.0, 0.0], [0.0, 0.0]]).unwrap();
        let bank = renormalize_prototypes(bank, &mut rng);
        assert!((bank.matrix[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((bank.matrix[[1, 0]] - 0.8).abs() < 1e-15);
        for c in bank.matrix.columns() {
            assert!((c.dot(&c).sqrt() - 1.0).abs() < 1e-12);
        }
        let again = renormalize_prototypes(bank.clone(), &mut rng);
        assert!((&again.matrix - &bank.matrix).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn dispersion_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = Array2::from_shape_simple_fn((16, 8), || rng.random_range(-1.0..1.0));
            let cfg = AssignmentConfig {
                sinkhorn_iters: 5,
                ..Default::default()
            };
            let (_, trace) = sinkhorn_with_trace(&s, &cfg);
            assert!(trace.windows(2).all(|w| w[1] < w[0] || w[0] < 1e-15), "{trace:?}");
        }
    }

    proptest! {
        #[test]
        fn probs_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12), log_tau in -3.0f64..3.0) {
            let s = Array2::from_shape_vec((3, 4), vals).unwrap();
            let u = soft_probs(&s, 10f64.powf(log_tau));
            for row in u.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }

        #[test]
        fn argmax_is_temperature_invariant(vals in proptest::collection::vec(-1.0f64..1.0, 8), tau in 0.01f64..10.0) {
            let s = Array2::from_shape_vec((2, 4), vals).unwrap();
            let argmax = |m: &Array2<f64>| -> Vec<usize> {
                m.rows().into_iter().map(|r| r.iter().enumerate().fold(0, |best, (i, &v)| if v > r[best] { i } else { best })).collect()
            };
            prop_assert_eq!(argmax(&soft_probs(&s, tau)), argmax(&s));
        }
    }
}
