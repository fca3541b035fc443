//! Stochastic time-series transforms and the per-modality view sampler.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Modality, MultimodalSample, TimeSeriesWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Jitter,
    Scale,
    Rotate3d,
    Negate,
    TimeReverse,
    ChannelShuffle,
    SegmentShuffle,
    TimeWarp,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::Jitter,
        TransformKind::Scale,
        TransformKind::Rotate3d,
        TransformKind::Negate,
        TransformKind::TimeReverse,
        TransformKind::ChannelShuffle,
        TransformKind::SegmentShuffle,
        TransformKind::TimeWarp,
    ];

    /// Parameter names and their default values.
    pub fn default_params(self) -> &'static [(&'static str, f64)] {
        match self {
            // noise std as a fraction of each channel's std
            TransformKind::Jitter => &[("sigma", 0.05)],
            TransformKind::Scale => &[("sigma", 0.1)],
            TransformKind::SegmentShuffle => &[("segments", 4.0)],
            TransformKind::TimeWarp => &[("knots", 4.0), ("sigma", 0.2)],
            _ => &[],
        }
    }

    /// Whether the transform is meaningful for a modality. Rotation and
    /// channel permutation need more than one channel.
    pub fn supports(self, modality: Modality) -> bool {
        match self {
            TransformKind::Rotate3d | TransformKind::ChannelShuffle => modality == Modality::Accel,
            _ => true,
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

/// One entry of the augmentation suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub name: TransformKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub modalities: BTreeSet<Modality>,
}

impl AugmentationSpec {
    /// Spec with default parameters, applicable wherever the transform is.
    pub fn new(name: TransformKind) -> Self {
        Self {
            name,
            params: BTreeMap::new(),
            modalities: Modality::ALL.into_iter().filter(|&m| name.supports(m)).collect(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn param(&self, key: &str) -> f64 {
        self.params.get(key).copied().unwrap_or_else(|| {
            self.name
                .default_params()
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or(0.0)
        })
    }

    pub fn applies_to(&self, modality: Modality) -> bool {
        self.modalities.contains(&modality)
    }

    pub fn validate(&self) -> Result<()> {
        let known = self.name.default_params();
        for (k, v) in &self.params {
            if !known.iter().any(|(name, _)| name == k) {
                return Err(Error::Config {
                    path: format!("augmentation.{}.params.{k}", self.name),
                    message: "unknown parameter".into(),
                });
            }
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Config {
                    path: format!("augmentation.{}.params.{k}", self.name),
                    message: "must be finite and non-negative".into(),
                });
            }
        }
        for &m in &self.modalities {
            if !self.name.supports(m) {
                return Err(Error::Config {
                    path: format!("augmentation.{}.modalities", self.name),
                    message: format!("{} does not apply to {m}", self.name),
                });
            }
        }
        if !self.applies_to(Modality::Accel) {
            return Err(Error::Config {
                path: format!("augmentation.{}.modalities", self.name),
                message: "every transform must apply to accel".into(),
            });
        }
        Ok(())
    }
}

/// The full eight-transform suite with default parameters.
pub fn default_suite() -> Vec<AugmentationSpec> {
    TransformKind::ALL.into_iter().map(AugmentationSpec::new).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewSamplerConfig {
    pub num_views: usize,
    pub specs: Vec<AugmentationSpec>,
}

impl Default for ViewSamplerConfig {
    fn default() -> Self {
        Self {
            num_views: 2,
            specs: default_suite(),
        }
    }
}

impl ViewSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_views < 2 {
            return Err(Error::Config {
                path: "augmentation.num_views".into(),
                message: "at least two views are required".into(),
            });
        }
        for spec in &self.specs {
            spec.validate()?;
        }
        for m in Modality::ALL {
            if !self.specs.iter().any(|s| s.applies_to(m)) {
                return Err(Error::Config {
                    path: "augmentation.specs".into(),
                    message: format!("no transform applies to {m}"),
                });
            }
        }
        Ok(())
    }

    /// Specs applicable to `modality`, in declaration order.
    pub fn applicable(&self, modality: Modality) -> Vec<&AugmentationSpec> {
        self.specs.iter().filter(|s| s.applies_to(modality)).collect()
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Rotation matrix of a uniformly random unit quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let (w, x, y, z) = loop {
        let q = [gaussian(rng), gaussian(rng), gaussian(rng), gaussian(rng)];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            break (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        }
    };
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Catmull-Rom interpolation through evenly spaced knot values on `[0, 1]`.
fn catmull_rom(values: &[f64], u: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let pos = u.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (pos.floor() as usize).min(n - 2);
    let t = pos - i as f64;
    let at = |j: isize| values[j.clamp(0, n as isize - 1) as usize];
    let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
    0.5 * ((2.0 * p1)
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
}

/// Linear interpolation of every channel of `x` at fractional row `pos`.
fn sample_rows(x: &Array2<f32>, positions: &[f64]) -> Array2<f32> {
    let last = x.nrows() - 1;
    let mut out = Array2::zeros((positions.len(), x.ncols()));
    for (k, &p) in positions.iter().enumerate() {
        let p = p.clamp(0.0, last as f64);
        let i0 = (p.floor() as usize).min(last);
        let frac = p - i0 as f64;
        for c in 0..x.ncols() {
            let a = x[[i0, c]] as f64;
            let v = if frac > 0.0 && i0 < last {
                a + (x[[i0 + 1, c]] as f64 - a) * frac
            } else {
                a
            };
            out[[k, c]] = v as f32;
        }
    }
    out
}

/// Applies one transform to a window. The output keeps the input's shape,
/// rate and modality.
pub fn apply<R: Rng + ?Sized>(spec: &AugmentationSpec, window: &TimeSeriesWindow, rng: &mut R) -> Result<TimeSeriesWindow> {
    let modality = window.modality();
    if !spec.applies_to(modality) || !spec.name.supports(modality) {
        return Err(Error::invalid(format!("{} cannot be applied to {modality}", spec.name)));
    }
    let x = window.samples();
    let (t_len, channels) = x.dim();
    let out = match spec.name {
        TransformKind::Jitter => {
            let rel = spec.param("sigma");
            let mut y = x.clone();
            if rel > 0.0 {
                let std = x.mapv(|v| v as f64).std_axis(Axis(0), 0.0);
                for mut row in y.rows_mut() {
                    for c in 0..channels {
                        row[c] += (rel * std[c] * gaussian(rng)) as f32;
                    }
                }
            }
            y
        }
        TransformKind::Scale => {
            let sigma = spec.param("sigma");
            let factors: Vec<f64> = (0..channels).map(|_| 1.0 + sigma * gaussian(rng)).collect();
            let mut y = x.clone();
            if sigma > 0.0 {
                for mut row in y.rows_mut() {
                    for c in 0..channels {
                        row[c] = (row[c] as f64 * factors[c]) as f32;
                    }
                }
            }
            y
        }
        TransformKind::Rotate3d => {
            if channels != 3 {
                return Err(Error::Shape(format!("rotate3d needs 3 channels, got {channels}")));
            }
            let r = random_rotation(rng);
            let mut y = Array2::zeros((t_len, 3));
            for (src, mut dst) in x.rows().into_iter().zip(y.rows_mut()) {
                let v = [src[0] as f64, src[1] as f64, src[2] as f64];
                for i in 0..3 {
                    dst[i] = (r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2]) as f32;
                }
            }
            y
        }
        TransformKind::Negate => x.mapv(|v| -v),
        TransformKind::TimeReverse => x.slice(s![..;-1, ..]).to_owned(),
        TransformKind::ChannelShuffle => {
            let mut perm: Vec<usize> = (0..channels).collect();
            perm.shuffle(rng);
            x.select(Axis(1), &perm)
        }
        TransformKind::SegmentShuffle => {
            let k = (spec.param("segments").round() as usize).clamp(1, t_len.max(1));
            let bounds: Vec<usize> = (0..=k).map(|i| (i * t_len + k / 2) / k).collect();
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(rng);
            let mut rows = Vec::with_capacity(t_len);
            for &seg in &order {
                rows.extend(bounds[seg]..bounds[seg + 1]);
            }
            x.select(Axis(0), &rows)
        }
        TransformKind::TimeWarp => {
            let knots = (spec.param("knots").round() as usize).max(2);
            let sigma = spec.param("sigma");
            let speeds: Vec<f64> = (0..knots).map(|_| (sigma * gaussian(rng)).exp()).collect();
            if t_len < 2 {
                x.clone()
            } else {
                // cumulative speed gives a monotone map of [0, T-1] onto itself
                let mut warp = Vec::with_capacity(t_len);
                let mut acc = 0.0;
                warp.push(0.0);
                for k in 1..t_len {
                    let u = (k as f64 - 0.5) / (t_len - 1) as f64;
                    acc += catmull_rom(&speeds, u).max(1e-3);
                    warp.push(acc);
                }
                let scale = (t_len - 1) as f64 / acc;
                warp.iter_mut().for_each(|w| *w *= scale);
                sample_rows(x, &warp)
            }
        }
    };
    Ok(window.with_samples(out))
}

/// Picks one applicable spec uniformly at random.
pub fn choose_spec<'a, R: Rng + ?Sized>(
    cfg: &'a ViewSamplerConfig,
    modality: Modality,
    rng: &mut R,
) -> Result<&'a AugmentationSpec> {
    let applicable = cfg.applicable(modality);
    if applicable.is_empty() {
        return Err(Error::invalid(format!("no augmentation applies to {modality}")));
    }
    Ok(applicable[rng.random_range(0..applicable.len())])
}

/// Draws `num_views` independent augmented views of every modality.
pub fn sample_views<R: Rng + ?Sized>(
    sample: &MultimodalSample,
    cfg: &ViewSamplerConfig,
    rng: &mut R,
) -> Result<BTreeMap<(Modality, usize), TimeSeriesWindow>> {
    let mut out = BTreeMap::new();
    for (&m, window) in &sample.windows {
        for a in 0..cfg.num_views {
            let spec = choose_spec(cfg, m, rng)?;
            out.insert((m, a), apply(spec, window, rng)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn accel(t: usize) -> TimeSeriesWindow {
        let x = Array2::from_shape_fn((t, 3), |(i, c)| ((i * (c + 1)) as f32 * 0.3).sin() + c as f32);
        TimeSeriesWindow::new(x, 32.0, Modality::Accel).unwrap()
    }

    fn ppg(t: usize) -> TimeSeriesWindow {
        let x = Array2::from_shape_fn((t, 1), |(i, _)| (i as f32 * 0.2).cos());
        TimeSeriesWindow::new(x, 32.0, Modality::Ppg).unwrap()
    }

    #[test]
    fn shapes_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in TransformKind::ALL {
            let spec = AugmentationSpec::new(kind);
            let w = accel(101);
            let y = apply(&spec, &w, &mut rng).unwrap();
            assert_eq!(y.samples().dim(), w.samples().dim(), "{kind}");
            assert_eq!(y.sample_rate_hz(), w.sample_rate_hz());
            assert_eq!(y.modality(), w.modality());
        }
    }

    #[test]
    fn ppg_rejects_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = apply(&AugmentationSpec::new(TransformKind::Rotate3d), &ppg(10), &mut rng);
        assert!(err.is_err());
        let mut forced = AugmentationSpec::new(TransformKind::ChannelShuffle);
        forced.modalities.insert(Modality::Ppg);
        assert!(forced.validate().is_err());
        assert!(apply(&forced, &ppg(10), &mut rng).is_err());
    }

    #[test]
    fn involutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = accel(64);
        for kind in [TransformKind::TimeReverse, TransformKind::Negate] {
            let spec = AugmentationSpec::new(kind);
            let once = apply(&spec, &w, &mut rng).unwrap();
            assert_ne!(once, w);
            assert_eq!(apply(&spec, &once, &mut rng).unwrap(), w);
        }
    }

    #[test]
    fn segment_shuffle_permutes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = ppg(50);
        let y = apply(&AugmentationSpec::new(TransformKind::SegmentShuffle), &w, &mut rng).unwrap();
        let mut a: Vec<f32> = w.samples().iter().copied().collect();
        let mut b: Vec<f32> = y.samples().iter().copied().collect();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn time_warp_keeps_endpoints_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = ppg(128);
        let spec = AugmentationSpec::new(TransformKind::TimeWarp).with_param("sigma", 0.5);
        let y = apply(&spec, &w, &mut rng).unwrap();
        assert_eq!(y.samples()[[0, 0]], w.samples()[[0, 0]]);
        assert!((y.samples()[[127, 0]] - w.samples()[[127, 0]]).abs() < 1e-5);
        let (lo, hi) = (w.samples().iter().cloned().fold(f32::MAX, f32::min), w.samples().iter().cloned().fold(f32::MIN, f32::max));
        assert!(y.samples().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }

    #[test]
    fn catmull_rom_interpolates_knots() {
        let v = [1.0, 2.0, 0.5, 3.0];
        for (i, &k) in v.iter().enumerate() {
            assert!((catmull_rom(&v, i as f64 / 3.0) - k).abs() < 1e-12);
        }
    }

    #[test]
    fn views_grid_and_determinism() {
        let mut windows = BTreeMap::new();
        windows.insert(Modality::Ppg, ppg(64));
        windows.insert(Modality::Accel, accel(64));
        let sample = MultimodalSample {
            windows,
            label: None,
            subject_id: "s".into(),
            window_start_s: 0.0,
        };
        let cfg = ViewSamplerConfig::default();
        let a = sample_views(&sample, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_views(&sample, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        assert_eq!(cfg.applicable(Modality::Ppg).len(), 6);
        assert_eq!(cfg.applicable(Modality::Accel).len(), 8);
    }

    #[test]
    fn zero_strength_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = accel(40);
        for spec in [
            AugmentationSpec::new(TransformKind::Jitter).with_param("sigma", 0.0),
            AugmentationSpec::new(TransformKind::Scale).with_param("sigma", 0.0),
            AugmentationSpec::new(TransformKind::SegmentShuffle).with_param("segments", 1.0),
        ] {
            assert_eq!(apply(&spec, &w, &mut rng).unwrap(), w, "{}", spec.name);
        }
    }

    #[test]
    fn selection_is_uniform() {
        let cfg = ViewSamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        for m in Modality::ALL {
            let specs = cfg.applicable(m);
            let mut counts = BTreeMap::new();
            for _ in 0..draws {
                *counts.entry(choose_spec(&cfg, m, &mut rng).unwrap().name).or_insert(0usize) += 1;
            }
            assert_eq!(counts.len(), specs.len());
            let p = 1.0 / specs.len() as f64;
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            for (kind, c) in counts {
                assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sd, "{m} {kind}: {c}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn rotation_keeps_per_step_norm(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = accel(32);
            let y = apply(&AugmentationSpec::new(TransformKind::Rotate3d), &w, &mut rng).unwrap();
            for (a, b) in w.samples().rows().into_iter().zip(y.samples().rows()) {
                let na: f64 = a.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                proptest::prop_assert!((na - nb).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_single_view() {
        let cfg = ViewSamplerConfig {
            num_views: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
