//! Aligned multimodal windows, resampling, windowing, dataset ingestion and
//! the synthetic generator used for desk-scale pre-training.

mod resample;
mod segment;
mod store;
mod synth;

pub mod ingest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use resample::resample;
pub use segment::{segment_stream, window_count, MultimodalStream};
pub use store::{load_manifest, save_manifest};
pub use synth::{generate_synthetic, SyntheticGenConfig};

/// Sensor modality of a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ppg,
    Accel,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Ppg, Modality::Accel];

    pub fn channels(self) -> usize {
        match self {
            Modality::Ppg => 1,
            Modality::Accel => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Ppg => "ppg",
            Modality::Accel => "accel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppg" | "p" => Some(Modality::Ppg),
            "accel" | "acc" | "a" => Some(Modality::Accel),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A `T × C` block of samples from one sensor at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesWindow {
    samples: Array2<f32>,
    sample_rate_hz: f64,
    modality: Modality,
}

impl TimeSeriesWindow {
    pub fn new(samples: Array2<f32>, sample_rate_hz: f64, modality: Modality) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.ncols() != modality.channels() {
            return Err(Error::Shape(format!(
                "{modality} window needs {} channels, got {}",
                modality.channels(),
                samples.ncols()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{modality} window samples")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            modality,
        })
    }

    /// Builds a window without re-validating; callers guarantee the invariants.
    pub(crate) fn from_parts(samples: Array2<f32>, sample_rate_hz: f64, modality: Modality) -> Self {
        debug_assert_eq!(samples.ncols(), modality.channels());
        Self {
            samples,
            sample_rate_hz,
            modality,
        }
    }

    pub fn samples(&self) -> &Array2<f32> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Same rate and modality, new samples of identical shape.
    pub(crate) fn with_samples(&self, samples: Array2<f32>) -> Self {
        debug_assert_eq!(samples.dim(), self.samples.dim());
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            modality: self.modality,
        }
    }
}

/// Task label attached to a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(String),
    Value(f64),
}

impl Label {
    pub fn as_class(&self) -> Option<&str> {
        match self {
            Label::Class(c) => Some(c),
            Label::Value(_) => None,
        }
    }

    pub fn as_value(&self) -> Option<f64> {
        match self {
            Label::Value(v) => Some(*v),
            Label::Class(_) => None,
        }
    }
}

/// Temporally aligned windows of every modality for one interval.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSample {
    pub windows: BTreeMap<Modality, TimeSeriesWindow>,
    pub label: Option<Label>,
    pub subject_id: String,
    pub window_start_s: f64,
}

impl MultimodalSample {
    pub fn window(&self, modality: Modality) -> Option<&TimeSeriesWindow> {
        self.windows.get(&modality)
    }

    pub fn modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        self.windows.keys().copied()
    }

    /// Checks that every modality covers the same wall-clock span.
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::invalid("sample has no modalities"));
        }
        let mut durations = self.windows.values().map(|w| w.duration_s());
        let first = durations.next().unwrap_or_default();
        for d in durations {
            // one sample period of slack for rounding of T
            let slack = self
                .windows
                .values()
                .map(|w| 1.0 / w.sample_rate_hz())
                .fold(0.0, f64::max);
            if (d - first).abs() > slack + 1e-9 {
                return Err(Error::Shape(format!(
                    "modalities cover different spans: {first} s vs {d} s"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

/// Downstream task a manifest is labelled for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Stress2,
    Stress4,
    Activity2,
    Activity9,
    HrRegression,
    /// Hidden state of the synthetic generator.
    LatentState,
    #[default]
    None,
}

impl Task {
    pub fn is_regression(self) -> bool {
        matches!(self, Task::HrRegression)
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }
}

/// An ordered, immutable collection of samples for one split and task.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub samples: Vec<MultimodalSample>,
    pub split: Split,
    pub task: Task,
    pub sample_rate_hz: f64,
}

impl DatasetManifest {
    pub fn new(samples: Vec<MultimodalSample>, split: Split, task: Task, sample_rate_hz: f64) -> Result<Self> {
        let manifest = Self {
            samples,
            split,
            task,
            sample_rate_hz,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::Dataset(format!("sample {i}: {e}")))?;
            let labelled = s.label.is_some();
            if labelled != (self.task != Task::None) {
                return Err(Error::Dataset(format!(
                    "sample {i}: label presence does not match task {:?}",
                    self.task
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct subject ids in first-seen order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            if seen.insert(s.subject_id.as_str()) {
                out.push(s.subject_id.clone());
            }
        }
        out
    }

    /// Sorted distinct class names for classification manifests.
    pub fn class_names(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .samples
            .iter()
            .filter_map(|s| s.label.as_ref().and_then(Label::as_class))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn modalities(&self) -> BTreeSet<Modality> {
        self.samples.iter().flat_map(|s| s.modalities()).collect()
    }

    /// Keeps the samples whose subject satisfies `keep`.
    pub fn filter_subjects(&self, split: Split, keep: impl Fn(&str) -> bool) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .filter(|s| keep(&s.subject_id))
                .cloned()
                .collect(),
            split,
            task: self.task,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Subject-wise holdout: the last `ceil(fraction · n_subjects)` subjects
    /// (in first-seen order) become the validation manifest.
    pub fn split_subjects(&self, val_fraction: f64) -> Result<(Self, Self)> {
        let subjects = self.subjects();
        if subjects.len() < 2 {
            return Err(Error::Dataset(
                "subject-wise split needs at least two subjects".into(),
            ));
        }
        let n_val = ((subjects.len() as f64 * val_fraction).ceil() as usize).clamp(1, subjects.len() - 1);
        let val: BTreeSet<&str> = subjects[subjects.len() - n_val..]
            .iter()
            .map(String::as_str)
            .collect();
        let train = self.filter_subjects(Split::Train, |s| !val.contains(s));
        let valm = self.filter_subjects(Split::Val, |s| val.contains(s));
        Ok((train, valm))
    }
}
