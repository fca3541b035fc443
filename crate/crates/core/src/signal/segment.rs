use std::collections::BTreeMap;

use ndarray::s;

use super::{Modality, MultimodalSample, TimeSeriesWindow};
use crate::error::{Error, Result};

/// A continuous synchronized recording of one subject.
#[derive(Clone, Debug)]
pub struct MultimodalStream {
    pub subject_id: String,
    /// Full-length signals; all start at the same wall-clock instant.
    pub signals: BTreeMap<Modality, TimeSeriesWindow>,
    /// Offset of the stream start, added to every window's start time.
    pub start_s: f64,
}

impl MultimodalStream {
    /// Shortest modality duration in seconds.
    pub fn duration_s(&self) -> f64 {
        self.signals
            .values()
            .map(TimeSeriesWindow::duration_s)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Number of windows of length `window_s` at stride `stride_s` fitting in
/// `duration_s`, or zero when the stream is shorter than one window.
pub fn window_count(duration_s: f64, window_s: f64, stride_s: f64) -> usize {
    if duration_s + 1e-9 < window_s {
        return 0;
    }
    ((duration_s - window_s) / stride_s + 1e-9).floor() as usize + 1
}

/// Cuts every modality of `stream` on identical wall-clock boundaries
/// starting at 0 and advancing by `stride_s`.
pub fn segment_stream(stream: &MultimodalStream, window_s: f64, stride_s: f64) -> Result<Vec<MultimodalSample>> {
    if !(stride_s > 0.0) || !(window_s > 0.0) {
        return Err(Error::invalid(format!(
            "window and stride must be positive (window {window_s}, stride {stride_s})"
        )));
    }
    if stream.signals.is_empty() {
        return Err(Error::invalid("stream has no modalities"));
    }
    let duration = stream.duration_s();
    let n = window_count(duration, window_s, stride_s);
    if n == 0 {
        log::warn!(
            "stream for subject {} is {duration:.2} s, shorter than the {window_s} s window",
            stream.subject_id
        );
        return Ok(Vec::new());
    }

    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let start = k as f64 * stride_s;
        let mut windows = BTreeMap::new();
        for (&modality, signal) in &stream.signals {
            let rate = signal.sample_rate_hz();
            let len = (window_s * rate).round() as usize;
            let begin = (start * rate).round() as usize;
            // rounding may push the last window past the end by one sample
            let begin = begin.min(signal.len().saturating_sub(len));
            let block = signal.samples().slice(s![begin..begin + len, ..]).to_owned();
            windows.insert(modality, TimeSeriesWindow::from_parts(block, rate, modality));
        }
        out.push(MultimodalSample {
            windows,
            label: None,
            subject_id: stream.subject_id.clone(),
            window_start_s: stream.start_s + start,
        });
    }
    Ok(out)
}
