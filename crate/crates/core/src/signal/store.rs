//! On-disk manifests: a JSON sidecar describing every window plus a binary
//! file holding one record per window. A record is the concatenation, in
//! modality order, of each modality's `T × C` block as row-major
//! little-endian `f32`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Label, Modality, MultimodalSample, Split, Task, TimeSeriesWindow};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Sidecar {
    samples: Vec<SampleEntry>,
    split: Split,
    task: Task,
    sample_rate_hz: f64,
}

#[derive(Serialize, Deserialize)]
struct SampleEntry {
    subject_id: String,
    window_start_s: f64,
    label: Option<Label>,
    /// Byte offset of the record in the data file.
    offset: u64,
    windows: Vec<WindowEntry>,
}

#[derive(Serialize, Deserialize)]
struct WindowEntry {
    modality: Modality,
    t: usize,
    c: usize,
    sample_rate_hz: f64,
}

/// Path of the binary record file paired with a sidecar.
pub fn data_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let bin_path = data_path(path);
    let file = File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut bin = BufWriter::new(file);
    let mut offset = 0u64;
    let mut entries = Vec::with_capacity(manifest.len());
    for sample in &manifest.samples {
        let mut windows = Vec::new();
        let start = offset;
        for (modality, w) in &sample.windows {
            for v in w.samples().iter() {
                bin.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&bin_path, e))?;
            }
            offset += 4 * w.samples().len() as u64;
            windows.push(WindowEntry {
                modality: *modality,
                t: w.len(),
                c: w.channels(),
                sample_rate_hz: w.sample_rate_hz(),
            });
        }
        entries.push(SampleEntry {
            subject_id: sample.subject_id.clone(),
            window_start_s: sample.window_start_s,
            label: sample.label.clone(),
            offset: start,
            windows,
        });
    }
    bin.flush().map_err(|e| Error::io(&bin_path, e))?;

    let sidecar = Sidecar {
        samples: entries,
        split: manifest.split,
        task: manifest.task,
        sample_rate_hz: manifest.sample_rate_hz,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &sidecar)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let sidecar: Sidecar = serde_json::from_reader(BufReader::new(file))?;
    let bin_path = data_path(path);
    let mut bytes = Vec::new();
    File::open(&bin_path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(&bin_path, e))?;

    let mut samples = Vec::with_capacity(sidecar.samples.len());
    for entry in sidecar.samples {
        let mut cursor = entry.offset as usize;
        let mut windows = BTreeMap::new();
        for w in entry.windows {
            let n = w.t * w.c;
            let end = cursor + 4 * n;
            let chunk = bytes.get(cursor..end).ok_or_else(|| {
                Error::Dataset(format!("record at offset {} runs past the data file", entry.offset))
            })?;
            let values: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let block = Array2::from_shape_vec((w.t, w.c), values).map_err(|e| Error::Shape(e.to_string()))?;
            windows.insert(w.modality, TimeSeriesWindow::new(block, w.sample_rate_hz, w.modality)?);
            cursor = end;
        }
        samples.push(MultimodalSample {
            windows,
            label: entry.label,
            subject_id: entry.subject_id,
            window_start_s: entry.window_start_s,
        });
    }
    DatasetManifest::new(samples, sidecar.split, sidecar.task, sidecar.sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_synthetic, SyntheticGenConfig};

    #[test]
    fn round_trip() {
        let cfg = SyntheticGenConfig {
            n_subjects: 2,
            windows_per_subject: 3,
            ..SyntheticGenConfig::default()
        };
        let m = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_manifest(&m, &path).unwrap();
        assert!(data_path(&path).exists());
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);

        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["sample_rate_hz", "samples", "split", "task"]);
    }
}
