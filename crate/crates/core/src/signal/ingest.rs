//! Adapters for the public WESAD and PPG-DaLiA wrist recordings.
//!
//! Both adapters read the Empatica E4 CSV export: the first line holds the
//! recording start (unix seconds), the second the sample rate, then one row
//! per sample. `BVP.csv` is the PPG modality and `ACC.csv` (raw units of
//! 1/64 g) the accelerometer.
//!
//! Expected layouts:
//!
//! ```text
//! wesad/S2/S2_E4_Data/{BVP,ACC}.csv
//! wesad/S2/S2_quest.csv            # "# ORDER;…", "# START;…", "# END;…" (minutes.seconds)
//! dalia/S1/S1_E4/{BVP,ACC}.csv
//! dalia/S1/S1_activity.csv         # "NAME,start_seconds" per line
//! dalia/S1/S1_hr.csv               # one bpm per 8 s window at 2 s stride
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::{
    resample, segment_stream, DatasetManifest, Label, Modality, MultimodalSample, MultimodalStream, Split, Task,
    TimeSeriesWindow,
};
use crate::error::{Error, Result};

/// Rate every ingested signal is resampled to.
pub const TARGET_HZ: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Wesad,
    Dalia,
}

/// Reads one E4 CSV export into a window plus its start time.
pub fn read_e4_csv(path: &Path, modality: Modality) -> Result<(f64, TimeSeriesWindow)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let parse_first = |line: Option<&str>, what: &str| -> Result<f64> {
        line.and_then(|l| l.split(',').next())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Dataset(format!("{}: missing {what} header", path.display())))
    };
    let start = parse_first(lines.next(), "start time")?;
    let rate = parse_first(lines.next(), "sample rate")?;
    let c = modality.channels();
    let scale = if modality == Modality::Accel { 1.0 / 64.0 } else { 1.0 };
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f32> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map(|x| (x * scale) as f32))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Dataset(format!("{}: row {}: {e}", path.display(), i + 3)))?;
        if row.len() < c {
            return Err(Error::Dataset(format!(
                "{}: row {} has {} columns, expected {c}",
                path.display(),
                i + 3,
                row.len()
            )));
        }
        values.extend_from_slice(&row[..c]);
    }
    let t = values.len() / c;
    let block = Array2::from_shape_vec((t, c), values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((start, TimeSeriesWindow::new(block, rate, modality)?))
}

/// Loads BVP and ACC, resamples both to 50 Hz and trims them to a common
/// start instant.
fn load_e4_pair(dir: &Path) -> Result<BTreeMap<Modality, TimeSeriesWindow>> {
    let (ppg_start, ppg) = read_e4_csv(&dir.join("BVP.csv"), Modality::Ppg)?;
    let (acc_start, acc) = read_e4_csv(&dir.join("ACC.csv"), Modality::Accel)?;
    let origin = ppg_start.max(acc_start);
    let mut out = BTreeMap::new();
    for (start, w) in [(ppg_start, ppg), (acc_start, acc)] {
        let w = resample(&w, TARGET_HZ)?;
        let skip = ((origin - start) * TARGET_HZ).round() as usize;
        let skip = skip.min(w.len());
        let trimmed = w.samples().slice(s![skip.., ..]).to_owned();
        out.insert(w.modality(), TimeSeriesWindow::from_parts(trimmed, TARGET_HZ, w.modality()));
    }
    Ok(out)
}

/// Cuts `[start_s, end_s)` out of every signal.
fn crop(signals: &BTreeMap<Modality, TimeSeriesWindow>, start_s: f64, end_s: f64) -> BTreeMap<Modality, TimeSeriesWindow> {
    signals
        .iter()
        .map(|(&m, w)| {
            let rate = w.sample_rate_hz();
            let a = ((start_s * rate).round() as usize).min(w.len());
            let b = ((end_s * rate).round() as usize).clamp(a, w.len());
            let block = w.samples().slice(s![a..b, ..]).to_owned();
            (m, TimeSeriesWindow::from_parts(block, rate, m))
        })
        .collect()
}

/// Subject directories (`S<number>`) under `root`, sorted numerically.
fn subject_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<(u32, String, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let n = name.strip_prefix('S')?.parse::<u32>().ok()?;
            Some((n, name, e.path()))
        })
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(|(_, name, p)| (name, p)).collect())
}

/// WESAD protocol condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Session {
    Baseline,
    Stress,
    Amusement,
    Meditation,
    Reading,
}

fn parse_session(code: &str) -> Result<Session> {
    match code.trim() {
        "Base" => Ok(Session::Baseline),
        "TSST" => Ok(Session::Stress),
        "Fun" => Ok(Session::Amusement),
        "Medi 1" | "Medi 2" | "Medi" => Ok(Session::Meditation),
        "bRead" | "fRead" | "sRead" => Ok(Session::Reading),
        other => Err(Error::Dataset(format!("unknown WESAD session code `{other}`"))),
    }
}

/// Protocol times are written as minutes.seconds, e.g. `7.08` is 7 min 8 s.
fn parse_min_sec(v: &str) -> Result<f64> {
    let v = v.trim();
    let (min, sec) = v.split_once('.').unwrap_or((v, "0"));
    let min: f64 = min
        .parse()
        .map_err(|_| Error::Dataset(format!("bad protocol time `{v}`")))?;
    let sec_digits = format!("{sec:0<2}");
    let sec: f64 = sec_digits
        .parse()
        .map_err(|_| Error::Dataset(format!("bad protocol time `{v}`")))?;
    Ok(min * 60.0 + sec)
}

fn parse_quest(path: &Path) -> Result<Vec<(Session, f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for line in text.lines() {
        let mut cells = line.split(';');
        let Some(head) = cells.next() else { continue };
        let key = head.trim_start_matches('#').trim();
        if matches!(key, "ORDER" | "START" | "END") {
            rows.insert(key, cells.filter(|c| !c.trim().is_empty()).collect());
        }
    }
    let get = |k: &str| {
        rows.get(k)
            .ok_or_else(|| Error::Dataset(format!("{}: missing {k} row", path.display())))
    };
    let (order, start, end) = (get("ORDER")?, get("START")?, get("END")?);
    let mut out = Vec::new();
    for (i, code) in order.iter().enumerate() {
        let session = parse_session(code)?;
        let (Some(a), Some(b)) = (start.get(i), end.get(i)) else {
            return Err(Error::Dataset(format!("{}: session {code} lacks times", path.display())));
        };
        out.push((session, parse_min_sec(a)?, parse_min_sec(b)?));
    }
    Ok(out)
}

fn wesad_label(session: Session, task: Task) -> Option<&'static str> {
    match (task, session) {
        (_, Session::Reading) => None,
        (Task::Stress2, Session::Stress) => Some("Stress"),
        (Task::Stress2, Session::Baseline | Session::Amusement) => Some("Non-stress"),
        (Task::Stress2, Session::Meditation) => None,
        (_, Session::Stress) => Some("Stress"),
        (_, Session::Baseline) => Some("Baseline"),
        (_, Session::Amusement) => Some("Amusement"),
        (_, Session::Meditation) => Some("Meditation"),
    }
}

/// Ingests WESAD wrist data as non-overlapping 1-minute windows at 50 Hz.
pub fn load_wesad(root: &Path, task: Task) -> Result<DatasetManifest> {
    if !matches!(task, Task::Stress2 | Task::Stress4) {
        return Err(Error::invalid(format!("WESAD supports stress2 and stress4, not {task:?}")));
    }
    let mut samples = Vec::new();
    for (subject, dir) in subject_dirs(root)? {
        let e4 = dir.join(format!("{subject}_E4_Data"));
        let quest = dir.join(format!("{subject}_quest.csv"));
        if !e4.join("BVP.csv").exists() || !e4.join("ACC.csv").exists() || !quest.exists() {
            log::warn!("skipping WESAD subject {subject}: missing recording or protocol files");
            continue;
        }
        let sessions = parse_quest(&quest)?;
        let signals = load_e4_pair(&e4)?;
        for (session, start, end) in sessions {
            let Some(label) = wesad_label(session, task) else { continue };
            let stream = MultimodalStream {
                subject_id: subject.clone(),
                signals: crop(&signals, start, end),
                start_s: start,
            };
            for mut w in segment_stream(&stream, 60.0, 60.0)? {
                w.label = Some(Label::Class(label.to_string()));
                samples.push(w);
            }
        }
    }
    DatasetManifest::new(samples, Split::Train, task, TARGET_HZ)
}

/// The eight DaLiA activities plus the transient class between them.
pub const DALIA_CLASSES: [&str; 9] = [
    "Transient",
    "Sitting",
    "Stairs",
    "TableSoccer",
    "Cycling",
    "Driving",
    "Lunch",
    "Walking",
    "Working",
];

fn parse_activity(code: &str) -> Result<&'static str> {
    let c = code.trim().to_ascii_uppercase().replace([' ', '-'], "_");
    let name = match c.as_str() {
        "NO_ACTIVITY" | "TRANSIENT" | "TRANSITION" => "Transient",
        "SITTING" | "BASELINE" => "Sitting",
        "STAIRS" | "ASCENDING_DESCENDING_STAIRS" => "Stairs",
        "SOCCER" | "TABLE_SOCCER" => "TableSoccer",
        "CYCLING" => "Cycling",
        "DRIVING" | "CAR_DRIVING" => "Driving",
        "LUNCH" | "LUNCH_BREAK" => "Lunch",
        "WALKING" => "Walking",
        "WORKING" => "Working",
        _ => return Err(Error::Dataset(format!("unknown DaLiA activity `{}`", code.trim()))),
    };
    Ok(name)
}

/// Activity start times, sorted. Each activity lasts until the next entry.
fn parse_activity_file(path: &Path) -> Result<Vec<(f64, &'static str)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim_start_matches('#').trim();
        let Some((name, t)) = line.split_once(',') else { continue };
        if name.trim().eq_ignore_ascii_case("SUBJECT_ID") {
            continue;
        }
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| Error::Dataset(format!("{}: bad time in `{line}`", path.display())))?;
        out.push((t, parse_activity(name)?));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

fn activity_at(schedule: &[(f64, &'static str)], t: f64) -> &'static str {
    schedule
        .iter()
        .rev()
        .find(|(start, _)| *start <= t)
        .map(|(_, a)| *a)
        .unwrap_or("Transient")
}

/// Ingests PPG-DaLiA as 8 s windows at 2 s stride, 50 Hz.
pub fn load_dalia(root: &Path, task: Task) -> Result<DatasetManifest> {
    if !matches!(task, Task::Activity9 | Task::HrRegression) {
        return Err(Error::invalid(format!(
            "PPG-DaLiA supports activity9 and hr_regression, not {task:?}"
        )));
    }
    let mut samples = Vec::new();
    for (subject, dir) in subject_dirs(root)? {
        let e4 = dir.join(format!("{subject}_E4"));
        let side = match task {
            Task::HrRegression => dir.join(format!("{subject}_hr.csv")),
            _ => dir.join(format!("{subject}_activity.csv")),
        };
        if !e4.join("BVP.csv").exists() || !e4.join("ACC.csv").exists() || !side.exists() {
            log::warn!("skipping DaLiA subject {subject}: missing recording or annotation files");
            continue;
        }
        let stream = MultimodalStream {
            subject_id: subject.clone(),
            signals: load_e4_pair(&e4)?,
            start_s: 0.0,
        };
        let windows = segment_stream(&stream, 8.0, 2.0)?;
        match task {
            Task::HrRegression => {
                let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
                let hr: Vec<f64> = text
                    .lines()
                    .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
                    .map(|l| l.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Dataset(format!("{}: {e}", side.display())))?;
                for (mut w, bpm) in windows.into_iter().zip(hr) {
                    if !(bpm > 0.0 && bpm.is_finite()) {
                        log::warn!("{subject}: dropping window at {} s with heart rate {bpm}", w.window_start_s);
                        continue;
                    }
                    w.label = Some(Label::Value(bpm));
                    samples.push(w);
                }
            }
            _ => {
                let schedule = parse_activity_file(&side)?;
                for mut w in windows {
                    let centre = w.window_start_s + 4.0;
                    w.label = Some(Label::Class(activity_at(&schedule, centre).to_string()));
                    samples.push(w);
                }
            }
        }
    }
    DatasetManifest::new(samples, Split::Train, task, TARGET_HZ)
}

pub fn load(kind: DatasetKind, root: &Path, task: Task) -> Result<DatasetManifest> {
    match kind {
        DatasetKind::Wesad => load_wesad(root, task),
        DatasetKind::Dalia => load_dalia(root, task),
    }
}

/// Writers for small on-disk fixtures in the layouts above. Used by tests
/// and by the self-test when the real datasets are absent.
#[doc(hidden)]
pub mod fixtures {
    use std::fmt::Write as _;
    use std::fs;
    use std::path::Path;

    use crate::error::{Error, Result};

    fn write_e4(dir: &Path, seconds: f64, phase: f64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bvp = String::from("1500000000.0\n64.0\n");
        for i in 0..(seconds * 64.0) as usize {
            let t = i as f64 / 64.0;
            let _ = writeln!(bvp, "{:.4}", 40.0 * (7.5 * t + phase).sin());
        }
        let mut acc = String::from("1500000000.0, 1500000000.0, 1500000000.0\n32.0, 32.0, 32.0\n");
        for i in 0..(seconds * 32.0) as usize {
            let t = i as f64 / 32.0;
            let _ = writeln!(acc, "{}, {}, {}", (20.0 * (t + phase).sin()) as i32, -5, 62);
        }
        fs::write(dir.join("BVP.csv"), bvp).map_err(|e| Error::io(dir, e))?;
        fs::write(dir.join("ACC.csv"), acc).map_err(|e| Error::io(dir, e))?;
        Ok(())
    }

    /// Subjects S2.. with five protocol sessions of two minutes each.
    pub fn write_wesad(root: &Path, n_subjects: usize) -> Result<()> {
        for k in 0..n_subjects {
            let name = format!("S{}", k + 2);
            let dir = root.join(&name);
            write_e4(&dir.join(format!("{name}_E4_Data")), 660.0, k as f64)?;
            let quest = "# Subj;S;;;;;\n\
                         # ORDER;Base;TSST;Medi 1;Fun;Medi 2;sRead\n\
                         # START;0.30;2.40;4.50;7.00;9.00;10.40\n\
                         # END;2.30;4.40;6.50;9.00;10.30;10.50\n";
            fs::write(dir.join(format!("{name}_quest.csv")), quest).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }

    /// Subjects S1.. cycling through all eight activities with transients.
    pub fn write_dalia(root: &Path, n_subjects: usize) -> Result<()> {
        let acts = ["SITTING", "STAIRS", "SOCCER", "CYCLING", "DRIVING", "LUNCH", "WALKING", "WORKING"];
        for k in 0..n_subjects {
            let name = format!("S{}", k + 1);
            let dir = root.join(&name);
            write_e4(&dir.join(format!("{name}_E4")), 60.0 * 9.0, 0.5 * k as f64)?;
            let mut schedule = format!("# SUBJECT_ID,{name}\n");
            for (i, a) in acts.iter().enumerate() {
                let _ = writeln!(schedule, "# {a},{}", 20.0 + 60.0 * i as f64);
                let _ = writeln!(schedule, "# NO_ACTIVITY,{}", 65.0 + 60.0 * i as f64);
            }
            fs::write(dir.join(format!("{name}_activity.csv")), schedule).map_err(|e| Error::io(&dir, e))?;
            let n_windows = ((540.0 - 8.0) / 2.0) as usize + 1;
            let hr: String = (0..n_windows).map(|i| format!("{:.2}\n", 70.0 + (i % 30) as f64)).collect();
            fs::write(dir.join(format!("{name}_hr.csv")), hr).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

/// Samples whose every modality has exactly `t` rows.
pub fn all_windows_have_len(samples: &[MultimodalSample], t: usize) -> bool {
    samples.iter().all(|s| s.windows.values().all(|w| w.len() == t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn min_sec_times() {
        assert_eq!(parse_min_sec("7.08").unwrap(), 428.0);
        assert_eq!(parse_min_sec("39.5").unwrap(), 39.0 * 60.0 + 50.0);
        assert_eq!(parse_min_sec("12").unwrap(), 720.0);
    }

    #[test]
    fn unknown_session_rejected() {
        assert!(parse_session("Nap").is_err());
        assert_eq!(parse_session("Medi 2").unwrap(), Session::Meditation);
    }

    #[test]
    fn wesad_tasks() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_wesad(dir.path(), 3).unwrap();
        let m2 = load_wesad(dir.path(), Task::Stress2).unwrap();
        assert_eq!(m2.class_names(), ["Non-stress", "Stress"]);
        assert_eq!(m2.subjects().len(), 3);
        assert!(all_windows_have_len(&m2.samples, 3000));
        let m4 = load_wesad(dir.path(), Task::Stress4).unwrap();
        assert_eq!(m4.class_names().len(), 4);
        // Base, TSST, Fun and the first meditation last 2 min; the second 90 s
        assert_eq!(m2.len(), 3 * 3 * 2);
        assert_eq!(m4.len(), 3 * (4 * 2 + 1));
    }

    #[test]
    fn missing_subject_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_wesad(dir.path(), 2).unwrap();
        fs::remove_file(dir.path().join("S3/S3_quest.csv")).unwrap();
        let m = load_wesad(dir.path(), Task::Stress2).unwrap();
        assert_eq!(m.subjects(), ["S2"]);
    }

    #[test]
    fn dalia_tasks() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_dalia(dir.path(), 2).unwrap();
        let act = load_dalia(dir.path(), Task::Activity9).unwrap();
        let classes: BTreeSet<String> = act.class_names().into_iter().collect();
        assert_eq!(classes.len(), 9);
        assert!(all_windows_have_len(&act.samples, 400));
        assert_eq!(act.len(), 2 * 267);

        let hr = load_dalia(dir.path(), Task::HrRegression).unwrap();
        assert!(hr.samples.iter().all(|s| s.label.as_ref().unwrap().as_value().unwrap() > 0.0));
    }

    #[test]
    fn wrong_task_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_wesad(dir.path(), Task::Activity9).is_err());
        assert!(load_dalia(dir.path(), Task::Stress2).is_err());
    }
}
