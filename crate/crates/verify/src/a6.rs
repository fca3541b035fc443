//! Directional synthetic experiments: mixing weight, prototype-free
//! baseline and single-modality transfer.

use std::time::Instant;

use ndarray::Array2;
use protomm::eval::{extract_embeddings, train_linear_probe, Composition, Embeddings, ProbeConfig};
use protomm::losses::Objective;
use protomm::model::Model;
use protomm::signal::{generate_synthetic, DatasetManifest, Modality, SyntheticGenConfig};
use protomm::train::{pretrain, PretrainConfig};
use protomm::Result;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Knobs of the synthetic study. The defaults are what the acceptance
/// suite runs.
#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub embed_dim: usize,
    pub prototypes: usize,
    pub batch_size: usize,
    pub base_width: usize,
    pub learning_rate: f64,
    pub pretrain_subjects: usize,
    pub probe_subjects: usize,
    pub windows_per_subject: usize,
    pub probe_windows_per_subject: usize,
    /// Benchmark noise; the default comes from [`calibrate_noise`].
    pub noise_sigma: f64,
    pub margin: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            epochs: 20,
            embed_dim: 64,
            prototypes: 16,
            batch_size: 32,
            base_width: 8,
            learning_rate: 3e-3,
            pretrain_subjects: 10,
            probe_subjects: 10,
            windows_per_subject: 160,
            probe_windows_per_subject: 40,
            noise_sigma: CALIBRATED_NOISE,
            margin: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arm {
    Protomm { alpha: f64 },
    Slip,
    /// α = 1 trained on a single modality.
    Unimodal(Modality),
}

impl Arm {
    pub fn name(&self) -> String {
        match self {
            Arm::Protomm { alpha } => format!("protomm_alpha_{alpha}"),
            Arm::Slip => "slip".into(),
            Arm::Unimodal(m) => format!("unimodal_{m}"),
        }
    }
}

pub const ARMS: [Arm; 6] = [
    Arm::Protomm { alpha: 0.5 },
    Arm::Protomm { alpha: 0.0 },
    Arm::Protomm { alpha: 1.0 },
    Arm::Slip,
    Arm::Unimodal(Modality::Ppg),
    Arm::Unimodal(Modality::Accel),
];

/// Probe macro-F1 of one trained arm.
#[derive(Clone, Debug, Default)]
pub struct ArmScores {
    pub concat: Option<f64>,
    pub ppg: Option<f64>,
    pub accel: Option<f64>,
    pub seconds: f64,
}

pub fn pretrain_config(study: &StudyConfig, arm: Arm, seed: u64) -> PretrainConfig {
    let mut cfg = PretrainConfig::default();
    cfg.encoder.embed_dim = study.embed_dim;
    cfg.encoder.base_width = study.base_width;
    cfg.prototypes.count = study.prototypes;
    cfg.training.batch_size = study.batch_size;
    cfg.training.max_epochs = study.epochs;
    cfg.training.learning_rate = study.learning_rate;
    cfg.training.seed = seed;
    match arm {
        Arm::Protomm { alpha } => cfg.loss.alpha = alpha,
        Arm::Slip => cfg.loss.objective = Objective::Slip,
        Arm::Unimodal(m) => {
            cfg.loss.alpha = 1.0;
            cfg.training.modalities = vec![m];
        }
    }
    cfg
}

pub fn datasets(study: &StudyConfig, seed: u64) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    let pre = generate_synthetic(&SyntheticGenConfig {
        n_subjects: study.pretrain_subjects,
        windows_per_subject: study.windows_per_subject,
        seed: 1000 + seed,
        noise_sigma: study.noise_sigma,
        ..Default::default()
    })?;
    let (train, val) = pre.split_subjects(0.1)?;
    let probe = generate_synthetic(&SyntheticGenConfig {
        n_subjects: study.probe_subjects,
        windows_per_subject: study.probe_windows_per_subject,
        seed: 2000 + seed,
        noise_sigma: study.noise_sigma,
        ..Default::default()
    })?;
    Ok((train, val, probe))
}

/// Noise levels tried by [`calibrate_noise`], increasing.
pub const NOISE_GRID: [f64; 8] = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0];

/// Supervised spectral probe score below which the benchmark counts as
/// unsaturated.
pub const CALIBRATION_TARGET: f64 = 0.8;

/// Output of [`calibrate_noise`] with the default study shape.
pub const CALIBRATED_NOISE: f64 = 2.0;

/// Per-channel magnitude spectra of every window, concatenated. The
/// spectra ignore phase, which the generator randomizes per window.
pub fn spectral_features(data: &DatasetManifest) -> Result<Embeddings> {
    let mut planner = FftPlanner::<f64>::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut subjects = Vec::new();
    for s in &data.samples {
        let mut feats = Vec::new();
        for m in Modality::ALL {
            let w = s.window(m).ok_or_else(|| protomm::Error::InvalidInput("sample lacks a modality".into()))?;
            let x = w.samples();
            let fft = planner.plan_fft_forward(x.nrows());
            for ch in x.columns() {
                let mut buf: Vec<Complex<f64>> = ch.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
                fft.process(&mut buf);
                feats.extend(buf[1..=x.nrows() / 2].iter().map(|c| c.norm()));
            }
        }
        rows.push(feats);
        labels.push(s.label.clone().ok_or_else(|| protomm::Error::InvalidInput("unlabelled sample".into()))?);
        subjects.push(s.subject_id.clone());
    }
    let dim = rows.first().map_or(0, Vec::len);
    let x = Array2::from_shape_vec((rows.len(), dim), rows.concat()).map_err(|e| protomm::Error::InvalidInput(e.to_string().into()))?;
    Ok(Embeddings {
        x,
        labels,
        subjects,
        skipped: 0,
    })
}

/// Seed-averaged macro-F1 of a supervised linear probe on spectra of the
/// probe set at noise level `noise`.
pub fn spectral_reference(study: &StudyConfig, noise: f64) -> Result<f64> {
    let study = StudyConfig {
        noise_sigma: noise,
        ..study.clone()
    };
    let mut scores = Vec::new();
    for &seed in &study.seeds {
        let (_, _, probe) = datasets(&study, seed)?;
        let (_, report) = train_linear_probe(&spectral_features(&probe)?, &ProbeConfig::default())?;
        scores.push(report.macro_f1.map(|s| s.mean).unwrap_or(0.0));
    }
    Ok(mean(scores.into_iter()))
}

/// Smallest grid noise at which the spectral reference falls below
/// [`CALIBRATION_TARGET`]; the largest grid value if none does. Chosen
/// without training any encoder.
pub fn calibrate_noise(study: &StudyConfig) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut trace = Vec::new();
    for noise in NOISE_GRID {
        let f1 = spectral_reference(study, noise)?;
        trace.push((noise, f1));
        if f1 < CALIBRATION_TARGET {
            return Ok((noise, trace));
        }
    }
    Ok((NOISE_GRID[NOISE_GRID.len() - 1], trace))
}

fn probe_f1(model: &Model, data: &DatasetManifest, composition: Composition) -> Result<f64> {
    let cfg = ProbeConfig {
        composition,
        ..Default::default()
    };
    let emb = extract_embeddings(model, data, composition)?;
    let (_, report) = train_linear_probe(&emb, &cfg)?;
    Ok(report.macro_f1.map(|s| s.mean).unwrap_or(0.0))
}

pub fn run_arm(study: &StudyConfig, arm: Arm, seed: u64) -> Result<ArmScores> {
    let started = Instant::now();
    let (train, val, probe) = datasets(study, seed)?;
    let cfg = pretrain_config(study, arm, seed);
    let out = pretrain(&train, &val, &cfg, None)?;
    let model = out.best_model;
    let mut scores = ArmScores::default();
    let mods = model.modalities();
    if mods.len() == 2 {
        scores.concat = Some(probe_f1(&model, &probe, Composition::ConcatPA)?);
    }
    if mods.contains(&Modality::Ppg) {
        scores.ppg = Some(probe_f1(&model, &probe, Composition::SingleP)?);
    }
    if mods.contains(&Modality::Accel) {
        scores.accel = Some(probe_f1(&model, &probe, Composition::SingleA)?);
    }
    scores.seconds = started.elapsed().as_secs_f64();
    log::info!("{} seed {seed}: {scores:?}", arm.name());
    Ok(scores)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Seed-averaged scores per arm and the three directional verdicts.
#[derive(Clone, Debug)]
pub struct StudyOutcome {
    pub arms: Vec<(Arm, Vec<ArmScores>)>,
    /// α=0.5 concat minus the better of α=0 and α=1.
    pub mixing_margin: f64,
    /// ProtoMM concat minus SLIP concat.
    pub baseline_margin: f64,
    /// Per modality: multimodal single-embedding probe minus the isolated
    /// α=1 encoder; the smaller of the two.
    pub transfer_margin: f64,
    pub seconds: f64,
    pub required_margin: f64,
}

impl StudyOutcome {
    pub fn mixing_holds(&self) -> bool {
        self.mixing_margin > self.required_margin
    }
    pub fn baseline_holds(&self) -> bool {
        self.baseline_margin > self.required_margin
    }
    pub fn transfer_holds(&self) -> bool {
        self.transfer_margin > self.required_margin
    }
}

pub fn run_study(study: &StudyConfig) -> Result<StudyOutcome> {
    let started = Instant::now();
    let mut arms = Vec::new();
    for arm in ARMS {
        let mut per_seed = Vec::new();
        for &seed in &study.seeds {
            per_seed.push(run_arm(study, arm, seed)?);
        }
        arms.push((arm, per_seed));
    }
    let avg = |arm: Arm, f: fn(&ArmScores) -> Option<f64>| -> f64 {
        let scores = &arms.iter().find(|(a, _)| *a == arm).unwrap().1;
        mean(scores.iter().filter_map(f))
    };
    let concat = |a| avg(a, |s| s.concat);
    let half = Arm::Protomm { alpha: 0.5 };
    let mixing_margin = concat(half) - concat(Arm::Protomm { alpha: 0.0 }).max(concat(Arm::Protomm { alpha: 1.0 }));
    let baseline_margin = concat(half) - concat(Arm::Slip);
    let transfer_margin = (avg(half, |s| s.ppg) - avg(Arm::Unimodal(Modality::Ppg), |s| s.ppg))
        .min(avg(half, |s| s.accel) - avg(Arm::Unimodal(Modality::Accel), |s| s.accel));
    Ok(StudyOutcome {
        arms,
        mixing_margin,
        baseline_margin,
        transfer_margin,
        seconds: started.elapsed().as_secs_f64(),
        required_margin: study.margin,
    })
}
