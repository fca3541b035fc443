//! Self-supervised pre-training loop and checkpoint selection.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply, choose_spec, ViewSamplerConfig};
use crate::checkpoint;
use crate::encoder::{EncoderConfig, EncoderParams, EncoderTape};
use crate::error::{Error, Result};
use crate::losses::{
    clip_loss_with_grad, mpp_loss_with_grads, nt_xent_with_grad, slip_loss_with_grad, LossConfig, Objective,
};
use crate::model::{derive_seed, modality_tag, Model};
use crate::nn::{self, Act};
use crate::optim::{Adam, AdamConfig};
use crate::prototypes::{sinkhorn_targets, PrototypeConfig};
use crate::signal::{DatasetManifest, Modality, MultimodalSample};

/// The `training` config section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub wall_clock_budget_hours: f64,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Share of pre-training subjects held out for validation.
    pub val_fraction: f64,
    pub modalities: Vec<Modality>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 0.0,
            batch_size: 256,
            max_epochs: 100,
            wall_clock_budget_hours: 96.0,
            optimizer: AdamConfig::default(),
            seed: 0,
            val_fraction: 0.1,
            modalities: Modality::ALL.to_vec(),
        }
    }
}

/// Everything the pre-training loop reads.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub training: TrainConfig,
    pub loss: LossConfig,
    pub prototypes: PrototypeConfig,
    pub encoder: EncoderConfig,
    pub augmentation: ViewSamplerConfig,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        let bad = |path: &str, message: &str| Error::Config {
            path: format!("training.{path}"),
            message: message.into(),
        };
        if !(t.learning_rate > 0.0) {
            return Err(bad("learning_rate", "must be positive"));
        }
        if !(t.weight_decay >= 0.0) {
            return Err(bad("weight_decay", "must be non-negative"));
        }
        if t.batch_size < 2 {
            return Err(bad("batch_size", "must be at least 2"));
        }
        if t.max_epochs == 0 {
            return Err(bad("max_epochs", "must be positive"));
        }
        if !(t.wall_clock_budget_hours > 0.0) {
            return Err(bad("wall_clock_budget_hours", "must be positive"));
        }
        if !(t.val_fraction > 0.0 && t.val_fraction < 1.0) {
            return Err(bad("val_fraction", "must lie in (0, 1)"));
        }
        let mut mods = t.modalities.clone();
        mods.sort();
        mods.dedup();
        if mods.is_empty() || mods.len() != t.modalities.len() {
            return Err(bad("modalities", "must list each modality at most once and at least one"));
        }
        self.loss.validate()?;
        self.prototypes.validate()?;
        self.encoder.validate()?;
        self.augmentation.validate()?;
        let m = mods.len();
        let needs_two = match self.loss.objective {
            Objective::Protomm => self.loss.alpha < 1.0,
            Objective::Clip | Objective::Slip => true,
            Objective::Simclr => false,
        };
        if needs_two && m < 2 {
            return Err(Error::Config {
                path: "training.modalities".into(),
                message: format!("objective {:?} with alpha {} needs two modalities", self.loss.objective, self.loss.alpha),
            });
        }
        if matches!(self.loss.objective, Objective::Simclr | Objective::Slip) && self.augmentation.num_views != 2 {
            return Err(Error::Config {
                path: "augmentation.num_views".into(),
                message: "contrastive objectives use exactly two views".into(),
            });
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub path: Option<PathBuf>,
    pub fingerprint: String,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_s: f64,
}

pub struct PretrainOutcome {
    pub records: Vec<CheckpointRecord>,
    pub best: CheckpointRecord,
    /// Parameters at the best epoch.
    pub best_model: Model,
    pub final_model: Model,
    /// Training loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Lowest validation loss, earliest epoch on ties.
pub fn select_best(records: &[CheckpointRecord]) -> Result<&CheckpointRecord> {
    records
        .iter()
        .reduce(|best, r| if r.val_loss < best.val_loss { r } else { best })
        .ok_or_else(|| Error::invalid("no checkpoint records to select from"))
}

/// Gradients of one step, all in 64-bit.
struct StepGrads {
    embeddings: BTreeMap<Modality, Array2<f64>>,
    bank: Option<Array2<f64>>,
    heads: BTreeMap<Modality, (Array2<f64>, Array1<f64>)>,
    log_temperature: f64,
}

/// Augmented views for a batch: per modality, `A·B` windows ordered
/// view-major (`a·B + i`).
fn batch_views(
    batch: &[&MultimodalSample],
    modalities: &[Modality],
    aug: &ViewSamplerConfig,
    seed: u64,
) -> Result<BTreeMap<Modality, Vec<Array2<f32>>>> {
    let mut out = BTreeMap::new();
    for &m in modalities {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, modality_tag(m)));
        let mut views = Vec::with_capacity(aug.num_views * batch.len());
        for _ in 0..aug.num_views {
            for sample in batch {
                let w = sample
                    .window(m)
                    .ok_or_else(|| Error::Dataset(format!("sample from {} lacks {m}", sample.subject_id)))?;
                let spec = choose_spec(aug, m, &mut rng)?;
                views.push(apply(spec, w, &mut rng)?.into_samples());
            }
        }
        out.insert(m, views);
    }
    Ok(out)
}

fn view_rows(z: &Array2<f64>, a: usize, b: usize) -> Array2<f64> {
    z.slice(s![a * b..(a + 1) * b, ..]).to_owned()
}

/// Evaluates the configured objective on per-modality embeddings
/// (`A·B × E`, view-major) and returns the loss with its gradients.
fn objective(model: &Model, cfg: &PretrainConfig, emb: &BTreeMap<Modality, Array2<f64>>, b: usize) -> Result<(f64, StepGrads)> {
    let views = cfg.augmentation.num_views;
    let mods: Vec<Modality> = emb.keys().copied().collect();
    let mut grads = StepGrads {
        embeddings: emb.iter().map(|(&m, z)| (m, Array2::zeros(z.dim()))).collect(),
        bank: None,
        heads: BTreeMap::new(),
        log_temperature: 0.0,
    };
    match cfg.loss.objective {
        Objective::Protomm => {
            let bank = model.bank.as_ref().ok_or_else(|| Error::invalid("objective needs a prototype bank"))?;
            let assign = cfg.prototypes.assignment();
            let mut zs = Vec::new();
            let mut targets = Vec::new();
            for m in &mods {
                for a in 0..views {
                    let z = view_rows(&emb[m], a, b);
                    targets.push(sinkhorn_targets(&z.dot(&bank.matrix), &assign));
                    zs.push(z);
                }
            }
            let (loss, dz, dbank) =
                mpp_loss_with_grads(&zs, &bank.matrix, &targets, mods.len(), views, cfg.loss.alpha, assign.temperature)?;
            for (c, d) in dz.iter().enumerate() {
                let (m, a) = (mods[c / views], c % views);
                grads
                    .embeddings
                    .get_mut(&m)
                    .unwrap()
                    .slice_mut(s![a * b..(a + 1) * b, ..])
                    .assign(d);
            }
            grads.bank = Some(dbank);
            Ok((loss, grads))
        }
        Objective::Simclr => {
            let mut loss = 0.0;
            for m in &mods {
                let (l, d0, d1) =
                    nt_xent_with_grad(&view_rows(&emb[m], 0, b), &view_rows(&emb[m], 1, b), cfg.loss.nt_xent_temperature)?;
                loss += l;
                let g = grads.embeddings.get_mut(m).unwrap();
                g.slice_mut(s![..b, ..]).assign(&d0);
                g.slice_mut(s![b..2 * b, ..]).assign(&d1);
            }
            Ok((loss, grads))
        }
        Objective::Clip | Objective::Slip => {
            if mods.len() != 2 {
                return Err(Error::invalid("contrastive cross-modal objectives need exactly two modalities"));
            }
            let n_views = if cfg.loss.objective == Objective::Clip { 1 } else { 2 };
            // head → normalize, per modality and view
            let mut projected: Vec<[Array2<f64>; 2]> = Vec::new();
            let mut caches = Vec::new();
            for m in &mods {
                let head = &model.heads[m];
                let mut pair: [Array2<f64>; 2] = [Array2::zeros((0, 0)), Array2::zeros((0, 0))];
                for (a, slot) in pair.iter_mut().enumerate().take(n_views) {
                    let x = view_rows(&emb[m], a, b);
                    let h = head.forward(&x);
                    let (z, norms) = nn::l2_normalize_rows(&h);
                    caches.push((*m, a, x, z.clone(), norms));
                    *slot = z;
                }
                projected.push(pair);
            }
            let (loss, dz, dlog_t) = if cfg.loss.objective == Objective::Clip {
                let (l, dp, da, dt) = clip_loss_with_grad(&projected[0][0], &projected[1][0], model.log_temperature)?;
                let empty = || Array2::zeros((0, 0));
                (l, vec![[dp, empty()], [da, empty()]], dt)
            } else {
                slip_loss_with_grad(&projected, cfg.loss.nt_xent_temperature, model.log_temperature)?
            };
            grads.log_temperature = dlog_t;
            for (m, a, x, z, norms) in caches {
                let mi = mods.iter().position(|&k| k == m).unwrap();
                let dh = nn::l2_normalize_backward(&z, &norms, &dz[mi][a]);
                let head = &model.heads[&m];
                let (dw, dbias, dx) = head.backward(&x, &dh);
                let entry = grads
                    .heads
                    .entry(m)
                    .or_insert_with(|| (Array2::zeros(head.weight.dim()), Array1::zeros(head.bias.len())));
                entry.0 += &dw;
                entry.1 += &dbias;
                grads
                    .embeddings
                    .get_mut(&m)
                    .unwrap()
                    .slice_mut(s![a * b..(a + 1) * b, ..])
                    .assign(&dx);
            }
            Ok((loss, grads))
        }
    }
}

fn to_act(views: &[Array2<f32>]) -> Act<f32> {
    Act::from_windows(views.iter().map(|v| v.view()))
}

fn ordered_modalities(cfg: &PretrainConfig) -> Vec<Modality> {
    let mut m = cfg.training.modalities.clone();
    m.sort();
    m
}

/// One optimizer step on a batch. Returns the batch loss.
fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    cfg: &PretrainConfig,
    batch: &[&MultimodalSample],
    step_seed: u64,
    update_bank: bool,
) -> Result<f64> {
    let mods = ordered_modalities(cfg);
    let views = batch_views(batch, &mods, &cfg.augmentation, step_seed)?;
    let mut emb = BTreeMap::new();
    let mut tapes: BTreeMap<Modality, EncoderTape<f32>> = BTreeMap::new();
    for &m in &mods {
        let enc = model.encoders.get_mut(&m).ok_or_else(|| Error::invalid(format!("no {m} encoder")))?;
        let (z, tape) = enc.forward_train(&to_act(&views[&m]))?;
        emb.insert(m, z.mapv(f64::from));
        tapes.insert(m, tape);
    }
    let (loss, grads) = objective(model, cfg, &emb, batch.len())?;
    if !loss.is_finite() {
        return Ok(loss);
    }

    opt.begin_step();
    let mut slot = 0;
    for &m in &mods {
        let d = grads.embeddings[&m].mapv(|v| v as f32);
        let enc = model.encoders.get_mut(&m).unwrap();
        let g: EncoderParams<f32> = enc.backward(&tapes[&m], &d);
        for (p, gp) in enc.trainable_mut().into_iter().zip(g.trainable()) {
            opt.update(slot, p, gp);
            slot += 1;
        }
    }
    if let (Some(bank), Some(db)) = (model.bank.as_mut(), grads.bank.as_ref()) {
        if update_bank {
            opt.update(slot, bank.matrix.as_slice_mut().unwrap(), db.as_slice().unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, 77));
            bank.renormalize(&mut rng);
        }
    }
    slot += 1;
    for &m in &mods {
        if let (Some(head), Some((dw, db))) = (model.heads.get_mut(&m), grads.heads.get(&m)) {
            opt.update(slot, head.weight.as_slice_mut().unwrap(), dw.as_slice().unwrap());
            opt.update(slot + 1, head.bias.as_slice_mut().unwrap(), db.as_slice().unwrap());
        }
        slot += 2;
    }
    if matches!(cfg.loss.objective, Objective::Clip | Objective::Slip) {
        let mut t = [model.log_temperature];
        opt.update(slot, &mut t, &[grads.log_temperature]);
        model.log_temperature = t[0];
    }
    Ok(loss)
}

/// Loss of the current model on one batch in inference mode. Mutates
/// nothing.
pub fn eval_batch_loss(model: &Model, cfg: &PretrainConfig, batch: &[&MultimodalSample], seed: u64) -> Result<f64> {
    let mods = ordered_modalities(cfg);
    let views = batch_views(batch, &mods, &cfg.augmentation, seed)?;
    let mut emb = BTreeMap::new();
    for &m in &mods {
        let z = model.encoder(m)?.encode_batch(&to_act(&views[&m]))?;
        emb.insert(m, z.mapv(f64::from));
    }
    Ok(objective(model, cfg, &emb, batch.len())?.0)
}

/// Mean loss over the validation set in batches of `batch_size`; a trailing
/// partial batch is kept when it has at least two samples.
fn validation_loss(model: &Model, cfg: &PretrainConfig, val: &DatasetManifest) -> Result<f64> {
    let samples: Vec<&MultimodalSample> = val.samples.iter().collect();
    let mut total = 0.0;
    let mut count = 0;
    for (i, chunk) in samples.chunks(cfg.training.batch_size).enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let seed = derive_seed(derive_seed(cfg.training.seed, 0x5641_4c00), i as u64);
        total += eval_batch_loss(model, cfg, chunk, seed)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Dataset("validation set has no batch of two or more samples".into()));
    }
    Ok(total / count as f64)
}

fn write_json_line(path: &Path, m: &EpochMetrics) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(path, e))
}

/// Runs pre-training. With `out_dir`, every epoch's checkpoint goes to
/// `out_dir/checkpoints/epoch_NNN`, metrics to `out_dir/metrics.jsonl` and
/// the selected record to `out_dir/best.json`.
pub fn pretrain(
    train: &DatasetManifest,
    val: &DatasetManifest,
    cfg: &PretrainConfig,
    out_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Dataset("validation manifest is empty".into()));
    }
    let b = cfg.training.batch_size;
    if train.len() < b {
        return Err(Error::Dataset(format!(
            "training set has {} samples, fewer than one batch of {b}",
            train.len()
        )));
    }
    let fingerprint = cfg.fingerprint();
    let mut model = Model::init(cfg)?;
    let mut opt = Adam::new(cfg.training.optimizer.clone(), cfg.training.learning_rate, cfg.training.weight_decay);
    let budget_s = cfg.training.wall_clock_budget_hours * 3600.0;
    let started = Instant::now();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        let metrics = dir.join("metrics.jsonl");
        if metrics.exists() {
            std::fs::remove_file(&metrics).map_err(|e| Error::io(&metrics, e))?;
        }
    }

    let mut records = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, Model)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let steps_per_epoch = train.len() / b;

    'epochs: for epoch in 0..cfg.training.max_epochs {
        if started.elapsed().as_secs_f64() >= budget_s {
            log::info!("wall-clock budget reached before epoch {epoch}");
            break;
        }
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.training.seed, 0x5348_0000 + epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let update_bank = epoch >= cfg.prototypes.freeze_epochs;
        let mut epoch_total = 0.0;
        let mut steps = 0;
        for step in 0..steps_per_epoch {
            let batch: Vec<&MultimodalSample> = order[step * b..(step + 1) * b].iter().map(|&i| &train.samples[i]).collect();
            let step_seed = derive_seed(derive_seed(cfg.training.seed, epoch as u64), step as u64 + 1);
            let loss = train_step(&mut model, &mut opt, cfg, &batch, step_seed, update_bank)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: step });
            }
            step_losses.push(loss);
            epoch_total += loss;
            steps += 1;
            if started.elapsed().as_secs_f64() >= budget_s {
                log::info!("wall-clock budget reached during epoch {epoch}");
                let rec = finish_epoch(&model, cfg, val, epoch, epoch_total / steps as f64, &fingerprint, out_dir, &started)?;
                track_best(&mut best, &rec, &model);
                records.push(rec);
                break 'epochs;
            }
        }
        let rec = finish_epoch(&model, cfg, val, epoch, epoch_total / steps.max(1) as f64, &fingerprint, out_dir, &started)?;
        track_best(&mut best, &rec, &model);
        records.push(rec);
    }

    let chosen = select_best(&records)?.clone();
    if let Some(dir) = out_dir {
        let p = dir.join("best.json");
        std::fs::write(&p, serde_json::to_string_pretty(&chosen)?).map_err(|e| Error::io(&p, e))?;
    }
    let best_model = best.map(|(_, m)| m).unwrap_or_else(|| model.clone());
    Ok(PretrainOutcome {
        records,
        best: chosen,
        best_model,
        final_model: model,
        step_losses,
    })
}

fn track_best(best: &mut Option<(f64, Model)>, rec: &CheckpointRecord, model: &Model) {
    if best.as_ref().is_none_or(|(v, _)| rec.val_loss < *v) {
        *best = Some((rec.val_loss, model.clone()));
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch(
    model: &Model,
    cfg: &PretrainConfig,
    val: &DatasetManifest,
    epoch: usize,
    train_loss: f64,
    fingerprint: &str,
    out_dir: Option<&Path>,
    started: &Instant,
) -> Result<CheckpointRecord> {
    let val_loss = validation_loss(model, cfg, val)?;
    if !val_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
    }
    let wall_s = started.elapsed().as_secs_f64();
    log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} ({wall_s:.1} s)");
    let mut rec = CheckpointRecord {
        epoch,
        train_loss,
        val_loss,
        path: None,
        fingerprint: fingerprint.to_string(),
    };
    if let Some(dir) = out_dir {
        let path = dir.join("checkpoints").join(format!("epoch_{epoch:03}"));
        checkpoint::save(&path, model, cfg, &rec)?;
        rec.path = Some(path);
        write_json_line(
            &dir.join("metrics.jsonl"),
            &EpochMetrics {
                epoch,
                train_loss,
                val_loss,
                wall_s,
            },
        )?;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_synthetic, SyntheticGenConfig};

    pub(crate) fn tiny(objective: Objective, alpha: f64) -> PretrainConfig {
        let mut cfg = PretrainConfig::default();
        cfg.encoder.embed_dim = 16;
        cfg.encoder.base_width = 4;
        cfg.encoder.kernel_size = 5;
        cfg.prototypes.count = 8;
        cfg.training.batch_size = 8;
        cfg.training.max_epochs = 2;
        cfg.training.learning_rate = 1e-3;
        cfg.loss.objective = objective;
        cfg.loss.alpha = alpha;
        cfg
    }

    fn data() -> (DatasetManifest, DatasetManifest) {
        let m = generate_synthetic(&SyntheticGenConfig {
            n_subjects: 4,
            windows_per_subject: 12,
            duration_s: 2.0,
            ..Default::default()
        })
        .unwrap();
        m.split_subjects(0.25).unwrap()
    }

    fn record(epoch: usize, val: f64) -> CheckpointRecord {
        CheckpointRecord {
            epoch,
            train_loss: 0.0,
            val_loss: val,
            path: None,
            fingerprint: String::new(),
        }
    }

    #[test]
    fn select_best_rules() {
        let r = [record(0, 3.1), record(1, 2.7), record(2, 2.9)];
        assert_eq!(select_best(&r).unwrap().epoch, 1);
        assert_eq!(select_best(&[record(0, 2.0), record(1, 2.0)]).unwrap().epoch, 0);
        assert_eq!(select_best(&[record(4, 1.0)]).unwrap().epoch, 4);
        assert!(select_best(&[]).is_err());
    }

    #[test]
    fn every_objective_trains_and_keeps_invariants() {
        let (train, val) = data();
        for (obj, alpha) in [
            (Objective::Protomm, 0.5),
            (Objective::Simclr, 0.5),
            (Objective::Clip, 0.5),
            (Objective::Slip, 0.5),
        ] {
            let cfg = tiny(obj, alpha);
            let out = pretrain(&train, &val, &cfg, None).unwrap();
            assert_eq!(out.records.len(), 2);
            assert!(out.step_losses.iter().all(|l| l.is_finite()));
            let init = Model::init(&cfg).unwrap();
            for (m, enc) in &out.final_model.encoders {
                let a: Vec<_> = enc.trainable().iter().map(|t| t.len()).collect();
                let b: Vec<_> = init.encoders[m].trainable().iter().map(|t| t.len()).collect();
                assert_eq!(a, b);
            }
            if let Some(bank) = &out.final_model.bank {
                for c in bank.matrix.columns() {
                    assert!((c.dot(&c).sqrt() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce() {
        let (train, val) = data();
        let cfg = tiny(Objective::Protomm, 0.5);
        let a = pretrain(&train, &val, &cfg, None).unwrap();
        let b = pretrain(&train, &val, &cfg, None).unwrap();
        assert_eq!(a.step_losses, b.step_losses);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn validation_is_pure() {
        let (train, val) = data();
        let cfg = tiny(Objective::Protomm, 0.5);
        let model = Model::init(&cfg).unwrap();
        let before = model.clone();
        let l1 = validation_loss(&model, &cfg, &val).unwrap();
        let l2 = validation_loss(&model, &cfg, &val).unwrap();
        assert_eq!(model, before);
        assert_eq!(l1, l2);
        let _ = train;
    }

    #[test]
    fn first_step_loss_in_near_uniform_band() {
        let (train, _) = data();
        for seed in 0..6 {
            let mut cfg = tiny(Objective::Protomm, 0.5);
            cfg.training.seed = seed;
            cfg.encoder.embed_dim = 512;
            cfg.prototypes.count = 64;
            let model = Model::init(&cfg).unwrap();
            let batch: Vec<_> = train.samples.iter().take(8).collect();
            let l = eval_batch_loss(&model, &cfg, &batch, seed).unwrap();
            let lp = (cfg.prototypes.count as f64).ln();
            assert!(l >= 0.5 * lp && l <= 2.0 * lp, "{l} outside [{}, {}]", 0.5 * lp, 2.0 * lp);
        }
    }

    #[test]
    fn alpha_one_first_step_splits_by_modality() {
        let (train, val) = data();
        let mut cfg = tiny(Objective::Protomm, 1.0);
        cfg.training.max_epochs = 1;
        let joint = pretrain(&train, &val, &cfg, None).unwrap();
        let mut parts = 0.0;
        for m in Modality::ALL {
            let mut single = cfg.clone();
            single.training.modalities = vec![m];
            parts += pretrain(&train, &val, &single, None).unwrap().step_losses[0];
        }
        assert!((joint.step_losses[0] - parts / 2.0).abs() < 1e-9);
    }

    #[test]
    fn config_rejections() {
        let mut cfg = tiny(Objective::Protomm, 0.5);
        cfg.training.modalities = vec![Modality::Ppg];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(Objective::Protomm, 0.5);
        cfg.training.batch_size = 1;
        assert!(cfg.validate().unwrap_err().to_string().contains("training.batch_size"));
        let (train, mut val) = data();
        val.samples.clear();
        assert!(pretrain(&train, &val, &tiny(Objective::Protomm, 0.5), None).is_err());
    }

    #[test]
    fn run_directory_layout() {
        let (train, val) = data();
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Objective::Protomm, 0.5);
        let out = pretrain(&train, &val, &cfg, Some(dir.path())).unwrap();
        let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        let parsed: Vec<EpochMetrics> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed.len(), 2);
        assert!(dir.path().join("best.json").exists());
        let best_path = out.best.path.clone().unwrap();
        let (loaded, meta) = checkpoint::load(&best_path).unwrap();
        assert_eq!(meta.fingerprint, cfg.fingerprint());
        assert_eq!(loaded, out.best_model);
    }
}
