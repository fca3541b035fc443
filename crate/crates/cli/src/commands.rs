use std::path::{Path, PathBuf};
use std::process::ExitCode;

use protomm::config::{ExperimentConfig, Origins};
use protomm::eval::{probe, Composition};
use protomm::interpret::interpret;
use protomm::signal::ingest::{self, DatasetKind};
use protomm::signal::{generate_synthetic, load_manifest, save_manifest, Task};
use protomm::train::pretrain;
use protomm::{checkpoint, Error, Result};
use protomm_verify::criteria::{run_suite, Status, SuiteOptions};
use serde_json::{json, Value};

use crate::{logging, Command, Common, DatasetArg};

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn usage(message: impl Into<String>) -> Error {
    Error::InvalidInput(message.into())
}

/// Writes `value` at a dotted key path, creating objects on the way.
fn set(doc: &mut Value, path: &str, value: Value) {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !cur.get(*part).is_some_and(Value::is_object) {
            cur[*part] = json!({});
        }
        cur = &mut cur[*part];
    }
    cur[parts[parts.len() - 1]] = value;
}

/// The user's config document with command-line overrides folded in, so
/// overrides are validated and recorded like any other user setting.
fn resolve(common: &Common, overrides: &[(&str, Value)]) -> Result<(ExperimentConfig, Origins)> {
    let mut doc = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text)?
        }
        None => json!({}),
    };
    if !doc.is_object() {
        return Err(config_error("", "config must be a JSON object"));
    }
    if let Some(seed) = common.seed {
        for key in ["data.synthetic.seed", "training.seed", "interpret.seed"] {
            set(&mut doc, key, json!(seed));
        }
    }
    for (key, value) in overrides {
        set(&mut doc, key, value.clone());
    }
    ExperimentConfig::from_json(&doc.to_string())
}

fn require_out(common: &Common) -> Result<&Path> {
    common.out.as_deref().ok_or_else(|| usage("--out is required"))
}

fn require_input(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

/// Next to a file output `x`, the resolved config goes to `x.config.json`
/// and its origins to `x.origins.json`.
fn persist_beside(cfg: &ExperimentConfig, origins: &Origins, out: &Path) -> Result<()> {
    let with = |suffix: &str| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(suffix);
        out.with_file_name(name)
    };
    write_text(&with(".config.json"), serde_json::to_string_pretty(cfg)?)?;
    write_text(&with(".origins.json"), serde_json::to_string_pretty(origins)?)
}

fn start_logging(run_dir: Option<&Path>) -> Result<()> {
    logging::init(run_dir).map_err(|e| Error::Io {
        path: run_dir.map(|d| d.join(logging::LOG_NAME)).unwrap_or_default(),
        source: e,
    })
}

pub fn run(command: &Command, common: &Common) -> Result<ExitCode> {
    match command {
        Command::Ingest { dataset, root, task } => {
            let mut ov = Vec::new();
            if let Some(d) = dataset {
                ov.push(("data.dataset", json!(match d {
                    DatasetArg::Wesad => "wesad",
                    DatasetArg::Dalia => "dalia",
                })));
            }
            if let Some(r) = root {
                ov.push(("data.root", json!(r)));
            }
            if let Some(t) = task {
                ov.push(("data.task", json!(t)));
            }
            let (cfg, origins) = resolve(common, &ov)?;
            let out = require_out(common)?;
            start_logging(None)?;
            let kind: DatasetKind = cfg.data.dataset.ok_or_else(|| config_error("data.dataset", "no dataset given"))?;
            let root: PathBuf = cfg
                .data
                .resolved_root()
                .ok_or_else(|| config_error("data.root", "no dataset root given and PROTOMM_DATA_ROOT is unset"))?;
            require_input(&root)?;
            if cfg.data.task == Task::None {
                return Err(config_error("data.task", "no task given"));
            }
            let manifest = ingest::load(kind, &root, cfg.data.task)?;
            save_manifest(&manifest, out)?;
            persist_beside(&cfg, &origins, out)?;
            log::info!("wrote {} windows to {}", manifest.len(), out.display());
        }
        Command::Synth => {
            let (cfg, origins) = resolve(common, &[])?;
            let out = require_out(common)?;
            start_logging(None)?;
            let manifest = generate_synthetic(&cfg.data.synthetic)?;
            save_manifest(&manifest, out)?;
            persist_beside(&cfg, &origins, out)?;
            log::info!("wrote {} synthetic samples to {}", manifest.len(), out.display());
        }
        Command::Pretrain { data } => {
            let (cfg, origins) = resolve(common, &[])?;
            let out = require_out(common)?;
            require_input(data)?;
            cfg.persist(&origins, out)?;
            start_logging(Some(out))?;
            let manifest = load_manifest(data)?;
            let pcfg = cfg.pretrain_config();
            let (train, val) = manifest.split_subjects(pcfg.training.val_fraction)?;
            log::info!("pre-training on {} samples, validating on {}", train.len(), val.len());
            let outcome = pretrain(&train, &val, &pcfg, Some(out))?;
            log::info!(
                "best epoch {} with val_loss {:.6}",
                outcome.best.epoch,
                outcome.best.val_loss
            );
        }
        Command::Probe {
            checkpoint: ckpt,
            data,
            composition,
        } => {
            let mut ov = Vec::new();
            if let Some(c) = composition {
                let c = Composition::parse(c).ok_or_else(|| config_error("evaluation.composition", format!("unknown composition {c}")))?;
                ov.push(("evaluation.composition", json!(c.to_string())));
            }
            let (cfg, origins) = resolve(common, &ov)?;
            let out = require_out(common)?;
            require_input(ckpt)?;
            require_input(data)?;
            start_logging(None)?;
            let (model, _) = checkpoint::load(&checkpoint::resolve(ckpt)?)?;
            let manifest = load_manifest(data)?;
            let report = probe(&model, &manifest, &cfg.evaluation)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.into(),
                    source: e,
                })?;
            }
            write_text(out, serde_json::to_string_pretty(&report)?)?;
            persist_beside(&cfg, &origins, out)?;
            if let Some(f1) = &report.macro_f1 {
                log::info!("macro-F1 {:.4} ± {:.4}", f1.mean, f1.std);
            }
            if let Some(r2) = &report.r2 {
                log::info!("R² {:.4} ± {:.4}", r2.mean, r2.std);
            }
        }
        Command::Interpret {
            checkpoint: ckpt,
            data,
            k,
            topk,
        } => {
            let mut ov = Vec::new();
            if let Some(k) = k {
                ov.push(("interpret.k", json!(k)));
            }
            if let Some(t) = topk {
                ov.push(("interpret.top_k", json!(t)));
            }
            let (cfg, origins) = resolve(common, &ov)?;
            let out = require_out(common)?;
            require_input(ckpt)?;
            require_input(data)?;
            let (model, meta) = checkpoint::load(&checkpoint::resolve(ckpt)?)?;
            if cfg.interpret.k > meta.config.prototypes.count {
                return Err(config_error(
                    "interpret.k",
                    format!("exceeds the checkpoint's {} prototypes", meta.config.prototypes.count),
                ));
            }
            cfg.persist(&origins, out)?;
            start_logging(Some(out))?;
            let manifest = load_manifest(data)?;
            let report = interpret(&model, &manifest, &cfg.interpret)?;
            report.write(out)?;
            log::info!("wrote interpretation artifacts to {}", out.display());
        }
        Command::Selftest { skip_study, data_root } => {
            if common.seed.is_some() || common.config.is_some() {
                return Err(usage("selftest runs with pinned seeds and settings; drop --seed and --config"));
            }
            start_logging(None)?;
            let mut opts = SuiteOptions {
                skip_study: *skip_study,
                ..Default::default()
            };
            if data_root.is_some() {
                opts.data_root = data_root.clone();
            }
            let verdicts = run_suite(&opts, |v| println!("{}", v.line()));
            if let Some(out) = &common.out {
                let lines: Vec<String> = verdicts.iter().map(|v| v.line()).collect();
                write_text(out, lines.join("\n") + "\n")?;
            }
            let failed = verdicts.iter().filter(|v| v.status == Status::Fail).count();
            if failed > 0 {
                log::error!("{failed} acceptance criteria failed");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_creates_nested_objects() {
        let mut doc = json!({"training": {"batch_size": 4}});
        set(&mut doc, "training.seed", json!(3));
        set(&mut doc, "data.synthetic.seed", json!(3));
        assert_eq!(doc, json!({"training": {"batch_size": 4, "seed": 3}, "data": {"synthetic": {"seed": 3}}}));
    }

    #[test]
    fn seed_flag_reaches_every_seed_key() {
        let common = Common {
            config: None,
            seed: Some(9),
            out: None,
        };
        let (cfg, origins) = resolve(&common, &[]).unwrap();
        assert_eq!((cfg.data.synthetic.seed, cfg.training.seed, cfg.interpret.seed), (9, 9, 9));
        assert_eq!(origins["training.seed"], protomm::config::Origin::User);
    }

    #[test]
    fn override_out_of_range_names_its_key() {
        let common = Common {
            config: None,
            seed: None,
            out: None,
        };
        match resolve(&common, &[("interpret.k", json!(600))]) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "interpret.k"),
            other => panic!("{other:?}"),
        }
    }
}
