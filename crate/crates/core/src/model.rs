//! The trainable state of a run: one encoder per modality, the shared
//! prototype bank and, for the contrastive baselines, projection heads and a
//! learnable temperature.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{init_encoder, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{Objective, ProjectionHead};
use crate::nn::Act;
use crate::prototypes::PrototypeBank;
use crate::signal::Modality;
use crate::train::PretrainConfig;

/// Windows encoded per forward pass at inference time.
pub const EVAL_CHUNK: usize = 64;

/// Mixes a run seed with a stream tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn modality_tag(m: Modality) -> u64 {
    match m {
        Modality::Ppg => 0,
        Modality::Accel => 1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub objective: Objective,
    pub encoders: BTreeMap<Modality, EncoderParams<f32>>,
    pub bank: Option<PrototypeBank>,
    pub heads: BTreeMap<Modality, ProjectionHead>,
    pub log_temperature: f64,
}

impl Model {
    /// Deterministic initialization from the run config. Every component
    /// draws from its own seed stream, so a single-modality run starts from
    /// the same encoder as the matching modality of a multimodal run.
    pub fn init(cfg: &PretrainConfig) -> Result<Self> {
        let seed = cfg.training.seed;
        let mut encoders = BTreeMap::new();
        let mut heads = BTreeMap::new();
        let uses_heads = matches!(cfg.loss.objective, Objective::Clip | Objective::Slip);
        for &m in &cfg.training.modalities {
            let ecfg = cfg.encoder.clone().with_in_channels(m.channels());
            encoders.insert(m, init_encoder(&ecfg, derive_seed(seed, 100 + modality_tag(m)))?);
            if uses_heads {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 300 + modality_tag(m)));
                heads.insert(m, ProjectionHead::new(cfg.encoder.embed_dim, &mut rng));
            }
        }
        let bank = (cfg.loss.objective == Objective::Protomm).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 200));
            PrototypeBank::random(cfg.encoder.embed_dim, cfg.prototypes.count, &mut rng)
        });
        Ok(Self {
            objective: cfg.loss.objective,
            encoders,
            bank,
            heads,
            log_temperature: cfg.loss.clip_temperature_init.ln(),
        })
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.encoders.keys().copied().collect()
    }

    pub fn encoder(&self, m: Modality) -> Result<&EncoderParams<f32>> {
        self.encoders
            .get(&m)
            .ok_or_else(|| Error::invalid(format!("model has no {m} encoder")))
    }

    /// Inference-mode embeddings of equally long `T × C` windows, one row
    /// per window.
    pub fn embed(&self, m: Modality, windows: &[ArrayView2<'_, f32>]) -> Result<Array2<f32>> {
        let enc = self.encoder(m)?;
        let dim = enc.config.embed_dim;
        let mut out = Array2::zeros((windows.len(), dim));
        for (c, chunk) in windows.chunks(EVAL_CHUNK).enumerate() {
            let z = enc.encode_batch(&Act::from_windows(chunk.iter().cloned()))?;
            out.slice_mut(ndarray::s![c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len(), ..])
                .assign(&z);
        }
        Ok(out)
    }
}
