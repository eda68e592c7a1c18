//! Run configuration, read from a TOML key-value file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::datagen::{GeneratorId, MAX_FAULT_CYCLES, ResponseTable, SignalModelParams};
use crate::nnet::{EncoderArch, LossWeights, Optimizer, TrainConfig, VaeArch};
use crate::recurrence::EmbeddingConfig;
use crate::seed::{mix, salt};
use crate::tsproc::PaaConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    pub sample_rate_hz: f64,
    pub prefault_s: f64,
    pub noise_std: f64,
    pub start_jitter_s: f64,
    pub responses: ResponseTable,
}

impl Default for SignalSection {
    fn default() -> Self {
        let p = SignalModelParams::with_samples(2);
        SignalSection {
            sample_rate_hz: p.sample_rate_hz,
            prefault_s: p.prefault_s,
            noise_std: p.noise_std,
            start_jitter_s: p.start_jitter_s,
            responses: p.responses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeSection {
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub recon_weight: f64,
    pub kl_weight: f64,
    pub encoder: EncoderArch,
}

impl Default for VaeSection {
    fn default() -> Self {
        let w = LossWeights::default();
        VaeSection {
            latent_dim: 2,
            decoder_hidden: 64,
            recon_weight: w.recon,
            kl_weight: w.kl,
            encoder: EncoderArch::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentFeature {
    Mu,
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    #[serde(rename = "C")]
    pub c: f64,
    pub epochs: usize,
    pub features: LatentFeature,
    pub standardize: bool,
}

impl Default for SvmSection {
    fn default() -> Self {
        SvmSection {
            c: 1.0,
            epochs: 10_000,
            features: LatentFeature::Mu,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub global_seed: u64,
    pub generator: GeneratorId,
    pub n_events_per_line: usize,
    /// Fraction of each class held out for testing.
    pub test_fraction: f64,
    pub paa_factor: usize,
    pub normalize_signal: bool,
    /// Side of the square recurrence-plot image; the signal window is derived from it.
    pub image_size: usize,
    pub embedding: EmbeddingConfig,
    pub snapshot_epochs: Vec<usize>,
    pub dump_pgm: bool,
    pub dump_matrix_csv: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub signal: SignalSection,
    pub vae: VaeSection,
    pub train: TrainSection,
    pub svm: SvmSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            global_seed: 2019,
            generator: GeneratorId::Gen1,
            n_events_per_line: 250,
            test_fraction: 0.2,
            paa_factor: 5,
            normalize_signal: true,
            image_size: 40,
            embedding: EmbeddingConfig::default(),
            snapshot_epochs: vec![0, 150, 500],
            dump_pgm: false,
            dump_matrix_csv: false,
            output_dir: None,
            signal: SignalSection::default(),
            vae: VaeSection::default(),
            train: TrainSection::default(),
            svm: SvmSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.n_events_per_line < 5 {
            return bad(format!("n_events_per_line = {} (need >= 5)", self.n_events_per_line));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction = {} not in (0, 1)", self.test_fraction));
        }
        if self.paa_factor == 0 {
            return bad("paa_factor must be >= 1".into());
        }
        if self.embedding.dim == 0 || self.embedding.delay == 0 {
            return bad("embedding dim and delay must be >= 1".into());
        }
        if self.image_size < 2 {
            return bad("image_size must be >= 2".into());
        }
        if self.snapshot_epochs.iter().any(|e| *e > self.train.epochs) {
            return bad(format!("snapshot epochs {:?} exceed {} epochs", self.snapshot_epochs, self.train.epochs));
        }
        let params = self.signal_params();
        params.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let latest_clear = params.prefault_s + params.start_jitter_s + MAX_FAULT_CYCLES / params.f_nom_hz;
        if params.window_s <= latest_clear {
            return bad(format!(
                "a {} s window ({} samples) cannot hold a fault clearing as late as {latest_clear:.4} s; \
                 raise image_size or paa_factor, or shorten prefault_s",
                params.window_s,
                self.raw_samples()
            ));
        }
        let arch = self.vae_arch();
        arch.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.vae.recon_weight > 0.0 && self.vae.kl_weight >= 0.0) {
            return bad("loss weights must satisfy recon > 0, kl >= 0".into());
        }
        let n_train = self.split_counts().0;
        if self.train.batch_size == 0 || self.train.batch_size > n_train {
            return bad(format!("batch_size {} must be in 1..={n_train}", self.train.batch_size));
        }
        if self.svm.c.is_nan() || self.svm.c <= 0.0 || self.svm.epochs == 0 {
            return bad("svm C must be positive and epochs >= 1".into());
        }
        Ok(())
    }

    pub fn total_events(&self) -> usize {
        2 * self.n_events_per_line
    }

    /// Per-class held-out count.
    pub fn test_per_class(&self) -> usize {
        (self.n_events_per_line as f64 * self.test_fraction).round() as usize
    }

    /// `(train, test)` totals.
    pub fn split_counts(&self) -> (usize, usize) {
        let test = 2 * self.test_per_class();
        (self.total_events() - test, test)
    }

    /// Raw samples per record so that PAA then embedding yields `image_size` states.
    pub fn raw_samples(&self) -> usize {
        self.embedding.series_len_for(self.image_size) * self.paa_factor
    }

    pub fn signal_params(&self) -> SignalModelParams {
        let s = &self.signal;
        let mut p = SignalModelParams::with_samples(self.raw_samples());
        p.window_s = self.raw_samples() as f64 / s.sample_rate_hz;
        p.sample_rate_hz = s.sample_rate_hz;
        p.prefault_s = s.prefault_s;
        p.noise_std = s.noise_std;
        p.start_jitter_s = s.start_jitter_s;
        p.responses = s.responses.clone();
        p
    }

    pub fn paa(&self) -> PaaConfig {
        PaaConfig {
            factor: self.paa_factor,
        }
    }

    pub fn vae_arch(&self) -> VaeArch {
        VaeArch {
            height: self.image_size,
            width: self.image_size,
            latent_dim: self.vae.latent_dim,
            encoder: self.vae.encoder,
            decoder_hidden: self.vae.decoder_hidden,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            recon: self.vae.recon_weight,
            kl: self.vae.kl_weight,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: mix(self.global_seed, salt::TRAIN),
            optimizer: self.train.optimizer,
        }
    }

    pub fn init_seed(&self) -> u64 {
        mix(self.global_seed, salt::INIT)
    }

    pub fn project_seed(&self) -> u64 {
        mix(self.global_seed, salt::PROJECT)
    }

    pub fn svm_seed(&self) -> u64 {
        mix(self.global_seed, salt::SVM)
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = None;
        let json = serde_json::to_string(&canon).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
