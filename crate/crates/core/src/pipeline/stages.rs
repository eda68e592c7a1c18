//! The pipeline stages. Each stage reads the previous stage's files from the
//! run directory and writes its own, so `run` and the chained subcommands
//! produce identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use super::artifacts::{
    read_images, read_json, read_latent_csv, read_manifest, read_signal_csv, read_split, write_images, write_json,
    write_latent_csv, write_manifest, write_signal_csv, write_split, EvalSummary, FinalLoss, LatentRow,
    ManifestEntry, Metrics, SplitEntry,
};
use super::config::{LatentFeature, RunConfig};
use super::split::{LabeledDataset, Split};
use super::{PipelineError, StageContext};
use crate::classifier::{evaluate, fit_svm, Standardizer, SvmModelFile};
use crate::datagen::{sample_event, synthesize, FaultEvent, GeneratorId, LineClass};
use crate::nnet::{load_checkpoint, read_loss_csv, save_checkpoint, train, write_loss_csv, LatentPoint, VaeModel};
use crate::recurrence::{embed_phase_space, recurrence_matrix, to_image, write_pgm, GrayscaleImage};
use crate::tsproc::{minmax_normalize, paa};

/// File layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn signals_dir(&self) -> PathBuf {
        self.root.join("signals")
    }

    pub fn signal_name(event_id: u64) -> String {
        format!("signals/event_{event_id:05}.csv")
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images.bin")
    }

    pub fn pgm_dir(&self) -> PathBuf {
        self.root.join("pgm")
    }

    pub fn matrix_dir(&self) -> PathBuf {
        self.root.join("matrices")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.bin")
    }

    pub fn loss(&self) -> PathBuf {
        self.root.join("loss.csv")
    }

    pub fn snapshot(&self, epoch: usize) -> PathBuf {
        self.root.join(format!("latent_epoch_{epoch:04}.csv"))
    }

    pub fn latent(&self) -> PathBuf {
        self.root.join("latent.csv")
    }

    pub fn svm(&self) -> PathBuf {
        self.root.join("svm.json")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval_report.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
}

fn prepare_dir(root: &Path, force: bool) -> Result<(), PipelineError> {
    if root.exists() {
        if !force {
            return Err(PipelineError::Exists(root.to_path_buf()));
        }
        fs::remove_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
    }
    fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

fn class_for(cfg: &RunConfig, event_id: u64) -> LineClass {
    if event_id < cfg.n_events_per_line as u64 {
        LineClass::LineA
    } else {
        LineClass::LineB
    }
}

fn events_for(cfg: &RunConfig) -> Vec<FaultEvent> {
    (0..cfg.total_events() as u64)
        .map(|id| sample_event(cfg.global_seed, id, class_for(cfg, id), cfg.generator))
        .collect()
}

/// Synthesizes every event and writes the signals, manifest and effective config.
pub fn stage_gen(cfg: &RunConfig, paths: &RunPaths, force: bool) -> Result<(), PipelineError> {
    cfg.validate()?;
    prepare_dir(paths.root(), force)?;
    ensure_dir(&paths.signals_dir())?;
    fs::write(paths.config(), cfg.to_toml()).map_err(|e| PipelineError::io(&paths.config(), e))?;

    let params = cfg.signal_params();
    let events = events_for(cfg);
    let manifest = events
        .par_iter()
        .map(|ev| {
            let series = synthesize(ev, &params).stage("gen")?;
            let name = RunPaths::signal_name(ev.event_id);
            write_signal_csv(&series, &paths.root().join(&name))?;
            Ok(ManifestEntry {
                event_id: ev.event_id,
                line_class: ev.line_class,
                generator_id: ev.generator_id,
                impedance_ohm: ev.impedance_ohm,
                duration_s: ev.duration_s,
                signal_file: name,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    write_manifest(&manifest, &paths.manifest())?;
    info!("gen: {} events for {}", manifest.len(), cfg.generator);
    Ok(())
}

/// Rebuilds event metadata and checks it against the manifest on disk.
fn load_events(cfg: &RunConfig, paths: &RunPaths) -> Result<(Vec<ManifestEntry>, Vec<FaultEvent>), PipelineError> {
    let mut manifest = read_manifest(&paths.manifest())?;
    manifest.sort_by_key(|m| m.event_id);
    let events: Vec<FaultEvent> = manifest
        .iter()
        .map(|m| sample_event(cfg.global_seed, m.event_id, m.line_class, m.generator_id))
        .collect();
    for (m, e) in manifest.iter().zip(&events) {
        if m.impedance_ohm != e.impedance_ohm || m.duration_s != e.duration_s || m.generator_id != cfg.generator {
            return Err(PipelineError::format(
                &paths.manifest(),
                format!("event {} does not match the configuration", m.event_id),
            ));
        }
    }
    if manifest.len() != cfg.total_events() {
        return Err(PipelineError::format(
            &paths.manifest(),
            format!("{} events, configuration expects {}", manifest.len(), cfg.total_events()),
        ));
    }
    Ok((manifest, events))
}

/// PAA → optional normalization → recurrence plot, for every event.
pub fn stage_embed(cfg: &RunConfig, paths: &RunPaths) -> Result<(), PipelineError> {
    let (manifest, events) = load_events(cfg, paths)?;
    let dt = 1.0 / cfg.signal.sample_rate_hz;
    if cfg.dump_pgm {
        ensure_dir(&paths.pgm_dir())?;
    }
    if cfg.dump_matrix_csv {
        ensure_dir(&paths.matrix_dir())?;
    }
    let images = manifest
        .par_iter()
        .map(|m| {
            let raw = read_signal_csv(&paths.root().join(&m.signal_file), dt)?;
            let mut series = paa(&raw, cfg.paa()).stage("embed")?;
            if cfg.normalize_signal {
                series = minmax_normalize(&series).stage("embed")?;
            }
            let matrix = recurrence_matrix(&embed_phase_space(&series, cfg.embedding).stage("embed")?);
            let image = to_image(&matrix);
            if image.height != cfg.image_size {
                return Err(PipelineError::Config(format!(
                    "event {} produced a {}x{} image, expected {}",
                    m.event_id, image.height, image.width, cfg.image_size
                )));
            }
            if cfg.dump_pgm {
                write_pgm(&image, &paths.pgm_dir().join(format!("event_{:05}.pgm", m.event_id))).stage("embed")?;
            }
            if cfg.dump_matrix_csv {
                matrix
                    .write_csv(&paths.matrix_dir().join(format!("event_{:05}.csv", m.event_id)))
                    .stage("embed")?;
            }
            Ok(image)
        })
        .collect::<Result<Vec<GrayscaleImage>, PipelineError>>()?;

    let dataset = LabeledDataset::new(images, events)?.split_dataset(cfg.global_seed, cfg.test_fraction)?;
    let ids: Vec<u64> = dataset.meta.iter().map(|e| e.event_id).collect();
    write_images(&ids, &dataset.images, &paths.images())?;
    let split: Vec<SplitEntry> = ids
        .iter()
        .zip(&dataset.split)
        .map(|(&event_id, &split)| SplitEntry { event_id, split })
        .collect();
    write_split(&split, &paths.split())?;
    info!("embed: {} images of {}x{}", ids.len(), cfg.image_size, cfg.image_size);
    Ok(())
}

fn load_dataset(cfg: &RunConfig, paths: &RunPaths) -> Result<LabeledDataset, PipelineError> {
    let (_, events) = load_events(cfg, paths)?;
    let (ids, images) = read_images(&paths.images())?;
    let split = read_split(&paths.split())?;
    let expected: Vec<u64> = events.iter().map(|e| e.event_id).collect();
    if ids != expected || split.iter().map(|s| s.event_id).ne(expected.iter().copied()) {
        return Err(PipelineError::format(&paths.images(), "images or split do not match the manifest"));
    }
    let mut ds = LabeledDataset::new(images, events)?;
    ds.split = split.into_iter().map(|s| s.split).collect();
    Ok(ds)
}

fn latent_rows(points: &[LatentPoint], ds: &LabeledDataset) -> Vec<LatentRow> {
    points
        .iter()
        .zip(&ds.meta)
        .zip(&ds.split)
        .map(|((p, e), s)| LatentRow {
            event_id: e.event_id,
            label: e.line_class,
            split: *s,
            mu: p.mu.clone(),
            z: p.z.clone(),
            impedance_ohm: e.impedance_ohm,
            duration_s: e.duration_s,
        })
        .collect()
}

/// Writes the latent CSV for `points` aligned with `dataset`.
pub fn emit_latent_csv(points: &[LatentPoint], dataset: &LabeledDataset, latent_dim: usize, path: &Path) -> Result<(), PipelineError> {
    write_latent_csv(&latent_rows(points, dataset), latent_dim, path)
}

/// Trains the VAE on the training split, writing checkpoint, loss history
/// and one latent CSV per snapshot epoch.
pub fn stage_train(cfg: &RunConfig, paths: &RunPaths) -> Result<(), PipelineError> {
    let ds = load_dataset(cfg, paths)?;
    let train_images: Vec<GrayscaleImage> = ds.indices(Split::Train).into_iter().map(|i| ds.images[i].clone()).collect();
    let mut model = VaeModel::new(cfg.vae_arch(), cfg.loss_weights(), cfg.init_seed()).stage("train")?;
    let dim = cfg.vae.latent_dim;
    let history = train::<PipelineError, _>(&mut model, &train_images, &cfg.train_config(), &cfg.snapshot_epochs, |epoch, m| {
        let points = m.project(&ds.images, cfg.project_seed()).stage("train")?;
        emit_latent_csv(&points, &ds, dim, &paths.snapshot(epoch))?;
        info!("train: latent snapshot at epoch {epoch}");
        Ok(())
    })?;
    save_checkpoint(&model, &paths.model()).stage("train")?;
    write_loss_csv(&history, &paths.loss()).stage("train")?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        info!("train: loss {:.5} -> {:.5} over {} epochs", first.total, last.total, history.len());
    }
    Ok(())
}

impl From<crate::nnet::NnError> for PipelineError {
    fn from(e: crate::nnet::NnError) -> Self {
        PipelineError::Stage {
            stage: "train",
            source: Box::new(e),
        }
    }
}

/// Projects every event through the trained encoder.
pub fn stage_project(cfg: &RunConfig, paths: &RunPaths) -> Result<(), PipelineError> {
    let ds = load_dataset(cfg, paths)?;
    let model = load_checkpoint(&paths.model()).stage("project")?;
    if model.arch() != &cfg.vae_arch() {
        return Err(PipelineError::format(&paths.model(), "checkpoint architecture differs from configuration"));
    }
    let points = model.project(&ds.images, cfg.project_seed()).stage("project")?;
    emit_latent_csv(&points, &ds, cfg.vae.latent_dim, &paths.latent())
}

fn features(cfg: &RunConfig, rows: &[LatentRow], which: Split) -> (Vec<Vec<f64>>, Vec<i8>) {
    rows.iter()
        .filter(|r| r.split == which)
        .map(|r| {
            let x = match cfg.svm.features {
                LatentFeature::Mu => r.mu.clone(),
                LatentFeature::Z => r.z.clone(),
            };
            (x, r.label.label())
        })
        .unzip()
}

/// Fits the linear SVM on training-split latents.
pub fn stage_classify(cfg: &RunConfig, paths: &RunPaths) -> Result<(), PipelineError> {
    let rows = read_latent_csv(&paths.latent())?;
    let (x, y) = features(cfg, &rows, Split::Train);
    let scaler = if cfg.svm.standardize {
        Standardizer::fit(&x).stage("classify")?
    } else {
        let dim = x.first().map_or(cfg.vae.latent_dim, Vec::len);
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    };
    let xs: Vec<Vec<f64>> = x.iter().map(|p| scaler.apply(p)).collect();
    let fit = fit_svm(&xs, &y, cfg.svm.c, cfg.svm.epochs, cfg.svm_seed()).stage("classify")?;
    write_json(&SvmModelFile::new(&fit.model, &scaler), &paths.svm())?;
    info!("classify: objective {:.6}", fit.best_objective.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

/// Scores the SVM on both splits and writes `metrics.json`.
pub fn stage_eval(cfg: &RunConfig, paths: &RunPaths) -> Result<Metrics, PipelineError> {
    let rows = read_latent_csv(&paths.latent())?;
    let file: SvmModelFile = read_json(&paths.svm())?;
    let (svm, scaler) = file.parts();
    let report = |which| {
        let (x, y) = features(cfg, &rows, which);
        let xs: Vec<Vec<f64>> = x.iter().map(|p| scaler.apply(p)).collect();
        evaluate(&svm, &xs, &y).stage("eval")
    };
    let (train_report, test_report) = (report(Split::Train)?, report(Split::Test)?);
    let history = read_loss_csv(&paths.loss()).stage("eval")?;
    let last = history.last().copied();
    let final_loss = FinalLoss {
        total: last.map_or(f64::NAN, |s| s.total),
        recon: last.map_or(f64::NAN, |s| s.recon),
        kl: last.map_or(f64::NAN, |s| s.kl),
    };
    let metrics = Metrics {
        train_accuracy: train_report.accuracy,
        test_accuracy: test_report.accuracy,
        confusion: test_report.confusion,
        final_loss,
        config_hash: cfg.hash(),
    };
    write_json(
        &EvalSummary {
            n_train: train_report.n,
            n_test: test_report.n,
            train: train_report,
            test: test_report,
        },
        &paths.eval_report(),
    )?;
    write_json(&metrics, &paths.metrics())?;
    info!(
        "eval: train accuracy {:.4}, test accuracy {:.4}",
        metrics.train_accuracy, metrics.test_accuracy
    );
    Ok(metrics)
}

/// All stages in order.
pub fn run_pipeline(cfg: &RunConfig, paths: &RunPaths, force: bool) -> Result<Metrics, PipelineError> {
    stage_gen(cfg, paths, force)?;
    stage_embed(cfg, paths)?;
    stage_train(cfg, paths)?;
    stage_project(cfg, paths)?;
    stage_classify(cfg, paths)?;
    stage_eval(cfg, paths)
}

/// One independent pipeline per generator bus, under `<root>/Gen1` and `<root>/Gen4`.
pub fn run_both_generators(cfg: &RunConfig, root: &Path, force: bool) -> Result<Vec<(GeneratorId, Metrics)>, PipelineError> {
    prepare_dir(root, force)?;
    GeneratorId::ALL
        .iter()
        .map(|&g| {
            let cfg = RunConfig {
                generator: g,
                ..cfg.clone()
            };
            run_pipeline(&cfg, &RunPaths::new(root.join(g.to_string())), false).map(|m| (g, m))
        })
        .collect()
}
