use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerState};
use super::tape::Tape;
use super::vae::VaeModel;
use super::NnError;
use crate::recurrence::GrayscaleImage;
use crate::seed::{rng_from, salt};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 100,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }
}

/// Batch-size-weighted means over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Shuffled mini-batch training. `on_snapshot(epoch, model)` runs for every
/// epoch listed in `snapshot_epochs` (epoch 0 is the untrained model).
///
/// Shuffling and reparameterization noise come from a single stream seeded by
/// `cfg.seed`; the whole run is a pure function of its inputs.
pub fn train<E, F>(
    model: &mut VaeModel,
    images: &[GrayscaleImage],
    cfg: &TrainConfig,
    snapshot_epochs: &[usize],
    mut on_snapshot: F,
) -> Result<Vec<EpochStats>, E>
where
    E: From<NnError>,
    F: FnMut(usize, &VaeModel) -> Result<(), E>,
{
    if images.is_empty() {
        return Err(NnError::Config("training set is empty".into()).into());
    }
    if cfg.batch_size == 0 || cfg.batch_size > images.len() {
        return Err(NnError::Config(format!(
            "batch size {} must be in 1..={}",
            cfg.batch_size,
            images.len()
        ))
        .into());
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(NnError::Config(format!("learning rate {} must be positive", cfg.learning_rate)).into());
    }

    if snapshot_epochs.contains(&0) {
        on_snapshot(0, model)?;
    }

    let latent = model.latent_dim();
    let mut rng = rng_from(cfg.seed ^ salt::TRAIN);
    let mut opt = OptimizerState::new(cfg.optimizer, model.params());
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut recon, mut kl) = (0.0, 0.0, 0.0);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&GrayscaleImage> = batch.iter().map(|&i| &images[i]).collect();
            let eps: Vec<f64> = (0..batch.len() * latent).map(|_| rng.sample(StandardNormal)).collect();

            let mut tape = Tape::new();
            let graph = model.record_batch(&mut tape, &refs, eps)?;
            let loss = tape.value(graph.total)[0];
            if !loss.is_finite() {
                return Err(NnError::NonFinite {
                    what: "loss",
                    epoch,
                    batch: batch_idx,
                }
                .into());
            }
            let mut grads = tape.backward(graph.total)?;
            let mut flat = Vec::with_capacity(graph.params.len());
            for v in &graph.params {
                let g = grads.take(*v).unwrap_or_else(|| vec![0.0; tape.value(*v).len()]);
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(NnError::NonFinite {
                        what: "gradient",
                        epoch,
                        batch: batch_idx,
                    }
                    .into());
                }
                flat.push(g);
            }
            opt.step(model.params_mut(), &flat, cfg.learning_rate);

            let w = batch.len() as f64;
            total += w * loss;
            recon += w * tape.value(graph.recon)[0];
            kl += w * tape.value(graph.kl)[0];
        }
        let n = images.len() as f64;
        history.push(EpochStats {
            epoch,
            total: total / n,
            recon: recon / n,
            kl: kl / n,
        });
        if snapshot_epochs.contains(&epoch) {
            on_snapshot(epoch, model)?;
        }
    }
    Ok(history)
}

pub fn write_loss_csv(history: &[EpochStats], path: &Path) -> Result<(), NnError> {
    let io = |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "epoch,total,recon,kl").map_err(io)?;
    for s in history {
        writeln!(w, "{},{:.16e},{:.16e},{:.16e}", s.epoch, s.total, s.recon, s.kl).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<EpochStats>, NnError> {
    let io = |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bad = |line: usize| NnError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("malformed line {line}")),
    };
    let r = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate().skip(1) {
        let line = line.map_err(io)?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1));
        out.push(EpochStats {
            epoch: f[0].parse().map_err(|_| bad(i + 1))?,
            total: num(f[1])?,
            recon: num(f[2])?,
            kl: num(f[3])?,
        });
    }
    Ok(out)
}
