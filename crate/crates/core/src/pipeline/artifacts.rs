//! File formats exchanged between stages.
//!
//! Every real number written as text uses 17 significant digits in
//! exponent notation so it parses back to the identical `f64`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::Split;
use super::PipelineError;
use crate::classifier::EvalReport;
use crate::datagen::{GeneratorId, LineClass, TimeSeries};
use crate::recurrence::GrayscaleImage;

/// Formats a real with 17 significant digits.
pub(crate) fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_text(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub event_id: u64,
    pub line_class: LineClass,
    pub generator_id: GeneratorId,
    pub impedance_ohm: f64,
    pub duration_s: f64,
    pub signal_file: String,
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), PipelineError> {
    write_json(&entries, path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, PipelineError> {
    read_json(path)
}

pub fn write_signal_csv(series: &TimeSeries, path: &Path) -> Result<(), PipelineError> {
    write_text(path, |w| {
        writeln!(w, "t_s,v_pu")?;
        for (i, v) in series.samples.iter().enumerate() {
            writeln!(w, "{},{}", real(series.time(i)), real(*v))?;
        }
        Ok(())
    })
}

/// Reads samples back; the time base comes from the caller's sample interval.
pub fn read_signal_csv(path: &Path, dt_s: f64) -> Result<TimeSeries, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut samples = Vec::new();
    let mut t0 = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if i == 0 {
            if line != "t_s,v_pu" {
                return Err(PipelineError::format(path, "missing `t_s,v_pu` header"));
            }
            continue;
        }
        let (t, v) = line
            .split_once(',')
            .ok_or_else(|| PipelineError::format(path, format!("line {}: expected two fields", i + 1)))?;
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| PipelineError::format(path, format!("line {}: bad number `{s}`", i + 1)))
        };
        t0.get_or_insert(num(t)?);
        samples.push(num(v)?);
    }
    TimeSeries::new(samples, dt_s, t0.unwrap_or(0.0)).map_err(|e| PipelineError::format(path, e.to_string()))
}

const IMAGE_MAGIC: &[u8; 6] = b"RPIMG1";

/// Full-precision image bundle: magic, u32 count, u32 height, u32 width, then
/// per image a u64 event id and `height·width` f64 pixels (little-endian).
pub fn write_images(ids: &[u64], images: &[GrayscaleImage], path: &Path) -> Result<(), PipelineError> {
    let (h, w) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let mut buf = Vec::with_capacity(18 + images.len() * (8 + 8 * h * w));
    buf.extend_from_slice(IMAGE_MAGIC);
    for v in [images.len(), h, w] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (id, img) in ids.iter().zip(images) {
        if img.height != h || img.width != w {
            return Err(PipelineError::format(path, "images differ in size"));
        }
        buf.extend_from_slice(&id.to_le_bytes());
        for p in &img.pixels {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| PipelineError::io(path, e))
}

pub fn read_images(path: &Path) -> Result<(Vec<u64>, Vec<GrayscaleImage>), PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    let truncated = || PipelineError::format(path, "truncated image bundle");
    if bytes.len() < 18 || &bytes[..6] != IMAGE_MAGIC {
        return Err(PipelineError::format(path, "not an image bundle"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (n, h, w) = (u32_at(6), u32_at(10), u32_at(14));
    let record = 8 + 8 * h * w;
    if bytes.len() != 18 + n * record {
        return Err(truncated());
    }
    let mut ids = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for rec in bytes[18..].chunks_exact(record) {
        ids.push(u64::from_le_bytes(rec[..8].try_into().unwrap()));
        let pixels = rec[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        images.push(GrayscaleImage {
            height: h,
            width: w,
            pixels,
        });
    }
    Ok((ids, images))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub event_id: u64,
    pub split: Split,
}

pub fn write_split(entries: &[SplitEntry], path: &Path) -> Result<(), PipelineError> {
    write_json(&entries, path)
}

pub fn read_split(path: &Path) -> Result<Vec<SplitEntry>, PipelineError> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub event_id: u64,
    pub label: LineClass,
    pub split: Split,
    pub mu: Vec<f64>,
    pub z: Vec<f64>,
    pub impedance_ohm: f64,
    pub duration_s: f64,
}

fn latent_header(dim: usize) -> String {
    let mut cols = vec!["event_id".to_string(), "label".into(), "split".into()];
    cols.extend((1..=dim).map(|d| format!("mu{d}")));
    cols.extend((1..=dim).map(|d| format!("z{d}")));
    cols.extend(["impedance_ohm".into(), "duration_s".into()]);
    cols.join(",")
}

/// With a 2-D latent the header is
/// `event_id,label,split,mu1,mu2,z1,z2,impedance_ohm,duration_s`.
pub fn write_latent_csv(rows: &[LatentRow], latent_dim: usize, path: &Path) -> Result<(), PipelineError> {
    if let Some(r) = rows.iter().find(|r| r.mu.len() != latent_dim || r.z.len() != latent_dim) {
        return Err(PipelineError::format(
            path,
            format!("event {} has latent width {} (expected {latent_dim})", r.event_id, r.mu.len()),
        ));
    }
    write_text(path, |w| {
        writeln!(w, "{}", latent_header(latent_dim))?;
        for r in rows {
            let mut fields = vec![r.event_id.to_string(), r.label.to_string(), r.split.to_string()];
            fields.extend(r.mu.iter().chain(&r.z).map(|v| real(*v)));
            fields.push(real(r.impedance_ohm));
            fields.push(real(r.duration_s));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    })
}

pub fn read_latent_csv(path: &Path) -> Result<Vec<LatentRow>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| PipelineError::io(path, e))?
        .ok_or_else(|| PipelineError::format(path, "empty latent file"))?;
    let n_cols = header.split(',').count();
    if n_cols < 7 || (n_cols - 5) % 2 != 0 {
        return Err(PipelineError::format(path, "unexpected latent header"));
    }
    let dim = (n_cols - 5) / 2;
    if header != latent_header(dim) {
        return Err(PipelineError::format(path, "unexpected latent header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| PipelineError::format(path, format!("line {}: {what}", i + 2));
        if f.len() != n_cols {
            return Err(bad("wrong field count"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let reals = f[3..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
        rows.push(LatentRow {
            event_id: f[0].parse().map_err(|_| bad("bad event id"))?,
            label: f[1].parse().map_err(|e: String| bad(&e))?,
            split: f[2].parse().map_err(|e: String| bad(&e))?,
            mu: reals[..dim].to_vec(),
            z: reals[dim..2 * dim].to_vec(),
            impedance_ohm: reals[2 * dim],
            duration_s: reals[2 * dim + 1],
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Test-set confusion, rows = true class (LineA, LineB), columns = predicted.
    pub confusion: [[u64; 2]; 2],
    pub final_loss: FinalLoss,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub train: EvalReport,
    pub test: EvalReport,
}
