//! Phase-space embedding and unthresholded recurrence plots.
//!
//! A series `x` of length `n` is lifted into `K = n - (m - 1)·τ` states
//! `s_i = (x[i], x[i + τ], ..., x[i + (m - 1)·τ])`. The recurrence matrix holds
//! the Euclidean distance between every pair of states, and the image is that
//! matrix scaled by its own maximum. Pixel (0, 0) is the first state, so time
//! runs down the diagonal from the upper left.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::TimeSeries;

#[derive(Debug, Error)]
pub enum RecurrenceError {
    #[error("embedding needs dim >= 1 and delay >= 1 (got dim={dim}, delay={delay})")]
    BadConfig { dim: usize, delay: usize },
    #[error("series of length {len} too short for dim={dim}, delay={delay}")]
    TooShort { len: usize, dim: usize, delay: usize },
    #[error("image pixel buffer has {got} values, expected {expected}")]
    BadImage { got: usize, expected: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed PGM: {reason}")]
    Pgm { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub delay: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { dim: 2, delay: 1 }
    }
}

impl EmbeddingConfig {
    /// Number of states produced from a series of length `n`, if any.
    pub fn n_states(&self, n: usize) -> Option<usize> {
        let span = (self.dim.checked_sub(1)?).checked_mul(self.delay)?;
        n.checked_sub(span).filter(|k| *k >= 2)
    }

    /// Series length needed for a `k`×`k` recurrence plot.
    pub fn series_len_for(&self, k: usize) -> usize {
        k + (self.dim - 1) * self.delay
    }
}

/// States stored row-major: `states[i * dim + d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectory {
    dim: usize,
    states: Vec<f64>,
}

impl PhaseTrajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn embed_phase_space(
    series: &TimeSeries,
    cfg: EmbeddingConfig,
) -> Result<PhaseTrajectory, RecurrenceError> {
    if cfg.dim == 0 || cfg.delay == 0 {
        return Err(RecurrenceError::BadConfig {
            dim: cfg.dim,
            delay: cfg.delay,
        });
    }
    let x = &series.samples;
    let k = cfg.n_states(x.len()).ok_or(RecurrenceError::TooShort {
        len: x.len(),
        dim: cfg.dim,
        delay: cfg.delay,
    })?;
    let mut states = Vec::with_capacity(k * cfg.dim);
    for i in 0..k {
        states.extend((0..cfg.dim).map(|d| x[i + d * cfg.delay]));
    }
    Ok(PhaseTrajectory {
        dim: cfg.dim,
        states,
    })
}

/// Symmetric K×K matrix of pairwise state distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceMatrix {
    size: usize,
    values: Vec<f64>,
}

impl RecurrenceMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> RecurrenceMatrix {
        RecurrenceMatrix {
            size: self.size,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Writes `row,col,value` triples.
    pub fn write_csv(&self, path: &Path) -> Result<(), RecurrenceError> {
        let io = |source| RecurrenceError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "row,col,value").map_err(io)?;
        for i in 0..self.size {
            for j in 0..self.size {
                writeln!(w, "{},{},{:.16e}", i, j, self.get(i, j)).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Unthresholded recurrence matrix. Only the upper triangle is computed; the
/// squared difference is sign-symmetric so the mirror is exact.
pub fn recurrence_matrix(traj: &PhaseTrajectory) -> RecurrenceMatrix {
    let k = traj.len();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        let si = traj.state(i);
        for j in i + 1..k {
            let d = distance(si, traj.state(j));
            values[i * k + j] = d;
            values[j * k + i] = d;
        }
    }
    RecurrenceMatrix { size: k, values }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayscaleImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, RecurrenceError> {
        if pixels.len() != height * width || height == 0 || width == 0 {
            return Err(RecurrenceError::BadImage {
                got: pixels.len(),
                expected: height * width,
            });
        }
        Ok(GrayscaleImage {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        GrayscaleImage {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// Scales by the matrix maximum; an all-zero matrix gives an all-zero image.
pub fn to_image(matrix: &RecurrenceMatrix) -> GrayscaleImage {
    let max = matrix.values.iter().cloned().fold(0.0, f64::max);
    let pixels = if max > 0.0 {
        matrix.values.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; matrix.values.len()]
    };
    GrayscaleImage {
        height: matrix.size,
        width: matrix.size,
        pixels,
    }
}

/// Series → trajectory → matrix → image.
pub fn series_to_image(
    series: &TimeSeries,
    cfg: EmbeddingConfig,
) -> Result<GrayscaleImage, RecurrenceError> {
    Ok(to_image(&recurrence_matrix(&embed_phase_space(series, cfg)?)))
}

pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Binary PGM (P5, maxval 255).
pub fn write_pgm(image: &GrayscaleImage, path: &Path) -> Result<(), RecurrenceError> {
    let io = |source| RecurrenceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write!(w, "P5\n{} {}\n255\n", image.width, image.height).map_err(io)?;
    let bytes: Vec<u8> = image.pixels.iter().map(|&v| quantize(v)).collect();
    w.write_all(&bytes).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_pgm(path: &Path) -> Result<GrayscaleImage, RecurrenceError> {
    let io = |source| RecurrenceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bad = |reason: &str| RecurrenceError::Pgm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = BufReader::new(File::open(path).map_err(io)?);

    // Header: magic, width, height, maxval separated by whitespace; `#` starts a comment.
    let mut tokens = Vec::with_capacity(4);
    let mut token = String::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        if r.read(&mut byte).map_err(io)? == 0 {
            return Err(bad("truncated header"));
        }
        let c = byte[0] as char;
        if c == '#' {
            let mut discard = String::new();
            r.read_line(&mut discard).map_err(io)?;
        } else if c.is_ascii_whitespace() {
            if !token.is_empty() {
                tokens.push(std::mem::take(&mut token));
            }
        } else {
            token.push(c);
        }
    }
    if tokens[0] != "P5" {
        return Err(bad("magic is not P5"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval is supported"));
    }
    let mut bytes = vec![0u8; width * height];
    r.read_exact(&mut bytes).map_err(io)?;
    let pixels = bytes.iter().map(|&b| b as f64 / maxval as f64).collect();
    GrayscaleImage::new(height, width, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(v: Vec<f64>) -> TimeSeries {
        TimeSeries {
            samples: v,
            dt_s: 1.0,
            t0_s: 0.0,
        }
    }

    #[test]
    fn twelve_samples_give_eleven_states() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let traj = embed_phase_space(&ts(x.clone()), EmbeddingConfig::default()).unwrap();
        assert_eq!(traj.len(), 11);
        assert_eq!(traj.state(3), &[x[3], x[4]]);
        assert_eq!(recurrence_matrix(&traj).size(), 11);
    }

    #[test]
    fn dim_one_is_raw_samples() {
        let x = vec![3.0, 1.0, 4.0, 1.5];
        let traj = embed_phase_space(&ts(x.clone()), EmbeddingConfig { dim: 1, delay: 1 }).unwrap();
        assert_eq!(traj.len(), 4);
        for (i, v) in x.iter().enumerate() {
            assert_eq!(traj.state(i), &[*v]);
        }
    }

    #[test]
    fn delay_two_index_arithmetic() {
        let traj =
            embed_phase_space(&ts(vec![1., 2., 3., 4.]), EmbeddingConfig { dim: 2, delay: 2 }).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.state(0), &[1.0, 3.0]);
        assert_eq!(traj.state(1), &[2.0, 4.0]);
    }

    #[test]
    fn too_short_and_bad_config() {
        let short = embed_phase_space(&ts(vec![1., 2., 3.]), EmbeddingConfig { dim: 2, delay: 2 });
        assert!(matches!(short, Err(RecurrenceError::TooShort { .. })));
        let zero = embed_phase_space(&ts(vec![1., 2., 3.]), EmbeddingConfig { dim: 0, delay: 1 });
        assert!(matches!(zero, Err(RecurrenceError::BadConfig { .. })));
    }

    #[test]
    fn constant_series_gives_zero_matrix_and_image() {
        let m = recurrence_matrix(
            &embed_phase_space(&ts(vec![0.4; 10]), EmbeddingConfig::default()).unwrap(),
        );
        assert!(m.values().iter().all(|v| *v == 0.0));
        assert!(to_image(&m).pixels.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn alternating_series_two_states() {
        let x: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let m = recurrence_matrix(&embed_phase_space(&ts(x), EmbeddingConfig::default()).unwrap());
        for i in 0..m.size() {
            for j in 0..m.size() {
                let expected = if (i + j) % 2 == 0 { 0.0 } else { 2f64.sqrt() };
                assert_eq!(m.get(i, j), expected);
            }
        }
    }

    #[test]
    fn periodic_series_recurs() {
        let p = 7;
        let x: Vec<f64> = (0..60).map(|i| ((i % p) as f64 * 1.3).cos()).collect();
        let m = recurrence_matrix(&embed_phase_space(&ts(x), EmbeddingConfig { dim: 3, delay: 2 }).unwrap());
        for i in 0..m.size() - p {
            assert_eq!(m.get(i, i + p), 0.0);
        }
    }

    #[test]
    fn image_scaling() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let m = recurrence_matrix(&embed_phase_space(&ts(x), EmbeddingConfig::default()).unwrap());
        let img = to_image(&m);
        assert!(img.pixels.contains(&1.0));
        assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        let scaled = to_image(&m.scaled(3.5));
        assert!(scaled.pixels.iter().zip(&img.pixels).all(|(a, b)| (a - b).abs() <= 1e-15));
        assert_eq!(img.get(0, 0), 0.0);
    }

    #[test]
    fn pgm_bytes_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = GrayscaleImage::new(2, 2, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        write_pgm(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..bytes.len() - 4], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 128, 64]);

        let big = GrayscaleImage::zeros(120, 120);
        write_pgm(&big, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n120 120\n255\n"));
        assert_eq!(bytes.len(), 15 + 120 * 120);
    }

    #[test]
    fn pgm_io_error_names_path() {
        let err = write_pgm(&GrayscaleImage::zeros(2, 2), Path::new("/nonexistent/dir/x.pgm")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.pgm"));
    }

    #[test]
    fn matrix_csv_dump() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = recurrence_matrix(&embed_phase_space(&ts(vec![0., 1., 3.]), EmbeddingConfig::default()).unwrap());
        m.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "row,col,value");
        assert_eq!(lines.len(), 5);
        let v: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(v, m.get(0, 1));
    }

    proptest! {
        #[test]
        fn metric_axioms(x in prop::collection::vec(-10f64..10.0, 4..60), dim in 1usize..4, delay in 1usize..3) {
            let cfg = EmbeddingConfig { dim, delay };
            prop_assume!(cfg.n_states(x.len()).is_some());
            let m = recurrence_matrix(&embed_phase_space(&ts(x), cfg).unwrap());
            let k = m.size();
            for i in 0..k {
                prop_assert_eq!(m.get(i, i), 0.0);
                for j in 0..k {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    prop_assert!(m.get(i, j) >= 0.0);
                }
            }
        }
    }
}
