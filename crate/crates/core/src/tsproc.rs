//! Downsampling and amplitude normalization applied before embedding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::TimeSeries;

#[derive(Debug, Error, PartialEq)]
pub enum TsError {
    #[error("PAA factor must be at least 1")]
    ZeroFactor,
    #[error("series of length {len} is shorter than PAA factor {factor}")]
    TooShort { len: usize, factor: usize },
    #[error("cannot normalize an empty series")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaaConfig {
    pub factor: usize,
}

impl Default for PaaConfig {
    fn default() -> Self {
        PaaConfig { factor: 5 }
    }
}

/// Piecewise aggregate approximation: the mean of each full frame of
/// `cfg.factor` samples. A trailing partial frame is dropped.
pub fn paa(series: &TimeSeries, cfg: PaaConfig) -> Result<TimeSeries, TsError> {
    if cfg.factor == 0 {
        return Err(TsError::ZeroFactor);
    }
    let n = series.samples.len();
    if n < cfg.factor {
        return Err(TsError::TooShort {
            len: n,
            factor: cfg.factor,
        });
    }
    let samples = if cfg.factor == 1 {
        series.samples.clone()
    } else {
        series
            .samples
            .chunks_exact(cfg.factor)
            .map(|frame| frame.iter().sum::<f64>() / cfg.factor as f64)
            .collect()
    };
    Ok(TimeSeries {
        samples,
        dt_s: series.dt_s * cfg.factor as f64,
        t0_s: series.t0_s,
    })
}

/// Affine map onto [0, 1]; a constant series maps to all zeros.
pub fn minmax_normalize(series: &TimeSeries) -> Result<TimeSeries, TsError> {
    if series.samples.is_empty() {
        return Err(TsError::Empty);
    }
    let (lo, hi) = series
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let samples = if range > 0.0 {
        series.samples.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; series.samples.len()]
    };
    Ok(TimeSeries {
        samples,
        ..*series
    })
}
