//! Linear SVM on latent points.
//!
//! Minimizes `½‖w‖² + C Σ max(0, 1 − y(w·x + b))` with seeded stochastic
//! subgradient steps of size `1/(λt)`, `λ = 1/(C·N)` (the Pegasos schedule).
//! The bias is not regularized. The iterate with the lowest full objective,
//! checked after every pass, is returned.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{rng_from, salt};

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("labels must be -1 or +1, got {0}")]
    BadLabel(i8),
    #[error("invalid hyperparameter: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b
    }

    /// Sign of the decision value; an exact zero is classified +1.
    pub fn predict(&self, x: &[f64]) -> i8 {
        if self.decision(x) >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn hinge_sum(&self, points: &[Vec<f64>], labels: &[i8]) -> f64 {
        points
            .iter()
            .zip(labels)
            .map(|(x, &y)| (1.0 - y as f64 * self.decision(x)).max(0.0))
            .sum()
    }

    pub fn objective(&self, points: &[Vec<f64>], labels: &[i8]) -> f64 {
        0.5 * self.w.iter().map(|w| w * w).sum::<f64>() + self.c * self.hinge_sum(points, labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub model: LinearSvm,
    /// Best objective seen after each pass; non-increasing.
    pub best_objective: Vec<f64>,
}

fn check_inputs(points: &[Vec<f64>], labels: &[i8]) -> Result<usize, SvmError> {
    if points.len() != labels.len() {
        return Err(SvmError::Length(format!("{} points, {} labels", points.len(), labels.len())));
    }
    if points.is_empty() {
        return Err(SvmError::SingleClass);
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(SvmError::Length(format!("point of dimension {} among dimension {dim}", p.len())));
    }
    if let Some(&l) = labels.iter().find(|l| **l != 1 && **l != -1) {
        return Err(SvmError::BadLabel(l));
    }
    Ok(dim)
}

pub fn fit_svm(points: &[Vec<f64>], labels: &[i8], c: f64, epochs: usize, seed: u64) -> Result<SvmFit, SvmError> {
    let dim = check_inputs(points, labels)?;
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(SvmError::SingleClass);
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(SvmError::Config(format!("C = {c} must be positive")));
    }
    if epochs == 0 {
        return Err(SvmError::Config("at least one pass is required".into()));
    }

    let n = points.len();
    let lambda = 1.0 / (c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut rng = rng_from(seed ^ salt::SVM);
    let mut order: Vec<usize> = (0..n).collect();

    let mut cur = LinearSvm {
        w: vec![0.0; dim],
        b: 0.0,
        c,
    };
    let mut best = cur.clone();
    let mut best_obj = cur.objective(points, labels);
    let mut history = Vec::with_capacity(epochs);
    let mut t = 0u64;

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let y = labels[i] as f64;
            let margin = y * cur.decision(&points[i]);
            let shrink = 1.0 - eta * lambda;
            cur.w.iter_mut().for_each(|w| *w *= shrink);
            if margin < 1.0 {
                for (w, x) in cur.w.iter_mut().zip(&points[i]) {
                    *w += eta * y * x;
                }
                cur.b += eta * y;
            }
            let norm = cur.w.iter().map(|w| w * w).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                cur.w.iter_mut().for_each(|w| *w *= s);
            }
        }
        let obj = cur.objective(points, labels);
        if obj < best_obj {
            best_obj = obj;
            best = cur.clone();
        }
        history.push(best_obj);
    }
    Ok(SvmFit {
        model: best,
        best_objective: history,
    })
}

/// Per-feature affine standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; a zero-variance feature keeps unit scale.
    pub fn fit(points: &[Vec<f64>]) -> Result<Self, SvmError> {
        let first = points.first().ok_or_else(|| SvmError::Length("no rows to standardize".into()))?;
        let dim = first.len();
        let n = points.len() as f64;
        let mut mean = vec![0.0; dim];
        for p in points {
            if p.len() != dim {
                return Err(SvmError::Length("ragged feature rows".into()));
            }
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for p in points {
            for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Serialized classifier: SVM in standardized coordinates plus the scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModelFile {
    pub w: Vec<f64>,
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

impl SvmModelFile {
    pub fn new(svm: &LinearSvm, scaler: &Standardizer) -> Self {
        SvmModelFile {
            w: svm.w.clone(),
            b: svm.b,
            c: svm.c,
            feature_mean: scaler.mean.clone(),
            feature_std: scaler.std.clone(),
        }
    }

    pub fn parts(&self) -> (LinearSvm, Standardizer) {
        (
            LinearSvm {
                w: self.w.clone(),
                b: self.b,
                c: self.c,
            },
            Standardizer {
                mean: self.feature_mean.clone(),
                std: self.feature_std.clone(),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`, index 0 = label -1, index 1 = label +1.
    pub confusion: [[u64; 2]; 2],
    pub n: usize,
}

fn class_index(label: i8) -> usize {
    usize::from(label > 0)
}

pub fn evaluate(model: &LinearSvm, points: &[Vec<f64>], labels: &[i8]) -> Result<EvalReport, SvmError> {
    check_inputs(points, labels)?;
    let mut confusion = [[0u64; 2]; 2];
    for (x, &y) in points.iter().zip(labels) {
        confusion[class_index(y)][class_index(model.predict(x))] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    Ok(EvalReport {
        accuracy: correct as f64 / points.len() as f64,
        confusion,
        n: points.len(),
    })
}
