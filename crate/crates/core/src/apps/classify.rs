//! Classification by common features: each class is summarised by the common
//! basis of two random halves of its training samples, and a test sample goes
//! to the class whose span it matches best.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cobec::{cobec, CobecConfig, CobecInit};
use crate::error::{Error, Result};
use crate::linalg;
use crate::multiblock::validate;
use crate::preprocess::{preprocess, RankChoice};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMethod {
    /// Cosine of the angle between the sample and the span.
    Correlation,
    /// Negated distance from the unit-norm sample to the span.
    Euclidean,
}

#[derive(Debug, Clone)]
pub struct ClassModel {
    /// Orthonormal common features `F̄_k` per class, indexed by label.
    pub features: Vec<DMatrix<f64>>,
    pub method: MatchMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// `c = floor(min_n J_n · c_fraction)`, clamped to `1..=min_n r_n`.
    pub c_fraction: f64,
    pub method: MatchMethod,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c_fraction: 0.8,
            method: MatchMethod::Correlation,
            seed: 0,
        }
    }
}

/// Minimum samples per class: two halves of at least two columns.
pub const MIN_CLASS_SAMPLES: usize = 4;

/// Trains one common basis per class; `classes[k]` holds the samples of label `k`.
pub fn train_classifier(classes: &[Vec<DVector<f64>>], cfg: &TrainConfig) -> Result<ClassModel> {
    if classes.is_empty() {
        return Err(Error::InvalidInput("no classes".into()));
    }
    let dim = classes[0].first().map_or(0, |s| s.len());
    let mut features = Vec::with_capacity(classes.len());
    for (k, samples) in classes.iter().enumerate() {
        if samples.len() < MIN_CLASS_SAMPLES {
            return Err(Error::TooFewSamples {
                class: k,
                found: samples.len(),
                needed: MIN_CLASS_SAMPLES,
            });
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::InvalidInput(format!(
                "class {k} has a sample of length {}, expected {dim}",
                bad.len()
            )));
        }
        let mut g = rng::stream(cfg.seed, k as u64);
        let order = rng::permutation(samples.len(), &mut g);
        let half = samples.len() / 2;
        let block = |idx: &[usize]| DMatrix::from_fn(dim, idx.len(), |i, j| samples[idx[j]][i]);
        let mb = validate(vec![block(&order[..half]), block(&order[half..])])?;
        let factors = preprocess(&mb, &RankChoice::Revealing)?;
        let min_j = half.min(samples.len() - half);
        let min_r = factors.iter().map(|f| f.rank()).min().unwrap_or(1);
        let c = ((min_j as f64 * cfg.c_fraction).floor() as usize).clamp(1, min_r);
        let basis = cobec(&factors, &CobecConfig::new(c).with_seed(cfg.seed).with_init(CobecInit::Spectral))?;
        features.push(basis.a_bar);
    }
    Ok(ClassModel {
        features,
        method: cfg.method,
    })
}

/// Score of `y` against the span of `f` (larger is better).
pub fn match_score(y: &DVector<f64>, f: &DMatrix<f64>, method: MatchMethod) -> f64 {
    let norm = y.norm();
    if norm == 0.0 {
        return f64::NAN;
    }
    let unit = y / norm;
    let proj = f * linalg::lstsq(f, &unit, 1e-12);
    match method {
        MatchMethod::Correlation => proj.norm().min(1.0),
        MatchMethod::Euclidean => -(unit - proj).norm(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: usize,
    pub scores: Vec<f64>,
    /// Another class reached the same best score; the lowest label was taken.
    pub tie: bool,
}

/// Scores this close to the best count as tied.
const TIE_TOL: f64 = 1e-12;

/// Assigns `y` to the class with the highest score.
pub fn classify(y: &DVector<f64>, model: &ClassModel) -> Classification {
    let scores: Vec<f64> = model
        .features
        .iter()
        .map(|f| match_score(y, f, model.method))
        .collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = TIE_TOL * best.abs().max(1.0);
    let top: Vec<usize> = (0..scores.len()).filter(|&k| scores[k] >= best - slack).collect();
    let label = top.first().copied().unwrap_or(0);
    let tie = top.len() > 1;
    Classification { label, scores, tie }
}
