//! Separation and clustering quality measures.

use std::collections::BTreeMap;

use nalgebra::DVector;
use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value reported for a perfect (infinite) SIR.
pub const SIR_CAP_DB: f64 = 300.0;

fn standardized(x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let centered = x.add_scalar(-mean);
    let sd = (centered.norm_squared() / n).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(centered / sd)
}

/// Signal-to-interference ratio in dB after normalising both signals to
/// zero mean and unit variance and aligning the sign of the estimate.
pub fn sir(s: &DVector<f64>, s_hat: &DVector<f64>) -> Result<f64> {
    if s.len() != s_hat.len() {
        return Err(Error::LengthMismatch(s.len(), s_hat.len()));
    }
    if s.len() < 2 {
        return Err(Error::InvalidInput("SIR needs at least 2 samples".into()));
    }
    let s = standardized(s)?;
    let mut e = standardized(s_hat)?;
    if s.dot(&e) < 0.0 {
        e.neg_mut();
    }
    let err = (&s - &e).norm_squared();
    if err == 0.0 {
        return Ok(SIR_CAP_DB);
    }
    Ok((10.0 * (s.norm_squared() / err).log10()).min(SIR_CAP_DB))
}

fn dense_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| map[l]).collect(), map.len())
}

fn contingency(pred: &[usize], truth: &[usize]) -> Result<(Vec<Vec<usize>>, usize, usize)> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let (p, kp) = dense_labels(pred);
    let (t, kt) = dense_labels(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    Ok((table, kp, kt))
}

/// Percentage of samples correct under the best one-to-one matching of
/// predicted to true labels.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, kp, kt) = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(100.0);
    }
    let k = kp.max(kt);
    let weights = Matrix::from_fn(k, k, |(i, j)| {
        if i < kp && j < kt {
            table[i][j] as i64
        } else {
            0
        }
    });
    let (matched, _) = kuhn_munkres(&weights);
    Ok(100.0 * matched as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nmi {
    /// Mutual information over the geometric mean of the entropies, × 100.
    pub percent: f64,
    /// Set when either labelling has a single cluster; `percent` is then 0.
    pub degenerate: bool,
}

/// Normalised mutual information (natural logarithms).
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<Nmi> {
    let (table, kp, kt) = contingency(pred, truth)?;
    let n = pred.len() as f64;
    if kp < 2 || kt < 2 {
        return Ok(Nmi {
            percent: 0.0,
            degenerate: true,
        });
    }
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let col: Vec<f64> = (0..kt)
        .map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64)
        .collect();
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &nij) in r.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += (nij / n) * (n * nij / (row[i] * col[j])).ln();
            }
        }
    }
    let denom = (entropy(&row) * entropy(&col)).sqrt();
    Ok(Nmi {
        percent: (100.0 * mi / denom).clamp(0.0, 100.0),
        degenerate: false,
    })
}
