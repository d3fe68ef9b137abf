//! Common and individual feature analysis on top of a common basis `Ā`.
//!
//! [`split`] separates each cleaned block into `Ȳ_n = Ā B̄_nᵀ` and
//! `Y̆_n = Y_n − Ȳ_n`. [`linked_bss`] unmixes `Ā`, which behaves as a
//! pre-whitened mixture of the shared sources, and [`cnfe`] fits
//! nonnegative common features `F̄` to the common spaces.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::preprocess::OrthoFactor;
use crate::rng;

#[derive(Debug, Clone)]
pub struct CifaDecomposition {
    /// `Ā`, `I × c`.
    pub common_basis: DMatrix<f64>,
    /// `B̄_n = Y_nᵀ Ā`, `J_n × c`.
    pub common_coeffs: Vec<DMatrix<f64>>,
    /// `Ȳ_n`, `I × J_n`.
    pub common_space: Vec<DMatrix<f64>>,
    /// `Y̆_n`, `I × J_n`.
    pub individual_space: Vec<DMatrix<f64>>,
    /// `Ă_n`, `I × (r_n − c)`.
    pub individual_basis: Vec<DMatrix<f64>>,
    /// `B̆_n`, `J_n × (r_n − c)`.
    pub individual_coeffs: Vec<DMatrix<f64>>,
    /// Blocks with `r_n ≤ c`, whose individual part is empty.
    pub rank_deficient: Vec<usize>,
}

impl CifaDecomposition {
    pub fn len(&self) -> usize {
        self.common_coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.common_coeffs.is_empty()
    }
}

/// Splits cleaned blocks into common and individual parts.
pub fn split(factors: &[OrthoFactor], a_bar: &DMatrix<f64>) -> Result<CifaDecomposition> {
    let c = a_bar.ncols();
    if let Some(n) = factors.iter().position(|f| f.rows() != a_bar.nrows()) {
        return Err(Error::DimensionMismatch {
            block: n,
            expected: a_bar.nrows(),
            found: factors[n].rows(),
        });
    }
    let min_rank = factors.iter().map(OrthoFactor::rank).min().unwrap_or(0);
    if c > min_rank {
        return Err(Error::InvalidInput(format!(
            "{c} common columns exceed the smallest block rank {min_rank}"
        )));
    }
    let mut out = CifaDecomposition {
        common_basis: a_bar.clone(),
        common_coeffs: Vec::with_capacity(factors.len()),
        common_space: Vec::with_capacity(factors.len()),
        individual_space: Vec::with_capacity(factors.len()),
        individual_basis: Vec::with_capacity(factors.len()),
        individual_coeffs: Vec::with_capacity(factors.len()),
        rank_deficient: Vec::new(),
    };
    for (n, f) in factors.iter().enumerate() {
        let y = f.cleaned();
        let b = f.r_factor.tr_mul(&f.q.tr_mul(a_bar));
        let common = a_bar * b.transpose();
        let individual = &y - &common;
        let k = f.rank() - c;
        if k == 0 {
            out.rank_deficient.push(n);
            out.individual_basis.push(DMatrix::zeros(f.rows(), 0));
            out.individual_coeffs.push(DMatrix::zeros(f.cols(), 0));
        } else {
            let svd = linalg::thin_svd(&individual).truncate(k);
            out.individual_coeffs.push(&svd.v * DMatrix::from_diagonal(&svd.s));
            out.individual_basis.push(svd.u);
        }
        out.common_coeffs.push(b);
        out.common_space.push(common);
        out.individual_space.push(individual);
    }
    Ok(out)
}

/// Unmixes the columns of a matrix, up to permutation and scaling.
pub trait BssSeparator {
    fn separate(&self, mixed: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// Second-order separation from one lagged covariance: center, whiten,
/// eigendecompose the symmetrised lag-`lag` covariance of the whitened data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Amuse {
    pub lag: usize,
    /// Smallest accepted gap between eigenvalues of the lagged covariance.
    pub min_gap: f64,
}

impl Default for Amuse {
    fn default() -> Self {
        Self { lag: 1, min_gap: 1e-2 }
    }
}

impl BssSeparator for Amuse {
    fn separate(&self, mixed: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (t, c) = mixed.shape();
        if c <= 1 {
            return Ok(mixed.clone());
        }
        if self.lag == 0 || t <= self.lag + c {
            return Err(Error::SeparatorFailure(format!(
                "{t} samples are too few for lag {} and {c} signals",
                self.lag
            )));
        }
        let mut x = mixed.clone();
        let mean = x.row_mean();
        for mut row in x.row_iter_mut() {
            row -= &mean;
        }
        let c0 = x.tr_mul(&x) / t as f64;
        let eig = c0.symmetric_eigen();
        let top = eig.eigenvalues.max();
        if eig.eigenvalues.min() <= 1e-12 * top.max(f64::MIN_POSITIVE) {
            return Err(Error::SeparatorFailure("mixtures are linearly dependent".into()));
        }
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let whitening = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
        let z = x * whitening;
        let lead = z.rows(0, t - self.lag);
        let lagged = z.rows(self.lag, t - self.lag);
        let ct = lead.tr_mul(&lagged) / (t - self.lag) as f64;
        let sym = (&ct + ct.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(|a, b| b.total_cmp(a));
        let gap = values.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
        if gap < self.min_gap {
            return Err(Error::SeparatorFailure(format!(
                "lagged covariance eigenvalues are degenerate (gap {gap:.2e})"
            )));
        }
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let v = DMatrix::from_fn(c, c, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok(z * v)
    }
}

/// `F̄ = Ψ(Ā)`. One column passes through unchanged.
pub fn linked_bss(a_bar: &DMatrix<f64>, separator: &dyn BssSeparator) -> Result<DMatrix<f64>> {
    if a_bar.ncols() <= 1 {
        return Ok(a_bar.clone());
    }
    separator.separate(a_bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CnfeMode {
    /// Only `F̄` is nonnegative; `M̄_n` is the exact least-squares fit.
    Semi,
    /// Both `F̄` and `M̄_n` are nonnegative.
    Nonnegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnfeConfig {
    pub r: usize,
    pub max_iter: usize,
    /// Relative objective change that ends the iteration.
    pub tol: f64,
    pub mode: CnfeMode,
    pub seed: u64,
}

impl Default for CnfeConfig {
    fn default() -> Self {
        Self {
            r: 1,
            max_iter: 2000,
            tol: 1e-9,
            mode: CnfeMode::Semi,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonnegativeCommonFeatures {
    /// `F̄`, `I × r`, entrywise nonnegative.
    pub f_bar: DMatrix<f64>,
    /// `M̄_n`, `J_n × r`, so that `Ȳ_n ≈ F̄ M̄_nᵀ`.
    pub m_bars: Vec<DMatrix<f64>>,
    /// Objective after initialisation and after every full update cycle.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl NonnegativeCommonFeatures {
    /// `‖F̄ M̄_nᵀ − Ā B̄_nᵀ‖_F / ‖Ā B̄_nᵀ‖_F` for block `n`.
    pub fn relative_error(&self, decomp: &CifaDecomposition, n: usize) -> f64 {
        let target = &decomp.common_space[n];
        let fit = &self.f_bar * self.m_bars[n].transpose();
        let denom = target.norm();
        if denom == 0.0 {
            fit.norm()
        } else {
            (fit - target).norm() / denom
        }
    }
}

const DENOM_FLOOR: f64 = 1e-12;

/// `Σ_n ‖F Mᵀ − Ā B̄ᵀ‖²` in the low-rank form, using `ĀᵀĀ = I`.
fn cnfe_objective(f: &DMatrix<f64>, a: &DMatrix<f64>, b: &[DMatrix<f64>], m: &[DMatrix<f64>]) -> f64 {
    let ftf = f.tr_mul(f);
    let atf = a.tr_mul(f);
    b.iter()
        .zip(m)
        .map(|(b, m)| {
            let quad = (m * &ftf).component_mul(m).sum();
            let cross = (b * &atf).component_mul(m).sum();
            (quad - 2.0 * cross + b.norm_squared()).max(0.0)
        })
        .sum()
}

/// `M̄_n = B̄_n Āᵀ F̄ (F̄ᵀF̄)⁺`.
fn least_squares_m(f: &DMatrix<f64>, a: &DMatrix<f64>, b: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let gram_pinv = linalg::pinv(&f.tr_mul(f), 1e-12);
    let atf = a.tr_mul(f);
    b.iter().map(|b| b * &atf * &gram_pinv).collect()
}

/// Nonnegative common features from the low-rank common spaces.
///
/// In [`CnfeMode::Nonnegative`] the updates are
/// `F̄ ← F̄ ⊙ [Ā Σ B̄_nᵀM̄_n]₊ ⊘ (F̄ Σ M̄_nᵀM̄_n)` and
/// `M̄_n ← M̄_n ⊙ [B̄_n ĀᵀF̄]₊ ⊘ (M̄_n F̄ᵀF̄)`. In [`CnfeMode::Semi`], `M̄_n` is
/// solved exactly and each column of `F̄` in turn takes its exact
/// nonnegative minimiser `f_j ← [f_j + (X_j − F̄ G_j) / G_jj]₊` with
/// `X = Ā Σ B̄_nᵀM̄_n`, `G = Σ M̄_nᵀM̄_n`. Both are non-increasing in the
/// objective.
pub fn cnfe(decomp: &CifaDecomposition, cfg: &CnfeConfig) -> Result<NonnegativeCommonFeatures> {
    let a = &decomp.common_basis;
    let c = a.ncols();
    if cfg.r == 0 || cfg.r > c {
        return Err(Error::InvalidInput(format!(
            "feature count {} must be in 1..={c}",
            cfg.r
        )));
    }
    let b = &decomp.common_coeffs;
    let mut g = rng::stream(cfg.seed, 0);
    let mut f = rng::uniform_matrix(a.nrows(), cfg.r, &mut g);
    let mut m: Vec<DMatrix<f64>> = match cfg.mode {
        CnfeMode::Nonnegative => b
            .iter()
            .map(|b| rng::uniform_matrix(b.nrows(), cfg.r, &mut g))
            .collect(),
        CnfeMode::Semi => least_squares_m(&f, a, b),
    };
    let mut trace = vec![cnfe_objective(&f, a, b, &m)];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let x: DMatrix<f64> = a * b.iter().zip(&m).map(|(b, m)| b.tr_mul(m)).sum::<DMatrix<f64>>();
        let gram: DMatrix<f64> = m.iter().map(|m| m.tr_mul(m)).sum();
        match cfg.mode {
            CnfeMode::Nonnegative => {
                let denom = &f * &gram;
                f.zip_apply(&x.zip_map(&denom, |x, d| x.max(0.0) / d.max(DENOM_FLOOR)), |fv, ratio| {
                    *fv *= ratio
                });
                let ftf = f.tr_mul(&f);
                let atf = a.tr_mul(&f);
                for (mn, bn) in m.iter_mut().zip(b) {
                    let num = bn * &atf;
                    let den = &*mn * &ftf;
                    mn.zip_apply(&num.zip_map(&den, |x, d| x.max(0.0) / d.max(DENOM_FLOOR)), |mv, ratio| {
                        *mv *= ratio
                    });
                }
            }
            CnfeMode::Semi => {
                // one exact nonnegative block update per column of F̄
                for j in 0..f.ncols() {
                    let gjj = gram[(j, j)];
                    if gjj <= DENOM_FLOOR {
                        continue;
                    }
                    let step = (x.column(j) - &f * gram.column(j)) / gjj;
                    let updated = (f.column(j) + step).map(|v| v.max(0.0));
                    f.set_column(j, &updated);
                }
                m = least_squares_m(&f, a, b);
            }
        }
        let obj = cnfe_objective(&f, a, b, &m);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(obj);
        if (prev - obj).abs() <= cfg.tol * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(NonnegativeCommonFeatures {
        f_bar: f,
        m_bars: m,
        objective_trace: trace,
        iterations,
    })
}

/// Absolute Pearson correlation of every estimated column with every
/// reference column, `ref × est`.
pub fn abs_correlations(reference: &DMatrix<f64>, estimate: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(reference.ncols(), estimate.ncols(), |i, j| {
        let a: DVector<f64> = reference.column(i).into_owned();
        let b: DVector<f64> = estimate.column(j).into_owned();
        linalg::correlation(&a, &b).abs()
    })
}
