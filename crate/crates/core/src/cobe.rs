//! Sequential common orthogonal basis extraction for an unknown number of
//! common components.
//!
//! Each component solves `min Σ_n ‖Q_n z_n − ā‖²` subject to `‖ā‖ = 1` by
//! alternating `ā ← Σ_n Q_n z_n / ‖·‖` and `z_n ← Q_nᵀ ā`. Accepted
//! components are removed from every block by `Q_n ← Q_n (I − z_n z_nᵀ)`
//! before the next one is sought.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::multiblock::MultiBlock;
use crate::preprocess::{self, detect_common_count, OrthoFactor, RankChoice};
use crate::rng;

/// Restarts allowed when `Σ_n Q_n z_n` vanishes.
pub const MAX_RESTARTS: usize = 5;
const DEGENERATE_NORM: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CobeConfig {
    /// Acceptance threshold on `f_k / N`.
    pub epsilon: f64,
    pub max_components: usize,
    pub inner_max_iter: usize,
    /// Stop the inner loop once `‖ā_new − ā_old‖ < inner_tol`.
    pub inner_tol: f64,
    /// Pick the count with [`detect_common_count`] over a lookahead of
    /// candidates instead of stopping at the first `f_k / N > ε`.
    pub auto_stop: bool,
    pub seed: u64,
}

impl Default for CobeConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_components: usize::MAX,
            inner_max_iter: 200,
            inner_tol: 1e-10,
            auto_stop: false,
            seed: 0,
        }
    }
}

impl CobeConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn auto(mut self) -> Self {
        self.auto_stop = true;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::InvalidInput(format!("inner_tol must be > 0, got {}", self.inner_tol)));
        }
        Ok(())
    }
}

/// One solved component.
#[derive(Debug, Clone)]
pub struct ComponentFit {
    /// Unit vector `ā`.
    pub a: DVector<f64>,
    /// `z_n = Q_nᵀ ā` per block.
    pub z: Vec<DVector<f64>>,
    /// `Σ_n ‖Q_n z_n − ā‖²` at the final iterate.
    pub f: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Objective after every half-step (initial `ā` update, then each
    /// `z` and `ā` update).
    pub objective_trace: Vec<f64>,
}

fn objective(q_list: &[DMatrix<f64>], z: &[DVector<f64>], a: &DVector<f64>) -> f64 {
    q_list
        .iter()
        .zip(z)
        .map(|(q, z)| (q * z - a).norm_squared())
        .sum()
}

fn block_sum(q_list: &[DMatrix<f64>], z: &[DVector<f64>]) -> DVector<f64> {
    let mut sum = DVector::zeros(q_list[0].nrows());
    for (q, z) in q_list.iter().zip(z) {
        sum.gemv(1.0, q, z, 1.0);
    }
    sum
}

/// Solves one component with the generator seeded from `cfg.seed`.
pub fn extract_component(q_list: &[DMatrix<f64>], cfg: &CobeConfig) -> Result<ComponentFit> {
    let mut r = rng::stream(cfg.seed, 0);
    extract_component_with(q_list, cfg, &mut r)
}

/// Alternating least squares for one component.
///
/// `z_n` starts as a unit Gaussian draw per block. A vanishing
/// `Σ_n Q_n z_n` triggers a fresh draw, at most [`MAX_RESTARTS`] times.
pub fn extract_component_with<R: Rng + ?Sized>(
    q_list: &[DMatrix<f64>],
    cfg: &CobeConfig,
    rng: &mut R,
) -> Result<ComponentFit> {
    if q_list.is_empty() {
        return Err(Error::InvalidInput("no blocks".into()));
    }
    if let Some(n) = q_list.iter().position(|q| q.ncols() == 0) {
        return Err(Error::InvalidInput(format!("block {n} has no columns left")));
    }
    let mut restarts = 0;
    'restart: loop {
        if restarts > MAX_RESTARTS {
            return Err(Error::DegenerateSum { restarts: MAX_RESTARTS });
        }
        let mut z: Vec<DVector<f64>> = q_list
            .iter()
            .map(|q| rng::unit_gaussian(q.ncols(), rng).expect("non-empty block"))
            .collect();
        let sum = block_sum(q_list, &z);
        let norm = sum.norm();
        if norm < DEGENERATE_NORM {
            restarts += 1;
            continue;
        }
        let mut a = sum / norm;
        let mut trace = vec![objective(q_list, &z, &a)];
        let mut iterations = 0;
        while iterations < cfg.inner_max_iter {
            iterations += 1;
            for (zn, q) in z.iter_mut().zip(q_list) {
                zn.gemv_tr(1.0, q, &a, 0.0);
            }
            trace.push(objective(q_list, &z, &a));
            let sum = block_sum(q_list, &z);
            let norm = sum.norm();
            if norm < DEGENERATE_NORM {
                restarts += 1;
                continue 'restart;
            }
            let mut next = sum / norm;
            if next.dot(&a) < 0.0 {
                next.neg_mut();
            }
            let delta = (&next - &a).norm();
            a = next;
            trace.push(objective(q_list, &z, &a));
            if delta < cfg.inner_tol {
                break;
            }
        }
        for (zn, q) in z.iter_mut().zip(q_list) {
            zn.gemv_tr(1.0, q, &a, 0.0);
        }
        let f = objective(q_list, &z, &a);
        return Ok(ComponentFit {
            a,
            z,
            f,
            iterations,
            restarts,
            objective_trace: trace,
        });
    }
}

/// `q (I − z zᵀ)`.
pub fn deflate(q: &DMatrix<f64>, z: &DVector<f64>) -> DMatrix<f64> {
    let qz = q * z;
    let mut out = q.clone();
    out.ger(-1.0, &qz, z, 1.0);
    out
}

/// Why extraction ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// A candidate exceeded ε (fixed mode).
    Threshold,
    /// Cut at the detected gap (auto mode).
    Gap,
    /// Some block ran out of columns (`k = min_n r_n`).
    Exhausted,
    /// `max_components` reached.
    Limit,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CobeDiagnostics {
    /// `f_k` of every extracted candidate, accepted or not.
    pub candidate_residuals: Vec<f64>,
    pub stop: Option<StopReason>,
    /// `‖ĀᵀĀ − I‖_F` before the final Gram-Schmidt pass.
    pub orthogonality_error: f64,
    pub reorthogonalized: bool,
    /// Dimension of the union span the iterations ran in, when smaller than `I`.
    pub reduced_dim: Option<usize>,
    /// Objective after every half-step of the fixed-count alternation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
    pub restarts: usize,
}

/// Common basis and per-component bookkeeping.
#[derive(Debug, Clone)]
pub struct CommonBasis {
    /// `Ā`, `I × c`, orthonormal columns.
    pub a_bar: DMatrix<f64>,
    /// `f_k` per accepted component.
    pub residuals: Vec<f64>,
    /// Per block, the `r_n × c` matrix whose columns are `z_{n,k}`.
    pub loadings: Vec<DMatrix<f64>>,
    pub iterations: Vec<usize>,
    pub diagnostics: CobeDiagnostics,
}

impl CommonBasis {
    pub fn count(&self) -> usize {
        self.a_bar.ncols()
    }

    pub fn empty(rows: usize, ranks: &[usize]) -> Self {
        Self {
            a_bar: DMatrix::zeros(rows, 0),
            residuals: Vec::new(),
            loadings: ranks.iter().map(|&r| DMatrix::zeros(r, 0)).collect(),
            iterations: Vec::new(),
            diagnostics: CobeDiagnostics::default(),
        }
    }
}

/// Orthonormal factors expressed in a basis of their joint column span.
///
/// `Q_n = U C_n` with `U` orthonormal, so every iteration on `{C_n}` is an
/// exact isometric image of the same iteration on `{Q_n}`.
pub(crate) struct Compressed {
    basis: Option<DMatrix<f64>>,
    pub q: Vec<DMatrix<f64>>,
}

impl Compressed {
    pub fn new(q_list: Vec<DMatrix<f64>>) -> Self {
        let rows = q_list[0].nrows();
        let total: usize = q_list.iter().map(|q| q.ncols()).sum();
        if 2 * total > rows {
            return Self { basis: None, q: q_list };
        }
        let refs: Vec<&DMatrix<f64>> = q_list.iter().collect();
        let u = linalg::hstack(&refs).qr().q();
        let q = q_list.iter().map(|q| u.tr_mul(q)).collect();
        Self { basis: Some(u), q }
    }

    pub fn dim(&self) -> Option<usize> {
        self.basis.as_ref().map(|u| u.ncols())
    }

    pub fn expand(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.basis {
            Some(u) => u * m,
            None => m.clone(),
        }
    }
}

/// Runs the extraction on preprocessed blocks.
pub fn cobe(factors: &[OrthoFactor], cfg: &CobeConfig) -> Result<CommonBasis> {
    cfg.check()?;
    if factors.len() < 2 {
        return Err(Error::TooFewBlocks(factors.len()));
    }
    let rows = factors[0].rows();
    if let Some(n) = factors.iter().position(|f| f.rows() != rows) {
        return Err(Error::DimensionMismatch {
            block: n,
            expected: rows,
            found: factors[n].rows(),
        });
    }
    let n_blocks = factors.len();
    let ranks: Vec<usize> = factors.iter().map(OrthoFactor::rank).collect();
    let min_rank = *ranks.iter().min().expect("non-empty");
    let limit = cfg.max_components.min(min_rank);

    let compressed = Compressed::new(factors.iter().map(|f| f.q.clone()).collect());
    let mut work = compressed.q.clone();
    let mut r = rng::stream(cfg.seed, 0);

    let mut fits: Vec<ComponentFit> = Vec::new();
    let mut diagnostics = CobeDiagnostics {
        reduced_dim: compressed.dim(),
        ..CobeDiagnostics::default()
    };
    let mut stop = if limit == min_rank {
        StopReason::Exhausted
    } else {
        StopReason::Limit
    };
    for _ in 0..limit {
        let fit = extract_component_with(&work, cfg, &mut r)?;
        diagnostics.candidate_residuals.push(fit.f);
        if !cfg.auto_stop && fit.f / n_blocks as f64 > cfg.epsilon {
            stop = StopReason::Threshold;
            break;
        }
        for (q, z) in work.iter_mut().zip(&fit.z) {
            *q = deflate(q, z);
        }
        fits.push(fit);
    }
    if cfg.auto_stop {
        let c = detect_common_count(&diagnostics.candidate_residuals, n_blocks, cfg.epsilon);
        if c < fits.len() {
            stop = StopReason::Gap;
        }
        fits.truncate(c);
    }
    diagnostics.stop = Some(stop);

    let c = fits.len();
    if c == 0 {
        let mut empty = CommonBasis::empty(rows, &ranks);
        empty.diagnostics = diagnostics;
        return Ok(empty);
    }
    let dim = work[0].nrows();
    let mut a_red = DMatrix::zeros(dim, c);
    for (k, fit) in fits.iter().enumerate() {
        a_red.set_column(k, &fit.a);
    }
    diagnostics.orthogonality_error = linalg::orthonormality_error(&a_red);
    if diagnostics.orthogonality_error > 1e-12 {
        a_red = linalg::gram_schmidt(&a_red).ok_or(Error::DegenerateSum { restarts: 0 })?;
        diagnostics.reorthogonalized = true;
    }
    let mut a_bar = compressed.expand(&a_red);
    let mut loadings: Vec<DMatrix<f64>> = ranks.iter().map(|&r| DMatrix::zeros(r, c)).collect();
    for (k, fit) in fits.iter().enumerate() {
        for (l, z) in loadings.iter_mut().zip(&fit.z) {
            l.set_column(k, z);
        }
    }
    let before = a_bar.clone();
    linalg::canonical_signs(&mut a_bar);
    for k in 0..c {
        if before.column(k).dot(&a_bar.column(k)) < 0.0 {
            for l in &mut loadings {
                l.column_mut(k).neg_mut();
            }
        }
    }
    Ok(CommonBasis {
        a_bar,
        residuals: fits.iter().map(|f| f.f).collect(),
        loadings,
        iterations: fits.iter().map(|f| f.iterations).collect(),
        diagnostics,
    })
}

/// Preprocesses `mb` with `ranks`, then runs [`cobe`].
pub fn cobe_blocks(mb: &MultiBlock, ranks: &RankChoice, cfg: &CobeConfig) -> Result<CommonBasis> {
    let factors = preprocess::preprocess(mb, ranks)?;
    cobe(&factors, cfg)
}

/// Per-block least-squares weights `w_n = argmin ‖Y_n w − ā‖`.
#[derive(Debug, Clone)]
pub struct ComponentLoadings {
    pub w: Vec<DVector<f64>>,
    /// `‖Y_n w_n − ā‖` per block.
    pub residuals: Vec<f64>,
}

pub fn loadings_for(blocks: &MultiBlock, a: &DVector<f64>) -> Result<ComponentLoadings> {
    if a.len() != blocks.shared_rows() {
        return Err(Error::InvalidInput(format!(
            "vector has {} entries, blocks have {} rows",
            a.len(),
            blocks.shared_rows()
        )));
    }
    let mut w = Vec::with_capacity(blocks.len());
    let mut residuals = Vec::with_capacity(blocks.len());
    for y in blocks.matrices() {
        let wn = linalg::lstsq(y, a, preprocess::RANK_REL_TOL);
        residuals.push((y * &wn - a).norm());
        w.push(wn);
    }
    Ok(ComponentLoadings { w, residuals })
}
