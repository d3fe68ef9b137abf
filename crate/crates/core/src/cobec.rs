//! Common basis extraction with a known number of common components.
//!
//! Solves `min Σ_n ‖Q_n Z_n − Ā‖²_F` subject to `ĀᵀĀ = I_c` by alternating
//! `Z_n ← Q_nᵀ Ā` with the orthogonal Procrustes step `Ā ← E Vᵀ`, where
//! `P = Σ_n Q_n Z_n = E Λ Vᵀ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cobe::{CobeDiagnostics, CommonBasis, Compressed, StopReason, MAX_RESTARTS};
use crate::error::{Error, Result};
use crate::linalg;
use crate::multiblock::MultiBlock;
use crate::preprocess::{self, OrthoFactor, RankChoice};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CobecConfig {
    pub c: usize,
    pub max_iter: usize,
    /// Relative change of the objective that counts as converged.
    pub tol: f64,
    pub init: CobecInit,
    pub seed: u64,
}

/// Starting point of the alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CobecInit {
    /// Seeded Gaussian `Z_n`.
    #[default]
    Random,
    /// `Z_n = Q_nᵀ U`, with `U` the leading `c` left singular vectors of
    /// `[Q_1 … Q_N]`. The alternation is a subspace iteration on
    /// `Σ_n Q_n Q_nᵀ`, so this start skips the slow phase when the gap between
    /// the `c`-th and `(c+1)`-th common directions is small.
    Spectral,
}

impl Default for CobecConfig {
    fn default() -> Self {
        Self {
            c: 1,
            max_iter: 500,
            tol: 1e-10,
            init: CobecInit::Random,
            seed: 0,
        }
    }
}

impl CobecConfig {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: CobecInit) -> Self {
        self.init = init;
        self
    }
}

/// `qᵀ Ā`.
pub fn update_z(q: &DMatrix<f64>, a_bar: &DMatrix<f64>) -> DMatrix<f64> {
    q.tr_mul(a_bar)
}

/// Relative size below which a singular value of `P` counts as zero.
const DEGENERATE_REL: f64 = 1e-12;

/// Maximiser of `trace(pᵀ Ā)` over column-orthonormal `Ā`: the polar factor
/// `E Vᵀ` of the thin SVD `p = E Λ Vᵀ`.
pub fn procrustes_basis(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = p.ncols();
    if c == 0 {
        return Ok(p.clone());
    }
    if c > p.nrows() {
        return Err(Error::DegenerateP {
            rank: p.nrows(),
            c,
            restarts: 0,
        });
    }
    let svd = linalg::thin_svd(p);
    let rank = svd.rank(DEGENERATE_REL);
    if rank < c {
        return Err(Error::DegenerateP { rank, c, restarts: 0 });
    }
    Ok(&svd.u * svd.v.transpose())
}

fn objective(q: &[DMatrix<f64>], z: &[DMatrix<f64>], a: &DMatrix<f64>) -> f64 {
    q.iter().zip(z).map(|(q, z)| (q * z - a).norm_squared()).sum()
}

/// Runs the alternation on preprocessed blocks.
///
/// On return the columns of `Ā` are rotated to the principal axes of
/// `Σ_n Z_nᵀ Z_n` inside the common span and ordered by ascending per-column
/// residual `f_k = Σ_n ‖Q_n z_{n,k} − ā_k‖²`.
pub fn cobec(factors: &[OrthoFactor], cfg: &CobecConfig) -> Result<CommonBasis> {
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
    let ranks: Vec<usize> = factors.iter().map(OrthoFactor::rank).collect();
    let min_rank = *ranks.iter().min().expect("non-empty");
    let c = cfg.c;
    if c == 0 || c > min_rank {
        return Err(Error::InvalidInput(format!(
            "common count {c} must be in 1..={min_rank} (smallest block rank)"
        )));
    }
    let n_blocks = factors.len();
    let compressed = Compressed::new(factors.iter().map(|f| f.q.clone()).collect());
    let q = &compressed.q;
    let mut r = rng::stream(cfg.seed, 0);
    let floor = n_blocks as f64 * 1e-20;

    let mut last_err = None;
    for attempt in 0..=MAX_RESTARTS {
        // restarts always fall back to a random start
        let mut z: Vec<DMatrix<f64>> = if attempt == 0 && cfg.init == CobecInit::Spectral {
            let stacked = linalg::hstack(&q.iter().collect::<Vec<_>>());
            let u = linalg::thin_svd(&stacked).u.columns(0, c).into_owned();
            q.iter().map(|qn| update_z(qn, &u)).collect()
        } else {
            ranks
                .iter()
                .map(|&rn| rng::gaussian_matrix(rn, c, &mut r))
                .collect()
        };
        let mut trace = Vec::new();
        let mut a = DMatrix::zeros(q[0].nrows(), c);
        let mut failed = false;
        for _ in 0..cfg.max_iter {
            let p: DMatrix<f64> = q.iter().zip(&z).map(|(q, z)| q * z).sum();
            match procrustes_basis(&p) {
                Ok(next) => a = next,
                Err(e) => {
                    last_err = Some(e);
                    failed = true;
                    break;
                }
            }
            for (zn, qn) in z.iter_mut().zip(q) {
                *zn = update_z(qn, &a);
            }
            let obj = objective(q, &z, &a);
            let converged = trace
                .last()
                .is_some_and(|&prev: &f64| (prev - obj).abs() <= cfg.tol * prev.max(floor));
            trace.push(obj);
            if converged {
                break;
            }
        }
        if failed {
            continue;
        }
        let iterations = trace.len();
        // principal axes inside the span
        let h: DMatrix<f64> = z.iter().map(|z| z.tr_mul(z)).sum();
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        let w = DMatrix::from_fn(c, c, |i, j| eig.eigenvectors[(i, order[j])]);
        let a_red = &a * &w;
        let mut loadings: Vec<DMatrix<f64>> = z.iter().map(|z| z * &w).collect();
        let residuals: Vec<f64> = (0..c)
            .map(|k| {
                q.iter()
                    .zip(&loadings)
                    .map(|(q, l)| (q * l.column(k) - a_red.column(k)).norm_squared())
                    .sum()
            })
            .collect();
        let mut a_bar = compressed.expand(&a_red);
        let before = a_bar.clone();
        linalg::canonical_signs(&mut a_bar);
        for k in 0..c {
            if before.column(k).dot(&a_bar.column(k)) < 0.0 {
                for l in &mut loadings {
                    l.column_mut(k).neg_mut();
                }
            }
        }
        let diagnostics = CobeDiagnostics {
            candidate_residuals: residuals.clone(),
            stop: Some(if iterations >= cfg.max_iter {
                StopReason::Limit
            } else {
                StopReason::Threshold
            }),
            orthogonality_error: linalg::orthonormality_error(&a_bar),
            reorthogonalized: false,
            reduced_dim: compressed.dim(),
            objective_trace: trace,
            restarts: attempt,
        };
        return Ok(CommonBasis {
            a_bar,
            residuals,
            loadings,
            iterations: vec![iterations; c],
            diagnostics,
        });
    }
    match last_err {
        Some(Error::DegenerateP { rank, c, .. }) => Err(Error::DegenerateP {
            rank,
            c,
            restarts: MAX_RESTARTS,
        }),
        Some(e) => Err(e),
        None => unreachable!("loop exits early unless an attempt failed"),
    }
}

/// Preprocesses `mb` with `ranks`, then runs [`cobec`].
pub fn cobec_blocks(mb: &MultiBlock, ranks: &RankChoice, cfg: &CobecConfig) -> Result<CommonBasis> {
    let factors = preprocess::preprocess(mb, ranks)?;
    cobec(&factors, cfg)
}
