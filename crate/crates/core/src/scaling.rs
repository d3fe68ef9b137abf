//! Random projection for very tall blocks.
//!
//! Blocks are compressed to `P Y_n` with `P` an `I_P × I` Gaussian sketch,
//! the common basis is found in the small space, and each component is lifted
//! back through its per-block weights: `ā_k ∝ mean_n Y_n w_{n,k}`. A lifted
//! component is kept only if every block reproduces it,
//! `max_n ‖Y_n w_{n,k} − ā_k‖² ≤ tol`, which rejects directions that only
//! look common after projection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cobe::{cobe, CobeConfig, CobeDiagnostics, CommonBasis};
use crate::cobec::{cobec, CobecConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::multiblock::{MatrixBlock, MultiBlock};
use crate::preprocess::{self, OrthoFactor, RankChoice};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPlan {
    p: DMatrix<f64>,
}

impl ProjectionPlan {
    /// `i_p × rows` matrix with i.i.d. `N(0, 1/i_p)` entries.
    pub fn gaussian(rows: usize, i_p: usize, seed: u64) -> Result<Self> {
        if i_p == 0 || i_p > rows {
            return Err(Error::InvalidInput(format!(
                "projected dimension {i_p} must be in 1..={rows}"
            )));
        }
        let mut g = rng::stream(seed, 0);
        let mut p = rng::gaussian_matrix(i_p, rows, &mut g);
        p.unscale_mut((i_p as f64).sqrt());
        Ok(Self { p })
    }

    pub fn from_matrix(p: DMatrix<f64>) -> Self {
        Self { p }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn i_p(&self) -> usize {
        self.p.nrows()
    }

    pub fn rows(&self) -> usize {
        self.p.ncols()
    }

    /// Checks `max_n r_n < I_P ≤ I`.
    pub fn check(&self, max_rank: usize) -> Result<()> {
        if self.i_p() <= max_rank || self.i_p() > self.rows() {
            return Err(Error::InvalidInput(format!(
                "projected dimension {} must exceed the largest block rank {max_rank} and not exceed {}",
                self.i_p(),
                self.rows()
            )));
        }
        Ok(())
    }
}

/// `P Y_n` for every block.
pub fn project_blocks(blocks: &MultiBlock, plan: &ProjectionPlan) -> Result<MultiBlock> {
    if plan.rows() != blocks.shared_rows() {
        return Err(Error::DimensionMismatch {
            block: 0,
            expected: plan.rows(),
            found: blocks.shared_rows(),
        });
    }
    let projected = blocks
        .matrices()
        .map(|y| MatrixBlock::new(plan.matrix() * y))
        .collect::<Result<Vec<_>>>()?;
    MultiBlock::new(projected)
}

/// `w` with `factor.cleaned() · w` the least-squares fit of `a`.
fn factor_weights(factor: &OrthoFactor, a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut coeff = factor.q.tr_mul(a);
    for (i, s) in factor.singular_values.iter().enumerate() {
        coeff.row_mut(i).unscale_mut(s * s);
    }
    factor.r_factor.tr_mul(&coeff)
}

/// `max_n ‖Y_n w_n − a‖²` and whether it is within `tol`.
pub fn verify_common(blocks: &MultiBlock, w: &[DVector<f64>], a: &DVector<f64>, tol: f64) -> (bool, f64) {
    let residual = blocks
        .matrices()
        .zip(w)
        .map(|(y, w)| (y * w - a).norm_squared())
        .fold(0.0, f64::max);
    (residual <= tol, residual)
}

/// Lifts per-block weights `w[n]` (`J_n × c`) to the full row space.
///
/// Candidates `Y_n w_{n,k}` are averaged over blocks, normalised, and the
/// collection is re-orthonormalised in column order. The returned basis keeps
/// the matching rescaled weights in `loadings` (`J_n × c`, so that
/// `Y_n · loadings[n] ≈ Ā`) and `max_n ‖Y_n w_{n,k} − ā_k‖²` in `residuals`.
pub fn lift_common(blocks: &MultiBlock, w: &[DMatrix<f64>]) -> Result<CommonBasis> {
    if w.len() != blocks.len() {
        return Err(Error::InvalidInput(format!(
            "{} weight matrices for {} blocks",
            w.len(),
            blocks.len()
        )));
    }
    let c = w.first().map_or(0, |w| w.ncols());
    let rows = blocks.shared_rows();
    if c == 0 {
        return Ok(CommonBasis::empty(rows, &blocks.col_counts()));
    }
    for (n, (y, wn)) in blocks.matrices().zip(w).enumerate() {
        if wn.nrows() != y.ncols() || wn.ncols() != c {
            return Err(Error::InvalidInput(format!(
                "weights for block {n} are {}x{}, expected {}x{c}",
                wn.nrows(),
                wn.ncols(),
                y.ncols()
            )));
        }
    }
    let mut mean = DMatrix::zeros(rows, c);
    for (y, wn) in blocks.matrices().zip(w) {
        mean += y * wn;
    }
    mean.unscale_mut(blocks.len() as f64);
    let scale: Vec<f64> = mean.column_iter().map(|col| col.norm()).collect();
    if let Some(k) = scale.iter().position(|&s| s <= 1e-14) {
        return Err(Error::DegenerateLift { component: k });
    }
    let mut weights: Vec<DMatrix<f64>> = w.to_vec();
    for k in 0..c {
        mean.column_mut(k).unscale_mut(scale[k]);
        for wn in &mut weights {
            wn.column_mut(k).unscale_mut(scale[k]);
        }
    }
    let a_bar = linalg::gram_schmidt(&mean).ok_or(Error::DegenerateLift { component: c - 1 })?;
    // Ā = mean · T with T = R⁻¹, R = Āᵀ mean upper triangular
    let r = a_bar.tr_mul(&mean);
    let t = r
        .upper_triangle()
        .try_inverse()
        .ok_or(Error::DegenerateLift { component: c - 1 })?;
    let loadings: Vec<DMatrix<f64>> = weights.iter().map(|wn| wn * &t).collect();
    let residuals: Vec<f64> = (0..c)
        .map(|k| {
            let wk: Vec<DVector<f64>> = loadings.iter().map(|l| l.column(k).into_owned()).collect();
            verify_common(blocks, &wk, &a_bar.column(k).into_owned(), f64::INFINITY).1
        })
        .collect();
    let diagnostics = CobeDiagnostics {
        candidate_residuals: residuals.clone(),
        orthogonality_error: linalg::orthonormality_error(&mean),
        reorthogonalized: c > 1,
        ..CobeDiagnostics::default()
    };
    Ok(CommonBasis {
        a_bar,
        residuals,
        loadings,
        iterations: vec![0; c],
        diagnostics,
    })
}

/// Solver run on the projected blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommonSolver {
    Cobe(CobeConfig),
    Cobec(CobecConfig),
}

impl CommonSolver {
    pub fn run(&self, factors: &[OrthoFactor]) -> Result<CommonBasis> {
        match self {
            CommonSolver::Cobe(cfg) => cobe(factors, cfg),
            CommonSolver::Cobec(cfg) => cobec(factors, cfg),
        }
    }
}

/// Result of the projected path.
#[derive(Debug, Clone)]
pub struct ProjectedCommon {
    /// Lifted components that passed verification, in extraction order.
    pub basis: CommonBasis,
    /// Solution in the projected space.
    pub projected: CommonBasis,
    /// Verification outcome per projected component.
    pub accepted: Vec<bool>,
    /// `max_n ‖Y_n w_{n,k} − ā_k‖²` per projected component.
    pub verification: Vec<f64>,
}

/// Projects, solves, lifts and verifies.
///
/// `ranks` applies to the projected blocks. Components whose verification
/// residual exceeds `tol` are dropped and the survivors are lifted again.
pub fn projected_common(
    blocks: &MultiBlock,
    plan: &ProjectionPlan,
    ranks: &RankChoice,
    solver: &CommonSolver,
    tol: f64,
) -> Result<ProjectedCommon> {
    let projected_blocks = project_blocks(blocks, plan)?;
    let factors = preprocess::preprocess(&projected_blocks, ranks)?;
    let max_rank = factors.iter().map(OrthoFactor::rank).max().unwrap_or(0);
    plan.check(max_rank)?;
    let projected = solver.run(&factors)?;
    let w: Vec<DMatrix<f64>> = factors
        .iter()
        .map(|f| factor_weights(f, &projected.a_bar))
        .collect();
    let all = lift_common(blocks, &w)?;
    let accepted: Vec<bool> = all.residuals.iter().map(|&r| r <= tol).collect();
    let verification = all.residuals.clone();
    let basis = if accepted.iter().all(|&ok| ok) {
        all
    } else {
        let keep: Vec<usize> = (0..accepted.len()).filter(|&k| accepted[k]).collect();
        let kept: Vec<DMatrix<f64>> = w.iter().map(|wn| wn.select_columns(&keep)).collect();
        lift_common(blocks, &kept)?
    };
    Ok(ProjectedCommon {
        basis,
        projected,
        accepted,
        verification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_principal_angle, orthonormality_error};
    use crate::multiblock::{generate_synthetic, validate, SyntheticSpec};

    #[test]
    fn identity_plan_leaves_blocks_unchanged() {
        let spec = SyntheticSpec::uniform(30, 2, 5, 1, 3, 1);
        let (mb, _) = generate_synthetic(&spec).unwrap();
        let plan = ProjectionPlan::from_matrix(DMatrix::identity(30, 30));
        assert_eq!(project_blocks(&mb, &plan).unwrap(), mb);
    }

    #[test]
    fn projection_keeps_rank() {
        let spec = SyntheticSpec::uniform(400, 3, 20, 2, 6, 2);
        let (mb, _) = generate_synthetic(&spec).unwrap();
        let plan = ProjectionPlan::gaussian(400, 30, 9).unwrap();
        let pb = project_blocks(&mb, &plan).unwrap();
        for y in pb.matrices() {
            let s = linalg::thin_svd(y).s;
            assert!(s[5] > 1e-6 * s[0]);
            assert!(s[6] < 1e-12 * s[0]);
        }
    }

    #[test]
    fn zero_block_stays_zero_and_mismatch_errors() {
        let mb = validate(vec![DMatrix::zeros(20, 3), DMatrix::from_element(20, 2, 1.0)]).unwrap();
        let plan = ProjectionPlan::gaussian(20, 5, 0).unwrap();
        let pb = project_blocks(&mb, &plan).unwrap();
        assert_eq!(pb.blocks()[0].values(), &DMatrix::<f64>::zeros(5, 3));
        let wrong = ProjectionPlan::gaussian(21, 5, 0).unwrap();
        assert!(matches!(project_blocks(&mb, &wrong), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn plan_checks_dimension() {
        let plan = ProjectionPlan::gaussian(100, 8, 0).unwrap();
        assert!(plan.check(8).is_err());
        assert!(plan.check(7).is_ok());
        assert!(ProjectionPlan::gaussian(10, 11, 0).is_err());
    }

    #[test]
    fn noise_free_lift_recovers_truth() {
        let spec = SyntheticSpec::uniform(2000, 4, 25, 3, 7, 4);
        let (mb, truth) = generate_synthetic(&spec).unwrap();
        let plan = ProjectionPlan::gaussian(2000, 40, 1).unwrap();
        let out = projected_common(
            &mb,
            &plan,
            &RankChoice::Revealing,
            &CommonSolver::Cobe(CobeConfig::default()),
            1e-10,
        )
        .unwrap();
        assert_eq!(out.basis.count(), 3);
        assert!(out.accepted.iter().all(|&a| a));
        assert!(max_principal_angle(&out.basis.a_bar, &truth.common_basis) < 1e-6);
        assert!(orthonormality_error(&out.basis.a_bar) < 1e-10);
        assert!(out.verification.iter().all(|&r| r < 1e-16));
        // completeness: Y_n W_n = Ā implies P Y_n W_n = P Ā
        for (y, w) in mb.matrices().zip(&out.basis.loadings) {
            let lhs = plan.matrix() * (y * w);
            let rhs = plan.matrix() * &out.basis.a_bar;
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn degenerate_and_empty_lifts() {
        let spec = SyntheticSpec::uniform(50, 2, 6, 1, 3, 3);
        let (mb, _) = generate_synthetic(&spec).unwrap();
        let zeros = vec![DMatrix::zeros(6, 1), DMatrix::zeros(6, 1)];
        assert!(matches!(lift_common(&mb, &zeros), Err(Error::DegenerateLift { component: 0 })));
        let empty = vec![DMatrix::zeros(6, 0), DMatrix::zeros(6, 0)];
        assert_eq!(lift_common(&mb, &empty).unwrap().count(), 0);
    }

    #[test]
    fn zero_tolerance_rejects_noisy_component() {
        let spec = SyntheticSpec::uniform(300, 3, 20, 1, 5, 8).with_snr(20.0);
        let (mb, truth) = generate_synthetic(&spec).unwrap();
        let a = truth.common_basis.column(0).into_owned();
        let w: Vec<DVector<f64>> = mb
            .matrices()
            .map(|y| linalg::lstsq(y, &a, 1e-10))
            .collect();
        let (ok, residual) = verify_common(&mb, &w, &a, 0.0);
        assert!(!ok && residual > 0.0);
    }

    /// Blocks whose projections share a column exactly while the raw blocks
    /// differ by a direction in the null space of `P`.
    fn fake_common(rows: usize, i_p: usize, seed: u64) -> (MultiBlock, ProjectionPlan) {
        let plan = ProjectionPlan::gaussian(rows, i_p, seed).unwrap();
        let mut g = rng::stream(seed, 1);
        // i_p + 1 orthonormal decoys are dependent after projection
        let decoys = rng::gaussian_matrix(rows, i_p + 1, &mut g).qr().q();
        let pd = plan.matrix() * &decoys;
        let row_space = linalg::orthonormal_basis(&pd.transpose(), 1e-12);
        let r = rng::gaussian_vector(i_p + 1, &mut g);
        let null_coeff = &r - &row_space * row_space.tr_mul(&r);
        let v = &decoys * null_coeff;
        let v = v.normalize() * 3.0;
        let u = rng::gaussian_vector(rows, &mut g).normalize();
        let y1 = linalg::hstack(&[
            &DMatrix::from_column_slice(rows, 1, u.as_slice()),
            &rng::gaussian_matrix(rows, 2, &mut g),
        ]);
        let fake = &u + &v;
        let y2 = linalg::hstack(&[
            &DMatrix::from_column_slice(rows, 1, fake.as_slice()),
            &rng::gaussian_matrix(rows, 2, &mut g),
        ]);
        (validate(vec![y1, y2]).unwrap(), plan)
    }

    #[test]
    fn fake_common_feature_is_rejected() {
        let (mb, plan) = fake_common(500, 20, 5);
        let out = projected_common(
            &mb,
            &plan,
            &RankChoice::Revealing,
            &CommonSolver::Cobec(CobecConfig::new(1)),
            1e-6,
        )
        .unwrap();
        assert!(out.projected.residuals[0] < 1e-20, "projected blocks share a column");
        assert!(out.verification[0] > 0.1);
        assert_eq!(out.accepted, vec![false]);
        assert_eq!(out.basis.count(), 0);
    }
}
