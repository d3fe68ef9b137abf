//! Experiment harnesses: the linked source separation comparison, the
//! projected-path comparison and the correlation-bound perturbation suite.
//! Timings are reported separately from metrics so metric output stays
//! reproducible.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::apps::sir;
use crate::cifa::{abs_correlations, linked_bss, Amuse};
use crate::cobe::{cobe, loadings_for, CobeConfig};
use crate::cobec::{cobec, CobecConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::multiblock::scenarios::{self, LinkedBssSpec, PERIODIC_SOURCES};
use crate::multiblock::{generate_synthetic, validate, MultiBlock, SyntheticSpec};
use crate::preprocess::{preprocess, OrthoFactor, RankChoice};
use crate::rng;
use crate::scaling::{projected_common, CommonSolver, ProjectionPlan};

/// Leading `c` principal directions of the stacked cleaned blocks, computed
/// from the compact form `[Q_1 diag(σ_1) … Q_N diag(σ_N)]`.
pub fn stacked_pca(factors: &[OrthoFactor], c: usize) -> Result<DMatrix<f64>> {
    let scaled: Vec<DMatrix<f64>> = factors
        .iter()
        .map(|f| &f.q * DMatrix::from_diagonal(&f.singular_values))
        .collect();
    let stacked = linalg::hstack(&scaled.iter().collect::<Vec<_>>());
    if c > stacked.ncols().min(stacked.nrows()) {
        return Err(Error::RankTooLarge {
            requested: c,
            max: stacked.ncols().min(stacked.nrows()),
        });
    }
    Ok(linalg::thin_svd(&stacked).u.columns(0, c).into_owned())
}

/// One-to-one assignment of estimated columns to sources maximising the
/// total absolute correlation; entry `k` is the estimate index for source `k`.
pub fn match_sources(sources: &DMatrix<f64>, estimates: &DMatrix<f64>) -> Vec<Option<usize>> {
    let corr = abs_correlations(sources, estimates);
    let k = sources.ncols().max(estimates.ncols());
    let weights = Matrix::from_fn(k, k, |(i, j)| {
        if i < corr.nrows() && j < corr.ncols() {
            (corr[(i, j)] * 1e12).round() as i64
        } else {
            0
        }
    });
    let (_, assign) = kuhn_munkres(&weights);
    (0..sources.ncols())
        .map(|i| Some(assign[i]).filter(|&j| j < estimates.ncols()))
        .collect()
}

/// SIR in dB of each source against its matched estimate. Unmatched sources
/// get `None`.
pub fn matched_sirs(sources: &DMatrix<f64>, estimates: &DMatrix<f64>) -> Result<Vec<Option<f64>>> {
    match_sources(sources, estimates)
        .into_iter()
        .enumerate()
        .map(|(k, j)| match j {
            Some(j) => {
                let s: DVector<f64> = sources.column(k).into_owned();
                let e: DVector<f64> = estimates.column(j).into_owned();
                sir(&s, &e).map(Some)
            }
            None => Ok(None),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkedBssConfig {
    pub scenario: LinkedBssSpec,
    /// Preprocessing rank; `None` uses the scenario's latent rank.
    pub rank: Option<usize>,
    /// Candidates examined by the automatic count.
    pub lookahead: usize,
    /// `ε` gating the automatic count.
    pub epsilon: f64,
}

impl Default for LinkedBssConfig {
    fn default() -> Self {
        Self {
            scenario: LinkedBssSpec::default(),
            rank: None,
            lookahead: 8,
            epsilon: 0.5,
        }
    }
}

/// Metrics of one linked-BSS run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedBssRun {
    pub seed: u64,
    /// Count chosen by the gap detector.
    pub detected: usize,
    /// `f_k / N` of the examined candidates.
    pub f_values: Vec<f64>,
    /// Per-source SIR (dB) after separation of each method's common basis.
    pub sir_cobe: Vec<f64>,
    pub sir_cobec: Vec<f64>,
    pub sir_pca: Vec<f64>,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkedBssTimings {
    pub preprocess: f64,
    pub cobe: f64,
    pub cobec: f64,
    pub pca: f64,
}

fn separated_sirs(sources: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<Vec<f64>> {
    let f = linked_bss(basis, &Amuse::default())?;
    Ok(matched_sirs(sources, &f)?
        .into_iter()
        .map(|s| s.unwrap_or(f64::NEG_INFINITY))
        .collect())
}

/// Runs COBE, COBEc and stacked PCA, each followed by AMUSE, on one
/// realisation of the scenario with the given seed.
pub fn run_linked_bss(cfg: &LinkedBssConfig, seed: u64) -> Result<(LinkedBssRun, LinkedBssTimings)> {
    let spec = LinkedBssSpec {
        seed,
        ..cfg.scenario.clone()
    };
    let data = scenarios::linked_bss(&spec)?;
    let rank = cfg.rank.unwrap_or_else(|| data.latent_rank());
    let mut timings = LinkedBssTimings::default();

    let t = Instant::now();
    let factors = preprocess(&data.blocks, &RankChoice::Fixed(rank))?;
    timings.preprocess = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let auto = CobeConfig {
        epsilon: cfg.epsilon,
        max_components: cfg.lookahead,
        auto_stop: true,
        seed,
        ..CobeConfig::default()
    };
    let counted = cobe(&factors, &auto)?;
    let n = factors.len() as f64;
    let f_values: Vec<f64> = counted.diagnostics.candidate_residuals.iter().map(|f| f / n).collect();
    // every f_k / N is at most 1, so ε = 1 keeps exactly the first four
    let fixed = CobeConfig {
        epsilon: 1.0,
        max_components: PERIODIC_SOURCES,
        seed,
        ..CobeConfig::default()
    };
    let seq = cobe(&factors, &fixed)?;
    timings.cobe = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let alt = cobec(&factors, &CobecConfig::new(PERIODIC_SOURCES).with_seed(seed))?;
    timings.cobec = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let pca = stacked_pca(&factors, PERIODIC_SOURCES)?;
    timings.pca = t.elapsed().as_secs_f64();

    let run = LinkedBssRun {
        seed,
        detected: counted.count(),
        f_values,
        sir_cobe: separated_sirs(&data.sources, &seq.a_bar)?,
        sir_cobec: separated_sirs(&data.sources, &alt.a_bar)?,
        sir_pca: separated_sirs(&data.sources, &pca)?,
    };
    Ok((run, timings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionBenchConfig {
    pub rows: usize,
    pub blocks: usize,
    pub cols: usize,
    pub rank: usize,
    pub common: usize,
    pub snr_db: f64,
    /// Verification tolerance on `max_n ‖Y_n w − ā‖²`.
    pub tol: f64,
}

impl Default for ProjectionBenchConfig {
    fn default() -> Self {
        Self {
            rows: 5000,
            blocks: 4,
            cols: 100,
            rank: 8,
            common: 3,
            snr_db: 20.0,
            tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRun {
    pub i_p: usize,
    pub accepted: usize,
    /// Cosine between each lifted column and the unprojected common span.
    pub span_correlations: Vec<f64>,
    pub verification: Vec<f64>,
}

/// Solves on the full blocks once, then on each projected size in `sizes`.
/// Returns per-size metrics and the wall-clock seconds of the full path
/// followed by each projected path.
pub fn run_projection(
    cfg: &ProjectionBenchConfig,
    sizes: &[usize],
    seed: u64,
) -> Result<(Vec<ProjectionRun>, Vec<f64>)> {
    let spec = SyntheticSpec::uniform(cfg.rows, cfg.blocks, cfg.cols, cfg.common, cfg.rank, seed)
        .with_snr(cfg.snr_db);
    let (mb, _) = generate_synthetic(&spec)?;
    let solver = CobeConfig {
        epsilon: 1.0,
        max_components: cfg.common,
        seed,
        ..CobeConfig::default()
    };
    let mut seconds = Vec::with_capacity(sizes.len() + 1);

    let t = Instant::now();
    let factors = preprocess(&mb, &RankChoice::Fixed(cfg.rank))?;
    let full = cobe(&factors, &solver)?;
    seconds.push(t.elapsed().as_secs_f64());

    let mut runs = Vec::with_capacity(sizes.len());
    for (i, &i_p) in sizes.iter().enumerate() {
        let t = Instant::now();
        let plan = ProjectionPlan::gaussian(cfg.rows, i_p, rng::run_seed(seed, 1 + i as u64))?;
        let out = projected_common(
            &mb,
            &plan,
            &RankChoice::Fixed(cfg.rank),
            &CommonSolver::Cobe(solver.clone()),
            cfg.tol,
        )?;
        seconds.push(t.elapsed().as_secs_f64());
        let span_correlations = out
            .basis
            .a_bar
            .column_iter()
            .map(|a| {
                let a: DVector<f64> = a.into_owned();
                (full.a_bar.tr_mul(&a)).norm() / a.norm()
            })
            .collect();
        runs.push(ProjectionRun {
            i_p,
            accepted: out.basis.count(),
            span_correlations,
            verification: out.verification,
        });
    }
    Ok((runs, seconds))
}

/// One instance of the correlation-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCase {
    /// Requested distance of `ā` from each block's column space.
    pub target: f64,
    /// `max_n ‖Y_n w_n − ā‖` for the extracted component.
    pub epsilon: f64,
    /// Smallest pairwise correlation of `Y_n w_n`.
    pub min_corr: f64,
    /// `1 − 4ε/(1+ε)`.
    pub bound: f64,
}

impl BoundCase {
    /// The bound applies for `ε ≤ 1/3`.
    pub fn applies(&self) -> bool {
        self.epsilon <= 1.0 / 3.0
    }

    pub fn violated(&self) -> bool {
        self.applies() && self.min_corr < self.bound
    }
}

/// Blocks `[ā + t u_n, G_n]` whose columns all have zero mean, with `u_n`
/// a unit vector orthogonal to `ā` and `G_n` orthogonal to both, so the
/// distance of `ā` from each column space is `t / √(1 + t²)`. COBE extracts
/// one component and the bound is evaluated on its least-squares loadings.
pub fn correlation_bound_case(target: f64, seed: u64) -> Result<BoundCase> {
    const ROWS: usize = 60;
    const BLOCKS: usize = 4;
    const COLS: usize = 5;
    let mut g = rng::stream(seed, 0);
    let centered = |v: DVector<f64>| {
        let m = v.mean();
        v.add_scalar(-m)
    };
    let a = centered(rng::gaussian_vector(ROWS, &mut g)).normalize();
    let mut blocks = Vec::with_capacity(BLOCKS);
    for _ in 0..BLOCKS {
        let mut basis = vec![a.clone()];
        let mut cols = Vec::with_capacity(COLS);
        for j in 0..COLS {
            let mut v = centered(rng::gaussian_vector(ROWS, &mut g));
            for b in &basis {
                v -= b * b.dot(&v);
            }
            let v = v.normalize();
            basis.push(v.clone());
            cols.push(if j == 0 { &a + &v * target } else { v });
        }
        blocks.push(DMatrix::from_columns(&cols));
    }
    let mb: MultiBlock = validate(blocks)?;
    let factors = preprocess(&mb, &RankChoice::Revealing)?;
    let cfg = CobeConfig {
        epsilon: 1.0,
        max_components: 1,
        seed,
        ..CobeConfig::default()
    };
    let fit = cobe(&factors, &cfg)?;
    let a_hat: DVector<f64> = fit.a_bar.column(0).into_owned();
    let loads = loadings_for(&mb, &a_hat)?;
    let epsilon = loads.residuals.iter().copied().fold(0.0, f64::max);
    let projected: Vec<DVector<f64>> = mb.matrices().zip(&loads.w).map(|(y, w)| y * w).collect();
    let mut min_corr = f64::INFINITY;
    for m in 0..projected.len() {
        for n in m + 1..projected.len() {
            min_corr = min_corr.min(linalg::correlation(&projected[m], &projected[n]));
        }
    }
    Ok(BoundCase {
        target,
        epsilon,
        min_corr,
        bound: 1.0 - 4.0 * epsilon / (1.0 + epsilon),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacked_pca_matches_svd_of_concatenated_cleaned_blocks() {
        let spec = SyntheticSpec::uniform(40, 3, 8, 1, 4, 2).with_snr(15.0);
        let (mb, _) = generate_synthetic(&spec).unwrap();
        let f = preprocess(&mb, &RankChoice::Fixed(4)).unwrap();
        let cleaned: Vec<DMatrix<f64>> = f.iter().map(OrthoFactor::cleaned).collect();
        let direct = linalg::hstack(&cleaned.iter().collect::<Vec<_>>());
        let svd = direct.svd(true, false);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.unwrap();
        let top = DMatrix::from_fn(40, 2, |i, j| u[(i, order[j])]);
        let got = stacked_pca(&f, 2).unwrap();
        assert!(linalg::max_principal_angle(&got, &top) < 1e-8);
    }

    #[test]
    fn matching_recovers_permutation_and_scaling() {
        let s = scenarios::periodic_sources(500);
        let perm = [2, 0, 3, 1];
        let est = DMatrix::from_fn(500, 4, |i, j| s[(i, perm[j])] * (j as f64 + 1.0) * if j % 2 == 0 { -1.0 } else { 1.0 });
        let m = match_sources(&s, &est);
        for (k, j) in m.iter().enumerate() {
            assert_eq!(perm[j.unwrap()], k);
        }
        let sirs = matched_sirs(&s, &est).unwrap();
        assert!(sirs.iter().all(|v| *v == Some(crate::apps::SIR_CAP_DB)));
        // fewer estimates than sources leaves one unmatched
        let two = est.columns(0, 2).into_owned();
        assert_eq!(matched_sirs(&s, &two).unwrap().iter().filter(|v| v.is_none()).count(), 2);
    }

    #[test]
    fn bound_case_distance_matches_construction() {
        for target in [0.01, 0.1, 0.3] {
            let case = correlation_bound_case(target, 4).unwrap();
            assert!(case.applies());
            assert!(!case.violated(), "{case:?}");
            assert!(case.epsilon <= target / (1.0 + target * target).sqrt() + 1e-9, "{case:?}");
        }
    }
}
