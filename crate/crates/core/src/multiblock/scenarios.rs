//! Desk-scale experiment fixtures: linked source separation with periodic
//! sources, nonnegative overlay images, and labelled sample sets for the
//! classification and clustering pipelines.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{add_noise_with, MatrixBlock, MultiBlock};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, gaussian_matrix, uniform_matrix};

/// Number of shared periodic sources in the linked-BSS scenario.
pub const PERIODIC_SOURCES: usize = 4;

/// Sine, square, sawtooth and amplitude-modulated sine, each standardised
/// to zero mean and unit variance. Their lag-1 autocorrelations are roughly
/// 0.995, 0.86, 0.57 and 0.38.
pub fn periodic_sources(rows: usize) -> DMatrix<f64> {
    let mut s = DMatrix::from_fn(rows, PERIODIC_SOURCES, |t, k| {
        let t = t as f64;
        match k {
            0 => (2.0 * PI * t / 64.0).sin(),
            1 => {
                let v = (2.0 * PI * t / 29.0 + 0.3).sin();
                if v >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            2 => 2.0 * (t / 13.0).fract() - 1.0,
            _ => (2.0 * PI * t / 5.3).sin() * (1.0 + 0.8 * (2.0 * PI * t / 400.0).sin()),
        }
    });
    standardize_columns(&mut s);
    s
}

pub(crate) fn standardize_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 0.0 {
            col.unscale_mut(sd);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkedBssSpec {
    pub rows: usize,
    pub blocks: usize,
    pub cols: usize,
    /// Gaussian individual components per block.
    pub individual: usize,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for LinkedBssSpec {
    fn default() -> Self {
        Self {
            rows: 5000,
            blocks: 10,
            cols: 50,
            individual: 6,
            snr_db: Some(20.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkedBssData {
    pub blocks: MultiBlock,
    /// The shared sources, `I × 4`.
    pub sources: DMatrix<f64>,
    /// Per-block Gaussian components, `I × individual`.
    pub individual: Vec<DMatrix<f64>>,
    /// Per-block mixing `B_n`, `J × (4 + individual)`.
    pub mixings: Vec<DMatrix<f64>>,
}

impl LinkedBssData {
    pub fn latent_rank(&self) -> usize {
        PERIODIC_SOURCES + self.individual.first().map_or(0, |m| m.ncols())
    }
}

/// `Y_n = [S G_n] B_nᵀ + E_n`: shared periodic sources `S`, Gaussian
/// individual components `G_n`, Gaussian mixing and white noise at the
/// requested per-block SNR.
pub fn linked_bss(spec: &LinkedBssSpec) -> Result<LinkedBssData> {
    let rank = PERIODIC_SOURCES + spec.individual;
    if spec.blocks < 2 || spec.cols < rank || spec.rows <= rank {
        return Err(Error::InvalidSpec(format!(
            "linked-BSS needs >= 2 blocks, cols >= {rank} and rows > {rank}"
        )));
    }
    let sources = periodic_sources(spec.rows);
    let mut blocks = Vec::with_capacity(spec.blocks);
    let mut individual = Vec::with_capacity(spec.blocks);
    let mut mixings = Vec::with_capacity(spec.blocks);
    for n in 0..spec.blocks {
        let mut r = rng::stream(spec.seed, 1 + n as u64);
        let g = gaussian_matrix(spec.rows, spec.individual, &mut r);
        let b = gaussian_matrix(spec.cols, rank, &mut r);
        let signal = linalg::hstack(&[&sources, &g]) * b.transpose();
        let y = match spec.snr_db {
            Some(snr) => {
                let mut re = rng::stream(spec.seed, (1 << 32) + n as u64);
                add_noise_with(&signal, snr, &mut re)?
            }
            None => signal,
        };
        blocks.push(MatrixBlock::new(y)?);
        individual.push(g);
        mixings.push(b);
    }
    Ok(LinkedBssData {
        blocks: MultiBlock::new(blocks)?,
        sources,
        individual,
        mixings,
    })
}

/// Two nonnegative "tissue" images of `side × side` pixels, flattened
/// column-wise into an `side² × 2` matrix: a smooth soft-tissue field and a
/// striped rib pattern.
pub fn overlay_sources(side: usize) -> DMatrix<f64> {
    let s = side as f64;
    DMatrix::from_fn(side * side, 2, |p, k| {
        let (x, y) = ((p / side) as f64 / s, (p % side) as f64 / s);
        match k {
            0 => {
                let blob = |cx: f64, cy: f64| {
                    (-((x - cx).powi(2) + (y - cy).powi(2)) / 0.03).exp()
                };
                0.2 + blob(0.3, 0.5) + blob(0.7, 0.5)
            }
            _ => {
                let phase = 2.0 * PI * (5.0 * y + 1.5 * (x - 0.5).powi(2));
                phase.sin().max(0.0).powi(2)
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlaySpec {
    pub side: usize,
    pub blocks: usize,
    pub cols: usize,
    /// Uniform(0,1) interference images per block.
    pub interference: usize,
    pub seed: u64,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        Self {
            side: 24,
            blocks: 4,
            cols: 20,
            interference: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OverlayData {
    pub blocks: MultiBlock,
    /// The two nonnegative common images, `side² × 2`.
    pub sources: DMatrix<f64>,
}

/// Nonnegative mixtures `Y_n = [S U_n] M_nᵀ` with `S` the two overlay
/// images, `U_n` uniform interference and `M_n` uniform(0,1) mixing.
pub fn overlay_mixtures(spec: &OverlaySpec) -> Result<OverlayData> {
    let rank = 2 + spec.interference;
    if spec.blocks < 2 || spec.cols < rank || spec.side * spec.side <= rank {
        return Err(Error::InvalidSpec(format!(
            "overlay mixtures need >= 2 blocks, cols >= {rank}, side² > {rank}"
        )));
    }
    let sources = overlay_sources(spec.side);
    let pixels = sources.nrows();
    let mut blocks = Vec::with_capacity(spec.blocks);
    for n in 0..spec.blocks {
        let mut r = rng::stream(spec.seed, 1 + n as u64);
        let u = uniform_matrix(pixels, spec.interference, &mut r);
        let m = uniform_matrix(spec.cols, rank, &mut r);
        blocks.push(MatrixBlock::new(linalg::hstack(&[&sources, &u]) * m.transpose())?);
    }
    Ok(OverlayData {
        blocks: MultiBlock::new(blocks)?,
        sources,
    })
}

/// Labelled samples (columns of `samples`) with `labels[t]` in `0..K`.
#[derive(Debug, Clone)]
pub struct LabelledSamples {
    pub samples: Vec<DVector<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterScenario {
    pub dim: usize,
    pub clusters: usize,
    pub per_cluster: usize,
    /// Shared directions present in every sample.
    pub common: usize,
    /// Standard deviation of the per-sample common coefficients.
    pub common_scale: f64,
    /// Norm of each cluster signature.
    pub signature_scale: f64,
    /// Per-entry standard deviation of the sample-specific noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for ClusterScenario {
    fn default() -> Self {
        Self {
            dim: 200,
            clusters: 4,
            per_cluster: 40,
            common: 2,
            common_scale: 10.0,
            signature_scale: 4.0,
            noise_scale: 0.15,
            seed: 0,
        }
    }
}

/// Samples `x_t = G α_t + μ_{k(t)} + σ e_t`: every sample carries a strong
/// shared part `G α_t` with random coefficients, a cluster signature `μ_k`
/// (zero-sum across clusters) and isotropic noise.
pub fn cluster_samples(spec: &ClusterScenario) -> LabelledSamples {
    let mut r = rng::stream(spec.seed, 0);
    let g = orthonormal(spec.dim, spec.common, &mut r);
    let mut mu = gaussian_matrix(spec.dim, spec.clusters, &mut r);
    let mean = mu.column_mean();
    for mut col in mu.column_iter_mut() {
        col -= &mean;
        let n = col.norm();
        col *= spec.signature_scale / n;
    }
    let mut samples = Vec::with_capacity(spec.clusters * spec.per_cluster);
    let mut labels = Vec::with_capacity(samples.capacity());
    for k in 0..spec.clusters {
        for _ in 0..spec.per_cluster {
            let alpha = rng::gaussian_vector(spec.common, &mut r) * spec.common_scale;
            let e = rng::gaussian_vector(spec.dim, &mut r) * spec.noise_scale;
            samples.push(&g * alpha + mu.column(k) + e);
            labels.push(k);
        }
    }
    LabelledSamples { samples, labels }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassScenario {
    pub dim: usize,
    pub classes: usize,
    pub per_class: usize,
    /// Rank of each class's own subspace.
    pub class_rank: usize,
    /// Directions shared by all classes.
    pub shared_rank: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for ClassScenario {
    fn default() -> Self {
        Self {
            dim: 100,
            classes: 2,
            per_class: 40,
            class_rank: 3,
            shared_rank: 1,
            noise_scale: 0.3,
            seed: 0,
        }
    }
}

/// Class `k` samples `μ_k + U_k β + V γ + σ e`, where `U_k` spans the
/// class's own low-rank structure and `V` is shared by every class.
pub fn class_samples(spec: &ClassScenario) -> LabelledSamples {
    let mut r = rng::stream(spec.seed, 0);
    let shared = gaussian_matrix(spec.dim, spec.shared_rank, &mut r);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for k in 0..spec.classes {
        let mean = rng::gaussian_vector(spec.dim, &mut r);
        let basis = gaussian_matrix(spec.dim, spec.class_rank, &mut r);
        for _ in 0..spec.per_class {
            let beta = rng::gaussian_vector(spec.class_rank, &mut r);
            let gamma = rng::gaussian_vector(spec.shared_rank, &mut r);
            let e = rng::gaussian_vector(spec.dim, &mut r) * spec.noise_scale;
            samples.push(&mean + &basis * beta + &shared * gamma + e);
            labels.push(k);
        }
    }
    LabelledSamples { samples, labels }
}

fn orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, r: &mut R) -> DMatrix<f64> {
    if cols == 0 {
        return DMatrix::zeros(rows, 0);
    }
    gaussian_matrix(rows, cols, r).qr().q()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_sources_are_standardised_and_nearly_uncorrelated() {
        let s = periodic_sources(5000);
        let g = s.tr_mul(&s) / 5000.0;
        for i in 0..4 {
            assert!((g[(i, i)] - 1.0).abs() < 1e-12);
            assert!(s.column(i).sum().abs() < 1e-8);
            for j in 0..i {
                assert!(g[(i, j)].abs() < 0.01);
            }
        }
    }

    #[test]
    fn linked_bss_blocks_have_requested_shape_and_snr() {
        let spec = LinkedBssSpec {
            rows: 300,
            blocks: 3,
            cols: 20,
            ..LinkedBssSpec::default()
        };
        let d = linked_bss(&spec).unwrap();
        assert_eq!(d.blocks.col_counts(), vec![20; 3]);
        assert_eq!(d.latent_rank(), 10);
        for (n, y) in d.blocks.matrices().enumerate() {
            let signal = linalg::hstack(&[&d.sources, &d.individual[n]]) * d.mixings[n].transpose();
            assert!((super::super::snr_db(&signal, y) - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn overlay_data_is_nonnegative() {
        let d = overlay_mixtures(&OverlaySpec::default()).unwrap();
        assert!(d.sources.iter().all(|&x| x >= 0.0));
        assert!(d.blocks.matrices().all(|m| m.iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn labelled_generators_are_deterministic() {
        let a = cluster_samples(&ClusterScenario::default());
        let b = cluster_samples(&ClusterScenario::default());
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.labels.len(), 160);
        let c = class_samples(&ClassScenario::default());
        assert_eq!(c.samples.len(), 80);
    }
}
