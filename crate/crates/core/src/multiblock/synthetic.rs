use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MatrixBlock, MultiBlock};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, gaussian_matrix};

const COMMON_STREAM: u64 = 0;
const BLOCK_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 1 << 32;

/// Parameters of the orthonormal linked-factor generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Shared row dimension `I`.
    pub rows: usize,
    /// Column count `J_n` of each block.
    pub cols: Vec<usize>,
    /// Number of common components `c`.
    pub common: usize,
    /// Latent rank `R_n` of each block (common + individual).
    pub ranks: Vec<usize>,
    /// Per-block SNR of added white noise; `None` is noise-free.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// Equal-sized blocks.
    pub fn uniform(rows: usize, blocks: usize, cols: usize, common: usize, rank: usize, seed: u64) -> Self {
        Self {
            rows,
            cols: vec![cols; blocks],
            common,
            ranks: vec![rank; blocks],
            snr_db: None,
            seed,
        }
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = Some(snr_db);
        self
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.cols.len() < 2 {
            return bad(format!("need at least 2 blocks, got {}", self.cols.len()));
        }
        if self.ranks.len() != self.cols.len() {
            return bad(format!(
                "ranks has {} entries but cols has {}",
                self.ranks.len(),
                self.cols.len()
            ));
        }
        if self.rows < 2 {
            return bad(format!("rows must be at least 2, got {}", self.rows));
        }
        for (n, (&j, &r)) in self.cols.iter().zip(&self.ranks).enumerate() {
            if j == 0 {
                return bad(format!("block {n} has zero columns"));
            }
            if r > (self.rows - 1).min(j) {
                return bad(format!(
                    "block {n}: rank {r} exceeds min(rows - 1, cols) = {}",
                    (self.rows - 1).min(j)
                ));
            }
            if r < self.common {
                return bad(format!("block {n}: rank {r} is below common count {}", self.common));
            }
            if r == 0 {
                return bad(format!("block {n} has rank 0"));
            }
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return bad("snr_db must be finite".into());
            }
        }
        Ok(())
    }
}

/// The factors a synthetic [`MultiBlock`] was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `Ā`, `I × c`, orthonormal columns.
    pub common_basis: DMatrix<f64>,
    /// `Ă_n`, `I × (R_n − c)`, orthonormal and orthogonal to `Ā`.
    pub individual_bases: Vec<DMatrix<f64>>,
    /// `B_n`, `J_n × R_n`, so that `Y_n = [Ā Ă_n] B_nᵀ` before noise.
    pub mixings: Vec<DMatrix<f64>>,
    /// Raw common sources before orthonormalisation, when the generator has them.
    pub common_sources: Option<DMatrix<f64>>,
}

impl GroundTruth {
    /// `[Ā Ă_n]` for block `n`.
    pub fn loading(&self, n: usize) -> DMatrix<f64> {
        linalg::hstack(&[&self.common_basis, &self.individual_bases[n]])
    }

    /// Noise-free block `n`.
    pub fn signal(&self, n: usize) -> DMatrix<f64> {
        self.loading(n) * self.mixings[n].transpose()
    }
}

/// Generates `Y_n = [Ā Ă_n] B_nᵀ (+ E_n)`.
///
/// `Ā` is a QR-orthonormalised Gaussian draw. Each `Ă_n` is a Gaussian draw
/// deflated by `(I − ĀĀᵀ)` and then orthonormalised, so `ĀᵀĂ_n = 0` to
/// round-off. Block `n` draws from its own stream, noise from another.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(MultiBlock, GroundTruth)> {
    spec.check()?;
    let i = spec.rows;
    let c = spec.common;

    let mut rng0 = rng::stream(spec.seed, COMMON_STREAM);
    let common_basis = orthonormal_draw(i, c, None, &mut rng0);

    let mut individual_bases = Vec::with_capacity(spec.cols.len());
    let mut mixings = Vec::with_capacity(spec.cols.len());
    let mut blocks = Vec::with_capacity(spec.cols.len());
    for (n, (&j, &r)) in spec.cols.iter().zip(&spec.ranks).enumerate() {
        let mut rng_n = rng::stream(spec.seed, BLOCK_STREAM + n as u64);
        let ind = orthonormal_draw(i, r - c, Some(&common_basis), &mut rng_n);
        let mixing = gaussian_matrix(j, r, &mut rng_n);
        let signal = linalg::hstack(&[&common_basis, &ind]) * mixing.transpose();
        let values = match spec.snr_db {
            Some(snr) => {
                let mut rng_e = rng::stream(spec.seed, NOISE_STREAM + n as u64);
                add_noise_with(&signal, snr, &mut rng_e)?
            }
            None => signal,
        };
        blocks.push(MatrixBlock::new(values)?);
        individual_bases.push(ind);
        mixings.push(mixing);
    }
    let truth = GroundTruth {
        common_basis,
        individual_bases,
        mixings,
        common_sources: None,
    };
    Ok((MultiBlock::new(blocks)?, truth))
}

/// Orthonormal `rows × cols` Gaussian draw, optionally made orthogonal to
/// the columns of `against`.
fn orthonormal_draw<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    against: Option<&DMatrix<f64>>,
    rng: &mut R,
) -> DMatrix<f64> {
    if cols == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let mut g = gaussian_matrix(rows, cols, rng);
    let deflate = |g: &mut DMatrix<f64>| {
        if let Some(a) = against {
            if a.ncols() > 0 {
                *g -= a * a.tr_mul(g);
            }
        }
    };
    deflate(&mut g);
    let mut q = g.qr().q();
    // second pass brings ĀᵀĂ to round-off level
    deflate(&mut q);
    q.qr().q()
}

/// Adds white Gaussian noise scaled so the realised SNR is exactly `snr_db`.
pub fn add_noise(block: &MatrixBlock, snr_db: f64, seed: u64) -> Result<MatrixBlock> {
    let mut rng = rng::stream(seed, NOISE_STREAM);
    MatrixBlock::new(add_noise_with(block.values(), snr_db, &mut rng)?)
}

pub fn add_noise_with<R: Rng + ?Sized>(
    signal: &DMatrix<f64>,
    snr_db: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!("snr_db must be finite, got {snr_db}")));
    }
    let energy = signal.norm_squared();
    if energy == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let mut noise = gaussian_matrix(signal.nrows(), signal.ncols(), rng);
    let target = energy / 10f64.powf(snr_db / 10.0);
    noise *= (target / noise.norm_squared()).sqrt();
    Ok(signal + noise)
}

/// `10·log10(‖signal‖² / ‖noisy − signal‖²)`.
pub fn snr_db(signal: &DMatrix<f64>, noisy: &DMatrix<f64>) -> f64 {
    10.0 * (signal.norm_squared() / (noisy - signal).norm_squared()).log10()
}
