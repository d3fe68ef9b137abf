//! Linked data sets: blocks that share a row dimension.

mod io;
pub mod scenarios;
mod synthetic;

pub use io::{read_matrix, read_multiblock, write_matrix, write_multiblock, MultiBlockMeta};
pub use synthetic::{add_noise, add_noise_with, generate_synthetic, snr_db, GroundTruth, SyntheticSpec};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A finite, non-empty dense matrix `Y_n` (rows = samples of the shared
/// dimension, columns = the block's own variables).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBlock(DMatrix<f64>);

impl MatrixBlock {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        check_block(0, &values)?;
        Ok(Self(values))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl AsRef<DMatrix<f64>> for MatrixBlock {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn check_block(index: usize, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::EmptyMatrix(format!(
            "block {index} is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    // nalgebra storage is column-major
    if let Some(pos) = m.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            block: index,
            row: pos % m.nrows(),
            col: pos / m.nrows(),
        });
    }
    Ok(())
}

/// Ordered collection of at least two blocks with a common row count.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBlock {
    blocks: Vec<MatrixBlock>,
    shared_rows: usize,
}

impl MultiBlock {
    pub fn new(blocks: Vec<MatrixBlock>) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(Error::TooFewBlocks(blocks.len()));
        }
        let shared_rows = blocks[0].rows();
        for (i, b) in blocks.iter().enumerate() {
            if b.rows() != shared_rows {
                return Err(Error::DimensionMismatch {
                    block: i,
                    expected: shared_rows,
                    found: b.rows(),
                });
            }
        }
        Ok(Self {
            blocks,
            shared_rows,
        })
    }

    pub fn blocks(&self) -> &[MatrixBlock] {
        &self.blocks
    }

    pub fn shared_rows(&self) -> usize {
        self.shared_rows
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn col_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(MatrixBlock::cols).collect()
    }

    pub fn matrices(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.blocks.iter().map(MatrixBlock::values)
    }

    pub fn into_blocks(self) -> Vec<MatrixBlock> {
        self.blocks
    }
}

/// Checks a list of raw matrices and assembles a [`MultiBlock`].
///
/// Row counts are compared before entries are scanned, so a mismatch is
/// reported even if some block also contains NaN.
pub fn validate(blocks: Vec<DMatrix<f64>>) -> Result<MultiBlock> {
    if blocks.len() < 2 {
        return Err(Error::TooFewBlocks(blocks.len()));
    }
    let rows = blocks[0].nrows();
    for (i, b) in blocks.iter().enumerate() {
        if b.nrows() != rows {
            return Err(Error::DimensionMismatch {
                block: i,
                expected: rows,
                found: b.nrows(),
            });
        }
    }
    for (i, b) in blocks.iter().enumerate() {
        check_block(i, b)?;
    }
    MultiBlock::new(blocks.into_iter().map(MatrixBlock).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_accepts_two_blocks() {
        let mb = validate(vec![DMatrix::from_element(4, 3, 1.0), DMatrix::from_element(4, 3, 2.0)])
            .unwrap();
        assert_eq!(mb.shared_rows(), 4);
        assert_eq!(mb.col_counts(), vec![3, 3]);
    }

    #[test]
    fn validate_rejects_row_mismatch() {
        let err = validate(vec![DMatrix::zeros(4, 3), DMatrix::zeros(5, 3)]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { block: 1, expected: 4, found: 5 }));
    }

    #[test]
    fn validate_rejects_single_block() {
        let err = validate(vec![DMatrix::zeros(4, 3)]).unwrap_err();
        assert!(matches!(err, Error::TooFewBlocks(1)));
    }

    #[test]
    fn validate_rejects_nan_with_position() {
        let mut b = DMatrix::zeros(4, 3);
        b[(2, 1)] = f64::INFINITY;
        let err = validate(vec![DMatrix::zeros(4, 3), b]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { block: 1, row: 2, col: 1 }));
    }

    #[test]
    fn empty_block_is_rejected() {
        assert!(MatrixBlock::new(DMatrix::zeros(0, 3)).is_err());
    }
}
