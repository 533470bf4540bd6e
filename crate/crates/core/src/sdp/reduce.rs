//! Exact facial reduction: compress each observable onto the range of its diagonal block.
//!
//! A PSD decomposition of a PSD matrix must vanish on the kernel of every diagonal
//! block, so solving on the compressed coordinates loses nothing.

use nalgebra::DMatrix;

use crate::features::BlockCovariance;
use crate::linalg::range_basis;

/// Eigenvalues at or below this fraction of `max(1, λmax)` count as kernel.
const RANGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct Reduction {
    /// Block-diagonal `K × K'` matrix with orthonormal columns.
    basis: DMatrix<f64>,
    dims: Vec<usize>,
}

impl Reduction {
    pub(crate) fn new(cov: &BlockCovariance) -> Self {
        let part = cov.partition();
        let bases: Vec<DMatrix<f64>> = (0..part.num_blocks())
            .map(|m| range_basis(&cov.block(m, m), RANGE_TOL))
            .collect();
        let dims: Vec<usize> = bases.iter().map(DMatrix::ncols).collect();
        let mut basis = DMatrix::zeros(part.total(), dims.iter().sum());
        let mut col = 0;
        for (m, b) in bases.iter().enumerate() {
            basis
                .view_mut((part.range(m).start, col), b.shape())
                .copy_from(b);
            col += b.ncols();
        }
        Self { basis, dims }
    }

    /// Reduced dimension of each observable block (possibly zero).
    pub(crate) fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub(crate) fn reduce(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.basis.transpose() * x * &self.basis
    }

    pub(crate) fn lift(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.basis * x * self.basis.transpose()
    }
}
