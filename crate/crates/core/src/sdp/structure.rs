//! Block structure of the decomposition variable and the linear map assembling it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{BipartiteDag, BlockPartition};
use crate::linalg::{embed_add, principal};

/// Coordinates of each structured block inside the covariance space: one remainder
/// block per observable, then one block per latent covering its children.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    size: usize,
    remainder: Vec<Vec<usize>>,
    latent: Vec<Vec<usize>>,
}

impl BlockLayout {
    pub fn new(dag: &BipartiteDag, partition: &BlockPartition) -> Result<Self> {
        dag.check_partition(partition)?;
        let remainder = (0..partition.num_blocks()).map(|m| partition.range(m).collect()).collect();
        let latent = (0..dag.num_latents())
            .map(|n| dag.support_projector(partition, n))
            .collect::<Result<_>>()?;
        Ok(Self { size: partition.total(), remainder, latent })
    }

    /// Layout over `dims` (zero allowed) with latent supports given as observable sets.
    pub(crate) fn from_dims(dims: &[usize], hyperedges: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &d in dims {
            offsets.push(acc);
            acc += d;
        }
        let range = |m: usize| offsets[m]..offsets[m] + dims[m];
        Self {
            size: acc,
            remainder: (0..dims.len()).map(|m| range(m).collect()).collect(),
            latent: hyperedges.iter().map(|e| e.iter().flat_map(|&m| range(m)).collect()).collect(),
        }
    }

    /// Dimension of the covariance space.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn remainder_coords(&self) -> &[Vec<usize>] {
        &self.remainder
    }

    pub fn latent_coords(&self) -> &[Vec<usize>] {
        &self.latent
    }

    /// All blocks, remainder blocks first.
    pub fn blocks(&self) -> impl Iterator<Item = &[usize]> {
        self.remainder.iter().chain(&self.latent).map(Vec::as_slice)
    }

    pub fn num_blocks(&self) -> usize {
        self.remainder.len() + self.latent.len()
    }

    /// Number of blocks covering each entry of the covariance space.
    pub fn coverage(&self) -> DMatrix<f64> {
        let mut count = DMatrix::zeros(self.size, self.size);
        for b in self.blocks() {
            for &i in b {
                for &j in b {
                    count[(i, j)] += 1.0;
                }
            }
        }
        count
    }

    pub fn zero_variable(&self) -> StructuredVariable {
        StructuredVariable {
            blocks: self.blocks().map(|b| DMatrix::zeros(b.len(), b.len())).collect(),
            num_remainder: self.remainder.len(),
        }
    }

    fn check(&self, z: &StructuredVariable) -> Result<()> {
        if z.num_remainder != self.remainder.len()
            || z.blocks.len() != self.num_blocks()
            || z.blocks.iter().zip(self.blocks()).any(|(m, b)| m.nrows() != b.len() || m.ncols() != b.len())
        {
            return Err(Error::DimensionMismatch("structured variable does not fit the layout".into()));
        }
        Ok(())
    }
}

/// Remainder blocks followed by latent blocks, each in its own local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredVariable {
    blocks: Vec<DMatrix<f64>>,
    num_remainder: usize,
}

impl StructuredVariable {
    pub fn new(remainder: Vec<DMatrix<f64>>, latent: Vec<DMatrix<f64>>) -> Self {
        let num_remainder = remainder.len();
        Self { blocks: remainder.into_iter().chain(latent).collect(), num_remainder }
    }

    pub fn remainder_blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks[..self.num_remainder]
    }

    pub fn latent_blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks[self.num_remainder..]
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Sum of blockwise Frobenius inner products.
    pub fn dot(&self, other: &Self) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dot(b)).sum()
    }
}

/// Sum of all blocks embedded at their coordinates.
pub fn constraint_map(layout: &BlockLayout, z: &StructuredVariable) -> Result<DMatrix<f64>> {
    layout.check(z)?;
    Ok(assemble(layout, z.blocks()))
}

pub(crate) fn assemble(layout: &BlockLayout, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(layout.size, layout.size);
    for (b, coords) in blocks.iter().zip(layout.blocks()) {
        embed_add(&mut out, b, coords);
    }
    out
}

/// Compressions of `x` onto every block.
pub fn adjoint_map(layout: &BlockLayout, x: &DMatrix<f64>) -> Result<StructuredVariable> {
    if x.nrows() != layout.size || x.ncols() != layout.size {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} matrix for a layout of size {}",
            x.nrows(),
            x.ncols(),
            layout.size
        )));
    }
    Ok(StructuredVariable {
        blocks: layout.blocks().map(|b| principal(x, b)).collect(),
        num_remainder: layout.remainder.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle_scalar() -> BlockLayout {
        BlockLayout::new(&BipartiteDag::triangle(), &BlockPartition::scalar(3).unwrap()).unwrap()
    }

    #[test]
    fn zero_maps_to_zero() {
        let l = triangle_scalar();
        assert_eq!(constraint_map(&l, &l.zero_variable()).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn no_latents_assembles_block_diagonal() {
        let dag = BipartiteDag::new(2, vec![]).unwrap();
        let l = BlockLayout::new(&dag, &BlockPartition::new(vec![2, 1]).unwrap()).unwrap();
        let z = StructuredVariable::new(
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]), DMatrix::from_element(1, 1, 4.0)],
            vec![],
        );
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 3.0, 0.0, 0.0, 0.0, 4.0]);
        assert_eq!(constraint_map(&l, &z).unwrap(), want);
    }

    #[test]
    fn triangle_components_build_reduced_family_matrix() {
        let l = triangle_scalar();
        let p: f64 = 0.4;
        let c = (1.0 - p).powi(2);
        let half = DMatrix::from_row_slice(2, 2, &[0.5, c, c, 0.5]);
        let z = StructuredVariable::new(vec![DMatrix::zeros(1, 1); 3], vec![half; 3]);
        let want = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { c });
        assert!((constraint_map(&l, &z).unwrap() - want).amax() < 1e-15);
    }

    #[test]
    fn adjoint_examples() {
        let l = triangle_scalar();
        let a = adjoint_map(&l, &DMatrix::identity(3, 3)).unwrap();
        assert!(a.blocks().iter().all(|b| *b == DMatrix::identity(b.nrows(), b.nrows())));
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let a = adjoint_map(&l, &diag).unwrap();
        assert_eq!(a.latent_blocks()[0], DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn coverage_counts_blocks() {
        let cov = triangle_scalar().coverage();
        assert_eq!(cov[(0, 0)], 3.0);
        assert_eq!(cov[(0, 1)], 1.0);
        let empty = BlockLayout::new(&BipartiteDag::new(2, vec![]).unwrap(), &BlockPartition::scalar(2).unwrap()).unwrap();
        assert_eq!(empty.coverage()[(0, 1)], 0.0);
    }
}
