//! Dense symmetric-matrix helpers shared by the solvers and checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix; empty input yields empty factors.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    if m.nrows() == 0 {
        return SymmetricEigen {
            eigenvectors: DMatrix::zeros(0, 0),
            eigenvalues: DVector::zeros(0),
        };
    }
    SymmetricEigen::new(symmetrized(m))
}

/// Smallest eigenvalue; `+inf` for an empty matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest absolute eigenvalue (0 for an empty matrix).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).eigenvalues.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Relative asymmetry ‖M − Mᵀ‖_max / max(1, ‖M‖_max).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Projection onto the PSD cone by eigenvalue clipping; also returns the smallest eigenvalue.
pub fn psd_clip(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), f64::INFINITY);
    }
    let eig = sym_eigen(m);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return (symmetrized(m), min);
    }
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += lambda * v * v.transpose();
        }
    }
    (symmetrized(&out), min)
}

/// Orthonormal basis (as columns) of the eigenvectors with eigenvalue above `rel_tol · max(1, λmax)`.
pub fn range_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = sym_eigen(m);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cut = rel_tol * lmax.max(1.0);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > cut)
        .collect();
    let mut basis = DMatrix::zeros(m.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(k));
    }
    basis
}

/// Number of eigenvalues above `rel_tol · λmax` (0 for the zero matrix).
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let eig = sym_eigen(m);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if lmax <= 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|&&v| v > rel_tol * lmax).count()
}

/// Principal submatrix on the given coordinates.
pub fn principal(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// `target[idx, idx] += block`.
pub fn embed_add(target: &mut DMatrix<f64>, block: &DMatrix<f64>, idx: &[usize]) {
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            target[(i, j)] += block[(a, b)];
        }
    }
}

/// Frobenius inner product.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Compensated (Kahan–Babuška) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_removes_negative_part() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (c, min) = psd_clip(&m);
        assert!((min + 1.0).abs() < 1e-12);
        assert!((c - DMatrix::from_element(2, 2, 0.5)).amax() < 1e-12);
    }

    #[test]
    fn kahan_beats_naive_on_cancellation() {
        let xs = [1.0, 1e-16, 1e-16, 1e-16, 1e-16, -1.0];
        let k: KahanSum = xs.iter().copied().collect();
        assert!((k.value() - 4e-16).abs() < 1e-30);
    }

    #[test]
    fn rank_and_basis_agree() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let m = &v * v.transpose();
        assert_eq!(numerical_rank(&m, 1e-10), 1);
        let b = range_basis(&m, 1e-12);
        assert_eq!(b.ncols(), 1);
        assert!((b.column(0).dot(&v).abs() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrices_are_harmless() {
        let e = DMatrix::<f64>::zeros(0, 0);
        assert_eq!(min_eigenvalue(&e), f64::INFINITY);
        assert_eq!(spectral_norm(&e), 0.0);
        assert_eq!(psd_clip(&e).0.nrows(), 0);
    }
}
