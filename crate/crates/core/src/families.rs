//! The depolarized perfectly-correlated family in closed form.
//!
//! With orthonormal features, the covariance factorises as `(1/D)·Q ⊗ C(p)` where
//! `Q = I − ccᵀ`, `c = 1̄/√D`, and `C(p)` has unit diagonal and off-diagonal `(1−p)²`.
//! Coordinates are ordered observable-major: block `(m, m')` equals `(C_mm'/D)·Q`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::BlockCovariance;
use crate::graph::BlockPartition;

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("noise level {p} outside [0, 1]")));
    }
    Ok(())
}

/// `M × M` matrix with unit diagonal and off-diagonal entries `(1−p)²`.
pub fn c_matrix(m: usize, p: f64) -> Result<DMatrix<f64>> {
    check_p(p)?;
    if m == 0 {
        return Err(Error::Parameter("at least one observable is required".into()));
    }
    let off = (1.0 - p) * (1.0 - p);
    Ok(DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { off }))
}

/// Projector onto the complement of the uniform direction in `R^D`.
pub fn q_projector(d: usize) -> DMatrix<f64> {
    let inv = 1.0 / d as f64;
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 - inv } else { -inv })
}

/// Family covariance together with its reduced matrix.
#[derive(Debug, Clone)]
pub struct FamilyCovariance {
    pub m: usize,
    pub d: usize,
    pub p: f64,
    pub c: DMatrix<f64>,
    pub cov: BlockCovariance,
}

pub fn family_covariance(m: usize, d: usize, p: f64) -> Result<FamilyCovariance> {
    if d < 2 {
        return Err(Error::Parameter(format!("alphabet size {d} must be at least 2")));
    }
    let c = c_matrix(m, p)?;
    let q = q_projector(d) / d as f64;
    let mut cov = DMatrix::zeros(m * d, m * d);
    for a in 0..m {
        for b in 0..m {
            cov.view_mut((a * d, b * d), (d, d)).copy_from(&(&q * c[(a, b)]));
        }
    }
    let cov = BlockCovariance::new(BlockPartition::new(vec![d; m])?, cov)?;
    Ok(FamilyCovariance { m, d, p, c, cov })
}

/// Smallest noise level at which the triangle admits a decomposition: `1 − 1/√2`.
pub fn triangle_threshold() -> f64 {
    1.0 - std::f64::consts::FRAC_1_SQRT_2
}

/// `[[1/2, (1−p)²], [(1−p)², 1/2]]`.
pub fn pair_matrix(p: f64) -> DMatrix<f64> {
    let off = (1.0 - p) * (1.0 - p);
    DMatrix::from_row_slice(2, 2, &[0.5, off, off, 0.5])
}

/// [`pair_matrix`] is PSD exactly on `[1 − 1/√2, 1 + 1/√2]`.
pub fn pair_matrix_is_psd(p: f64) -> bool {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    (1.0 - r..=1.0 + r).contains(&p)
}
