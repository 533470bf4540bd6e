//! Alternating projections with Dykstra's correction between the structured PSD cone
//! and the affine set `{Z : A(Z) = Cov}`.

use nalgebra::DMatrix;

use super::{assemble, Certifier, ReducedProblem};
use crate::linalg::{principal, psd_clip};

/// Iterations always checked individually before switching to periodic checks.
const EARLY_CHECKS: usize = 20;
const CHECK_EVERY: usize = 10;

/// Runs up to `budget` iterations; returns the number used. Stops as soon as the
/// certifier accepts either a decomposition or a witness.
pub(crate) fn run(problem: &ReducedProblem, budget: usize, cert: &mut Certifier<'_>) -> usize {
    let coords: Vec<&[usize]> = problem.layout.blocks().collect();
    let mut x: Vec<DMatrix<f64>> = coords.iter().map(|b| DMatrix::zeros(b.len(), b.len())).collect();
    project_affine(problem, &coords, &mut x);
    let mut q: Vec<DMatrix<f64>> = x.iter().map(|b| DMatrix::zeros(b.nrows(), b.ncols())).collect();
    let mut y = x.clone();
    for it in 0..budget {
        for (b, (xb, qb)) in x.iter().zip(q.iter_mut()).enumerate() {
            let v = xb + &*qb;
            let (clipped, _) = psd_clip(&v);
            *qb = v - &clipped;
            y[b] = clipped;
        }
        if it < EARLY_CHECKS || (it + 1) % CHECK_EVERY == 0 || it + 1 == budget {
            if cert.primal(&y) {
                return it + 1;
            }
            let mut dual = assemble(&problem.layout, &y) - &problem.cov;
            dual.component_mul_assign(&problem.weight);
            if cert.dual(&dual) {
                return it + 1;
            }
        }
        x.clone_from(&y);
        project_affine(problem, &coords, &mut x);
    }
    budget
}

/// Least-squares projection onto `{Z : A(Z) = Cov}` using `(AA†)^{-1}` = entrywise division by coverage.
fn project_affine(problem: &ReducedProblem, coords: &[&[usize]], z: &mut [DMatrix<f64>]) {
    let mut resid = &problem.cov - assemble(&problem.layout, z);
    resid.component_mul_assign(&problem.weight);
    for (zb, c) in z.iter_mut().zip(coords) {
        *zb += principal(&resid, c);
    }
}
