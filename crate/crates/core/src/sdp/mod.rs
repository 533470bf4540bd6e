//! The semidefinite compatibility test.
//!
//! A covariance is compatible with a DAG when it splits as a block-diagonal PSD
//! remainder plus one PSD component per latent supported on that latent's children.
//! Solvers only propose candidates; every verdict comes from checking a
//! decomposition or a separating witness directly against the input.

mod dykstra;
mod ipm;
mod reduce;
pub mod structure;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{matrix_from_rows, rows_of, BlockCovariance};
use crate::graph::{BipartiteDag, BlockPartition};
use crate::linalg::{frob_dot, min_eigenvalue, principal, psd_clip, spectral_norm, symmetrized};
use reduce::Reduction;
pub use structure::{adjoint_map, constraint_map, BlockLayout, StructuredVariable};
pub(crate) use structure::assemble;

pub const REPORT_SCHEMA: &str = "lsdp.report/1";

/// Backend used to produce candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    /// Short Dykstra run, then the interior-point method, then the full Dykstra budget.
    #[default]
    Auto,
    Dykstra,
    InteriorPoint,
}

/// Tolerances governing verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative residual `‖R + ΣC_n − Cov‖_F / max(1, ‖Cov‖_F)` accepted as feasible.
    pub feas: f64,
    /// Allowed negativity of `A†(X)` for a witness, relative to `‖X‖_F`.
    pub psd: f64,
    /// A witness needs `tr(X·Cov) ≤ −gap`.
    pub gap: f64,
    /// Dykstra iteration budget.
    pub max_iter: usize,
    pub solver: SolverChoice,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feas: 1e-7, psd: 1e-8, gap: 1e-8, max_iter: 50_000, solver: SolverChoice::Auto }
    }
}

/// Dykstra budget of the first `Auto` stage.
const AUTO_FIRST_STAGE: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Feasible,
    CertifiedInfeasible,
    Undecided,
}

impl Verdict {
    /// Stable lowercase label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Feasible => "feasible",
            Verdict::CertifiedInfeasible => "infeasible",
            Verdict::Undecided => "undecided",
        }
    }
}

/// `Cov ≈ r + Σ components`, all in the original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Block-diagonal remainder.
    pub r: DMatrix<f64>,
    /// One component per latent, zero outside the latent's support.
    pub components: Vec<DMatrix<f64>>,
}

impl Decomposition {
    pub fn sum(&self) -> DMatrix<f64> {
        self.components.iter().fold(self.r.clone(), |acc, c| acc + c)
    }

    /// Diagonal block `m` of the remainder.
    pub fn remainder_block(&self, partition: &BlockPartition, m: usize) -> DMatrix<f64> {
        let r = partition.range(m);
        self.r.view((r.start, r.start), (r.len(), r.len())).into_owned()
    }

    /// Checks structure, positivity and the sum; returns the Frobenius residual.
    pub fn validate(&self, dag: &BipartiteDag, cov: &BlockCovariance, tol: &Tolerances) -> Result<f64> {
        let part = cov.partition();
        dag.check_partition(part)?;
        let k = part.total();
        if self.components.len() != dag.num_latents()
            || std::iter::once(&self.r).chain(&self.components).any(|m| m.shape() != (k, k))
        {
            return Err(Error::DimensionMismatch("decomposition shape does not match".into()));
        }
        let mut r_mask = vec![false; k * k];
        for m in 0..part.num_blocks() {
            for i in part.range(m) {
                for j in part.range(m) {
                    r_mask[i * k + j] = true;
                }
            }
        }
        check_term(&self.r, &r_mask, k, "remainder")?;
        for (n, c) in self.components.iter().enumerate() {
            let mut mask = vec![false; k * k];
            let support = dag.support_projector(part, n)?;
            for &i in &support {
                for &j in &support {
                    mask[i * k + j] = true;
                }
            }
            check_term(c, &mask, k, &format!("component {n}"))?;
        }
        let residual = (self.sum() - cov.matrix()).norm();
        let allowed = tol.feas * cov.matrix().norm().max(1.0);
        if residual > allowed {
            return Err(Error::Invariant(format!("decomposition residual {residual:e} exceeds {allowed:e}")));
        }
        Ok(residual)
    }
}

fn check_term(m: &DMatrix<f64>, mask: &[bool], k: usize, what: &str) -> Result<()> {
    for i in 0..k {
        for j in 0..k {
            if !mask[i * k + j] && m[(i, j)] != 0.0 {
                return Err(Error::Invariant(format!("{what} is nonzero outside its support")));
            }
            if m[(i, j)] != m[(j, i)] {
                return Err(Error::Invariant(format!("{what} is not symmetric")));
            }
        }
    }
    let min = min_eigenvalue(m);
    if min < -1e-9 * spectral_norm(m) {
        return Err(Error::Invariant(format!("{what} has eigenvalue {min:e}")));
    }
    Ok(())
}

/// Separating matrix: `A†(X) ⪰ 0` blockwise and `tr(X·Cov) < 0`, normalised to `‖X‖_F = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub x: DMatrix<f64>,
    pub gap: f64,
    pub dual_min_eig: f64,
}

/// Diagnostics of [`verify_witness`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WitnessCheck {
    pub valid: bool,
    pub gap: f64,
    pub dual_min_eig: f64,
    pub norm: f64,
}

/// Valid iff `min eig A†(X) ≥ −τ_psd·‖X‖_F` and `tr(X·Cov) ≤ −τ_gap`.
pub fn verify_witness(x: &DMatrix<f64>, cov: &BlockCovariance, dag: &BipartiteDag, tol: &Tolerances) -> Result<WitnessCheck> {
    let layout = BlockLayout::new(dag, cov.partition())?;
    if x.shape() != cov.matrix().shape() {
        return Err(Error::DimensionMismatch("witness and covariance differ in shape".into()));
    }
    let x = symmetrized(x);
    let norm = x.norm();
    let dual_min_eig = blocks_min_eig(&layout, &x);
    let gap = frob_dot(&x, cov.matrix());
    Ok(WitnessCheck {
        valid: dual_min_eig >= -tol.psd * norm && gap <= -tol.gap && norm > 0.0,
        gap,
        dual_min_eig,
        norm,
    })
}

fn blocks_min_eig(layout: &BlockLayout, x: &DMatrix<f64>) -> f64 {
    layout
        .blocks()
        .map(|b| min_eigenvalue(&principal(x, b)))
        .fold(f64::INFINITY, f64::min)
}

/// Shifts a candidate by `εI` until `A†(X) ⪰ 0` (since `A†(I)` is the identity on every
/// block), then normalises. Returns `None` for a zero candidate.
fn repair_witness(layout: &BlockLayout, candidate: &DMatrix<f64>, cov: &DMatrix<f64>) -> Option<Witness> {
    let mut x = symmetrized(candidate);
    let lam = blocks_min_eig(layout, &x);
    if lam.is_finite() && lam < 0.0 {
        for i in 0..x.nrows() {
            x[(i, i)] -= lam;
        }
    }
    let norm = x.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return None;
    }
    x /= norm;
    Some(Witness {
        gap: frob_dot(&x, cov),
        dual_min_eig: blocks_min_eig(layout, &x).min(f64::INFINITY),
        x,
    })
}

/// Outcome of [`test_compatibility`].
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub verdict: Verdict,
    /// Frobenius residual of the reported (or best) decomposition.
    pub residual: f64,
    pub iterations: usize,
    pub solver: String,
    pub decomposition: Option<Decomposition>,
    pub witness: Option<Witness>,
    pub tolerances: Tolerances,
}

/// Compressed problem handed to the solvers.
pub(crate) struct ReducedProblem {
    pub(crate) layout: BlockLayout,
    pub(crate) cov: DMatrix<f64>,
    /// `1 / coverage` on covered entries, `1` elsewhere.
    pub(crate) weight: DMatrix<f64>,
}

/// Turns solver candidates into verified decompositions or witnesses.
pub(crate) struct Certifier<'a> {
    dag: &'a BipartiteDag,
    cov: &'a BlockCovariance,
    full_layout: &'a BlockLayout,
    reduction: &'a Reduction,
    problem: &'a ReducedProblem,
    tol: &'a Tolerances,
    allowed: f64,
    best_residual: f64,
    decomposition: Option<(Decomposition, f64)>,
    witness: Option<Witness>,
}

impl Certifier<'_> {
    /// Accepts blockwise candidates in reduced coordinates (clipped to PSD here).
    pub(crate) fn primal(&mut self, blocks: &[DMatrix<f64>]) -> bool {
        let clipped: Vec<DMatrix<f64>> = blocks.iter().map(|b| psd_clip(b).0).collect();
        let reduced_residual = (assemble(&self.problem.layout, &clipped) - &self.problem.cov).norm();
        self.best_residual = self.best_residual.min(reduced_residual);
        if reduced_residual > self.allowed {
            return false;
        }
        let k = self.cov.partition().total();
        let (remainder, latent) = clipped.split_at(self.problem.layout.remainder_coords().len());
        let lift = |block: &DMatrix<f64>, coords: &[usize]| {
            let mut reduced = DMatrix::zeros(self.problem.layout.size(), self.problem.layout.size());
            crate::linalg::embed_add(&mut reduced, block, coords);
            symmetrized(&self.reduction.lift(&reduced))
        };
        let mut r = DMatrix::zeros(k, k);
        for (b, coords) in remainder.iter().zip(self.problem.layout.remainder_coords()) {
            r += lift(b, coords);
        }
        let components: Vec<DMatrix<f64>> = latent
            .iter()
            .zip(self.problem.layout.latent_coords())
            .map(|(b, coords)| lift(b, coords))
            .collect();
        let dec = Decomposition {
            r: mask_to_blocks(&r, self.cov.partition(), None, self.dag),
            components: components
                .iter()
                .enumerate()
                .map(|(n, c)| mask_to_blocks(c, self.cov.partition(), Some(n), self.dag))
                .collect(),
        };
        match dec.validate(self.dag, self.cov, self.tol) {
            Ok(residual) => {
                self.best_residual = self.best_residual.min(residual);
                self.decomposition = Some((dec, residual));
                true
            }
            Err(_) => false,
        }
    }

    /// Accepts a candidate separating matrix in reduced coordinates.
    pub(crate) fn dual(&mut self, x: &DMatrix<f64>) -> bool {
        let Some(w) = repair_witness(&self.problem.layout, x, &self.problem.cov) else {
            return false;
        };
        if w.gap > -self.tol.gap {
            return false;
        }
        let Some(full) = repair_witness(self.full_layout, &self.reduction.lift(&w.x), self.cov.matrix()) else {
            return false;
        };
        self.accept_witness(full)
    }

    fn accept_witness(&mut self, w: Witness) -> bool {
        match verify_witness(&w.x, self.cov, self.dag, self.tol) {
            Ok(check) if check.valid => {
                self.witness = Some(Witness { gap: check.gap, dual_min_eig: check.dual_min_eig, x: w.x });
                true
            }
            _ => false,
        }
    }

    fn decided(&self) -> bool {
        self.decomposition.is_some() || self.witness.is_some()
    }
}

/// Zeroes the rounding noise that lifting leaves outside a term's support.
fn mask_to_blocks(m: &DMatrix<f64>, part: &BlockPartition, latent: Option<usize>, dag: &BipartiteDag) -> DMatrix<f64> {
    let k = part.total();
    let mut inside = vec![false; part.num_blocks()];
    match latent {
        Some(n) => dag.children(n).expect("valid latent").iter().for_each(|&c| inside[c] = true),
        None => inside.iter_mut().for_each(|v| *v = true),
    }
    DMatrix::from_fn(k, k, |i, j| {
        let (bi, bj) = (part.block_of(i), part.block_of(j));
        let keep = inside[bi] && inside[bj] && (latent.is_some() || bi == bj);
        if keep {
            m[(i, j)]
        } else {
            0.0
        }
    })
}

/// Decides whether `cov` admits a decomposition for `dag`.
pub fn test_compatibility(cov: &BlockCovariance, dag: &BipartiteDag, tol: &Tolerances) -> Result<TestReport> {
    if !(tol.feas > 0.0 && tol.psd >= 0.0 && tol.gap > 0.0) {
        return Err(Error::Parameter("tolerances must be positive".into()));
    }
    let full_layout = BlockLayout::new(dag, cov.partition())?;
    let coverage = full_layout.coverage();
    let allowed = tol.feas * cov.matrix().norm().max(1.0);

    let uncovered = DMatrix::from_fn(coverage.nrows(), coverage.ncols(), |i, j| {
        if coverage[(i, j)] == 0.0 {
            cov.matrix()[(i, j)]
        } else {
            0.0
        }
    });
    let reduction = Reduction::new(cov);
    let layout = BlockLayout::from_dims(reduction.dims(), dag.hyperedges());
    let reduced_cov = symmetrized(&reduction.reduce(cov.matrix()));
    let weight = layout.coverage().map(|c| if c > 0.0 { 1.0 / c } else { 1.0 });
    let problem = ReducedProblem { layout, cov: reduced_cov, weight };
    let mut cert = Certifier {
        dag,
        cov,
        full_layout: &full_layout,
        reduction: &reduction,
        problem: &problem,
        tol,
        allowed,
        best_residual: f64::INFINITY,
        decomposition: None,
        witness: None,
    };

    let mut iterations = 0;
    let mut solver = "none";
    if uncovered.norm() > allowed {
        if let Some(w) = repair_witness(&full_layout, &(-&uncovered), cov.matrix()) {
            cert.accept_witness(w);
        }
    }
    let stages: &[(&str, Option<usize>)] = match tol.solver {
        SolverChoice::Dykstra => &[("dykstra", Some(tol.max_iter))],
        SolverChoice::InteriorPoint => &[("interior-point", None)],
        SolverChoice::Auto => &[
            ("dykstra", Some(tol.max_iter.min(AUTO_FIRST_STAGE))),
            ("interior-point", None),
            ("dykstra", Some(tol.max_iter)),
        ],
    };
    for &(name, budget) in stages {
        if cert.decided() {
            break;
        }
        solver = name;
        iterations += match budget {
            Some(b) => dykstra::run(&problem, b, &mut cert),
            None => ipm::run(&problem, &mut cert),
        };
    }

    let (verdict, residual, decomposition, witness) = match (cert.decomposition, cert.witness) {
        (Some((d, r)), _) => (Verdict::Feasible, r, Some(d), None),
        (None, Some(w)) => (Verdict::CertifiedInfeasible, cert.best_residual, None, Some(w)),
        (None, None) => (Verdict::Undecided, cert.best_residual, None, None),
    };
    Ok(TestReport {
        verdict,
        residual,
        iterations,
        solver: solver.into(),
        decomposition,
        witness,
        tolerances: *tol,
    })
}

/// Runs the test on the `M × M` reduced family matrix with scalar blocks.
pub fn reduced_family_test(p: f64, dag: &BipartiteDag, tol: &Tolerances) -> Result<TestReport> {
    let c = crate::families::c_matrix(dag.num_observables(), p)?;
    let cov = BlockCovariance::new(BlockPartition::scalar(dag.num_observables())?, c)?;
    test_compatibility(&cov, dag, tol)
}

/// Wire form of a report. Matrices appear only when requested.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportJson {
    pub schema: String,
    pub verdict: Verdict,
    pub residual: f64,
    pub iterations: usize,
    pub solver: String,
    pub tolerances: Tolerances,
    pub dims: Vec<usize>,
    pub dag: crate::graph::DagJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessJson {
    pub gap: f64,
    pub dual_min_eig: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionJson {
    pub r: Vec<Vec<f64>>,
    pub components: Vec<Vec<Vec<f64>>>,
}

impl TestReport {
    pub fn to_json_value(
        &self,
        dag: &BipartiteDag,
        partition: &BlockPartition,
        emit_witness: bool,
        emit_decomposition: bool,
    ) -> ReportJson {
        ReportJson {
            schema: REPORT_SCHEMA.into(),
            verdict: self.verdict,
            residual: self.residual,
            iterations: self.iterations,
            solver: self.solver.clone(),
            tolerances: self.tolerances,
            dims: partition.dims().to_vec(),
            dag: dag.into(),
            witness: self.witness.as_ref().map(|w| WitnessJson {
                gap: w.gap,
                dual_min_eig: w.dual_min_eig,
                x: emit_witness.then(|| rows_of(&w.x)),
            }),
            decomposition: self.decomposition.as_ref().filter(|_| emit_decomposition).map(|d| DecompositionJson {
                r: rows_of(&d.r),
                components: d.components.iter().map(rows_of).collect(),
            }),
        }
    }
}

impl DecompositionJson {
    pub fn to_decomposition(&self) -> Result<Decomposition> {
        Ok(Decomposition {
            r: matrix_from_rows(&self.r, "decomposition.r")?,
            components: self
                .components
                .iter()
                .enumerate()
                .map(|(n, c)| matrix_from_rows(c, &format!("decomposition.components[{n}]")))
                .collect::<Result<_>>()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::family_pmd;
    use crate::features::{covariance_from_distribution, FeatureMap};

    fn family_cov(d: usize, p: f64) -> BlockCovariance {
        covariance_from_distribution(&family_pmd(3, d, p).unwrap(), &FeatureMap::orthonormal(&[d; 3]).unwrap()).unwrap()
    }

    #[test]
    fn block_diagonal_is_feasible_with_remainder_only() {
        let part = BlockPartition::new(vec![2, 1]).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3.0]);
        let cov = BlockCovariance::new(part, m.clone()).unwrap();
        for dag in [BipartiteDag::new(2, vec![]).unwrap(), BipartiteDag::global_confounder(2).unwrap()] {
            let rep = test_compatibility(&cov, &dag, &Tolerances::default()).unwrap();
            assert_eq!(rep.verdict, Verdict::Feasible);
            let d = rep.decomposition.unwrap();
            assert!((d.sum() - &m).amax() < 1e-9);
            if dag.num_latents() == 0 {
                assert!((&d.r - &m).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn triangle_family_verdicts() {
        let tol = Tolerances::default();
        let t = BipartiteDag::triangle();
        assert_eq!(test_compatibility(&family_cov(2, 0.5), &t, &tol).unwrap().verdict, Verdict::Feasible);
        let rep = test_compatibility(&family_cov(2, 0.2), &t, &tol).unwrap();
        assert_eq!(rep.verdict, Verdict::CertifiedInfeasible);
        let w = rep.witness.unwrap();
        assert!(verify_witness(&w.x, &family_cov(2, 0.2), &t, &tol).unwrap().valid);
        assert!((w.x.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_backend_agrees() {
        let t = BipartiteDag::triangle();
        for solver in [SolverChoice::Dykstra, SolverChoice::InteriorPoint, SolverChoice::Auto] {
            let tol = Tolerances { solver, ..Tolerances::default() };
            for (p, want) in [(0.1, Verdict::CertifiedInfeasible), (0.28, Verdict::CertifiedInfeasible), (0.31, Verdict::Feasible), (0.7, Verdict::Feasible)] {
                assert_eq!(test_compatibility(&family_cov(3, p), &t, &tol).unwrap().verdict, want, "{solver:?} p={p}");
            }
        }
    }

    #[test]
    fn reduced_family_examples() {
        let tol = Tolerances::default();
        let t = BipartiteDag::triangle();
        assert_eq!(reduced_family_test(1.0, &t, &tol).unwrap().verdict, Verdict::Feasible);
        let boundary = 1.0 - 1.0 / 2f64.sqrt();
        assert_eq!(reduced_family_test(boundary, &t, &tol).unwrap().verdict, Verdict::Feasible);
        assert_eq!(reduced_family_test(0.25, &t, &tol).unwrap().verdict, Verdict::CertifiedInfeasible);
    }

    #[test]
    fn identity_is_never_a_witness() {
        let cov = family_cov(2, 0.2);
        let x = DMatrix::identity(6, 6) / 6f64.sqrt();
        assert!(!verify_witness(&x, &cov, &BipartiteDag::triangle(), &Tolerances::default()).unwrap().valid);
    }

    #[test]
    fn hand_built_triangle_witness() {
        let p: f64 = 0.2;
        let cov = BlockCovariance::new(BlockPartition::scalar(3).unwrap(), crate::families::c_matrix(3, p).unwrap()).unwrap();
        // Each 2×2 compression is [[1,−1],[−1,1]] ⪰ 0; tr(X·C) = 3(1 − 2(1−p)²) < 0 below the threshold.
        let x = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { -1.0 }) / 3.0;
        let check = verify_witness(&x, &cov, &BipartiteDag::triangle(), &Tolerances::default()).unwrap();
        assert!(check.valid);
        assert!((check.gap - (1.0 - 2.0 * (1.0 - p).powi(2))).abs() < 1e-12);
    }

    #[test]
    fn uncovered_correlation_is_certified() {
        let part = BlockPartition::scalar(2).unwrap();
        let cov = BlockCovariance::new(part, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        let dag = BipartiteDag::new(2, vec![]).unwrap();
        let rep = test_compatibility(&cov, &dag, &Tolerances::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::CertifiedInfeasible);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn zero_covariance_is_feasible() {
        let cov = BlockCovariance::new(BlockPartition::scalar(3).unwrap(), DMatrix::zeros(3, 3)).unwrap();
        let rep = test_compatibility(&cov, &BipartiteDag::triangle(), &Tolerances::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::Feasible);
    }

    #[test]
    fn partition_mismatch_is_an_error() {
        let cov = family_cov(2, 0.5);
        assert!(test_compatibility(&cov, &BipartiteDag::global_confounder(2).unwrap(), &Tolerances::default()).is_err());
    }
}
