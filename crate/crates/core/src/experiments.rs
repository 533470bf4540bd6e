//! Seeded benchmarks and parameter sweeps comparing the semidefinite test with the
//! operator and entropic inequalities.
//!
//! All batch functions run on the current rayon pool; results are indexed by instance
//! or grid position, so output never depends on the number of workers.

use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{family_pmd, ising_distribution, random_ising};
use crate::error::{Error, Result};
use crate::features::{covariance_from_distribution, BlockCovariance, FeatureMap};
use crate::graph::BipartiteDag;
use crate::inequalities::{entropic_tests, entropy_profile, operator_inequality_test, EntropicValues, ENTROPIC_COLUMNS};
use crate::sdp::{test_compatibility, verify_witness, TestReport, Tolerances, Verdict};

/// Resolution of verdict bisections.
pub const VERDICT_BISECTION_TOL: f64 = 1e-4;
/// Resolution of entropic bisections (exact pmfs, so this can be tight).
pub const ENTROPIC_BISECTION_TOL: f64 = 1e-10;
/// Number of equal steps in the monotonicity pre-scan of [`threshold_bisect`].
const PRESCAN_STEPS: usize = 20;

/// Whether a shipped witness re-verifies independently of the solver.
fn witness_holds(rep: &TestReport, cov: &BlockCovariance, dag: &BipartiteDag) -> bool {
    match (&rep.verdict, &rep.witness) {
        (Verdict::CertifiedInfeasible, Some(w)) => {
            verify_witness(&w.x, cov, dag, &rep.tolerances).is_ok_and(|c| c.valid)
        }
        (Verdict::CertifiedInfeasible, None) => false,
        _ => true,
    }
}

/// One instance of the three-spin benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingRow {
    pub index: u64,
    pub couplings: [[f64; 3]; 3],
    pub verdict: Verdict,
    pub witness_ok: bool,
    pub entropic: EntropicValues,
}

impl IsingRow {
    pub fn entropic_rejects(&self) -> bool {
        self.entropic.rejects_any()
    }

    pub fn semidefinite_rejects(&self) -> bool {
        self.verdict == Verdict::CertifiedInfeasible
    }
}

/// Rejection fractions over a batch of instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateTable {
    pub instances: u64,
    pub seed: u64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
    pub e5: f64,
    pub e6: f64,
    pub combined: f64,
    pub semidefinite: f64,
    /// Instances rejected by some entropic inequality yet accepted by the semidefinite test.
    pub containment_violations: u64,
    pub undecided: u64,
    pub witness_failures: u64,
}

pub const RATE_COLUMNS: [&str; 8] = ["e1", "e2", "e3", "e4", "e5", "e6", "combined", "semidefinite"];

impl RateTable {
    pub fn rates(&self) -> [f64; 8] {
        [self.e1, self.e2, self.e3, self.e4, self.e5, self.e6, self.combined, self.semidefinite]
    }

    pub fn from_rows(seed: u64, rows: &[IsingRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let frac = |f: &dyn Fn(&IsingRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
        let count = |f: &dyn Fn(&IsingRow) -> bool| rows.iter().filter(|r| f(r)).count() as u64;
        Self {
            instances: rows.len() as u64,
            seed,
            e1: frac(&|r| r.entropic.rejects_e1()),
            e2: frac(&|r| r.entropic.rejects_e2()),
            e3: frac(&|r| r.entropic.rejects_e3()),
            e4: frac(&|r| r.entropic.rejects_e4()),
            e5: frac(&|r| r.entropic.rejects_e5()),
            e6: frac(&|r| r.entropic.rejects_e6()),
            combined: frac(&|r| r.entropic_rejects()),
            semidefinite: frac(&|r| r.semidefinite_rejects()),
            containment_violations: count(&|r| r.entropic_rejects() && r.verdict == Verdict::Feasible),
            undecided: count(&|r| r.verdict == Verdict::Undecided),
            witness_failures: count(&|r| !r.witness_ok),
        }
    }

    /// Header line plus one data line.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "instances,seed,{},containment_violations,undecided,witness_failures\n",
            RATE_COLUMNS.join(",")
        );
        let rates: Vec<String> = self.rates().iter().map(|r| format!("{r:.6}")).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            self.instances,
            self.seed,
            rates.join(","),
            self.containment_violations,
            self.undecided,
            self.witness_failures
        ));
        out
    }
}

/// Runs one benchmark instance: exact pmf, orthonormal 6×6 covariance, both test families.
pub fn ising_instance(seed: u64, index: u64, tol: &Tolerances) -> Result<IsingRow> {
    let couplings = random_ising(seed, index);
    let dist = ising_distribution(&couplings)?;
    let cov = covariance_from_distribution(&dist, &FeatureMap::orthonormal(&[2, 2, 2])?)?;
    let dag = BipartiteDag::triangle();
    let rep = test_compatibility(&cov, &dag, tol)?;
    Ok(IsingRow {
        index,
        couplings,
        verdict: rep.verdict,
        witness_ok: witness_holds(&rep, &cov, &dag),
        entropic: entropic_tests(&entropy_profile(&dist)?),
    })
}

#[derive(Debug, Clone)]
pub struct IsingBenchmark {
    pub table: RateTable,
    pub rows: Vec<IsingRow>,
}

/// Instance `i` uses RNG stream `(seed, i)`.
pub fn ising_benchmark(instances: u64, seed: u64, tol: &Tolerances) -> Result<IsingBenchmark> {
    if instances == 0 {
        return Err(Error::Parameter("at least one instance is required".into()));
    }
    let rows = (0..instances)
        .into_par_iter()
        .map(|i| ising_instance(seed, i, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(IsingBenchmark { table: RateTable::from_rows(seed, &rows), rows })
}

pub fn ising_rows_csv(rows: &[IsingRow]) -> String {
    let mut out = String::from("index,j11,j12,j13,j21,j22,j23,j31,j32,j33,verdict,");
    out.push_str(&ENTROPIC_COLUMNS.join(","));
    out.push('\n');
    for r in rows {
        let mut fields = vec![r.index.to_string()];
        fields.extend(r.couplings.iter().flatten().map(|v| v.to_string()));
        fields.push(r.verdict.label().into());
        fields.extend(r.entropic.as_array().iter().map(|v| v.to_string()));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Evenly spaced grid `start, start + step, …` up to `stop` (inclusive within rounding).
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Parameter(format!("grid `{text}` is not start:stop:step"));
    let [a, b, s] = parts.as_slice() else { return Err(bad()) };
    let (a, b, s): (f64, f64, f64) = (
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
        s.trim().parse().map_err(|_| bad())?,
    );
    if !(s > 0.0 && a <= b && a.is_finite() && b.is_finite()) {
        return Err(bad());
    }
    let n = ((b - a) / s + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| (a + k as f64 * s).min(b)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p: f64,
    pub verdict: Verdict,
    pub witness_ok: bool,
    /// Present only for three observables.
    pub entropic: Option<EntropicValues>,
    /// Operator-inequality minimum eigenvalue per distinguished block.
    pub phi_min_eigs: Vec<f64>,
}

/// A flip located by bisection between two grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub test: &'static str,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub m: usize,
    pub d: usize,
    pub rows: Vec<SweepRow>,
    pub transitions: Vec<Transition>,
}

/// Evaluates the depolarized family on `grid` and locates every verdict flip.
pub fn family_sweep(m: usize, d: usize, dag: &BipartiteDag, grid: &[f64], tol: &Tolerances) -> Result<Sweep> {
    if dag.num_observables() != m {
        return Err(Error::DimensionMismatch(format!(
            "structure has {} observables, family has {m}",
            dag.num_observables()
        )));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("grid must be non-empty and strictly increasing".into()));
    }
    let degree = dag.max_latent_degree().max(1);
    let rows = grid
        .par_iter()
        .map(|&p| {
            let dist = family_pmd(m, d, p)?;
            let cov = covariance_from_distribution(&dist, &FeatureMap::orthonormal(&vec![d; m])?)?;
            let rep = test_compatibility(&cov, dag, tol)?;
            let entropic = if m == 3 { Some(entropic_tests(&entropy_profile(&dist)?)) } else { None };
            Ok(SweepRow {
                p,
                verdict: rep.verdict,
                witness_ok: witness_holds(&rep, &cov, dag),
                entropic,
                phi_min_eigs: operator_inequality_test(cov.matrix(), degree, cov.partition())?.min_eigs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut transitions = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.verdict != b.verdict && a.verdict != Verdict::Undecided && b.verdict != Verdict::Undecided {
            let gen = |p: f64| family_cov(m, d, p);
            let p = bisect_verdict(dag, &gen, tol, a.p, b.p, a.verdict == Verdict::Feasible)?;
            transitions.push(Transition { test: "semidefinite", p });
        }
        if let (Some(ea), Some(eb)) = (&a.entropic, &b.entropic) {
            if ea.rejects_any() != eb.rejects_any() {
                let p = bisect_predicate(a.p, b.p, ea.rejects_any(), |p| {
                    Ok(family_entropic(d, p)?.rejects_any())
                })?;
                transitions.push(Transition { test: "combined", p });
            }
            if ea.rejects_e1() != eb.rejects_e1() {
                let p = bisect_predicate(a.p, b.p, ea.rejects_e1(), |p| Ok(family_entropic(d, p)?.rejects_e1()))?;
                transitions.push(Transition { test: "e1", p });
            }
        }
    }
    Ok(Sweep { m, d, rows, transitions })
}

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["p".to_string(), "verdict".into()];
        if self.m == 3 {
            header.extend(ENTROPIC_COLUMNS.iter().map(|c| c.to_string()));
        }
        header.extend((1..=self.m).map(|a| format!("phi_min_{a}")));
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut fields = vec![r.p.to_string(), r.verdict.label().to_string()];
            if let Some(e) = &r.entropic {
                fields.extend(e.as_array().iter().map(|v| v.to_string()));
            }
            fields.extend(r.phi_min_eigs.iter().map(|v| v.to_string()));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn transition(&self, test: &str) -> Option<f64> {
        self.transitions.iter().find(|t| t.test == test).map(|t| t.p)
    }
}

/// Orthonormal-feature covariance of the depolarized family, via its distribution.
pub fn family_cov(m: usize, d: usize, p: f64) -> Result<BlockCovariance> {
    covariance_from_distribution(&family_pmd(m, d, p)?, &FeatureMap::orthonormal(&vec![d; m])?)
}

fn family_entropic(d: usize, p: f64) -> Result<EntropicValues> {
    Ok(entropic_tests(&entropy_profile(&family_pmd(3, d, p)?)?))
}

/// Bisects `[lo, hi]` where `pred(lo) == at_lo` and `pred(hi) != at_lo`.
fn bisect_predicate(mut lo: f64, mut hi: f64, at_lo: bool, pred: impl Fn(f64) -> Result<bool>) -> Result<f64> {
    while hi - lo > ENTROPIC_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if pred(mid)? == at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn decided_verdict(dag: &BipartiteDag, cov: &BlockCovariance, tol: &Tolerances, p: f64) -> Result<bool> {
    match test_compatibility(cov, dag, tol)?.verdict {
        Verdict::Feasible => Ok(true),
        Verdict::CertifiedInfeasible => Ok(false),
        Verdict::Undecided => Err(Error::Invariant(format!("solver undecided at p = {p}"))),
    }
}

fn bisect_verdict(
    dag: &BipartiteDag,
    gen: &dyn Fn(f64) -> Result<BlockCovariance>,
    tol: &Tolerances,
    mut lo: f64,
    mut hi: f64,
    at_lo: bool,
) -> Result<f64> {
    while hi - lo > VERDICT_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if decided_verdict(dag, &gen(mid)?, tol, mid)? == at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Noise level where a family generator switches from incompatible to compatible.
///
/// A coarse pre-scan rejects generators whose verdicts are not monotone in `p`;
/// an always-compatible family returns 0.
pub fn threshold_bisect(
    dag: &BipartiteDag,
    gen: &(dyn Fn(f64) -> Result<BlockCovariance> + Sync),
    tol: &Tolerances,
) -> Result<f64> {
    let grid: Vec<f64> = (0..=PRESCAN_STEPS).map(|k| k as f64 / PRESCAN_STEPS as f64).collect();
    let verdicts = grid
        .par_iter()
        .map(|&p| decided_verdict(dag, &gen(p)?, tol, p))
        .collect::<Result<Vec<bool>>>()?;
    if let Some(k) = verdicts.windows(2).position(|w| w[0] && !w[1]) {
        return Err(Error::NonMonotone(format!(
            "compatible at p = {} but not at p = {}",
            grid[k],
            grid[k + 1]
        )));
    }
    match verdicts.iter().position(|&v| v) {
        Some(0) => Ok(0.0),
        Some(k) => bisect_verdict(dag, gen, tol, grid[k - 1], grid[k], false),
        None => Err(Error::NonMonotone("never compatible on [0, 1]".into())),
    }
}

/// Entropic transitions of the three-observable family at one alphabet size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossoverRow {
    pub d: usize,
    /// Largest noise level rejected by some entropic inequality.
    pub combined: f64,
    /// Same for the first inequality alone.
    pub e1: f64,
}

/// Largest `p` at which the predicate still rejects, assuming rejection at 0 and not at 1.
fn entropic_transition(d: usize, rejects: impl Fn(&EntropicValues) -> bool) -> Result<f64> {
    let at = |p: f64| family_entropic(d, p).map(|e| rejects(&e));
    if !at(0.0)? || at(1.0)? {
        return Err(Error::NonMonotone(format!("entropic rejections at D = {d} do not bracket a flip")));
    }
    bisect_predicate(0.0, 1.0, true, at)
}

pub fn crossover_row(d: usize) -> Result<CrossoverRow> {
    Ok(CrossoverRow {
        d,
        combined: entropic_transition(d, EntropicValues::rejects_any)?,
        e1: entropic_transition(d, EntropicValues::rejects_e1)?,
    })
}

/// Transitions for every alphabet size in `sizes`, in input order.
pub fn crossover_scan(sizes: &[usize]) -> Result<Vec<CrossoverRow>> {
    sizes.par_iter().map(|&d| crossover_row(d)).collect()
}

/// First row whose combined transition exceeds `threshold`.
pub fn first_crossing(rows: &[CrossoverRow], threshold: f64) -> Option<usize> {
    rows.iter().find(|r| r.combined > threshold).map(|r| r.d)
}

pub fn crossover_csv(rows: &[CrossoverRow]) -> String {
    let mut out = String::from("d,combined,e1\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.d, r.combined, r.e1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::triangle_threshold;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0:1:0.005").unwrap().len(), 201);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn endpoint_sweep() {
        let s = family_sweep(3, 2, &BipartiteDag::triangle(), &[0.0, 1.0], &Tolerances::default()).unwrap();
        assert_eq!(s.rows[0].verdict, Verdict::CertifiedInfeasible);
        assert_eq!(s.rows[1].verdict, Verdict::Feasible);
        assert!(s.rows.iter().all(|r| r.witness_ok));
        let t = s.transition("semidefinite").unwrap();
        assert!((t - triangle_threshold()).abs() < 1e-3);
        assert!(s.transition("combined").unwrap() < triangle_threshold());
        assert_eq!(s.to_csv().lines().count(), 3);
    }

    #[test]
    fn global_confounder_threshold_is_zero() {
        let dag = BipartiteDag::global_confounder(3).unwrap();
        let gen = |p: f64| family_cov(3, 2, p);
        assert_eq!(threshold_bisect(&dag, &gen, &Tolerances::default()).unwrap(), 0.0);
    }

    #[test]
    fn non_monotone_generator_is_rejected() {
        let gen = |p: f64| family_cov(3, 2, 1.0 - p);
        let err = threshold_bisect(&BipartiteDag::triangle(), &gen, &Tolerances::default()).unwrap_err();
        assert!(matches!(err, Error::NonMonotone(_)));
    }

    #[test]
    fn single_instance_is_deterministic() {
        let tol = Tolerances::default();
        let a = ising_benchmark(1, 11, &tol).unwrap();
        let b = ising_benchmark(1, 11, &tol).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.table, b.table);
        assert_eq!(a.table.to_csv().lines().count(), 2);
    }

    #[test]
    fn small_alphabet_crossover_stays_below() {
        let rows = crossover_scan(&[2, 3]).unwrap();
        assert!(rows.iter().all(|r| r.e1 <= r.combined + 1e-9 && r.combined < triangle_threshold()));
        assert_eq!(first_crossing(&rows, triangle_threshold()), None);
    }
}
