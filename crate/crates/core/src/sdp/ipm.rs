//! Primal-dual interior-point method (HKM direction, Mehrotra predictor-corrector)
//! for the shifted problem
//!
//! ```text
//!   minimize t  subject to  A(Z) = Cov,  Z + t·I ⪰ 0 (blockwise).
//! ```
//!
//! `Z` is parametrised as `A⁺(Cov) + Σ y_k N_k` over a sparse basis `N_k` of `ker A`.
//! The optimal `t` is negative exactly when `Cov` has a strictly feasible decomposition;
//! the primal multiplier `X` (trace one, `⟨N_k, X⟩ = 0`) lies in the range of `A†`, so
//! `(AA†)^{-1} A(X)` is a separating witness whenever `t > 0`.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{assemble, Certifier, ReducedProblem};
use crate::linalg::{frob_dot, principal, sym_eigen, symmetrized};

const MAX_ITER: usize = 100;
const STEP_FRACTION: f64 = 0.98;

/// One term `v · E_{rc}` of a sparse constraint matrix in block `block`.
#[derive(Debug, Clone, Copy)]
struct Entry {
    block: usize,
    r: usize,
    c: usize,
    v: f64,
}

type Blocks = Vec<DMatrix<f64>>;

struct Sdp {
    sizes: Vec<usize>,
    /// Constraint matrices; the last one is `−I` (the shift variable).
    cons: Vec<Vec<Entry>>,
    rhs: DVector<f64>,
    c: Blocks,
    scale: f64,
}

impl Sdp {
    fn build(problem: &ReducedProblem) -> Self {
        let coords: Vec<&[usize]> = problem.layout.blocks().collect();
        let sizes: Vec<usize> = coords.iter().map(|b| b.len()).collect();
        let k = problem.layout.size();
        let mut owners: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); k * k];
        for (b, cs) in coords.iter().enumerate() {
            for (a, &i) in cs.iter().enumerate() {
                for (c, &j) in cs.iter().enumerate().skip(a) {
                    owners[i * k + j].push((b, a, c));
                }
            }
        }
        let unit = |(b, r, c): (usize, usize, usize), v: f64| {
            if r == c {
                vec![Entry { block: b, r, c, v }]
            } else {
                vec![Entry { block: b, r, c, v }, Entry { block: b, r: c, c: r, v }]
            }
        };
        let mut cons = Vec::new();
        for list in owners.iter().filter(|l| l.len() >= 2) {
            for &other in &list[1..] {
                let mut e = unit(list[0], -1.0);
                e.extend(unit(other, 1.0));
                cons.push(e);
            }
        }
        let shift: Vec<Entry> = sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &n)| (0..n).map(move |a| Entry { block: b, r: a, c: a, v: -1.0 }))
            .collect();
        cons.push(shift);
        let mut rhs = DVector::zeros(cons.len());
        rhs[cons.len() - 1] = -1.0;
        let weighted = problem.cov.component_mul(&problem.weight);
        let z0: Blocks = coords.iter().map(|cs| principal(&weighted, cs)).collect();
        let norm = z0.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { norm } else { 1.0 };
        let c = z0.into_iter().map(|b| b / scale).collect();
        Self { sizes, cons, rhs, c, scale }
    }

    fn op(&self, g: &Blocks) -> DVector<f64> {
        DVector::from_iterator(
            self.cons.len(),
            self.cons.iter().map(|e| e.iter().map(|t| t.v * g[t.block][(t.c, t.r)]).sum::<f64>()),
        )
    }

    fn op_adjoint(&self, y: &DVector<f64>) -> Blocks {
        let mut out = self.zeros();
        for (yi, e) in y.iter().zip(&self.cons) {
            for t in e {
                out[t.block][(t.r, t.c)] += yi * t.v;
            }
        }
        out
    }

    fn zeros(&self) -> Blocks {
        self.sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect()
    }

    fn schur(&self, x: &Blocks, sinv: &Blocks) -> DMatrix<f64> {
        let m = self.cons.len();
        let mut out = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut acc = 0.0;
                for e in &self.cons[i] {
                    for f in self.cons[j].iter().filter(|f| f.block == e.block) {
                        acc += e.v * f.v * x[e.block][(e.c, f.r)] * sinv[e.block][(f.c, e.r)];
                    }
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }
}

fn blocks_dot(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| frob_dot(x, y)).sum()
}

fn inverse(s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if s.nrows() == 0 {
        return Some(s.clone());
    }
    Cholesky::new(s.clone()).map(|c| symmetrized(&c.inverse()))
}

/// Largest step keeping `x + α·dx` positive definite (∞ if unbounded).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    if x.nrows() == 0 {
        return f64::INFINITY;
    }
    let Some(ch) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = ch.l();
    let Some(a) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(m) = l.solve_lower_triangular(&a.transpose()) else {
        return 0.0;
    };
    let min = sym_eigen(&m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    Cholesky::new(m.clone())
        .map(|c| c.solve(rhs))
        .or_else(|| m.clone().lu().solve(rhs))
        .filter(|v| v.iter().all(|x| x.is_finite()))
}

struct Direction {
    dx: Blocks,
    dy: DVector<f64>,
    ds: Blocks,
}

/// Runs the interior-point method; returns the number of iterations used.
pub(crate) fn run(problem: &ReducedProblem, cert: &mut Certifier<'_>) -> usize {
    let sdp = Sdp::build(problem);
    let n_tot: usize = sdp.sizes.iter().sum();
    if n_tot == 0 {
        return 0;
    }
    let m = sdp.cons.len();
    let t_index = m - 1;
    let mut x: Blocks = sdp.sizes.iter().map(|&n| DMatrix::identity(n, n) / n_tot as f64).collect();
    let lmin = sdp
        .c
        .iter()
        .flat_map(|b| sym_eigen(b).eigenvalues.iter().copied().collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min);
    let mut y = DVector::zeros(m);
    y[t_index] = (-lmin).max(0.0) + 1.0;
    let mut s: Blocks = {
        let shift = sdp.op_adjoint(&y);
        sdp.c.iter().zip(&shift).map(|(c, a)| c - a).collect()
    };

    for it in 0..MAX_ITER {
        let Some(sinv) = s.iter().map(inverse).collect::<Option<Blocks>>() else {
            return it;
        };
        let mu = blocks_dot(&x, &s) / n_tot as f64;
        let rp = &sdp.rhs - sdp.op(&x);
        let aty = sdp.op_adjoint(&y);
        let rd: Blocks = (0..s.len()).map(|b| &sdp.c[b] - &s[b] - &aty[b]).collect();
        let schur = sdp.schur(&x, &sinv);
        let x_rd_sinv: Blocks = (0..s.len()).map(|b| &x[b] * &rd[b] * &sinv[b]).collect();
        let base_rhs = &rp + sdp.op(&x_rd_sinv);

        let direction = |rc: &Blocks| -> Option<Direction> {
            let rc_sinv: Blocks = rc.iter().zip(&sinv).map(|(r, si)| r * si).collect();
            let dy = solve(&schur, &(&base_rhs - sdp.op(&rc_sinv)))?;
            let atdy = sdp.op_adjoint(&dy);
            let ds: Blocks = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
            let dx: Blocks = (0..ds.len())
                .map(|b| symmetrized(&((&rc[b] - &x[b] * &ds[b]) * &sinv[b])))
                .collect();
            Some(Direction { dx, dy, ds })
        };
        let steps = |d: &Direction, frac: f64| -> (f64, f64) {
            let ap = x.iter().zip(&d.dx).map(|(a, b)| max_step(a, b)).fold(f64::INFINITY, f64::min);
            let ad = s.iter().zip(&d.ds).map(|(a, b)| max_step(a, b)).fold(f64::INFINITY, f64::min);
            ((frac * ap).min(1.0), (frac * ad).min(1.0))
        };

        let xs: Blocks = x.iter().zip(&s).map(|(a, b)| a * b).collect();
        let rc_aff: Blocks = xs.iter().map(|p| -p).collect();
        let Some(aff) = direction(&rc_aff) else {
            return it;
        };
        let (ap, ad) = steps(&aff, 1.0);
        let mu_aff = (0..x.len())
            .map(|b| frob_dot(&(&x[b] + ap * &aff.dx[b]), &(&s[b] + ad * &aff.ds[b])))
            .sum::<f64>()
            / n_tot as f64;
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };
        let rc: Blocks = (0..x.len())
            .map(|b| {
                DMatrix::identity(sdp.sizes[b], sdp.sizes[b]) * (sigma * mu) - &xs[b] - &aff.dx[b] * &aff.ds[b]
            })
            .collect();
        let Some(dir) = direction(&rc) else {
            return it;
        };
        let (ap, ad) = steps(&dir, STEP_FRACTION);
        for b in 0..x.len() {
            x[b] += ap * &dir.dx[b];
            s[b] += ad * &dir.ds[b];
        }
        y += ad * &dir.dy;

        // Candidates in problem units: Z = A⁺(Cov) + Σ y_k N_k, witness (AA†)^{-1} A(X).
        let mut ky = y.clone();
        ky[t_index] = 0.0;
        let kernel = sdp.op_adjoint(&ky);
        let z: Blocks = (0..x.len()).map(|b| (&sdp.c[b] - &kernel[b]) * sdp.scale).collect();
        if cert.primal(&z) {
            return it + 1;
        }
        let mut w = assemble(&problem.layout, &x);
        w.component_mul_assign(&problem.weight);
        if cert.dual(&w) {
            return it + 1;
        }
        if mu < 1e-15 && rp.amax() < 1e-12 {
            return it + 1;
        }
    }
    MAX_ITER
}
