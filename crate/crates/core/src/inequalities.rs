//! Necessary conditions weaker than the semidefinite test: the degree-bounded operator
//! inequality and six Shannon-entropy inequalities for three observables.

use nalgebra::DMatrix;

use crate::distributions::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::graph::BlockPartition;
use crate::linalg::{min_eigenvalue, spectral_norm, KahanSum};

/// Rejection threshold on entropic values.
pub const ENTROPIC_TOL: f64 = 1e-12;

fn check_shape(q: &DMatrix<f64>, partition: &BlockPartition) -> Result<()> {
    let k = partition.total();
    if q.shape() != (k, k) {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} matrix for a partition of total dimension {k}",
            q.nrows(),
            q.ncols()
        )));
    }
    Ok(())
}

/// Scales the distinguished diagonal block by `d − 1`, keeps the other diagonal blocks
/// and the blocks pairing the distinguished block with the rest, zeroes all other blocks.
pub fn phi_map(q: &DMatrix<f64>, d: usize, partition: &BlockPartition, distinguished: usize) -> Result<DMatrix<f64>> {
    check_shape(q, partition)?;
    if d == 0 {
        return Err(Error::Parameter("degree must be at least 1".into()));
    }
    if distinguished >= partition.num_blocks() {
        return Err(Error::IndexOutOfRange {
            what: "block",
            index: distinguished,
            count: partition.num_blocks(),
        });
    }
    let k = partition.total();
    Ok(DMatrix::from_fn(k, k, |i, j| {
        let (a, b) = (partition.block_of(i), partition.block_of(j));
        let factor = match (a == distinguished, b == distinguished) {
            (true, true) => (d - 1) as f64,
            (true, false) | (false, true) => 1.0,
            (false, false) => f64::from(u8::from(a == b)),
        };
        factor * q[(i, j)]
    }))
}

/// Outcome of [`operator_inequality_test`], one entry per distinguished block.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTest {
    pub min_eigs: Vec<f64>,
    pub passes: Vec<bool>,
}

impl OperatorTest {
    pub fn all_pass(&self) -> bool {
        self.passes.iter().all(|&p| p)
    }
}

/// Checks `Φ(cov) ⪰ 0` (to `−1e-9·‖cov‖₂`) for every choice of distinguished block.
pub fn operator_inequality_test(cov: &DMatrix<f64>, d: usize, partition: &BlockPartition) -> Result<OperatorTest> {
    let floor = -1e-9 * spectral_norm(cov);
    let min_eigs = (0..partition.num_blocks())
        .map(|a| phi_map(cov, d, partition, a).map(|m| min_eigenvalue(&m)))
        .collect::<Result<Vec<_>>>()?;
    let passes = min_eigs.iter().map(|&v| v >= floor).collect();
    Ok(OperatorTest { min_eigs, passes })
}

/// Negates the cross blocks `(a, b)` and `(b, a)`.
pub fn sign_flipped(q: &DMatrix<f64>, partition: &BlockPartition, a: usize, b: usize) -> Result<DMatrix<f64>> {
    scale_cross_block(q, partition, a, b, -1.0)
}

/// Zeroes the cross blocks `(a, b)` and `(b, a)`.
pub fn cross_block_removed(q: &DMatrix<f64>, partition: &BlockPartition, a: usize, b: usize) -> Result<DMatrix<f64>> {
    scale_cross_block(q, partition, a, b, 0.0)
}

fn scale_cross_block(q: &DMatrix<f64>, partition: &BlockPartition, a: usize, b: usize, s: f64) -> Result<DMatrix<f64>> {
    check_shape(q, partition)?;
    let n = partition.num_blocks();
    if a >= n || b >= n || a == b {
        return Err(Error::Parameter(format!("blocks {a} and {b} must be distinct and below {n}")));
    }
    let mut out = q.clone();
    for (x, y) in [(a, b), (b, a)] {
        let (rx, ry) = (partition.range(x), partition.range(y));
        out.view_mut((rx.start, ry.start), (rx.len(), ry.len())).scale_mut(s);
    }
    Ok(out)
}

/// Shannon entropy in bits, with `0·log 0 = 0`.
pub fn entropy_bits(pmf: &[f64]) -> f64 {
    let h = pmf
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .collect::<KahanSum>()
        .value();
    h.max(0.0)
}

/// Entropies (bits) of all seven non-empty marginals of three variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyProfile {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h12: f64,
    pub h13: f64,
    pub h23: f64,
    pub h123: f64,
}

pub fn entropy_profile(dist: &DiscreteDistribution) -> Result<EntropyProfile> {
    if dist.num_variables() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "entropy profile needs 3 variables, got {}",
            dist.num_variables()
        )));
    }
    let h = |keep: &[usize]| dist.marginalize(keep).map(|d| entropy_bits(d.pmf()));
    Ok(EntropyProfile {
        h1: h(&[0])?,
        h2: h(&[1])?,
        h3: h(&[2])?,
        h12: h(&[0, 1])?,
        h13: h(&[0, 2])?,
        h23: h(&[1, 2])?,
        h123: entropy_bits(dist.pmf()),
    })
}

impl EntropyProfile {
    fn singles(&self) -> f64 {
        self.h1 + self.h2 + self.h3
    }

    fn pairs(&self) -> f64 {
        self.h12 + self.h13 + self.h23
    }

    /// `(sum of the two pairs containing i, the pair avoiding i)`.
    fn split(&self, i: usize) -> (f64, f64) {
        match i {
            0 => (self.h12 + self.h13, self.h23),
            1 => (self.h12 + self.h23, self.h13),
            _ => (self.h13 + self.h23, self.h12),
        }
    }
}

/// The twelve entropic values; index `i` of the arrays is the distinguished variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropicValues {
    pub e1: [f64; 3],
    pub e2: [f64; 3],
    pub e3: f64,
    pub e4: [f64; 3],
    pub e5: f64,
    pub e6: f64,
}

pub fn entropic_tests(h: &EntropyProfile) -> EntropicValues {
    let s = h.singles();
    let with = |f: &dyn Fn(f64, f64) -> f64| {
        [0, 1, 2].map(|i| {
            let (touching, avoiding) = h.split(i);
            f(touching, avoiding)
        })
    };
    EntropicValues {
        e1: with(&|t, _| -s + t),
        e2: with(&|t, a| -3.0 * s + 2.0 * t + 3.0 * a - h.h123),
        e3: -5.0 * s + 4.0 * h.pairs() - 2.0 * h.h123,
        e4: with(&|t, a| -4.0 * s + 3.0 * t + 4.0 * a - 2.0 * h.h123),
        e5: -2.0 * s + 3.0 * h.pairs() - 4.0 * h.h123,
        e6: -8.0 * s + 7.0 * h.pairs() - 5.0 * h.h123,
    }
}

impl EntropicValues {
    /// Values in the order E1[0..3], E2[0..3], E3, E4[0..3], E5, E6.
    pub fn as_array(&self) -> [f64; 12] {
        let [a, b, c] = self.e1;
        let [d, e, f] = self.e2;
        let [g, h, i] = self.e4;
        [a, b, c, d, e, f, self.e3, g, h, i, self.e5, self.e6]
    }

    pub fn rejects_e1(&self) -> bool {
        self.e1.iter().any(|&v| v < -ENTROPIC_TOL)
    }

    pub fn rejects_e2(&self) -> bool {
        self.e2.iter().any(|&v| v < -ENTROPIC_TOL)
    }

    pub fn rejects_e3(&self) -> bool {
        self.e3 < -ENTROPIC_TOL
    }

    pub fn rejects_e4(&self) -> bool {
        self.e4.iter().any(|&v| v < -ENTROPIC_TOL)
    }

    pub fn rejects_e5(&self) -> bool {
        self.e5 < -ENTROPIC_TOL
    }

    pub fn rejects_e6(&self) -> bool {
        self.e6 < -ENTROPIC_TOL
    }

    /// Any of the twelve values below threshold.
    pub fn rejects_any(&self) -> bool {
        self.as_array().iter().any(|&v| v < -ENTROPIC_TOL)
    }
}

/// Column names matching [`EntropicValues::as_array`].
pub const ENTROPIC_COLUMNS: [&str; 12] = [
    "e1_1", "e1_2", "e1_3", "e2_1", "e2_2", "e2_3", "e3", "e4_1", "e4_2", "e4_3", "e5", "e6",
];

/// `E1 = 2H(12) − 3H(1)` for the depolarized correlated triple, in bits, for real `d ≥ 2`.
pub fn e1_family_closed_form(p: f64, d: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("noise level {p} outside [0, 1]")));
    }
    if !(d >= 2.0 && d.is_finite()) {
        return Err(Error::Parameter(format!("alphabet size {d} must be at least 2")));
    }
    let xlog = |w: f64, x: f64| if w == 0.0 { 0.0 } else { w * x.log2() };
    let a = p * (2.0 - p);
    let b = (1.0 - p) * (1.0 - p);
    Ok(-3.0 * d.log2()
        - 2.0 * xlog((1.0 - 1.0 / d) * a, a / (d * d))
        - 2.0 * xlog(b + a / d, b / d + a / (d * d)))
}

/// Root of `E1(p) = 0` on `[0, 1]` by bisection to `1e-10`.
pub fn e1_root(d: f64) -> Result<f64> {
    let f = |p: f64| e1_family_closed_form(p, d);
    let (mut lo, mut hi) = (0.0, 1.0);
    if f(lo)? >= 0.0 || f(hi)? <= 0.0 {
        return Err(Error::Invariant("E1 does not change sign on [0, 1]".into()));
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::family_pmd;

    #[test]
    fn phi_examples() {
        let part = BlockPartition::scalar(3).unwrap();
        let ones = DMatrix::from_element(3, 3, 1.0);
        let img = phi_map(&ones, 2, &part, 0).unwrap();
        assert_eq!(img, DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]));
        assert!(min_eigenvalue(&img) < -0.4);
        assert!((img.determinant() + 1.0).abs() < 1e-12);
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0, 3.0]));
        assert_eq!(phi_map(&diag, 3, &part, 0).unwrap()[(0, 0)], 4.0);
        assert!(operator_inequality_test(&diag, 1, &part).unwrap().all_pass());
        assert!(phi_map(&ones, 0, &part, 0).is_err());
        assert!(phi_map(&ones, 2, &part, 3).is_err());
    }

    #[test]
    fn strong_correlation_fails_the_operator_test() {
        let f = crate::families::family_covariance(3, 2, 0.1).unwrap();
        assert!(!operator_inequality_test(f.cov.matrix(), 2, f.cov.partition()).unwrap().all_pass());
    }

    #[test]
    fn flip_average_removes_the_cross_block() {
        let part = BlockPartition::new(vec![2, 1, 2]).unwrap();
        let q = DMatrix::from_fn(5, 5, |i, j| ((i + 1) * (j + 2)) as f64 + (i * j) as f64);
        let q = &q + q.transpose();
        let avg = (&q + sign_flipped(&q, &part, 0, 1).unwrap()) * 0.5;
        assert_eq!(avg, cross_block_removed(&q, &part, 0, 1).unwrap());
        assert_eq!(avg, phi_map(&q, 2, &part, 2).unwrap());
    }

    #[test]
    fn profile_examples() {
        let u = DiscreteDistribution::uniform(vec![2, 2, 2]).unwrap();
        let h = entropy_profile(&u).unwrap();
        assert!((h.h1 - 1.0).abs() < 1e-15 && (h.h12 - 2.0).abs() < 1e-15 && (h.h123 - 3.0).abs() < 1e-15);
        let corr = family_pmd(3, 2, 0.0).unwrap();
        let h = entropy_profile(&corr).unwrap();
        for v in [h.h1, h.h2, h.h3, h.h12, h.h13, h.h23, h.h123] {
            assert!((v - 1.0).abs() < 1e-15);
        }
        assert!(entropy_profile(&family_pmd(2, 2, 0.0).unwrap()).is_err());
    }

    #[test]
    fn independent_product_passes_everything() {
        let d = DiscreteDistribution::product(&[vec![0.2, 0.8], vec![0.5, 0.3, 0.2], vec![0.9, 0.1]]).unwrap();
        let h = entropy_profile(&d).unwrap();
        let e = entropic_tests(&h);
        assert!((e.e1[0] - h.h1).abs() < 1e-12);
        assert!(!e.rejects_any());
    }

    #[test]
    fn family_endpoints() {
        for d in [2usize, 3, 4, 8] {
            let log = (d as f64).log2();
            let e0 = entropic_tests(&entropy_profile(&family_pmd(3, d, 0.0).unwrap()).unwrap());
            let e1 = entropic_tests(&entropy_profile(&family_pmd(3, d, 1.0).unwrap()).unwrap());
            for i in 0..3 {
                assert!((e0.e1[i] + log).abs() < 1e-10);
                assert!((e1.e1[i] - log).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        let t = crate::families::triangle_threshold();
        assert!((e1_family_closed_form(t, 2.0).unwrap() - 1.5 * (4.0f64 / 3.0).log2()).abs() < 1e-12);
        assert!((e1_family_closed_form(0.0, 4.0).unwrap() + 2.0).abs() < 1e-12);
        assert!(e1_family_closed_form(1.2, 4.0).is_err());
        for d in [2.0, 5.0, 40.0] {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=1000 {
                let v = e1_family_closed_form(k as f64 / 1000.0, d).unwrap();
                assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }
}
