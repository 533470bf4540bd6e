//! Explicit latent models reproducing a decomposition, and finite-alphabet vectors
//! with a prescribed covariance.

use nalgebra::{DMatrix, DVector};

use crate::distributions::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::features::{covariance_from_distribution, BlockCovariance, FeatureMap};
use crate::graph::{BipartiteDag, BlockPartition};
use crate::linalg::{min_eigenvalue, numerical_rank, principal, spectral_norm, sym_eigen, symmetrized};
use crate::model::{AdditivePart, LatentModel, Response};
use crate::rng::InstanceRng;
use crate::sdp::{Decomposition, Tolerances};

const RANK_TOL: f64 = 1e-10;

/// Equiprobable vectors with zero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteRealization {
    pub vectors: Vec<DVector<f64>>,
    pub probabilities: Vec<f64>,
}

impl FiniteRealization {
    pub fn mean(&self) -> DVector<f64> {
        let k = self.vectors[0].len();
        self.vectors
            .iter()
            .zip(&self.probabilities)
            .fold(DVector::zeros(k), |acc, (v, &p)| acc + v * p)
    }

    pub fn second_moment(&self) -> DMatrix<f64> {
        let k = self.vectors[0].len();
        self.vectors
            .iter()
            .zip(&self.probabilities)
            .fold(DMatrix::zeros(k, k), |acc, (v, &p)| acc + p * v * v.transpose())
    }
}

/// `d` equiprobable vectors with mean zero and second moment `c`; needs `d ≥ rank(c) + 1`.
///
/// With `z_k, λ_k` the retained eigenpairs and `U` an orthogonal matrix whose column `r`
/// (`r` = rank) is `1̄/√d`, outcome `j` is `√d · Σ_{k<r} U_jk √λ_k z_k`. Columns `0..r`
/// come from Gram–Schmidt on Gaussian vectors drawn from stream `(seed, 0)`.
pub fn finite_alphabet_realization(c: &DMatrix<f64>, d: usize, seed: u64) -> Result<FiniteRealization> {
    let k = c.nrows();
    if c.ncols() != k || k == 0 {
        return Err(Error::DimensionMismatch("target must be a non-empty square matrix".into()));
    }
    let c = symmetrized(c);
    let min = min_eigenvalue(&c);
    if min < -1e-9 * spectral_norm(&c).max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd(min));
    }
    let rank = numerical_rank(&c, RANK_TOL);
    if d < rank + 1 {
        return Err(Error::Parameter(format!(
            "alphabet size {d} cannot carry a covariance of rank {rank}"
        )));
    }
    let eig = sym_eigen(&c);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let kept: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i] > RANK_TOL * lmax).collect();
    let columns = orthonormal_complement_of_ones(d, kept.len(), seed);
    let sqrt_d = (d as f64).sqrt();
    let vectors = (0..d)
        .map(|j| {
            kept.iter().zip(&columns).fold(DVector::zeros(k), |acc, (&i, u)| {
                acc + eig.eigenvectors.column(i) * (sqrt_d * u[j] * eig.eigenvalues[i].sqrt())
            })
        })
        .collect();
    Ok(FiniteRealization { vectors, probabilities: vec![1.0 / d as f64; d] })
}

/// `count` orthonormal vectors in `R^d`, all orthogonal to the all-ones vector.
fn orthonormal_complement_of_ones(d: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = InstanceRng::new(seed, 0);
    let mut basis = vec![DVector::from_element(d, 1.0 / (d as f64).sqrt())];
    while basis.len() < count + 1 {
        let mut v = DVector::from_fn(d, |_, _| rng.standard_normal());
        for _ in 0..2 {
            for b in &basis {
                v -= b * b.dot(&v);
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            basis.push(v / n);
        }
    }
    basis.split_off(1)
}

/// Supported alphabet size against covariance rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankBound {
    pub support: usize,
    pub rank: usize,
    /// `rank ≤ support − 1`.
    pub holds: bool,
}

/// Compares the rank of the joint feature covariance with the number of joint outcomes of positive probability.
pub fn rank_bound_check(dist: &DiscreteDistribution, fmap: &FeatureMap) -> Result<RankBound> {
    let cov = covariance_from_distribution(dist, fmap)?;
    let support = dist.support_size(1e-15);
    let rank = numerical_rank(cov.matrix(), RANK_TOL);
    Ok(RankBound { support, rank, holds: rank < support })
}

/// Moves every parented remainder block into the components of its parents, split equally.
pub fn distribute_remainder(
    dec: &Decomposition,
    dag: &BipartiteDag,
    partition: &BlockPartition,
) -> Result<Vec<DMatrix<f64>>> {
    dag.check_partition(partition)?;
    let mut out = dec.components.clone();
    for m in 0..dag.num_observables() {
        let parents = dag.parents(m)?;
        if parents.is_empty() {
            continue;
        }
        let r = partition.range(m);
        let share = dec.remainder_block(partition, m) / parents.len() as f64;
        for &n in &parents {
            let mut view = out[n].view_mut((r.start, r.start), (r.len(), r.len()));
            view += &share;
        }
    }
    for (n, c) in out.iter().enumerate() {
        let min = min_eigenvalue(c);
        if min < -1e-9 * spectral_norm(c).max(f64::MIN_POSITIVE) {
            return Err(Error::Invariant(format!("merged component {n} has eigenvalue {min:e}")));
        }
    }
    Ok(out)
}

/// Latent model whose exact covariance equals `dec.sum()`.
///
/// Each latent is uniform over `rank + 1` vectors realizing its merged component on
/// the coordinates of its children; each parented observable is the sum of its parents'
/// coordinates; each parentless observable is an independent categorical variable.
pub fn realize(dec: &Decomposition, dag: &BipartiteDag, partition: &BlockPartition, seed: u64) -> Result<LatentModel> {
    let target = BlockCovariance::new(partition.clone(), symmetrized(&dec.sum()))?;
    dec.validate(dag, &target, &Tolerances { feas: 1e-9, ..Tolerances::default() })?;
    let merged = distribute_remainder(dec, dag, partition)?;
    let n_lat = dag.num_latents();
    let mut latent_pmfs = Vec::with_capacity(n_lat);
    let mut latent_vectors = Vec::with_capacity(n_lat);
    for (n, c) in merged.iter().enumerate() {
        let support = dag.support_projector(partition, n)?;
        let block = principal(c, &support);
        let rank = numerical_rank(&block, RANK_TOL);
        let fin = finite_alphabet_realization(&block, rank + 1, seed.wrapping_add(n as u64))?;
        latent_pmfs.push(fin.probabilities.clone());
        latent_vectors.push(fin.vectors);
    }
    let responses = (0..dag.num_observables())
        .map(|m| {
            let parents = dag.parents(m)?;
            let dm = partition.dims()[m];
            if parents.is_empty() {
                let block = dec.remainder_block(partition, m);
                let rank = numerical_rank(&block, RANK_TOL);
                let fin = finite_alphabet_realization(&block, rank + 1, seed.wrapping_add((n_lat + m) as u64))?;
                return Ok(Response::Categorical { features: fin.vectors, table: vec![fin.probabilities] });
            }
            let parts = parents
                .iter()
                .map(|&n| {
                    let children = dag.children(n)?;
                    let offset: usize = children.iter().take_while(|&&c| c != m).map(|&c| partition.dims()[c]).sum();
                    Ok(AdditivePart {
                        latent: n,
                        vectors: latent_vectors[n].iter().map(|v| v.rows(offset, dm).into_owned()).collect(),
                    })
                })
                .collect::<Result<_>>()?;
            Ok(Response::Additive { dim: dm, parts })
        })
        .collect::<Result<_>>()?;
    LatentModel::new(dag.clone(), latent_pmfs, responses)
}

/// Largest entrywise gap between the model's exact covariance and `target`.
pub fn realization_error(model: &LatentModel, target: &DMatrix<f64>) -> Result<f64> {
    let cov = model.exact_covariance()?;
    if cov.matrix().shape() != target.shape() {
        return Err(Error::DimensionMismatch("realized model has a different dimension".into()));
    }
    Ok((cov.matrix() - target).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{test_compatibility, Verdict};

    #[test]
    fn zero_target_gives_point_mass() {
        let r = finite_alphabet_realization(&DMatrix::zeros(2, 2), 1, 0).unwrap();
        assert_eq!(r.vectors, vec![DVector::zeros(2)]);
        assert_eq!(r.probabilities, vec![1.0]);
    }

    #[test]
    fn scalar_target_gives_plus_minus_one() {
        let r = finite_alphabet_realization(&DMatrix::from_element(1, 1, 1.0), 2, 4).unwrap();
        let mut v: Vec<f64> = r.vectors.iter().map(|v| v[0]).collect();
        v.sort_by(f64::total_cmp);
        assert!((v[0] + 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_in_the_plane_uses_three_symmetric_points() {
        let r = finite_alphabet_realization(&DMatrix::identity(2, 2), 3, 9).unwrap();
        assert!(r.mean().amax() < 1e-12);
        assert!((r.second_moment() - DMatrix::identity(2, 2)).amax() < 1e-12);
        for a in 0..3 {
            assert!((r.vectors[a].norm() - 2f64.sqrt()).abs() < 1e-12);
            for b in (a + 1)..3 {
                let cos = r.vectors[a].dot(&r.vectors[b]) / 2.0;
                assert!((cos + 0.5).abs() < 1e-12);
            }
        }
        assert!(finite_alphabet_realization(&DMatrix::identity(2, 2), 2, 9).is_err());
    }

    #[test]
    fn rank_bound_examples() {
        let point = DiscreteDistribution::point_mass(vec![3], &[2]).unwrap();
        let b = rank_bound_check(&point, &FeatureMap::orthonormal(&[3]).unwrap()).unwrap();
        assert_eq!((b.support, b.rank, b.holds), (1, 0, true));
        let coin = DiscreteDistribution::uniform(vec![2]).unwrap();
        let b = rank_bound_check(&coin, &FeatureMap::orthonormal(&[2]).unwrap()).unwrap();
        assert_eq!((b.support, b.rank, b.holds), (2, 1, true));
    }

    #[test]
    fn remainder_distribution_rules() {
        let dag = BipartiteDag::new(2, vec![vec![0], vec![0, 1]]).unwrap();
        let part = BlockPartition::scalar(2).unwrap();
        let dec = Decomposition {
            r: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])),
            components: vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)],
        };
        let merged = distribute_remainder(&dec, &dag, &part).unwrap();
        assert_eq!(merged[0], DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])));
        assert_eq!(merged[1], DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0])));
        let no_r = Decomposition { r: DMatrix::zeros(2, 2), components: merged.clone() };
        assert_eq!(distribute_remainder(&no_r, &dag, &part).unwrap(), merged);
    }

    #[test]
    fn triangle_half_noise_round_trip() {
        let dag = BipartiteDag::triangle();
        let part = BlockPartition::scalar(3).unwrap();
        let c = crate::families::c_matrix(3, 0.5).unwrap();
        let cov = BlockCovariance::new(part.clone(), c.clone()).unwrap();
        let rep = test_compatibility(&cov, &dag, &Tolerances::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::Feasible);
        let dec = rep.decomposition.unwrap();
        let model = realize(&dec, &dag, &part, 1).unwrap();
        assert_eq!(model.latents().len(), 3);
        assert!(realization_error(&model, &dec.sum()).unwrap() < 1e-9);
        assert!((dec.sum() - c).amax() < 1e-7);
    }

    #[test]
    fn parentless_observable_is_independent() {
        let dag = BipartiteDag::new(5, vec![vec![0, 1, 2], vec![1, 4], vec![2, 4]]).unwrap();
        let part = BlockPartition::scalar(5).unwrap();
        let mut comp = vec![DMatrix::zeros(5, 5); 3];
        for (n, e) in dag.hyperedges().iter().enumerate() {
            for &i in e {
                for &j in e {
                    comp[n][(i, j)] = if i == j { 1.0 } else { 0.3 };
                }
            }
        }
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.0, 0.2, 0.7, 0.0]));
        let dec = Decomposition { r, components: comp };
        let model = realize(&dec, &dag, &part, 3).unwrap();
        let cov = model.exact_covariance().unwrap();
        assert!((cov.matrix() - dec.sum()).amax() < 1e-9);
        assert!(matches!(model.responses()[3], Response::Categorical { .. }));
        for j in [0, 1, 2, 4] {
            assert_eq!(cov.matrix()[(3, j)], 0.0);
        }
    }
}
