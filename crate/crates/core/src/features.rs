//! Feature maps, exact block covariances, and how both move under relabelling and local channels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{DiscreteDistribution, LocalChannel};
use crate::error::{Error, Result};
use crate::graph::BlockPartition;
use crate::linalg::{asymmetry, min_eigenvalue, spectral_norm, sym_eigen, symmetrized};

const UNIVERSAL_RANK_TOL: f64 = 1e-10;
const GRAM_FLOOR: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-9;

/// One vector per outcome of each observable; all vectors of an observable share a dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    maps: Vec<Vec<DVector<f64>>>,
}

impl FeatureMap {
    pub fn new(maps: Vec<Vec<DVector<f64>>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::DimensionMismatch("feature map has no observables".into()));
        }
        for (m, vectors) in maps.iter().enumerate() {
            let Some(first) = vectors.first() else {
                return Err(Error::DimensionMismatch(format!("observable {m} has no outcomes")));
            };
            let k = first.len();
            if k == 0 {
                return Err(Error::DimensionMismatch(format!("observable {m} maps to dimension 0")));
            }
            if vectors.iter().any(|v| v.len() != k) {
                return Err(Error::DimensionMismatch(format!(
                    "observable {m} mixes vector dimensions"
                )));
            }
            if vectors.iter().flat_map(|v| v.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Parameter(format!("observable {m} has a non-finite feature")));
            }
        }
        Ok(Self { maps })
    }

    /// Outcome `j` of observable `m` goes to the `j`-th standard basis vector of dimension `D_m`.
    pub fn orthonormal(alphabets: &[usize]) -> Result<Self> {
        Self::new(
            alphabets
                .iter()
                .map(|&d| (0..d).map(|j| DVector::from_fn(d, |i, _| f64::from(u8::from(i == j)))).collect())
                .collect(),
        )
    }

    pub fn num_observables(&self) -> usize {
        self.maps.len()
    }

    pub fn alphabet_sizes(&self) -> Vec<usize> {
        self.maps.iter().map(Vec::len).collect()
    }

    pub fn partition(&self) -> BlockPartition {
        BlockPartition::new(self.maps.iter().map(|v| v[0].len()).collect())
            .expect("feature dimensions are positive")
    }

    pub fn vectors(&self, m: usize) -> &[DVector<f64>] {
        &self.maps[m]
    }

    /// `k_m × D_m` matrix whose columns are the feature vectors.
    pub fn matrix(&self, m: usize) -> DMatrix<f64> {
        DMatrix::from_columns(&self.maps[m])
    }

    pub fn gram(&self, m: usize) -> DMatrix<f64> {
        let y = self.matrix(m);
        y.transpose() * y
    }

    /// Vectors of every observable are linearly independent and span their space.
    pub fn is_universal(&self) -> bool {
        (0..self.maps.len()).all(|m| self.is_universal_at(m))
    }

    fn is_universal_at(&self, m: usize) -> bool {
        let (d, k) = (self.maps[m].len(), self.maps[m][0].len());
        if d != k {
            return false;
        }
        let ev = sym_eigen(&self.gram(m)).eigenvalues;
        let max = ev.iter().copied().fold(0.0, f64::max);
        max > 0.0 && ev.iter().all(|&v| v > UNIVERSAL_RANK_TOL * max)
    }

    fn gram_inverse(&self, m: usize) -> Result<DMatrix<f64>> {
        if !self.is_universal_at(m) {
            return Err(Error::NonUniversal(format!("observable {m}")));
        }
        let eig = sym_eigen(&self.gram(m));
        let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        if eig.eigenvalues.iter().any(|&v| v <= GRAM_FLOOR * max) {
            return Err(Error::NonUniversal(format!("observable {m}: singular Gram matrix")));
        }
        let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
        Ok(&eig.eigenvectors * inv * eig.eigenvectors.transpose())
    }

    pub fn to_json_value(&self) -> FeatureMapJson {
        FeatureMapJson {
            schema: Some(FEATURES_SCHEMA.into()),
            maps: self
                .maps
                .iter()
                .map(|vs| vs.iter().map(|v| v.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

pub const FEATURES_SCHEMA: &str = "lsdp.features/1";
pub const COVARIANCE_SCHEMA: &str = "lsdp.covariance/1";

/// Wire form: `{"maps": [[vector per outcome] per observable]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMapJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub maps: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<FeatureMapJson> for FeatureMap {
    type Error = Error;

    fn try_from(raw: FeatureMapJson) -> Result<Self> {
        FeatureMap::new(
            raw.maps
                .into_iter()
                .map(|vs| vs.into_iter().map(DVector::from_vec).collect())
                .collect(),
        )
    }
}

/// Symmetric PSD matrix with one block per observable.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    partition: BlockPartition,
    matrix: DMatrix<f64>,
}

impl BlockCovariance {
    /// Requires symmetry to 1e-12 (relative) and min eigenvalue ≥ −1e-9·‖M‖₂; stores the symmetrized matrix.
    pub fn new(partition: BlockPartition, matrix: DMatrix<f64>) -> Result<Self> {
        let k = partition.total();
        if matrix.nrows() != k || matrix.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "{}×{} matrix for a partition of total dimension {k}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("covariance has non-finite entries".into()));
        }
        let asym = asymmetry(&matrix);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let matrix = symmetrized(&matrix);
        let min = min_eigenvalue(&matrix);
        if min < -PSD_TOL * spectral_norm(&matrix) {
            return Err(Error::NotPsd(min));
        }
        Ok(Self { partition, matrix })
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Cross block `Cov(Y_m, Y_m')`.
    pub fn block(&self, m: usize, m2: usize) -> DMatrix<f64> {
        let (r, c) = (self.partition.range(m), self.partition.range(m2));
        self.matrix.view((r.start, c.start), (r.len(), c.len())).into_owned()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: CovarianceJson = serde_json::from_str(text)?;
        raw.try_into()
    }

    pub fn to_json_value(&self) -> CovarianceJson {
        CovarianceJson {
            schema: Some(COVARIANCE_SCHEMA.into()),
            dims: self.partition.dims().to_vec(),
            matrix: rows_of(&self.matrix),
        }
    }
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some(i) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::Malformed(format!(
            "{what}: row {i} has {} entries, expected {n}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Wire form: `{"dims": [d_1..d_M], "matrix": [[row], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub dims: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
}

impl TryFrom<CovarianceJson> for BlockCovariance {
    type Error = Error;

    fn try_from(raw: CovarianceJson) -> Result<Self> {
        let partition = BlockPartition::new(raw.dims)?;
        BlockCovariance::new(partition, matrix_from_rows(&raw.matrix, "matrix")?)
    }
}

fn check_alphabets(dist: &DiscreteDistribution, fmap: &FeatureMap) -> Result<()> {
    if dist.alphabet_sizes() != fmap.alphabet_sizes().as_slice() {
        return Err(Error::DimensionMismatch(format!(
            "distribution alphabets {:?} but feature map alphabets {:?}",
            dist.alphabet_sizes(),
            fmap.alphabet_sizes()
        )));
    }
    Ok(())
}

/// Exact covariance of the concatenated feature vectors, from pairwise marginals.
pub fn covariance_from_distribution(
    dist: &DiscreteDistribution,
    fmap: &FeatureMap,
) -> Result<BlockCovariance> {
    check_alphabets(dist, fmap)?;
    let partition = fmap.partition();
    let m_count = fmap.num_observables();
    let singles: Vec<Vec<f64>> = (0..m_count)
        .map(|m| dist.marginalize(&[m]).map(|d| d.pmf().to_vec()))
        .collect::<Result<_>>()?;
    let centered: Vec<Vec<DVector<f64>>> = (0..m_count)
        .map(|m| {
            let vs = fmap.vectors(m);
            let mean = vs
                .iter()
                .zip(&singles[m])
                .fold(DVector::zeros(vs[0].len()), |acc, (v, &p)| acc + v * p);
            vs.iter().map(|v| v - &mean).collect()
        })
        .collect();
    let mut cov = DMatrix::zeros(partition.total(), partition.total());
    for m in 0..m_count {
        let rm = partition.range(m);
        let mut diag = DMatrix::zeros(rm.len(), rm.len());
        for (v, &p) in centered[m].iter().zip(&singles[m]) {
            diag += p * v * v.transpose();
        }
        cov.view_mut((rm.start, rm.start), (rm.len(), rm.len())).copy_from(&diag);
        for m2 in (m + 1)..m_count {
            let r2 = partition.range(m2);
            let pair = dist.marginalize(&[m, m2])?;
            let d2 = fmap.vectors(m2).len();
            let mut cross = DMatrix::zeros(rm.len(), r2.len());
            for (k, &p) in pair.pmf().iter().enumerate() {
                if p != 0.0 {
                    cross += p * &centered[m][k / d2] * centered[m2][k % d2].transpose();
                }
            }
            cov.view_mut((rm.start, r2.start), (rm.len(), r2.len())).copy_from(&cross);
            cov.view_mut((r2.start, rm.start), (r2.len(), rm.len()))
                .copy_from(&cross.transpose());
        }
    }
    BlockCovariance::new(partition, cov)
}

/// Per-block linear maps sending each `from` feature vector to the matching `to` vector.
pub fn transport_map(from: &FeatureMap, to: &FeatureMap) -> Result<Vec<DMatrix<f64>>> {
    if from.alphabet_sizes() != to.alphabet_sizes() {
        return Err(Error::DimensionMismatch("feature maps disagree on alphabet sizes".into()));
    }
    (0..from.num_observables())
        .map(|m| {
            let ginv = from.gram_inverse(m)?;
            Ok(to.matrix(m) * ginv * from.matrix(m).transpose())
        })
        .collect()
}

/// `Φ Cov Φᵀ` for block-diagonal `Φ = ⊕ maps[m]`.
pub fn transport_covariance(cov: &BlockCovariance, maps: &[DMatrix<f64>]) -> Result<BlockCovariance> {
    let from = cov.partition();
    if maps.len() != from.num_blocks() || maps.iter().zip(from.dims()).any(|(f, &d)| f.ncols() != d) {
        return Err(Error::DimensionMismatch("block maps do not fit the covariance".into()));
    }
    let to = BlockPartition::new(maps.iter().map(DMatrix::nrows).collect())?;
    let mut phi = DMatrix::zeros(to.total(), from.total());
    for (m, f) in maps.iter().enumerate() {
        phi.view_mut((to.range(m).start, from.range(m).start), f.shape()).copy_from(f);
    }
    BlockCovariance::new(to, symmetrized(&(&phi * cov.matrix() * phi.transpose())))
}

/// Result of pushing a distribution through local channels at the covariance level.
#[derive(Debug, Clone)]
pub struct Pushforward {
    /// Conditional-mean maps, one per observable.
    pub psi: Vec<DMatrix<f64>>,
    /// Average conditional covariance added by each channel.
    pub w: Vec<DMatrix<f64>>,
    /// Covariance of the output features, computed directly.
    pub cov: BlockCovariance,
}

/// Checks `Cov(Ỹ) = ψ Cov(Y) ψᵀ + ⊕ W_m` against the directly computed output covariance.
pub fn pushforward_covariance(
    dist: &DiscreteDistribution,
    from: &FeatureMap,
    channels: &[LocalChannel],
    to: &FeatureMap,
) -> Result<Pushforward> {
    check_alphabets(dist, from)?;
    if channels.len() != dist.num_variables() {
        return Err(Error::DimensionMismatch("one channel per observable is required".into()));
    }
    let out_alphabets: Vec<usize> = channels.iter().map(LocalChannel::output_size).collect();
    if out_alphabets != to.alphabet_sizes() {
        return Err(Error::DimensionMismatch("target feature map does not match channel outputs".into()));
    }
    let mut psi = Vec::with_capacity(channels.len());
    let mut w = Vec::with_capacity(channels.len());
    for (m, ch) in channels.iter().enumerate() {
        let (din, dout) = (ch.input_size(), ch.output_size());
        let t = DMatrix::from_fn(dout, din, |y, x| ch.prob(y, x));
        let ty = to.matrix(m);
        psi.push(&ty * t * from.gram_inverse(m)? * from.matrix(m).transpose());
        let marginal = dist.marginalize(&[m])?;
        let k = ty.nrows();
        let mut wm = DMatrix::zeros(k, k);
        for (x, &px) in marginal.pmf().iter().enumerate() {
            let mut second = DMatrix::zeros(k, k);
            let mut mean = DVector::zeros(k);
            for (y, v) in to.vectors(m).iter().enumerate() {
                let q = ch.prob(y, x);
                second += q * v * v.transpose();
                mean += q * v;
            }
            wm += px * (second - &mean * mean.transpose());
        }
        let wm = symmetrized(&wm);
        let floor = -1e-12 * wm.amax().max(1.0);
        let min = min_eigenvalue(&wm);
        if min < floor {
            return Err(Error::Invariant(format!("channel noise term {m} not PSD ({min:e})")));
        }
        w.push(wm);
    }
    let input_cov = covariance_from_distribution(dist, from)?;
    let mean_part = transport_covariance(&input_cov, &psi)?;
    let mut predicted = mean_part.into_matrix();
    let part = to.partition();
    for (m, wm) in w.iter().enumerate() {
        let r = part.range(m);
        let mut view = predicted.view_mut((r.start, r.start), (r.len(), r.len()));
        view += wm;
    }
    let cov = covariance_from_distribution(&dist.apply_local_channels(channels)?, to)?;
    let err = (&predicted - cov.matrix()).amax();
    if err > 1e-9 * cov.matrix().amax().max(1.0) {
        return Err(Error::Invariant(format!(
            "local-operation covariance identity off by {err:e}"
        )));
    }
    Ok(Pushforward { psi, w, cov })
}
