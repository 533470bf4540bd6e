//! Latent-variable models on a bipartite DAG, evaluated by exact enumeration.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{DiscreteDistribution, DEFAULT_ENTRY_CAP};
use crate::error::{Error, Result};
use crate::features::{BlockCovariance, FeatureMap};
use crate::graph::{BipartiteDag, BlockPartition};
use crate::linalg::{min_eigenvalue, spectral_norm, symmetrized, KahanSum};
use crate::rng::InstanceRng;

/// Default cap on the number of joint latent configurations enumerated.
pub const DEFAULT_CONFIG_CAP: usize = 1_000_000;

pub const MODEL_SCHEMA: &str = "lsdp.model/1";

/// How an observable responds to its parents.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    /// Categorical outcome drawn from `table[parent configuration]`, reported through `features`.
    /// Parent configurations enumerate the parents in increasing latent order, last fastest.
    Categorical {
        features: Vec<DVector<f64>>,
        table: Vec<Vec<f64>>,
    },
    /// Deterministic vector `Σ_parts part.vectors[outcome of part.latent]`.
    Additive { dim: usize, parts: Vec<AdditivePart> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdditivePart {
    pub latent: usize,
    pub vectors: Vec<DVector<f64>>,
}

impl Response {
    pub fn dim(&self) -> usize {
        match self {
            Response::Categorical { features, .. } => features[0].len(),
            Response::Additive { dim, .. } => *dim,
        }
    }
}

/// Independent finite latents plus one response per observable.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    dag: BipartiteDag,
    latents: Vec<Vec<f64>>,
    responses: Vec<Response>,
    parents: Vec<Vec<usize>>,
}

/// Output of the chain-rule decomposition oracle.
#[derive(Debug, Clone)]
pub struct ChainDecomposition {
    /// Average conditional covariance given all latents (block-diagonal).
    pub r: DMatrix<f64>,
    /// Component attributed to each latent, indexed by latent.
    pub components: Vec<DMatrix<f64>>,
}

fn check_pmf(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidDistribution(format!("{what} is empty or has invalid entries")));
    }
    let total = p.iter().copied().collect::<KahanSum>().value();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidDistribution(format!("{what} sums to {total}")));
    }
    Ok(())
}

impl LatentModel {
    pub fn new(dag: BipartiteDag, latents: Vec<Vec<f64>>, responses: Vec<Response>) -> Result<Self> {
        if latents.len() != dag.num_latents() {
            return Err(Error::DimensionMismatch(format!(
                "{} latent pmfs for {} latents",
                latents.len(),
                dag.num_latents()
            )));
        }
        if responses.len() != dag.num_observables() {
            return Err(Error::DimensionMismatch(format!(
                "{} responses for {} observables",
                responses.len(),
                dag.num_observables()
            )));
        }
        for (n, p) in latents.iter().enumerate() {
            check_pmf(p, &format!("latent {n} pmf"))?;
        }
        let parents: Vec<Vec<usize>> = (0..dag.num_observables())
            .map(|m| dag.parents(m))
            .collect::<Result<_>>()?;
        for (m, resp) in responses.iter().enumerate() {
            match resp {
                Response::Categorical { features, table } => {
                    let k = features.first().map(DVector::len).unwrap_or(0);
                    if k == 0 || features.iter().any(|f| f.len() != k || f.iter().any(|x| !x.is_finite())) {
                        return Err(Error::DimensionMismatch(format!("observable {m}: bad feature vectors")));
                    }
                    let configs: usize = parents[m].iter().map(|&n| latents[n].len()).product();
                    if table.len() != configs {
                        return Err(Error::DimensionMismatch(format!(
                            "observable {m}: {} response rows for {configs} parent configurations",
                            table.len()
                        )));
                    }
                    for (c, row) in table.iter().enumerate() {
                        if row.len() != features.len() {
                            return Err(Error::DimensionMismatch(format!(
                                "observable {m}: response row {c} has the wrong length"
                            )));
                        }
                        check_pmf(row, &format!("observable {m} response row {c}"))?;
                    }
                }
                Response::Additive { dim, parts } => {
                    if *dim == 0 {
                        return Err(Error::DimensionMismatch(format!("observable {m}: dimension 0")));
                    }
                    let mut seen = Vec::new();
                    for part in parts {
                        if !parents[m].contains(&part.latent) || seen.contains(&part.latent) {
                            return Err(Error::InvalidGraph(format!(
                                "observable {m} depends on latent {} which is not a (distinct) parent",
                                part.latent
                            )));
                        }
                        seen.push(part.latent);
                        if part.vectors.len() != latents[part.latent].len()
                            || part.vectors.iter().any(|v| v.len() != *dim || v.iter().any(|x| !x.is_finite()))
                        {
                            return Err(Error::DimensionMismatch(format!(
                                "observable {m}: vectors for latent {} do not fit",
                                part.latent
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { dag, latents, responses, parents })
    }

    pub fn dag(&self) -> &BipartiteDag {
        &self.dag
    }

    pub fn latents(&self) -> &[Vec<f64>] {
        &self.latents
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn partition(&self) -> BlockPartition {
        BlockPartition::new(self.responses.iter().map(Response::dim).collect())
            .expect("response dimensions are positive")
    }

    fn num_configs(&self) -> Result<usize> {
        let mut total: usize = 1;
        for p in &self.latents {
            total = total
                .checked_mul(p.len())
                .filter(|&t| t <= DEFAULT_CONFIG_CAP)
                .ok_or(Error::TooLarge { entries: total.saturating_mul(p.len()), cap: DEFAULT_CONFIG_CAP })?;
        }
        Ok(total)
    }

    /// Every joint latent configuration with its probability, latent 0 slowest.
    fn configs(&self) -> Result<Vec<(Vec<usize>, f64)>> {
        self.num_configs()?;
        if self.latents.is_empty() {
            return Ok(vec![(Vec::new(), 1.0)]);
        }
        Ok(DiscreteDistribution::product(&self.latents)?.outcomes().collect())
    }

    fn response_row(&self, m: usize, config: &[usize]) -> usize {
        self.parents[m]
            .iter()
            .fold(0, |acc, &n| acc * self.latents[n].len() + config[n])
    }

    /// Conditional mean and covariance of every observable given all latents.
    fn conditional_moments(&self, config: &[usize]) -> Vec<(DVector<f64>, DMatrix<f64>)> {
        self.responses
            .iter()
            .enumerate()
            .map(|(m, resp)| match resp {
                Response::Categorical { features, table } => {
                    let row = &table[self.response_row(m, config)];
                    let k = features[0].len();
                    let mean = features.iter().zip(row).fold(DVector::zeros(k), |acc, (f, &p)| acc + f * p);
                    let cov = features.iter().zip(row).fold(DMatrix::zeros(k, k), |acc, (f, &p)| {
                        let c = f - &mean;
                        acc + p * &c * c.transpose()
                    });
                    (mean, cov)
                }
                Response::Additive { dim, parts } => {
                    let mean = parts
                        .iter()
                        .fold(DVector::zeros(*dim), |acc, part| acc + &part.vectors[config[part.latent]]);
                    (mean, DMatrix::zeros(*dim, *dim))
                }
            })
            .collect()
    }

    fn stacked(&self, moments: &[(DVector<f64>, DMatrix<f64>)], part: &BlockPartition) -> (DVector<f64>, DMatrix<f64>) {
        let k = part.total();
        let mut mean = DVector::zeros(k);
        let mut cov = DMatrix::zeros(k, k);
        for (m, (mu, c)) in moments.iter().enumerate() {
            let r = part.range(m);
            mean.rows_mut(r.start, r.len()).copy_from(mu);
            cov.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(c);
        }
        (mean, cov)
    }

    /// Exact covariance of the stacked observable vectors.
    pub fn exact_covariance(&self) -> Result<BlockCovariance> {
        let part = self.partition();
        let k = part.total();
        let configs = self.configs()?;
        let stacked: Vec<(f64, DVector<f64>, DMatrix<f64>)> = configs
            .iter()
            .map(|(l, p)| {
                let (mu, c) = self.stacked(&self.conditional_moments(l), &part);
                (*p, mu, c)
            })
            .collect();
        let mean = stacked.iter().fold(DVector::zeros(k), |acc, (p, mu, _)| acc + mu * *p);
        let mut cov = DMatrix::zeros(k, k);
        for (p, mu, c) in &stacked {
            let d = mu - &mean;
            cov += *p * (&d * d.transpose() + c);
        }
        BlockCovariance::new(part, symmetrized(&cov))
    }

    /// Joint pmf of the observables; requires every response to be categorical.
    pub fn observable_distribution(&self) -> Result<DiscreteDistribution> {
        let mut alphabets = Vec::new();
        for (m, r) in self.responses.iter().enumerate() {
            match r {
                Response::Categorical { features, .. } => alphabets.push(features.len()),
                Response::Additive { .. } => {
                    return Err(Error::Parameter(format!("observable {m} is not categorical")))
                }
            }
        }
        let size = crate::distributions::table_size(&alphabets, DEFAULT_ENTRY_CAP)?;
        let mut pmf = vec![KahanSum::default(); size];
        for (l, pl) in self.configs()? {
            let rows: Vec<Vec<f64>> = self
                .responses
                .iter()
                .enumerate()
                .map(|(m, r)| match r {
                    Response::Categorical { table, .. } => table[self.response_row(m, &l)].clone(),
                    Response::Additive { .. } => unreachable!("checked above"),
                })
                .collect();
            let cond = DiscreteDistribution::product(&rows)?;
            for (acc, &q) in pmf.iter_mut().zip(cond.pmf()) {
                acc.add(pl * q);
            }
        }
        DiscreteDistribution::new(alphabets, pmf.iter().map(KahanSum::value).collect())
    }

    /// Feature map of a fully categorical model.
    pub fn feature_map(&self) -> Result<FeatureMap> {
        FeatureMap::new(
            self.responses
                .iter()
                .enumerate()
                .map(|(m, r)| match r {
                    Response::Categorical { features, .. } => Ok(features.clone()),
                    Response::Additive { .. } => Err(Error::Parameter(format!("observable {m} is not categorical"))),
                })
                .collect::<Result<_>>()?,
        )
    }

    /// Chain-rule split of the covariance along `ordering` (a permutation of the latents).
    ///
    /// Component of the `k`-th latent in the order is the average covariance of the
    /// conditional mean gained by revealing it after its predecessors. Fails with
    /// `Invariant` if the parts are not PSD, leave their support, or miss the covariance.
    pub fn chain_decomposition_oracle(&self, ordering: &[usize]) -> Result<ChainDecomposition> {
        let n_lat = self.latents.len();
        let mut seen = vec![false; n_lat];
        if ordering.len() != n_lat || ordering.iter().any(|&o| o >= n_lat || std::mem::replace(&mut seen[o], true)) {
            return Err(Error::Parameter("ordering is not a permutation of the latents".into()));
        }
        let part = self.partition();
        let k = part.total();
        self.num_configs()?;
        let sizes: Vec<usize> = ordering.iter().map(|&n| self.latents[n].len()).collect();
        let total: usize = sizes.iter().product();

        // Conditional means over full configurations, ordered as `ordering` (first slowest).
        let mut level: Vec<DVector<f64>> = Vec::with_capacity(total);
        let mut r = DMatrix::zeros(k, k);
        let mut config = vec![0; n_lat];
        for idx in 0..total {
            let mut rest = idx;
            let mut prob = 1.0;
            for pos in (0..n_lat).rev() {
                let n = ordering[pos];
                config[n] = rest % sizes[pos];
                rest /= sizes[pos];
                prob *= self.latents[n][config[n]];
            }
            let (mu, c) = self.stacked(&self.conditional_moments(&config), &part);
            r += prob * c;
            level.push(mu);
        }

        let mut components = vec![DMatrix::zeros(k, k); n_lat];
        for pos in (0..n_lat).rev() {
            let n = ordering[pos];
            let d = sizes[pos];
            let prefix_count = level.len() / d;
            let mut next = Vec::with_capacity(prefix_count);
            let mut comp = DMatrix::zeros(k, k);
            for a in 0..prefix_count {
                let prefix_prob: f64 = {
                    let mut rest = a;
                    let mut p = 1.0;
                    for q in (0..pos).rev() {
                        p *= self.latents[ordering[q]][rest % sizes[q]];
                        rest /= sizes[q];
                    }
                    p
                };
                let children = &level[a * d..(a + 1) * d];
                let mean = children
                    .iter()
                    .zip(&self.latents[n])
                    .fold(DVector::zeros(k), |acc, (v, &p)| acc + v * p);
                for (v, &p) in children.iter().zip(&self.latents[n]) {
                    let dv = v - &mean;
                    comp += (prefix_prob * p) * &dv * dv.transpose();
                }
                next.push(mean);
            }
            components[n] = symmetrized(&comp);
            level = next;
        }
        let out = ChainDecomposition { r: symmetrized(&r), components };
        self.check_chain(&out, &part)?;
        Ok(out)
    }

    fn check_chain(&self, dec: &ChainDecomposition, part: &BlockPartition) -> Result<()> {
        let cov = self.exact_covariance()?;
        let scale = spectral_norm(cov.matrix()).max(1.0);
        let sum = dec.components.iter().fold(dec.r.clone(), |acc, c| acc + c);
        let err = (&sum - cov.matrix()).amax();
        if err > 1e-9 * scale {
            return Err(Error::Invariant(format!("chain components miss the covariance by {err:e}")));
        }
        for (n, c) in std::iter::once(&dec.r).chain(&dec.components).enumerate() {
            let min = min_eigenvalue(c);
            if min < -1e-9 * scale {
                return Err(Error::Invariant(format!("chain term {n} has eigenvalue {min:e}")));
            }
        }
        for (n, c) in dec.components.iter().enumerate() {
            let support = self.dag.support_projector(part, n)?;
            let mut inside = vec![false; part.total()];
            support.iter().for_each(|&i| inside[i] = true);
            let leak = (0..part.total())
                .flat_map(|i| (0..part.total()).map(move |j| (i, j)))
                .filter(|&(i, j)| !(inside[i] && inside[j]))
                .map(|(i, j)| c[(i, j)].abs())
                .fold(0.0, f64::max);
            if leak > 1e-10 * scale {
                return Err(Error::Invariant(format!("component {n} leaks {leak:e} outside its support")));
            }
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> ModelJson {
        let vecs = |vs: &[DVector<f64>]| vs.iter().map(|v| v.iter().copied().collect()).collect();
        ModelJson {
            schema: MODEL_SCHEMA.into(),
            dag: (&self.dag).into(),
            latents: self.latents.clone(),
            observables: self
                .responses
                .iter()
                .map(|r| match r {
                    Response::Categorical { features, table } => ResponseJson::Categorical {
                        features: vecs(features),
                        table: table.clone(),
                    },
                    Response::Additive { dim, parts } => ResponseJson::Additive {
                        dim: *dim,
                        parts: parts
                            .iter()
                            .map(|p| PartJson { latent: p.latent + 1, vectors: vecs(&p.vectors) })
                            .collect(),
                    },
                })
                .collect(),
        }
    }
}

/// Wire form of a latent model; latent indices are 1-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJson {
    pub schema: String,
    pub dag: crate::graph::DagJson,
    pub latents: Vec<Vec<f64>>,
    pub observables: Vec<ResponseJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ResponseJson {
    Categorical { features: Vec<Vec<f64>>, table: Vec<Vec<f64>> },
    Additive { dim: usize, parts: Vec<PartJson> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartJson {
    pub latent: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl TryFrom<ModelJson> for LatentModel {
    type Error = Error;

    fn try_from(raw: ModelJson) -> Result<Self> {
        let dag = BipartiteDag::try_from(raw.dag)?;
        let dv = |vs: Vec<Vec<f64>>| vs.into_iter().map(DVector::from_vec).collect();
        let responses = raw
            .observables
            .into_iter()
            .map(|r| match r {
                ResponseJson::Categorical { features, table } => Ok(Response::Categorical { features: dv(features), table }),
                ResponseJson::Additive { dim, parts } => Ok(Response::Additive {
                    dim,
                    parts: parts
                        .into_iter()
                        .map(|p| {
                            if p.latent == 0 {
                                return Err(Error::Malformed("latent indices are 1-based".into()));
                            }
                            Ok(AdditivePart { latent: p.latent - 1, vectors: dv(p.vectors) })
                        })
                        .collect::<Result<_>>()?,
                }),
            })
            .collect::<Result<_>>()?;
        LatentModel::new(dag, raw.latents, responses)
    }
}

/// Size limits for [`random_model`].
#[derive(Debug, Clone, Copy)]
pub struct RandomModelConfig {
    pub max_observables: usize,
    pub max_latents: usize,
    pub max_alphabet: usize,
    pub max_latent_alphabet: usize,
}

impl Default for RandomModelConfig {
    fn default() -> Self {
        Self { max_observables: 5, max_latents: 4, max_alphabet: 3, max_latent_alphabet: 3 }
    }
}

fn random_pmf(rng: &mut InstanceRng, d: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..d).map(|_| -rng.uniform().ln()).collect();
    let total: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
    let rest: f64 = p[..d - 1].iter().sum();
    p[d - 1] = (1.0 - rest).max(0.0);
    p
}

/// Random categorical model on a random DAG: random hyperedges, flat-Dirichlet pmfs,
/// Gaussian feature vectors, and roughly one deterministic response in five.
pub fn random_model(rng: &mut InstanceRng, cfg: RandomModelConfig) -> LatentModel {
    let m_count = rng.random_range(1..=cfg.max_observables);
    let n_count = rng.random_range(0..=cfg.max_latents);
    let edges: Vec<Vec<usize>> = (0..n_count)
        .map(|_| loop {
            let e: Vec<usize> = (0..m_count).filter(|_| rng.random_bool(0.5)).collect();
            if !e.is_empty() {
                break e;
            }
        })
        .collect();
    let dag = BipartiteDag::new(m_count, edges).expect("generated edges are valid");
    let latents: Vec<Vec<f64>> = (0..n_count)
        .map(|_| {
            let d = rng.random_range(1..=cfg.max_latent_alphabet);
            random_pmf(rng, d)
        })
        .collect();
    let responses = (0..m_count)
        .map(|m| {
            let d = rng.random_range(1..=cfg.max_alphabet);
            let features = (0..d)
                .map(|_| DVector::from_fn(d, |_, _| rng.standard_normal()))
                .collect();
            let configs: usize = dag.parents(m).expect("valid").iter().map(|&n| latents[n].len()).product();
            let deterministic = rng.random_bool(0.2);
            let table = (0..configs)
                .map(|_| {
                    if deterministic {
                        let pick = rng.random_range(0..d);
                        (0..d).map(|j| f64::from(u8::from(j == pick))).collect()
                    } else {
                        random_pmf(rng, d)
                    }
                })
                .collect();
            Response::Categorical { features, table }
        })
        .collect();
    LatentModel::new(dag, latents, responses).expect("generated model is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::covariance_from_distribution;

    fn noisy_triangle() -> LatentModel {
        let dag = BipartiteDag::triangle();
        let latents = vec![vec![0.5, 0.5], vec![0.3, 0.7], vec![0.6, 0.4]];
        let responses = (0..3)
            .map(|m| Response::Categorical {
                features: vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
                table: (0..4)
                    .map(|c| {
                        let q = 0.1 + 0.2 * c as f64 + 0.05 * m as f64;
                        vec![q, 1.0 - q]
                    })
                    .collect(),
            })
            .collect();
        LatentModel::new(dag, latents, responses).unwrap()
    }

    #[test]
    fn no_latents_means_r_is_everything() {
        let dag = BipartiteDag::new(2, vec![]).unwrap();
        let resp = Response::Categorical {
            features: vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![2.0])],
            table: vec![vec![0.25, 0.75]],
        };
        let model = LatentModel::new(dag, vec![], vec![resp.clone(), resp]).unwrap();
        let dec = model.chain_decomposition_oracle(&[]).unwrap();
        assert!((dec.r - model.exact_covariance().unwrap().matrix()).amax() < 1e-15);
    }

    #[test]
    fn deterministic_global_latent_has_no_remainder() {
        let dag = BipartiteDag::global_confounder(2).unwrap();
        let resp = |scale: f64| Response::Categorical {
            features: vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![scale])],
            table: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]],
        };
        let model = LatentModel::new(dag, vec![vec![0.2, 0.5, 0.3]], vec![resp(1.0), resp(3.0)]).unwrap();
        let dec = model.chain_decomposition_oracle(&[0]).unwrap();
        assert_eq!(dec.r.amax(), 0.0);
        assert!((&dec.components[0] - model.exact_covariance().unwrap().matrix()).amax() < 1e-15);
    }

    #[test]
    fn triangle_chain_matches_enumeration_for_every_order() {
        let model = noisy_triangle();
        for order in [[0, 1, 2], [2, 1, 0], [1, 0, 2]] {
            model.chain_decomposition_oracle(&order).unwrap();
        }
        assert!(model.chain_decomposition_oracle(&[0, 0, 1]).is_err());
    }

    #[test]
    fn two_covariance_routes_agree() {
        let model = noisy_triangle();
        let dist = model.observable_distribution().unwrap();
        let via_dist = covariance_from_distribution(&dist, &model.feature_map().unwrap()).unwrap();
        assert!((via_dist.matrix() - model.exact_covariance().unwrap().matrix()).amax() < 1e-14);
    }

    #[test]
    fn rejects_inconsistent_models() {
        let dag = BipartiteDag::triangle();
        let bad = Response::Categorical { features: vec![DVector::from_vec(vec![1.0])], table: vec![vec![1.0]] };
        assert!(LatentModel::new(dag.clone(), vec![vec![1.0]; 3], vec![bad.clone(), bad.clone(), bad.clone()]).is_ok());
        assert!(LatentModel::new(dag.clone(), vec![vec![0.5, 0.5]; 3], vec![bad.clone(), bad.clone(), bad]).is_err());
        let foreign = Response::Additive {
            dim: 1,
            parts: vec![AdditivePart { latent: 0, vectors: vec![DVector::from_vec(vec![1.0])] }],
        };
        let ok = Response::Additive { dim: 1, parts: vec![] };
        assert!(LatentModel::new(dag, vec![vec![1.0]; 3], vec![foreign, ok.clone(), ok]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let model = noisy_triangle();
        let text = serde_json::to_string(&model.to_json_value()).unwrap();
        let back = LatentModel::try_from(serde_json::from_str::<ModelJson>(&text).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn random_models_are_valid_and_seeded() {
        let a = random_model(&mut InstanceRng::new(3, 9), RandomModelConfig::default());
        let b = random_model(&mut InstanceRng::new(3, 9), RandomModelConfig::default());
        assert_eq!(a, b);
        for i in 0..50 {
            let m = random_model(&mut InstanceRng::new(5, i), RandomModelConfig::default());
            assert!(m.dag().num_observables() <= 5 && m.dag().num_latents() <= 4);
            m.exact_covariance().unwrap();
        }
    }
}
