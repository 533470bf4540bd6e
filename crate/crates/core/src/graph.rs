//! Bipartite latent DAGs, stored as hypergraphs of latent causes over observables.
//!
//! Library indices are 0-based. The JSON form uses 1-based observable indices.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observables `0..M` plus one hyperedge (set of children) per latent.
#[derive(Debug, Clone)]
pub struct BipartiteDag {
    num_observables: usize,
    hyperedges: Vec<Vec<usize>>,
    labels: Option<Labels>,
}

/// Optional display names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    #[serde(default)]
    pub observables: Vec<String>,
    #[serde(default)]
    pub latents: Vec<String>,
}

impl BipartiteDag {
    /// Each hyperedge must be non-empty and within `0..num_observables`; members are sorted and deduplicated.
    pub fn new(num_observables: usize, hyperedges: Vec<Vec<usize>>) -> Result<Self> {
        if num_observables == 0 {
            return Err(Error::InvalidGraph("at least one observable is required".into()));
        }
        let mut edges = Vec::with_capacity(hyperedges.len());
        for (n, mut edge) in hyperedges.into_iter().enumerate() {
            if edge.is_empty() {
                return Err(Error::InvalidGraph(format!("latent {n} has no children")));
            }
            if let Some(&bad) = edge.iter().find(|&&m| m >= num_observables) {
                return Err(Error::IndexOutOfRange {
                    what: "observable",
                    index: bad,
                    count: num_observables,
                });
            }
            edge.sort_unstable();
            edge.dedup();
            edges.push(edge);
        }
        Ok(Self {
            num_observables,
            hyperedges: edges,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if !labels.observables.is_empty() && labels.observables.len() != self.num_observables {
            return Err(Error::InvalidGraph("observable label count differs from M".into()));
        }
        if !labels.latents.is_empty() && labels.latents.len() != self.hyperedges.len() {
            return Err(Error::InvalidGraph("latent label count differs from N".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Three observables, each pair sharing its own latent.
    pub fn triangle() -> Self {
        Self::new(3, vec![vec![1, 2], vec![0, 2], vec![0, 1]]).expect("static triangle")
    }

    /// One latent parenting all `m` observables.
    pub fn global_confounder(m: usize) -> Result<Self> {
        Self::new(m, vec![(0..m).collect()])
    }

    pub fn num_observables(&self) -> usize {
        self.num_observables
    }

    pub fn num_latents(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn children(&self, n: usize) -> Result<&[usize]> {
        self.hyperedges
            .get(n)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                what: "latent",
                index: n,
                count: self.hyperedges.len(),
            })
    }

    pub fn parents(&self, m: usize) -> Result<Vec<usize>> {
        if m >= self.num_observables {
            return Err(Error::IndexOutOfRange {
                what: "observable",
                index: m,
                count: self.num_observables,
            });
        }
        Ok(self
            .hyperedges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.binary_search(&m).is_ok())
            .map(|(n, _)| n)
            .collect())
    }

    /// Largest number of children of any latent (0 when there are no latents).
    pub fn max_latent_degree(&self) -> usize {
        self.hyperedges.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Row/column coordinates covered by the children blocks of latent `n`.
    pub fn support_projector(&self, partition: &BlockPartition, n: usize) -> Result<Vec<usize>> {
        self.check_partition(partition)?;
        Ok(self
            .children(n)?
            .iter()
            .flat_map(|&m| partition.range(m))
            .collect())
    }

    pub fn check_partition(&self, partition: &BlockPartition) -> Result<()> {
        if partition.num_blocks() != self.num_observables {
            return Err(Error::DimensionMismatch(format!(
                "partition has {} blocks but the dag has {} observables",
                partition.num_blocks(),
                self.num_observables
            )));
        }
        Ok(())
    }

    /// Hyperedges sorted lexicographically; the canonical form used for equality.
    pub fn canonical_hyperedges(&self) -> Vec<Vec<usize>> {
        let mut e = self.hyperedges.clone();
        e.sort();
        e
    }

    /// Same observables, hyperedges reordered by `order` (a permutation of `0..N`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.num_latents()];
        for &o in order {
            if o >= seen.len() || std::mem::replace(&mut seen[o], true) {
                return Err(Error::InvalidGraph("not a permutation of the latents".into()));
            }
        }
        if order.len() != self.num_latents() {
            return Err(Error::InvalidGraph("not a permutation of the latents".into()));
        }
        Self::new(
            self.num_observables,
            order.iter().map(|&o| self.hyperedges[o].clone()).collect(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: DagJson = serde_json::from_str(text)?;
        raw.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&DagJson::from(self)).expect("dag serialization is infallible")
    }
}

impl PartialEq for BipartiteDag {
    fn eq(&self, other: &Self) -> bool {
        self.num_observables == other.num_observables
            && self.canonical_hyperedges() == other.canonical_hyperedges()
    }
}

impl Eq for BipartiteDag {}

impl std::hash::Hash for BipartiteDag {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.num_observables.hash(state);
        self.canonical_hyperedges().hash(state);
    }
}

/// Wire form: `{"observables": M, "hyperedges": [[1,2], ...]}` with 1-based indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagJson {
    pub observables: usize,
    pub hyperedges: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
}

impl TryFrom<DagJson> for BipartiteDag {
    type Error = Error;

    fn try_from(raw: DagJson) -> Result<Self> {
        let mut edges = Vec::with_capacity(raw.hyperedges.len());
        for (n, edge) in raw.hyperedges.iter().enumerate() {
            let mut e = Vec::with_capacity(edge.len());
            for (k, &m) in edge.iter().enumerate() {
                if m == 0 || m > raw.observables {
                    return Err(Error::Malformed(format!(
                        "hyperedges[{n}][{k}] = {m} is outside 1..={}",
                        raw.observables
                    )));
                }
                e.push(m - 1);
            }
            edges.push(e);
        }
        let dag = Self::new(raw.observables, edges)?;
        match raw.labels {
            Some(l) => dag.with_labels(l),
            None => Ok(dag),
        }
    }
}

impl From<&BipartiteDag> for DagJson {
    fn from(dag: &BipartiteDag) -> Self {
        Self {
            observables: dag.num_observables,
            hyperedges: dag
                .hyperedges
                .iter()
                .map(|e| e.iter().map(|m| m + 1).collect())
                .collect(),
            labels: dag.labels.clone(),
        }
    }
}

/// Per-observable block dimensions of the concatenated feature space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::DimensionMismatch("partition needs at least one block".into()));
        }
        if let Some(m) = dims.iter().position(|&d| d == 0) {
            return Err(Error::DimensionMismatch(format!("block {m} has dimension 0")));
        }
        let offsets = dims
            .iter()
            .scan(0, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect();
        Ok(Self { dims, offsets })
    }

    /// `m` scalar blocks.
    pub fn scalar(m: usize) -> Result<Self> {
        Self::new(vec![1; m])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn total(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0) + self.dims.last().copied().unwrap_or(0)
    }

    pub fn range(&self, m: usize) -> Range<usize> {
        self.offsets[m]..self.offsets[m] + self.dims[m]
    }

    /// Block owning coordinate `i`.
    pub fn block_of(&self, i: usize) -> usize {
        self.offsets.partition_point(|&o| o <= i) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2() -> BipartiteDag {
        BipartiteDag::new(5, vec![vec![0, 1, 2], vec![1, 4], vec![2, 4]]).unwrap()
    }

    #[test]
    fn children_examples() {
        assert_eq!(BipartiteDag::triangle().children(0).unwrap(), &[1, 2]);
        let g = BipartiteDag::global_confounder(4).unwrap();
        assert_eq!(g.children(0).unwrap(), &[0, 1, 2, 3]);
        assert_eq!(fig2().children(1).unwrap(), &[1, 4]);
        assert!(matches!(
            fig2().children(3),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn parents_examples() {
        assert!(fig2().parents(3).unwrap().is_empty());
        assert_eq!(BipartiteDag::triangle().parents(0).unwrap(), vec![1, 2]);
        let empty = BipartiteDag::new(3, vec![]).unwrap();
        assert!(empty.parents(2).unwrap().is_empty());
        assert!(empty.parents(3).is_err());
    }

    #[test]
    fn support_projector_examples() {
        let t = BipartiteDag::triangle();
        let p = BlockPartition::new(vec![2, 2, 2]).unwrap();
        assert_eq!(t.support_projector(&p, 2).unwrap(), vec![0, 1, 2, 3]);
        let s = BlockPartition::scalar(3).unwrap();
        assert_eq!(t.support_projector(&s, 0).unwrap(), vec![1, 2]);
        let s5 = BlockPartition::scalar(5).unwrap();
        assert_eq!(fig2().support_projector(&s5, 0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(BipartiteDag::new(3, vec![vec![]]).is_err());
        assert!(BipartiteDag::new(3, vec![vec![3]]).is_err());
        assert!(BipartiteDag::new(0, vec![]).is_err());
        assert!(BipartiteDag::from_json(r#"{"observables":3,"hyperedges":[[0,1]]}"#).is_err());
        assert!(BipartiteDag::from_json(r#"{"observables":3,"hyperedges":[[1,4]]}"#).is_err());
    }

    #[test]
    fn equality_ignores_hyperedge_order() {
        let t = BipartiteDag::triangle();
        assert_eq!(t, t.permuted(&[2, 0, 1]).unwrap());
        assert_ne!(t, BipartiteDag::global_confounder(3).unwrap());
    }

    #[test]
    fn json_uses_one_based_indices() {
        let t = BipartiteDag::from_json(r#"{"observables":3,"hyperedges":[[2,3],[1,3],[1,2]]}"#)
            .unwrap();
        assert_eq!(t, BipartiteDag::triangle());
        assert_eq!(BipartiteDag::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn partition_offsets() {
        let p = BlockPartition::new(vec![2, 3, 1]).unwrap();
        assert_eq!(p.total(), 6);
        assert_eq!(p.range(1), 2..5);
        assert_eq!(p.block_of(4), 1);
        assert_eq!(p.block_of(5), 2);
        assert!(BlockPartition::new(vec![1, 0]).is_err());
    }
}
