//! Exact finite joint distributions and local stochastic channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::KahanSum;
use crate::rng::InstanceRng;

/// Default refusal threshold for dense pmf tables.
pub const DEFAULT_ENTRY_CAP: usize = 10_000_000;

const NORMALIZATION_TOL: f64 = 1e-12;

/// Dense pmf over a product of finite alphabets, row-major with the last variable fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    alphabets: Vec<usize>,
    pmf: Vec<f64>,
}

/// Product of alphabet sizes, refusing anything above `cap`.
pub fn table_size(alphabets: &[usize], cap: usize) -> Result<usize> {
    let mut size: usize = 1;
    for &d in alphabets {
        if d == 0 {
            return Err(Error::InvalidDistribution("alphabet of size 0".into()));
        }
        size = size
            .checked_mul(d)
            .filter(|&s| s <= cap)
            .ok_or(Error::TooLarge { entries: size.saturating_mul(d), cap })?;
    }
    Ok(size)
}

impl DiscreteDistribution {
    pub fn new(alphabets: Vec<usize>, pmf: Vec<f64>) -> Result<Self> {
        Self::new_with_cap(alphabets, pmf, DEFAULT_ENTRY_CAP)
    }

    pub fn new_with_cap(alphabets: Vec<usize>, pmf: Vec<f64>, cap: usize) -> Result<Self> {
        if alphabets.is_empty() {
            return Err(Error::InvalidDistribution("no variables".into()));
        }
        let size = table_size(&alphabets, cap)?;
        if pmf.len() != size {
            return Err(Error::InvalidDistribution(format!(
                "pmf has {} entries, alphabets require {size}",
                pmf.len()
            )));
        }
        if let Some(i) = pmf.iter().position(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {} (must be finite and non-negative)",
                pmf[i]
            )));
        }
        let total = pmf.iter().copied().collect::<KahanSum>().value();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self { alphabets, pmf })
    }

    /// Builds from non-negative weights, normalising them.
    pub fn from_weights(alphabets: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let total = weights.iter().copied().collect::<KahanSum>().value();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidDistribution("weights do not have a positive finite sum".into()));
        }
        Self::new(alphabets, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(alphabets: Vec<usize>) -> Result<Self> {
        let size = table_size(&alphabets, DEFAULT_ENTRY_CAP)?;
        Self::new(alphabets, vec![1.0 / size as f64; size])
    }

    pub fn point_mass(alphabets: Vec<usize>, outcome: &[usize]) -> Result<Self> {
        let size = table_size(&alphabets, DEFAULT_ENTRY_CAP)?;
        let mut pmf = vec![0.0; size];
        let probe = Self { alphabets, pmf: Vec::new() };
        pmf[probe.index_of(outcome)?] = 1.0;
        Self::new(probe.alphabets, pmf)
    }

    /// Independent variables with the given marginals.
    pub fn product(marginals: &[Vec<f64>]) -> Result<Self> {
        let alphabets: Vec<usize> = marginals.iter().map(Vec::len).collect();
        let size = table_size(&alphabets, DEFAULT_ENTRY_CAP)?;
        let mut pmf = vec![1.0; size];
        let mut stride = size;
        for marginal in marginals {
            let d = marginal.len();
            stride /= d;
            for (i, p) in pmf.iter_mut().enumerate() {
                *p *= marginal[(i / stride) % d];
            }
        }
        Self::new(alphabets, pmf)
    }

    pub fn alphabet_sizes(&self) -> &[usize] {
        &self.alphabets
    }

    pub fn num_variables(&self) -> usize {
        self.alphabets.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn index_of(&self, outcome: &[usize]) -> Result<usize> {
        if outcome.len() != self.alphabets.len() {
            return Err(Error::DimensionMismatch(format!(
                "outcome has {} coordinates, expected {}",
                outcome.len(),
                self.alphabets.len()
            )));
        }
        let mut idx = 0;
        for (&x, &d) in outcome.iter().zip(&self.alphabets) {
            if x >= d {
                return Err(Error::IndexOutOfRange { what: "outcome", index: x, count: d });
            }
            idx = idx * d + x;
        }
        Ok(idx)
    }

    pub fn prob(&self, outcome: &[usize]) -> Result<f64> {
        Ok(self.pmf[self.index_of(outcome)?])
    }

    /// All outcomes with their probabilities, in table order.
    pub fn outcomes(&self) -> Outcomes<'_> {
        Outcomes {
            dist: self,
            next: 0,
            current: vec![0; self.alphabets.len()],
        }
    }

    /// Number of outcomes with probability above `threshold`.
    pub fn support_size(&self, threshold: f64) -> usize {
        self.pmf.iter().filter(|&&p| p > threshold).count()
    }

    /// Marginal on `keep` (sorted and deduplicated first).
    pub fn marginalize(&self, keep: &[usize]) -> Result<Self> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() {
            return Err(Error::InvalidDistribution("empty marginal subset".into()));
        }
        if let Some(&bad) = keep.iter().find(|&&k| k >= self.num_variables()) {
            return Err(Error::IndexOutOfRange {
                what: "variable",
                index: bad,
                count: self.num_variables(),
            });
        }
        let out_alphabets: Vec<usize> = keep.iter().map(|&k| self.alphabets[k]).collect();
        let out_size: usize = out_alphabets.iter().product();
        let mut acc = vec![KahanSum::default(); out_size];
        for (outcome, p) in self.outcomes() {
            let idx = keep
                .iter()
                .fold(0, |idx, &k| idx * self.alphabets[k] + outcome[k]);
            acc[idx].add(p);
        }
        Ok(Self {
            alphabets: out_alphabets,
            pmf: acc.iter().map(KahanSum::value).collect(),
        })
    }

    /// Pushforward through independent per-variable channels.
    pub fn apply_local_channels(&self, channels: &[LocalChannel]) -> Result<Self> {
        if channels.len() != self.num_variables() {
            return Err(Error::DimensionMismatch(format!(
                "{} channels for {} variables",
                channels.len(),
                self.num_variables()
            )));
        }
        for (m, (ch, &d)) in channels.iter().zip(&self.alphabets).enumerate() {
            if ch.input != d {
                return Err(Error::DimensionMismatch(format!(
                    "channel {m} takes {} inputs but variable {m} has {d} outcomes",
                    ch.input
                )));
            }
        }
        let out_alphabets: Vec<usize> = channels.iter().map(|c| c.output).collect();
        let mut shape = self.alphabets.clone();
        let mut table = self.pmf.clone();
        for (axis, ch) in channels.iter().enumerate() {
            let mut next_shape = shape.clone();
            next_shape[axis] = ch.output;
            table_size(&next_shape, DEFAULT_ENTRY_CAP)?;
            table = contract_axis(&table, &shape, axis, ch);
            shape = next_shape;
        }
        let total = table.iter().copied().collect::<KahanSum>().value();
        for p in &mut table {
            *p /= total;
        }
        Self::new(out_alphabets, table)
    }

    pub fn to_json_value(&self) -> PmfJson {
        PmfJson {
            alphabets: self.alphabets.clone(),
            pmf: self.pmf.clone(),
        }
    }
}

fn contract_axis(table: &[f64], shape: &[usize], axis: usize, ch: &LocalChannel) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let (din, dout) = (ch.input, ch.output);
    let mut out = vec![0.0; outer * dout * inner];
    for a in 0..outer {
        for x in 0..din {
            let src = &table[(a * din + x) * inner..(a * din + x + 1) * inner];
            for y in 0..dout {
                let w = ch.table[y * din + x];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut out[(a * dout + y) * inner..(a * dout + y + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    out
}

/// Iterator over `(outcome, probability)` pairs.
pub struct Outcomes<'a> {
    dist: &'a DiscreteDistribution,
    next: usize,
    current: Vec<usize>,
}

impl Iterator for Outcomes<'_> {
    type Item = (Vec<usize>, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.dist.pmf.len() {
            return None;
        }
        let item = (self.current.clone(), self.dist.pmf[self.next]);
        self.next += 1;
        for k in (0..self.current.len()).rev() {
            self.current[k] += 1;
            if self.current[k] < self.dist.alphabets[k] {
                break;
            }
            self.current[k] = 0;
        }
        Some(item)
    }
}

/// Wire form: `{"alphabets":[D1..DM], "pmf":[...]}`, last index fastest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmfJson {
    pub alphabets: Vec<usize>,
    pub pmf: Vec<f64>,
}

impl TryFrom<PmfJson> for DiscreteDistribution {
    type Error = Error;

    fn try_from(raw: PmfJson) -> Result<Self> {
        Self::new(raw.alphabets, raw.pmf)
    }
}

/// Conditional table `P(out | in)`; each input column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalChannel {
    input: usize,
    output: usize,
    /// `table[out * input + in]`.
    table: Vec<f64>,
}

impl LocalChannel {
    /// `table[out][in]` layout flattened row-major.
    pub fn new(input: usize, output: usize, table: Vec<f64>) -> Result<Self> {
        if input == 0 || output == 0 || table.len() != input * output {
            return Err(Error::DimensionMismatch(format!(
                "channel table of {} entries for {input} inputs and {output} outputs",
                table.len()
            )));
        }
        if table.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidDistribution("negative or non-finite channel entry".into()));
        }
        for x in 0..input {
            let col: f64 = (0..output).map(|y| table[y * input + x]).sum();
            if (col - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "channel column {x} sums to {col}"
                )));
            }
        }
        Ok(Self { input, output, table })
    }

    pub fn identity(d: usize) -> Result<Self> {
        Self::deterministic(&(0..d).collect::<Vec<_>>(), d)
    }

    /// `in ↦ map[in]` with probability one.
    pub fn deterministic(map: &[usize], output: usize) -> Result<Self> {
        let mut table = vec![0.0; map.len() * output];
        for (x, &y) in map.iter().enumerate() {
            if y >= output {
                return Err(Error::IndexOutOfRange { what: "channel output", index: y, count: output });
            }
            table[y * map.len() + x] = 1.0;
        }
        Self::new(map.len(), output, table)
    }

    /// Keeps the input with probability `1 − p`, otherwise emits a uniform symbol.
    pub fn depolarizing(p: f64, d: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!("noise level {p} outside [0, 1]")));
        }
        if d < 2 {
            return Err(Error::Parameter(format!("alphabet size {d} must be at least 2")));
        }
        let table = (0..d * d)
            .map(|k| {
                let diag = if k / d == k % d { 1.0 - p } else { 0.0 };
                diag + p / d as f64
            })
            .collect();
        Self::new(d, d, table)
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn output_size(&self) -> usize {
        self.output
    }

    pub fn prob(&self, out: usize, inp: usize) -> f64 {
        self.table[out * self.input + inp]
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &LocalChannel) -> Result<Self> {
        if next.input != self.output {
            return Err(Error::DimensionMismatch("channel composition sizes differ".into()));
        }
        let table = (0..next.output * self.input)
            .map(|k| {
                let (z, x) = (k / self.input, k % self.input);
                (0..self.output).map(|y| next.prob(z, y) * self.prob(y, x)).sum()
            })
            .collect();
        Ok(Self {
            input: self.input,
            output: next.output,
            table,
        })
    }

    /// True when every column is a point mass.
    pub fn is_deterministic(&self) -> bool {
        (0..self.input).all(|x| (0..self.output).any(|y| self.prob(y, x) == 1.0))
    }
}

/// Perfectly correlated uniform `m`-tuple over `d` symbols, each copy depolarized with strength `p`.
pub fn family_pmd(m: usize, d: usize, p: f64) -> Result<DiscreteDistribution> {
    family_pmd_with_cap(m, d, p, DEFAULT_ENTRY_CAP)
}

pub fn family_pmd_with_cap(m: usize, d: usize, p: f64, cap: usize) -> Result<DiscreteDistribution> {
    if m == 0 {
        return Err(Error::Parameter("family needs at least one variable".into()));
    }
    let channel = LocalChannel::depolarizing(p, d)?;
    let alphabets = vec![d; m];
    let size = table_size(&alphabets, cap)?;
    let mut pmf = vec![0.0; size];
    let diag_step = (0..m).fold(0, |acc, _| acc * d + 1);
    for x in 0..d {
        pmf[x * diag_step] = 1.0 / d as f64;
    }
    let correlated = DiscreteDistribution::new_with_cap(alphabets, pmf, cap)?;
    correlated.apply_local_channels(&vec![channel; m])
}

/// Three-spin Gibbs distribution `∝ exp(−xᵀJx)`; outcome 0 is spin −1, outcome 1 is spin +1.
pub fn ising_distribution(j: &[[f64; 3]; 3]) -> Result<DiscreteDistribution> {
    if j.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite coupling".into()));
    }
    let energies: Vec<f64> = (0..8)
        .map(|k| {
            let x = [spin(k >> 2), spin(k >> 1), spin(k)];
            (0..3)
                .flat_map(|a| (0..3).map(move |b| (a, b)))
                .map(|(a, b)| x[a] * j[a][b] * x[b])
                .sum()
        })
        .collect();
    let lowest = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let weights = energies.iter().map(|e| (lowest - e).exp()).collect();
    DiscreteDistribution::from_weights(vec![2, 2, 2], weights)
}

fn spin(bit: usize) -> f64 {
    if bit & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Nine independent standard normals from stream `(seed, stream)`, row-major.
pub fn random_ising(seed: u64, stream: u64) -> [[f64; 3]; 3] {
    let mut rng = InstanceRng::new(seed, stream);
    let mut j = [[0.0; 3]; 3];
    for v in j.iter_mut().flatten() {
        *v = rng.standard_normal();
    }
    j
}
