use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::derive_seed;
use crate::error::{Error, Result};

/// Fractions of (train, test, train_val, test_val).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub fractions: [f64; 4],
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.6, 0.2, 0.1, 0.1],
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Split(format!("fractions {:?} must be non-negative", self.fractions)));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions {:?} sum to {sum}, not 1", self.fractions)));
        }
        Ok(())
    }

    fn active_parts(&self) -> usize {
        self.fractions.iter().filter(|f| **f > 0.0).count()
    }
}

/// Disjoint index sets into the dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_val: Vec<usize>,
    pub test_val: Vec<usize>,
}

impl SplitIndices {
    pub fn parts(&self) -> [&[usize]; 4] {
        [&self.train, &self.test, &self.train_val, &self.test_val]
    }

    pub fn sizes(&self) -> [usize; 4] {
        self.parts().map(<[usize]>::len)
    }
}

/// Indices of each label, in dataset order.
fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        out.entry(l).or_default().push(i);
    }
    out
}

/// Largest-remainder apportionment of `n` items over `fractions`.
fn apportion(n: usize, fractions: &[f64; 4]) -> [usize; 4] {
    let ideal = fractions.map(|f| f * n as f64);
    let mut counts = ideal.map(|x| x.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).filter(|&i| fractions[i] > 0.0).collect();
    order.sort_by(|&a, &b| (ideal[b] - ideal[b].floor()).total_cmp(&(ideal[a] - ideal[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn assign(indices: &[usize], counts: [usize; 4], out: &mut SplitIndices) {
    let mut start = 0;
    let parts = [&mut out.train, &mut out.test, &mut out.train_val, &mut out.test_val];
    for (part, c) in parts.into_iter().zip(counts) {
        part.extend_from_slice(&indices[start..start + c]);
        start += c;
    }
}

/// Four-way split of a labeled dataset.
///
/// Stratified splits shuffle each class separately and apportion it by the
/// fractions, so every class lands within one sample of its share. Each
/// returned index set is sorted.
pub fn stratified_split(labels: &[usize], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(Error::Split("cannot split an empty dataset".into()));
    }
    let mut out = SplitIndices::default();
    if spec.stratified {
        let min = spec.active_parts();
        for (class, mut idx) in by_class(labels) {
            if idx.len() < min {
                return Err(Error::Split(format!(
                    "class {class} has {} samples, needs at least {min}",
                    idx.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, class as u64));
            idx.shuffle(&mut rng);
            assign(&idx, apportion(idx.len(), &spec.fractions), &mut out);
        }
    } else {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
        assign(&idx, apportion(idx.len(), &spec.fractions), &mut out);
    }
    for part in [&mut out.train, &mut out.test, &mut out.train_val, &mut out.test_val] {
        part.sort_unstable();
    }
    Ok(out)
}

/// Stratified assignment of every sample to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// `(train, eval)` indices for fold `i`.
    pub fn fold(&self, i: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if i >= self.k {
            return Err(Error::Split(format!("fold {i} of {}", self.k)));
        }
        let (eval, train): (Vec<usize>, Vec<usize>) = (0..self.assignments.len()).partition(|&s| self.assignments[s] == i);
        Ok((train, eval))
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Deals each shuffled class round-robin over the folds.
///
/// The dealing position carries over from class to class, so total fold sizes
/// also differ by at most one.
pub fn make_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Split(format!("k-fold needs k ≥ 2, got {k}")));
    }
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for (class, mut idx) in by_class(labels) {
        if idx.len() < k {
            return Err(Error::Split(format!("class {class} has {} samples, fewer than k = {k}", idx.len())));
        }
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, class as u64)));
        for s in idx {
            assignments[s] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan { k, assignments, seed })
}
