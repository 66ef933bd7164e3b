use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Assignment of every sample to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// `(train, test)` index lists for fold `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.assignments.len()).partition(|&i| self.assignments[i] == fold);
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

fn members_by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// Stratified k-fold assignment: each class is shuffled and dealt round-robin,
/// continuing from where the previous class stopped so fold sizes stay level.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut members = members_by_class(labels);
    for (class, m) in members.iter().enumerate() {
        if m.len() < k {
            return Err(Error::ClassTooSmall {
                class,
                count: m.len(),
                k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for m in &mut members {
        m.shuffle(&mut rng);
        for &i in m.iter() {
            assignments[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, assignments, seed })
}

/// Split `indices` into `(kept, held_out)` with about `fraction` of the rows held
/// out, spread across classes as evenly as possible. Every class keeps at least
/// one row and the held-out part is never empty.
pub fn stratified_holdout(indices: &[usize], labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let n = indices.len();
    let classes = indices.iter().map(|&i| labels[i]).max().map_or(0, |m| m + 1);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in indices {
        per_class[labels[i]].push(i);
    }
    let present = per_class.iter().filter(|m| !m.is_empty()).count();
    let capacity = n.saturating_sub(present);
    let target = ((fraction * n as f64).round() as usize).clamp(1, capacity.max(1));
    if capacity == 0 {
        return Err(Error::Config(format!("cannot hold out samples from {n} rows over {present} classes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in &mut per_class {
        m.shuffle(&mut rng);
    }
    // Largest-remainder apportionment of the target across classes.
    let mut quota: Vec<usize> = Vec::with_capacity(classes);
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    for (c, m) in per_class.iter().enumerate() {
        let exact = target as f64 * m.len() as f64 / n as f64;
        let q = (exact.floor() as usize).min(m.len().saturating_sub(1));
        quota.push(q);
        if m.len() > q + 1 {
            remainders.push((exact - q as f64, c));
        }
    }
    let mut assigned: usize = quota.iter().sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    'fill: while assigned < target {
        let before = assigned;
        for &(_, c) in &remainders {
            if assigned == target {
                break 'fill;
            }
            if quota[c] + 1 < per_class[c].len() {
                quota[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    let mut kept = Vec::with_capacity(n - assigned);
    let mut held = Vec::with_capacity(assigned);
    for (m, &q) in per_class.iter().zip(&quota) {
        held.extend_from_slice(&m[..q]);
        kept.extend_from_slice(&m[q..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    Ok((kept, held))
}
