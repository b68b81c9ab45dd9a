use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{QuestionPair, Split, UnionFind};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        if ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive: {ratios:?}")));
        }
        if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {ratios:?}")));
        }
        Ok(SplitSpec { ratios, seed })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

/// Assigns each group (given by size) a split index. Groups are shuffled,
/// stably ordered largest first, and each goes to the split currently
/// furthest below its target (ties: train, then valid, then test). Filling
/// large groups first leaves the small ones to even out the totals.
/// `counts` holds the running totals and may start non-zero.
pub(crate) fn assign_by_deficit<R: Rng>(
    sizes: &[usize],
    targets: [f64; 3],
    counts: &mut [usize; 3],
    rng: &mut R,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&g| std::cmp::Reverse(sizes[g]));
    let mut out = vec![0; sizes.len()];
    for g in order {
        let mut best = 0;
        for k in 1..3 {
            if targets[k] - counts[k] as f64 > targets[best] - counts[best] as f64 {
                best = k;
            }
        }
        counts[best] += sizes[g];
        out[g] = best;
    }
    out
}

/// Assigns splits at the level of connected components of the question
/// graph (nodes are questions, links are pairs), so no question id lands in
/// two splits.
///
/// Components are placed by [`assign_by_deficit`] against pair-count targets.
pub fn split_dataset(mut pairs: Vec<QuestionPair>, spec: &SplitSpec) -> Result<Vec<QuestionPair>> {
    SplitSpec::new(spec.ratios, spec.seed)?;
    let mut node: BTreeMap<u64, usize> = BTreeMap::new();
    for p in &pairs {
        for id in [p.id_a, p.id_b] {
            let next = node.len();
            node.entry(id).or_insert(next);
        }
    }
    let mut uf = UnionFind::new(node.len());
    for p in &pairs {
        uf.union(node[&p.id_a], node[&p.id_b]);
    }

    // components in order of their first pair
    let mut comp_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let root = uf.find(node[&p.id_a]);
        let c = *comp_of_root.entry(root).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[c].push(i);
    }
    if members.len() < 3 {
        return Err(Error::Split(format!(
            "{} connected component(s); need at least 3 for disjoint splits",
            members.len()
        )));
    }

    let total = pairs.len() as f64;
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let assigned = assign_by_deficit(&sizes, spec.ratios.map(|r| r * total), &mut [0; 3], &mut rng);
    for (c, &k) in assigned.iter().enumerate() {
        for &i in &members[c] {
            pairs[i].split = Some(Split::ALL[k]);
        }
    }
    Ok(pairs)
}
