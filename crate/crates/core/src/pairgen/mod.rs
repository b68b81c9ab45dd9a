//! Labeled pair construction: positives from duplicate links, an equal
//! number of tag-similar hard negatives, and a split that never lets one
//! question appear in two partitions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use crate::ingest::{read_jsonl, write_jsonl, DuplicateEdge, Question};

mod split;

pub use split::{split_dataset, SplitSpec};
use split::assign_by_deficit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Input(format!("unknown split {s:?}"))),
        }
    }
}

/// A labeled question pair, stored with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionPair {
    #[serde(rename = "a")]
    pub id_a: u64,
    #[serde(rename = "b")]
    pub id_b: u64,
    pub label: u8,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split: Option<Split>,
}

impl QuestionPair {
    pub fn new(x: u64, y: u64, label: u8) -> QuestionPair {
        QuestionPair {
            id_a: x.min(y),
            id_b: x.max(y),
            label,
            split: None,
        }
    }

    pub fn key(&self) -> (u64, u64) {
        (self.id_a, self.id_b)
    }
}

/// Disjoint-set forest over dense indices.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// One positive pair per distinct unordered edge whose endpoints both exist.
/// Returns the pairs sorted by `(a, b)` and the number of dropped edges.
pub fn build_positive_pairs(
    edges: &[DuplicateEdge],
    questions: &[Question],
) -> (Vec<QuestionPair>, usize) {
    let ids: HashSet<u64> = questions.iter().map(|q| q.id).collect();
    let mut dropped = 0;
    let mut keys = BTreeSet::new();
    for e in edges {
        if ids.contains(&e.post_id) && ids.contains(&e.related_post_id) {
            keys.insert(QuestionPair::new(e.post_id, e.related_post_id, 1).key());
        } else {
            dropped += 1;
        }
    }
    let pairs = keys
        .into_iter()
        .map(|(a, b)| QuestionPair::new(a, b, 1))
        .collect();
    (pairs, dropped)
}

/// |A ∩ B| / |A ∪ B|; zero when both sets are empty.
pub fn tag_jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Maps every question to the root of its duplicate-link component.
fn duplicate_components(sorted: &[&Question], edges: &[DuplicateEdge]) -> Vec<usize> {
    let pos: HashMap<u64, usize> = sorted.iter().enumerate().map(|(i, q)| (q.id, i)).collect();
    let mut uf = UnionFind::new(sorted.len());
    for e in edges {
        if let (Some(&a), Some(&b)) = (pos.get(&e.post_id), pos.get(&e.related_post_id)) {
            uf.union(a, b);
        }
    }
    (0..sorted.len()).map(|i| uf.find(i)).collect()
}

/// Visits every eligible negative pair (as indices into `sorted`, `i < j`)
/// in a fixed order.
fn for_each_candidate(
    sorted: &[&Question],
    roots: &[usize],
    tag_jaccard_min: f64,
    mut visit: impl FnMut(usize, usize),
) {
    let n = sorted.len();
    if tag_jaccard_min <= 0.0 {
        for i in 0..n {
            for j in i + 1..n {
                if roots[i] != roots[j] {
                    visit(i, j);
                }
            }
        }
        return;
    }
    let mut postings: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, q) in sorted.iter().enumerate() {
        for t in &q.tags {
            postings.entry(t.as_str()).or_default().push(i);
        }
    }
    let mut marker = vec![usize::MAX; n];
    let mut cands = Vec::new();
    for i in 0..n {
        cands.clear();
        for t in &sorted[i].tags {
            let list = &postings[t.as_str()];
            let start = list.partition_point(|&j| j <= i);
            for &j in &list[start..] {
                if marker[j] != i {
                    marker[j] = i;
                    cands.push(j);
                }
            }
        }
        cands.sort_unstable();
        for &j in &cands {
            if roots[i] != roots[j]
                && tag_jaccard(&sorted[i].tags, &sorted[j].tags) >= tag_jaccard_min
            {
                visit(i, j);
            }
        }
    }
}

/// Number of eligible negative pairs.
pub fn count_negative_candidates(
    questions: &[Question],
    edges: &[DuplicateEdge],
    tag_jaccard_min: f64,
) -> usize {
    let mut sorted: Vec<&Question> = questions.iter().collect();
    sorted.sort_by_key(|q| q.id);
    let roots = duplicate_components(&sorted, edges);
    let mut count = 0;
    for_each_candidate(&sorted, &roots, tag_jaccard_min, |_, _| count += 1);
    count
}

/// Samples `n` non-duplicate pairs uniformly among those whose tag Jaccard
/// is at least `tag_jaccard_min` and that are not connected, directly or
/// transitively, by duplicate links. Reservoir sampling keeps memory at
/// `O(n)` regardless of the candidate count.
pub fn sample_hard_negatives(
    questions: &[Question],
    edges: &[DuplicateEdge],
    n: usize,
    seed: u64,
    tag_jaccard_min: f64,
) -> Result<Vec<QuestionPair>> {
    sample_among(questions.iter().collect(), edges, n, seed, tag_jaccard_min)
}

fn sample_among(
    mut sorted: Vec<&Question>,
    edges: &[DuplicateEdge],
    n: usize,
    seed: u64,
    tag_jaccard_min: f64,
) -> Result<Vec<QuestionPair>> {
    sorted.sort_by_key(|q| q.id);
    let roots = duplicate_components(&sorted, edges);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<(usize, usize)> = Vec::with_capacity(n);
    let mut seen = 0usize;
    for_each_candidate(&sorted, &roots, tag_jaccard_min, |i, j| {
        if reservoir.len() < n {
            reservoir.push((i, j));
        } else if n > 0 {
            let k = rng.gen_range(0..=seen);
            if k < n {
                reservoir[k] = (i, j);
            }
        }
        seen += 1;
    });
    if seen < n {
        return Err(Error::InsufficientCandidates {
            requested: n,
            available: seen,
        });
    }
    let mut pairs: Vec<QuestionPair> = reservoir
        .into_iter()
        .map(|(i, j)| QuestionPair::new(sorted[i].id, sorted[j].id, 0))
        .collect();
    pairs.sort_by_key(QuestionPair::key);
    Ok(pairs)
}

/// Samples with `tag_jaccard_min`, retrying with "at least one shared tag"
/// when the pool is too small. The flag reports whether the retry happened.
fn sample_with_fallback(
    questions: Vec<&Question>,
    edges: &[DuplicateEdge],
    n: usize,
    seed: u64,
    tag_jaccard_min: f64,
) -> Result<(Vec<QuestionPair>, bool)> {
    match sample_among(questions.clone(), edges, n, seed, tag_jaccard_min) {
        Err(Error::InsufficientCandidates { available, .. }) if tag_jaccard_min > 0.0 => {
            log::warn!(
                "only {available} negatives at tag Jaccard >= {tag_jaccard_min}; falling back to any shared tag"
            );
            let pairs = sample_among(questions, edges, n, seed, f64::MIN_POSITIVE)?;
            Ok((pairs, true))
        }
        other => Ok((other?, false)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairGenConfig {
    pub ratios: [f64; 3],
    pub tag_jaccard_min: f64,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        PairGenConfig {
            ratios: [0.8, 0.1, 0.1],
            tag_jaccard_min: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub positives: usize,
    pub negatives: usize,
    pub dropped_edges: usize,
    /// Whether the "at least one shared tag" fallback pool was used.
    pub used_fallback: bool,
    pub split_counts: [usize; 3],
    pub split_questions: [usize; 3],
}

/// Full dataset construction.
///
/// Duplicate-closure components (every question belongs to one, possibly a
/// singleton) are assigned to splits first: components holding positives
/// by positive-pair count, the remaining questions by question count. Each
/// split then draws as many hard negatives as it has positives, from its
/// own questions only. Splits therefore never share a question, and
/// negatives cannot chain the question graph into one giant component.
pub fn generate_pairs(
    questions: &[Question],
    edges: &[DuplicateEdge],
    cfg: &PairGenConfig,
    seed: u64,
) -> Result<(Vec<QuestionPair>, PairStats)> {
    SplitSpec::new(cfg.ratios, seed)?;
    let (mut positives, dropped) = build_positive_pairs(edges, questions);

    let mut sorted: Vec<&Question> = questions.iter().collect();
    sorted.sort_by_key(|q| q.id);
    sorted.dedup_by_key(|q| q.id);
    let roots = duplicate_components(&sorted, edges);
    let index: HashMap<u64, usize> = sorted.iter().enumerate().map(|(i, q)| (q.id, i)).collect();

    // groups in order of their smallest question id
    let mut group_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, &r) in roots.iter().enumerate() {
        let g = *group_of_root.entry(r).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[g].push(i);
    }
    let mut pos_count = vec![0usize; members.len()];
    for p in &positives {
        pos_count[group_of_root[&roots[index[&p.id_a]]]] += 1;
    }
    let (with_pos, without): (Vec<usize>, Vec<usize>) =
        (0..members.len()).partition(|&g| pos_count[g] > 0);
    if with_pos.len() < 3 {
        return Err(Error::Split(format!(
            "{} duplicate component(s); need at least 3 for disjoint splits",
            with_pos.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut group_split = vec![0usize; members.len()];
    let total_pos = positives.len() as f64;
    let mut pair_counts = [0usize; 3];
    let sizes: Vec<usize> = with_pos.iter().map(|&g| pos_count[g]).collect();
    for (k, s) in assign_by_deficit(&sizes, cfg.ratios.map(|r| r * total_pos), &mut pair_counts, &mut rng)
        .into_iter()
        .enumerate()
    {
        group_split[with_pos[k]] = s;
    }
    let mut question_counts = [0usize; 3];
    for &g in &with_pos {
        question_counts[group_split[g]] += members[g].len();
    }
    let total_q = sorted.len() as f64;
    let sizes: Vec<usize> = without.iter().map(|&g| members[g].len()).collect();
    for (k, s) in assign_by_deficit(&sizes, cfg.ratios.map(|r| r * total_q), &mut question_counts, &mut rng)
        .into_iter()
        .enumerate()
    {
        group_split[without[k]] = s;
    }

    let mut used_fallback = false;
    let mut negatives = Vec::with_capacity(positives.len());
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let pool: Vec<&Question> = members
            .iter()
            .enumerate()
            .filter(|&(g, _)| group_split[g] == k)
            .flat_map(|(_, m)| m.iter().map(|&i| sorted[i]))
            .collect();
        let (mut negs, fell_back) =
            sample_with_fallback(pool, edges, pair_counts[k], rng.gen(), cfg.tag_jaccard_min)?;
        used_fallback |= fell_back;
        negs.iter_mut().for_each(|p| p.split = Some(split));
        negatives.extend(negs);
    }
    for p in positives.iter_mut() {
        p.split = Some(Split::ALL[group_split[group_of_root[&roots[index[&p.id_a]]]]]);
    }

    let n = positives.len();
    let mut pairs = positives;
    pairs.extend(negatives);
    pairs.sort_by_key(QuestionPair::key);
    let mut stats = PairStats {
        positives: n,
        negatives: n,
        dropped_edges: dropped,
        used_fallback,
        split_counts: [0; 3],
        split_questions: question_counts,
    };
    for p in &pairs {
        stats.split_counts[p.split.expect("assigned").index()] += 1;
    }
    Ok((pairs, stats))
}

pub fn write_pairs(path: &Path, pairs: &[QuestionPair]) -> Result<()> {
    write_jsonl(path, pairs)
}

/// Reads `pairs.jsonl`; every record must carry a split and a 0/1 label.
pub fn read_pairs(path: &Path) -> Result<Vec<QuestionPair>> {
    let pairs: Vec<QuestionPair> = read_jsonl(path)?;
    for (i, p) in pairs.iter().enumerate() {
        if p.split.is_none() || p.label > 1 || p.id_a == p.id_b {
            return Err(Error::Input(format!(
                "{}: record {} is not a valid labeled, split pair",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(pairs)
}

/// Pairs belonging to `split`.
pub fn pairs_in(pairs: &[QuestionPair], split: Split) -> Vec<QuestionPair> {
    pairs.iter().copied().filter(|p| p.split == Some(split)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: u64, tags: &[&str]) -> Question {
        Question {
            id,
            title: format!("q{id}"),
            body_text: String::new(),
            code_snippets: vec![],
            tags: tags.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn e(a: u64, b: u64) -> DuplicateEdge {
        DuplicateEdge {
            post_id: a,
            related_post_id: b,
        }
    }

    #[test]
    fn positives_dedup_unordered() {
        let qs = vec![q(4, &["a"]), q(7, &["a"])];
        let (p, dropped) = build_positive_pairs(&[e(7, 4), e(4, 7)], &qs);
        assert_eq!(p, vec![QuestionPair::new(4, 7, 1)]);
        assert_eq!(dropped, 0);
        let (p, dropped) = build_positive_pairs(&[e(7, 99)], &qs);
        assert!(p.is_empty());
        assert_eq!(dropped, 1);
        let qs: Vec<_> = (1..=5).map(|i| q(i, &["x"])).collect();
        let (p, _) = build_positive_pairs(&[e(1, 2), e(3, 4), e(5, 1)], &qs);
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn pandas_pair_is_eligible() {
        let qs = vec![q(1, &["python", "pandas"]), q(2, &["python", "pandas"])];
        assert_eq!(count_negative_candidates(&qs, &[], 0.5), 1);
        let neg = sample_hard_negatives(&qs, &[], 1, 0, 0.5).unwrap();
        assert_eq!(neg, vec![QuestionPair::new(1, 2, 0)]);
    }

    #[test]
    fn disjoint_tags_ineligible() {
        let qs = vec![q(1, &["python"]), q(2, &["java"])];
        assert_eq!(count_negative_candidates(&qs, &[], 0.1), 0);
        match sample_hard_negatives(&qs, &[], 1, 0, 0.1) {
            Err(Error::InsufficientCandidates {
                requested: 1,
                available: 0,
            }) => {}
            other => panic!("{other:?}"),
        }
        // a zero threshold admits every pair
        assert_eq!(count_negative_candidates(&qs, &[], 0.0), 1);
    }

    #[test]
    fn transitive_duplicates_excluded() {
        let qs: Vec<_> = (1..=4).map(|i| q(i, &["t"])).collect();
        // 1-2, 2-3 chain: (1,3) is in the closure too
        let edges = [e(1, 2), e(2, 3)];
        assert_eq!(count_negative_candidates(&qs, &edges, 0.5), 3);
        let neg = sample_hard_negatives(&qs, &edges, 3, 9, 0.5).unwrap();
        let keys: Vec<_> = neg.iter().map(|p| p.key()).collect();
        assert_eq!(keys, vec![(1, 4), (2, 4), (3, 4)]);
    }

    #[test]
    fn sampling_is_seeded() {
        let qs: Vec<_> = (1..=30).map(|i| q(i, &["t", if i % 2 == 0 { "e" } else { "o" }])).collect();
        let a = sample_hard_negatives(&qs, &[], 10, 5, 0.3).unwrap();
        let b = sample_hard_negatives(&qs, &[], 10, 5, 0.3).unwrap();
        let c = sample_hard_negatives(&qs, &[], 10, 6, 0.3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn jaccard_values() {
        let a = q(1, &["python", "pandas"]).tags;
        let b = q(2, &["python"]).tags;
        assert_eq!(tag_jaccard(&a, &b), 0.5);
        assert_eq!(tag_jaccard(&BTreeSet::new(), &BTreeSet::new()), 0.0);
    }

    #[test]
    fn fallback_to_shared_tag() {
        // every pair shares exactly "common": Jaccard 1/3
        let qs: Vec<_> = (1..=12u64).map(|i| q(i, &["common", &format!("u{i}")])).collect();
        let edges: Vec<_> = (0..6u64).map(|k| e(2 * k + 1, 2 * k + 2)).collect();
        let cfg = PairGenConfig {
            ratios: [0.34, 0.33, 0.33],
            tag_jaccard_min: 0.9,
        };
        assert_eq!(count_negative_candidates(&qs, &edges, 0.9), 0);
        let (pairs, stats) = generate_pairs(&qs, &edges, &cfg, 1).unwrap();
        assert!(stats.used_fallback);
        assert_eq!(stats.positives, 6);
        assert_eq!(stats.negatives, 6);
        assert_eq!(stats.split_counts, [4, 4, 4]);
        assert_eq!(pairs.len(), 12);
    }

    #[test]
    fn generated_splits_are_disjoint() {
        let qs: Vec<_> = (1..=300u64)
            .map(|i| q(i, &["python", if i % 3 == 0 { "pandas" } else { "numpy" }]))
            .collect();
        let edges: Vec<_> = (0..60u64).map(|k| e(5 * k + 1, 5 * k + 2)).collect();
        let (pairs, stats) = generate_pairs(&qs, &edges, &PairGenConfig::default(), 3).unwrap();
        assert_eq!(stats.positives, 60);
        assert_eq!(stats.negatives, 60);
        let mut seen: HashMap<u64, Split> = HashMap::new();
        for p in &pairs {
            for id in [p.id_a, p.id_b] {
                let s = *seen.entry(id).or_insert(p.split.unwrap());
                assert_eq!(s, p.split.unwrap(), "question {id} in two splits");
            }
        }
        assert_eq!(stats.split_counts, [96, 12, 12]);
        let again = generate_pairs(&qs, &edges, &PairGenConfig::default(), 3).unwrap().0;
        assert_eq!(pairs, again);
    }

    #[test]
    fn pairs_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let mut p = QuestionPair::new(9, 3, 1);
        p.split = Some(Split::Valid);
        write_pairs(&path, &[p]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "{\"a\":3,\"b\":9,\"label\":1,\"split\":\"valid\"}\n");
        assert_eq!(read_pairs(&path).unwrap(), vec![p]);
        std::fs::write(&path, "{\"a\":3,\"b\":9,\"label\":1}\n").unwrap();
        assert!(read_pairs(&path).is_err());
    }
}
