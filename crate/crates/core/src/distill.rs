//! Corpus distillation: pick a subset of seeds covering every edge of the
//! corpus.
//!
//! Four strategies are provided: greedy maximum-new-coverage, per-edge fastest
//! seed, per-edge smallest seed (the afl-cmin rule), and single-instance task
//! distribution. [`optimal_cover_oracle`] solves small instances exactly.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{InstanceCorpus, SeedRecord};
use crate::coverage::{corpus_edges, EdgeKey, EdgeSet};
use crate::distributor::distribute;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Unweighted,
    Time,
    Size,
    Ours,
    Optimal,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Unweighted => "unweighted",
            Algorithm::Time => "time",
            Algorithm::Size => "size",
            Algorithm::Ours => "ours",
            Algorithm::Optimal => "optimal",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "unweighted" => Algorithm::Unweighted,
            "time" => Algorithm::Time,
            "size" => Algorithm::Size,
            "ours" => Algorithm::Ours,
            "optimal" => Algorithm::Optimal,
            other => return Err(Error::InvalidInput(format!("unknown algorithm {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistillOutcome {
    pub picked: Vec<String>,
    pub covered: EdgeSet,
    pub algorithm: Algorithm,
}

impl DistillOutcome {
    fn from_picks(corpus: &InstanceCorpus, picked: Vec<String>, algorithm: Algorithm) -> Self {
        let covered = picked
            .iter()
            .filter_map(|n| corpus.get(n))
            .flat_map(|s| s.trace.edges().iter().copied())
            .collect();
        DistillOutcome {
            picked,
            covered,
            algorithm,
        }
    }

    pub fn report(&self) -> DistillReport {
        DistillReport {
            schema_version: crate::distributor::REPORT_SCHEMA_VERSION,
            algorithm: self.algorithm.as_str(),
            picked_count: self.picked.len(),
            picked: self.picked.clone(),
            edge_count: self.covered.len(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DistillReport {
    pub schema_version: &'static str,
    pub algorithm: &'static str,
    pub picked_count: usize,
    pub picked: Vec<String>,
    pub edge_count: usize,
}

/// Greedy set cover: repeatedly takes the seed adding the most uncovered
/// edges; ties go to the youngest seed, then the smaller content hash.
pub fn distill_unweighted(corpus: &InstanceCorpus) -> DistillOutcome {
    let mut uncovered: HashSet<EdgeKey> = corpus_edges(corpus).into_iter().collect();
    let mut remaining: Vec<&SeedRecord> = corpus.seeds.iter().collect();
    let mut picked = Vec::new();
    while !uncovered.is_empty() {
        let (pos, gain) = remaining
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let gain = s
                    .trace
                    .edges()
                    .iter()
                    .filter(|e| uncovered.contains(e))
                    .count();
                (i, gain)
            })
            .max_by_key(|&(i, gain)| {
                let s = remaining[i];
                (gain, s.birth, std::cmp::Reverse(s.content_hash))
            })
            .expect("uncovered edges come from some seed");
        debug_assert!(gain > 0);
        let s = remaining.swap_remove(pos);
        for e in s.trace.edges() {
            uncovered.remove(e);
        }
        picked.push(s.name.clone());
    }
    DistillOutcome::from_picks(corpus, picked, Algorithm::Unweighted)
}

/// For each uncovered edge in edge order, takes the covering seed with the
/// smallest `key`.
fn per_edge_min<K: Ord>(
    corpus: &InstanceCorpus,
    key: impl Fn(&SeedRecord) -> K,
    algorithm: Algorithm,
) -> DistillOutcome {
    let all = corpus_edges(corpus);
    let mut covered: HashSet<EdgeKey> = HashSet::new();
    let mut picked = Vec::new();
    for e in &all {
        if covered.contains(e) {
            continue;
        }
        let best = corpus
            .seeds
            .iter()
            .filter(|s| s.trace.edges().contains(e))
            .min_by_key(|s| key(s))
            .expect("edge comes from some seed");
        covered.extend(best.trace.edges().iter().copied());
        picked.push(best.name.clone());
    }
    DistillOutcome::from_picks(corpus, picked, algorithm)
}

/// Per edge, the fastest covering seed; ties by size, then content hash.
/// Fails when no seed carries an execution time.
pub fn distill_time_weighted(corpus: &InstanceCorpus) -> Result<DistillOutcome> {
    if !corpus.seeds.is_empty() && corpus.seeds.iter().all(|s| s.exec_time_us.is_none()) {
        return Err(Error::InvalidInput(format!(
            "instance {}: no seed has an execution time",
            corpus.instance
        )));
    }
    Ok(per_edge_min(
        corpus,
        |s| (s.exec_time(), s.size_bytes, s.content_hash),
        Algorithm::Time,
    ))
}

/// Per edge, the smallest covering seed; ties by execution time, then hash.
pub fn distill_size_weighted(corpus: &InstanceCorpus) -> DistillOutcome {
    per_edge_min(
        corpus,
        |s| (s.size_bytes, s.exec_time(), s.content_hash),
        Algorithm::Size,
    )
}

/// Task distribution over a single instance.
pub fn distill_ours(corpus: &InstanceCorpus, rng_seed: u64) -> DistillOutcome {
    let mut single = corpus.clone();
    single.instance = 0;
    for s in &mut single.seeds {
        s.instance = 0;
    }
    let picked = match distribute(std::slice::from_ref(&single), rng_seed) {
        Ok(r) => r.allowed(0).cloned().collect(),
        // Only an all-empty corpus fails here; nothing to pick.
        Err(_) => Vec::new(),
    };
    DistillOutcome::from_picks(corpus, picked, Algorithm::Ours)
}

pub const ORACLE_MAX_SEEDS: usize = 20;

/// Exhaustive minimum-cardinality cover. Among minimum covers the one whose
/// sorted name list is lexicographically smallest wins.
pub fn optimal_cover_oracle(corpus: &InstanceCorpus) -> Result<DistillOutcome> {
    let n = corpus.seeds.len();
    if n > ORACLE_MAX_SEEDS {
        return Err(Error::InvalidInput(format!(
            "oracle refuses {n} seeds (limit {ORACLE_MAX_SEEDS})"
        )));
    }
    let mut seeds: Vec<&SeedRecord> = corpus.seeds.iter().collect();
    seeds.sort_by(|a, b| a.name.cmp(&b.name));
    let all: Vec<EdgeKey> = corpus_edges(corpus).into_iter().collect();
    let words = all.len().div_ceil(64).max(1);
    let masks: Vec<Vec<u64>> = seeds
        .iter()
        .map(|s| {
            let mut m = vec![0u64; words];
            for e in s.trace.edges() {
                let i = all.binary_search(e).expect("edge in union");
                m[i / 64] |= 1 << (i % 64);
            }
            m
        })
        .collect();
    let mut full = vec![0u64; words];
    for i in 0..all.len() {
        full[i / 64] |= 1 << (i % 64);
    }

    for size in 0..=n {
        // Combinations of `size` indices in lexicographic order.
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let mut acc = vec![0u64; words];
            for &i in &idx {
                for (a, m) in acc.iter_mut().zip(&masks[i]) {
                    *a |= m;
                }
            }
            if acc == full {
                let picked = idx.iter().map(|&i| seeds[i].name.clone()).collect();
                return Ok(DistillOutcome::from_picks(
                    corpus,
                    picked,
                    Algorithm::Optimal,
                ));
            }
            // Advance.
            let mut k = size;
            while k > 0 && idx[k - 1] == n - size + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for j in k..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    unreachable!("the whole corpus is always a cover")
}

pub fn run(corpus: &InstanceCorpus, algorithm: Algorithm, rng_seed: u64) -> Result<DistillOutcome> {
    match algorithm {
        Algorithm::Unweighted => Ok(distill_unweighted(corpus)),
        Algorithm::Time => distill_time_weighted(corpus),
        Algorithm::Size => Ok(distill_size_weighted(corpus)),
        Algorithm::Ours => Ok(distill_ours(corpus, rng_seed)),
        Algorithm::Optimal => optimal_cover_oracle(corpus),
    }
}

/// `H(n) = 1 + 1/2 + ... + 1/n`, the greedy set-cover approximation factor.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ContentHash;
    use crate::coverage::SeedTrace;

    fn seed(birth: u64, edges: &[u64], size: u64, time: Option<u64>) -> SeedRecord {
        SeedRecord {
            name: format!("s{birth}"),
            instance: 0,
            birth,
            size_bytes: size,
            exec_time_us: time,
            content_hash: ContentHash::of(&birth.to_le_bytes()),
            trace: SeedTrace::from_edges(edges.iter().map(|&d| EdgeKey::new(0, d, 0))).unwrap(),
        }
    }

    fn corpus(seeds: Vec<SeedRecord>) -> InstanceCorpus {
        InstanceCorpus::new(0, seeds).unwrap()
    }

    fn names(o: &DistillOutcome) -> Vec<&str> {
        let mut v: Vec<&str> = o.picked.iter().map(String::as_str).collect();
        v.sort();
        v
    }

    #[test]
    fn one_seed_covers_everything() {
        let c = corpus(vec![
            seed(0, &[1], 1, Some(1)),
            seed(1, &[1, 2, 3], 1, Some(1)),
            seed(2, &[2], 1, Some(1)),
        ]);
        assert_eq!(names(&distill_unweighted(&c)), vec!["s1"]);
        assert_eq!(names(&distill_ours(&c, 0)), vec!["s1"]);
        assert_eq!(names(&optimal_cover_oracle(&c).unwrap()), vec!["s1"]);
    }

    #[test]
    fn disjoint_seeds_all_needed() {
        let c = corpus(vec![
            seed(0, &[1], 1, Some(1)),
            seed(1, &[2], 1, Some(1)),
            seed(2, &[3], 1, Some(1)),
        ]);
        for o in [
            distill_unweighted(&c),
            distill_time_weighted(&c).unwrap(),
            distill_size_weighted(&c),
            distill_ours(&c, 4),
            optimal_cover_oracle(&c).unwrap(),
        ] {
            assert_eq!(names(&o), vec!["s0", "s1", "s2"], "{}", o.algorithm);
        }
    }

    #[test]
    fn time_picks_fastest() {
        let c = corpus(vec![seed(0, &[1], 1, Some(10)), seed(1, &[1], 1, Some(5))]);
        assert_eq!(names(&distill_time_weighted(&c).unwrap()), vec!["s1"]);
        let c = corpus(vec![seed(0, &[1], 1, None), seed(1, &[1], 1, None)]);
        assert!(distill_time_weighted(&c).is_err());
    }

    #[test]
    fn time_may_bypass_slow_superset() {
        let c = corpus(vec![
            seed(0, &[1, 2, 3], 1, Some(100)),
            seed(1, &[1], 1, Some(1)),
            seed(2, &[2], 1, Some(1)),
            seed(3, &[3], 1, Some(1)),
        ]);
        let o = distill_time_weighted(&c).unwrap();
        assert_eq!(names(&o), vec!["s1", "s2", "s3"]);
        assert_eq!(o.covered, corpus_edges(&c));
    }

    #[test]
    fn size_picks_smallest_then_fastest() {
        let c = corpus(vec![seed(0, &[1], 10, None), seed(1, &[1], 100, None)]);
        assert_eq!(names(&distill_size_weighted(&c)), vec!["s0"]);
        let c = corpus(vec![seed(0, &[1], 10, Some(9)), seed(1, &[1], 10, Some(3))]);
        assert_eq!(names(&distill_size_weighted(&c)), vec!["s1"]);
    }

    #[test]
    fn unweighted_ties_go_to_youngest() {
        let c = corpus(vec![seed(0, &[1, 2], 1, None), seed(4, &[1, 2], 1, None)]);
        assert_eq!(names(&distill_unweighted(&c)), vec!["s4"]);
    }

    #[test]
    fn oracle_unique_minimum() {
        // {s1, s3} is the only 2-cover.
        let c = corpus(vec![
            seed(1, &[1, 2, 3], 1, None),
            seed(2, &[3, 4], 1, None),
            seed(3, &[4, 5], 1, None),
        ]);
        assert_eq!(names(&optimal_cover_oracle(&c).unwrap()), vec!["s1", "s3"]);
    }

    #[test]
    fn oracle_refuses_large() {
        let seeds = (0..21).map(|b| seed(b, &[b], 1, None)).collect();
        assert!(optimal_cover_oracle(&corpus(seeds)).is_err());
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(0), 0.0);
        assert_eq!(harmonic(1), 1.0);
        assert!((harmonic(3) - 11.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in ["unweighted", "time", "size", "ours"] {
            assert_eq!(a.parse::<Algorithm>().unwrap().as_str(), a);
        }
        assert!("fast".parse::<Algorithm>().is_err());
    }
}
