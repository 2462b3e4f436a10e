//! Edge-coverage-based task distribution across parallel fuzzing instances.
//!
//! Every instance's seeds are traced and the edges shared by all instances
//! are organized into a control-flow graph. Repeatedly, the deepest leaf of
//! what remains of that graph is taken, an instance is drawn uniformly at
//! random, and from that instance the seed covering the leaf with the most
//! still-undistributed edges (youngest on ties) is assigned to it; the seed's
//! edges are then removed from the graph. Once the shared graph is exhausted,
//! each instance additionally keeps seeds reaching edges outside the shared
//! set that its assignment does not yet cover.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap, HashSet};

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cfg::{build_cfg, depth_map, pick_deepest, Cfg};
use crate::corpus::{ContentHash, InstanceCorpus, SeedRecord};
use crate::coverage::{AggregateCoverage, BlockId, EdgeKey, EdgeSet};
use crate::error::{Error, Result};

/// One iteration of the shared-edge loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PickRecord {
    pub leaf: BlockId,
    pub instance: usize,
    pub seed: String,
    pub removed: EdgeSet,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DistributionResult {
    /// Seeds picked by the shared-edge loop, per instance, in pick order.
    pub assigned: Vec<Vec<String>>,
    /// Seeds kept by the tail phase, per instance, youngest first.
    pub preserved: Vec<Vec<String>>,
    pub picks: Vec<PickRecord>,
    /// How often each instance was drawn.
    pub draws: Vec<u64>,
    /// Seeds left out because their trace is empty, as `(instance, name)`.
    pub excluded: Vec<(usize, String)>,
    /// Edges shared by every non-empty instance.
    pub overlap: EdgeSet,
    pub rng_seed: u64,
}

impl DistributionResult {
    /// Everything instance `i` may mutate: assigned then preserved.
    pub fn allowed(&self, instance: usize) -> impl Iterator<Item = &String> {
        self.assigned[instance]
            .iter()
            .chain(self.preserved[instance].iter())
    }

    pub fn allowed_count(&self, instance: usize) -> usize {
        self.assigned[instance].len() + self.preserved[instance].len()
    }

    fn empty(n: usize, rng_seed: u64) -> Self {
        DistributionResult {
            assigned: vec![Vec::new(); n],
            preserved: vec![Vec::new(); n],
            draws: vec![0; n],
            rng_seed,
            ..Default::default()
        }
    }
}

fn check_layout(corpora: &[InstanceCorpus]) -> Result<()> {
    if corpora.is_empty() {
        return Err(Error::InvalidInput("no instances given".into()));
    }
    for (i, c) in corpora.iter().enumerate() {
        if c.instance != i {
            return Err(Error::InvalidInput(format!(
                "corpus at position {i} is labeled instance {}",
                c.instance
            )));
        }
    }
    Ok(())
}

/// Ranking among seeds covering a leaf: more remaining edges, then younger,
/// then smaller content hash.
fn pick_rank(score: usize, seed: &SeedRecord) -> (usize, u64, Reverse<ContentHash>) {
    (score, seed.birth, Reverse(seed.content_hash))
}

/// Chooses, from `corpus_k`, the seed that covers an edge into `leaf` still in
/// `cfg_remaining` and shares the most edges with `cfg_remaining`.
pub fn pick_seed_for_leaf<'a>(
    cfg_remaining: &Cfg,
    leaf: BlockId,
    corpus_k: &'a InstanceCorpus,
) -> Result<&'a SeedRecord> {
    let remaining = cfg_remaining.edges();
    corpus_k
        .seeds
        .iter()
        .filter(|s| {
            s.trace
                .edges()
                .iter()
                .any(|e| e.dst == leaf && remaining.contains(e))
        })
        .max_by_key(|s| {
            let score = s
                .trace
                .edges()
                .iter()
                .filter(|e| remaining.contains(e))
                .count();
            pick_rank(score, s)
        })
        .ok_or_else(|| Error::NotFound(format!("{leaf} in instance {}", corpus_k.instance)))
}

/// Working state of the shared-edge loop, with edges as bit positions.
struct OverlapLoop<'a> {
    universe: Vec<EdgeKey>,
    seeds: Vec<Vec<&'a SeedRecord>>,
    bits: Vec<Vec<FixedBitSet>>,
    /// `cover[i][edge]`: seeds of instance `i` containing a shared edge.
    cover: Vec<Vec<Vec<u32>>>,
    remaining: FixedBitSet,
    node_ids: Vec<BlockId>,
    node_depth: Vec<u32>,
    edge_dst: Vec<usize>,
    edge_src: Vec<usize>,
    in_edges: Vec<Vec<usize>>,
    in_count: Vec<usize>,
    out_count: Vec<usize>,
}

impl<'a> OverlapLoop<'a> {
    fn new(seeds: Vec<Vec<&'a SeedRecord>>, overlap: &EdgeSet) -> Self {
        let universe: Vec<EdgeKey> = {
            let all: EdgeSet = seeds
                .iter()
                .flatten()
                .flat_map(|s| s.trace.edges().iter().copied())
                .collect();
            all.into_iter().collect()
        };
        let index: HashMap<EdgeKey, usize> =
            universe.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let m = universe.len();
        let bits: Vec<Vec<FixedBitSet>> = seeds
            .iter()
            .map(|inst| {
                inst.iter()
                    .map(|s| {
                        let mut b = FixedBitSet::with_capacity(m);
                        for e in s.trace.edges() {
                            b.insert(index[e]);
                        }
                        b
                    })
                    .collect()
            })
            .collect();

        let mut remaining = FixedBitSet::with_capacity(m);
        for e in overlap {
            remaining.insert(index[e]);
        }
        let cover = bits
            .iter()
            .map(|inst| {
                let mut c = vec![Vec::new(); m];
                for (si, b) in inst.iter().enumerate() {
                    for ei in b.intersection(&remaining) {
                        c[ei].push(si as u32);
                    }
                }
                c
            })
            .collect();

        let cfg = build_cfg(overlap);
        let depths = depth_map(&cfg);
        let node_ids: Vec<BlockId> = cfg.nodes().iter().copied().collect();
        let node_pos: HashMap<BlockId, usize> =
            node_ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let node_depth = node_ids.iter().map(|&b| depths.depth_of(b)).collect();
        let mut edge_src = vec![usize::MAX; m];
        let mut edge_dst = vec![usize::MAX; m];
        let mut in_edges = vec![Vec::new(); node_ids.len()];
        let mut in_count = vec![0; node_ids.len()];
        let mut out_count = vec![0; node_ids.len()];
        for ei in remaining.ones() {
            let e = universe[ei];
            let (s, d) = (node_pos[&e.src], node_pos[&e.dst]);
            edge_src[ei] = s;
            edge_dst[ei] = d;
            in_edges[d].push(ei);
            in_count[d] += 1;
            if s != d {
                out_count[s] += 1;
            }
        }
        OverlapLoop {
            universe,
            seeds,
            bits,
            cover,
            remaining,
            node_ids,
            node_depth,
            edge_dst,
            edge_src,
            in_edges,
            in_count,
            out_count,
        }
    }

    fn deepest_leaf(&self) -> Option<usize> {
        let id = pick_deepest(
            (0..self.node_ids.len())
                .filter(|&n| self.in_count[n] > 0)
                .map(|n| (self.node_ids[n], self.node_depth[n], self.out_count[n] == 0)),
        )?;
        self.node_ids.binary_search(&id).ok()
    }

    fn best_cover(&self, instance: usize, leaf: usize) -> Option<usize> {
        let mut cands: Vec<u32> = self.in_edges[leaf]
            .iter()
            .filter(|&&ei| self.remaining.contains(ei))
            .flat_map(|&ei| self.cover[instance][ei].iter().copied())
            .collect();
        cands.sort_unstable();
        cands.dedup();
        cands.into_iter().map(|si| si as usize).max_by_key(|&si| {
            let score = self.bits[instance][si].intersection_count(&self.remaining);
            pick_rank(score, self.seeds[instance][si])
        })
    }

    fn remove(&mut self, instance: usize, seed: usize) -> EdgeSet {
        let removed: Vec<usize> = self.bits[instance][seed]
            .intersection(&self.remaining)
            .collect();
        for &ei in &removed {
            self.remaining.set(ei, false);
            let (s, d) = (self.edge_src[ei], self.edge_dst[ei]);
            self.in_count[d] -= 1;
            if s != d {
                self.out_count[s] -= 1;
            }
        }
        removed.into_iter().map(|ei| self.universe[ei]).collect()
    }

    fn run(
        &mut self,
        active: &[usize],
        rng: &mut ChaCha8Rng,
        result: &mut DistributionResult,
    ) -> Result<()> {
        while let Some(leaf) = self.deepest_leaf() {
            let leaf_id = self.node_ids[leaf];
            let mut k = active[rng.gen_range(0..active.len())];
            let mut choice = self.best_cover(k, leaf);
            if choice.is_none() {
                let able: Vec<usize> = active
                    .iter()
                    .copied()
                    .filter(|&i| self.best_cover(i, leaf).is_some())
                    .collect();
                if able.is_empty() {
                    return Err(Error::Integrity(format!(
                        "no instance has a seed covering shared leaf {leaf_id}"
                    )));
                }
                log::warn!("instance {k} cannot cover shared leaf {leaf_id}; redrawing");
                k = able[rng.gen_range(0..able.len())];
                choice = self.best_cover(k, leaf);
            }
            let si = choice.expect("redraw only among instances with a cover");
            let removed = self.remove(k, si);
            let name = self.seeds[k][si].name.clone();
            result.draws[k] += 1;
            result.assigned[k].push(name.clone());
            result.picks.push(PickRecord {
                leaf: leaf_id,
                instance: k,
                seed: name,
                removed,
            });
        }
        Ok(())
    }
}

/// Distributes the seeds of `corpora` (position `i` must hold instance `i`)
/// over the instances. Deterministic in `(corpora, rng_seed)`.
///
/// Instances are drawn uniformly among those with at least one seed whose
/// trace is non-empty, and the shared edge set is taken over those same
/// instances.
pub fn distribute(corpora: &[InstanceCorpus], rng_seed: u64) -> Result<DistributionResult> {
    check_layout(corpora)?;
    let n = corpora.len();
    let mut result = DistributionResult::empty(n, rng_seed);
    let seeds: Vec<Vec<&SeedRecord>> = corpora
        .iter()
        .map(|c| {
            c.seeds
                .iter()
                .filter(|s| {
                    if s.trace.is_empty() {
                        result.excluded.push((c.instance, s.name.clone()));
                        false
                    } else {
                        true
                    }
                })
                .collect()
        })
        .collect();
    if !result.excluded.is_empty() {
        log::info!("{} seeds with empty traces excluded", result.excluded.len());
    }
    let active: Vec<usize> = (0..n).filter(|&i| !seeds[i].is_empty()).collect();
    if active.is_empty() {
        return Err(Error::InvalidInput("every corpus is empty".into()));
    }
    let edge_sets = active
        .iter()
        .map(|&i| {
            seeds[i]
                .iter()
                .flat_map(|s| s.trace.edges().iter().copied())
                .collect()
        })
        .collect();
    let overlap = AggregateCoverage::from_edge_sets(edge_sets)?.overlap;
    log::debug!(
        "{} shared edges across {} instances",
        overlap.len(),
        active.len()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    OverlapLoop::new(seeds, &overlap).run(&active, &mut rng, &mut result)?;
    result.overlap = overlap.clone();
    preserve_tail(corpora, &overlap, result)
}

fn lookup<'a>(corpus: &'a InstanceCorpus, name: &str) -> Result<&'a SeedRecord> {
    corpus.get(name).ok_or_else(|| {
        Error::InvalidInput(format!(
            "seed {name} is not in the corpus of instance {}",
            corpus.instance
        ))
    })
}

/// Tail phase: walking each instance youngest-first, keeps a seed when it has
/// an edge outside `overlap` and an edge the instance's selection does not
/// cover yet.
pub fn preserve_tail(
    corpora: &[InstanceCorpus],
    overlap: &EdgeSet,
    mut partial: DistributionResult,
) -> Result<DistributionResult> {
    check_layout(corpora)?;
    if partial.assigned.len() != corpora.len() {
        return Err(Error::InvalidInput(format!(
            "partial result has {} instances, corpora {}",
            partial.assigned.len(),
            corpora.len()
        )));
    }
    partial.preserved.resize(corpora.len(), Vec::new());
    for (i, corpus) in corpora.iter().enumerate() {
        let mut covered: HashSet<EdgeKey> = HashSet::new();
        for name in partial.allowed(i) {
            covered.extend(lookup(corpus, name)?.trace.edges().iter().copied());
        }
        let mut kept = Vec::new();
        for s in corpus.seeds.iter().rev() {
            let edges = s.trace.edges();
            let outside_overlap = edges.iter().any(|e| !overlap.contains(e));
            let adds_coverage = edges.iter().any(|e| !covered.contains(e));
            if outside_overlap && adds_coverage {
                covered.extend(edges.iter().copied());
                kept.push(s.name.clone());
            }
        }
        partial.preserved[i].extend(kept);
    }
    Ok(partial)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct P3Stats {
    pub allowed_per_instance: Vec<usize>,
    pub draw_histogram: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PropertyReport {
    pub p1_ok: bool,
    /// Removed-edge sets of the picks are pairwise disjoint.
    pub p1_edges_ok: bool,
    /// No content is allowed in two instances.
    pub p1_seeds_ok: bool,
    pub p2_ok: bool,
    /// Input edges not covered by any allowed seed.
    pub missing_edges: usize,
    pub p3_stats: P3Stats,
}

/// Checks disjointness, completeness, and reports balance of a distribution.
pub fn verify_properties(
    result: &DistributionResult,
    corpora: &[InstanceCorpus],
) -> Result<PropertyReport> {
    check_layout(corpora)?;
    let n = corpora.len();
    if result.assigned.len() != n || result.preserved.len() != n {
        return Err(Error::InvalidInput(format!(
            "result covers {} instances, corpora {n}",
            result.assigned.len()
        )));
    }

    let mut seen = EdgeSet::new();
    let mut p1_edges_ok = true;
    for pick in &result.picks {
        if pick.instance >= n {
            return Err(Error::InvalidInput(format!(
                "pick names instance {}",
                pick.instance
            )));
        }
        for e in &pick.removed {
            p1_edges_ok &= seen.insert(*e);
        }
    }

    let mut owner: BTreeMap<ContentHash, usize> = BTreeMap::new();
    let mut p1_seeds_ok = true;
    let mut allowed_edges = EdgeSet::new();
    for (i, corpus) in corpora.iter().enumerate() {
        for name in result.allowed(i) {
            let s = lookup(corpus, name)?;
            if *owner.entry(s.content_hash).or_insert(i) != i {
                p1_seeds_ok = false;
            }
            allowed_edges.extend(s.trace.edges().iter().copied());
        }
    }
    let input_edges: EdgeSet = corpora
        .iter()
        .flat_map(|c| c.seeds.iter())
        .flat_map(|s| s.trace.edges().iter().copied())
        .collect();
    let missing_edges = input_edges.difference(&allowed_edges).count();
    let p2_ok = missing_edges == 0 && allowed_edges.is_subset(&input_edges);

    Ok(PropertyReport {
        p1_ok: p1_edges_ok && p1_seeds_ok,
        p1_edges_ok,
        p1_seeds_ok,
        p2_ok,
        missing_edges,
        p3_stats: P3Stats {
            allowed_per_instance: (0..n).map(|i| result.allowed_count(i)).collect(),
            draw_histogram: result.draws.clone(),
        },
    })
}

pub const REPORT_SCHEMA_VERSION: &str = "1";

#[derive(Clone, Debug, Serialize)]
pub struct PickEntry {
    pub leaf: String,
    pub instance: usize,
    pub seed: String,
    pub removed_edge_count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct InstanceEntry {
    pub label: String,
    /// Youngest birth seen; later seeds are schedulable without being listed.
    pub high_water: Option<u64>,
    pub assigned: Vec<String>,
    pub preserved: Vec<String>,
}

/// JSON audit report of one distribution.
#[derive(Clone, Debug, Serialize)]
pub struct DistributionReport {
    pub schema_version: &'static str,
    pub rng_seed: u64,
    pub overlap_edges: usize,
    pub instances: Vec<InstanceEntry>,
    pub picks: Vec<PickEntry>,
    pub excluded: Vec<(usize, String)>,
}

impl DistributionReport {
    pub fn new(result: &DistributionResult, corpora: &[InstanceCorpus]) -> Self {
        DistributionReport {
            schema_version: REPORT_SCHEMA_VERSION,
            rng_seed: result.rng_seed,
            overlap_edges: result.overlap.len(),
            instances: corpora
                .iter()
                .enumerate()
                .map(|(i, c)| InstanceEntry {
                    label: c.label.clone(),
                    high_water: c.seeds.iter().map(|s| s.birth).max(),
                    assigned: result.assigned.get(i).cloned().unwrap_or_default(),
                    preserved: result.preserved.get(i).cloned().unwrap_or_default(),
                })
                .collect(),
            picks: result
                .picks
                .iter()
                .map(|p| PickEntry {
                    leaf: p.leaf.to_string(),
                    instance: p.instance,
                    seed: p.seed.clone(),
                    removed_edge_count: p.removed.len(),
                })
                .collect(),
            excluded: result.excluded.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
