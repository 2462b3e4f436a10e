//! Synthetic programs and the executions ("walks") that stand in for seeds.

use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{ContentHash, SeedRecord};
use crate::coverage::{BlockId, EdgeKey, RawCounts, SeedTrace};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProgramParams {
    pub blocks: usize,
    /// Maximum successors of a non-sink block.
    pub branch_factor: usize,
    pub self_loop_prob: f64,
    /// Probability of taking a self-loop once more; loop counts are geometric.
    pub loop_continue_prob: f64,
}

impl Default for ProgramParams {
    fn default() -> Self {
        ProgramParams {
            blocks: 200,
            branch_factor: 3,
            self_loop_prob: 0.2,
            loop_continue_prob: 0.7,
        }
    }
}

impl ProgramParams {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("program parameters: {m}")));
        if self.blocks == 0 {
            return bad("blocks must be >= 1");
        }
        if self.branch_factor == 0 {
            return bad("branch_factor must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.self_loop_prob) {
            return bad("self_loop_prob must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.loop_continue_prob) {
            return bad("loop_continue_prob must lie in [0, 1)");
        }
        Ok(())
    }
}

/// A layered random DAG plus optional self-loops. Block `i` has id `i`; the
/// entry is block 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticProgram {
    pub blocks: usize,
    pub edges: BTreeSet<(BlockId, BlockId)>,
    pub self_loops: BTreeSet<BlockId>,
    pub entry: BlockId,
    succ: Vec<Vec<u32>>,
    has_loop: Vec<bool>,
    loop_continue_prob: f64,
}

impl SyntheticProgram {
    /// `0 -> 1 -> ... -> n-1`, no self-loops.
    pub fn chain(n: usize) -> Self {
        let n = n.max(1);
        let succ: Vec<Vec<u32>> = (0..n)
            .map(|b| {
                if b + 1 < n {
                    vec![b as u32 + 1]
                } else {
                    vec![]
                }
            })
            .collect();
        SyntheticProgram {
            blocks: n,
            edges: (1..n)
                .map(|b| (BlockId(b as u64 - 1), BlockId(b as u64)))
                .collect(),
            self_loops: BTreeSet::new(),
            entry: BlockId(0),
            succ,
            has_loop: vec![false; n],
            loop_continue_prob: 0.0,
        }
    }

    pub fn successors(&self, block: usize) -> &[u32] {
        &self.succ[block]
    }

    pub fn is_sink(&self, block: usize) -> bool {
        self.succ[block].is_empty()
    }

    fn draw_loops(&self, block: usize, rng: &mut impl Rng) -> u32 {
        if !self.has_loop[block] {
            return 0;
        }
        let mut n = 0;
        while rng.gen_bool(self.loop_continue_prob) {
            n += 1;
        }
        n
    }

    /// Follows random branches from `prefix`'s last block to a sink, drawing
    /// a fresh loop count at every block from that one on.
    fn continue_walk(&self, mut steps: Vec<Step>, rng: &mut impl Rng) -> Walk {
        let mut cur = steps.last().expect("walk never empty").block as usize;
        steps.last_mut().unwrap().loops = self.draw_loops(cur, rng);
        while !self.is_sink(cur) {
            let succ = &self.succ[cur];
            cur = succ[rng.gen_range(0..succ.len())] as usize;
            steps.push(Step {
                block: cur as u32,
                loops: self.draw_loops(cur, rng),
            });
        }
        Walk { steps }
    }

    pub fn random_walk(&self, rng: &mut impl Rng) -> Walk {
        self.continue_walk(
            vec![Step {
                block: self.entry.0 as u32,
                loops: 0,
            }],
            rng,
        )
    }

    /// Whether `walk` starts at the entry, follows program edges, ends in a
    /// sink, and only loops where the program has a self-loop.
    pub fn is_valid_walk(&self, walk: &Walk) -> bool {
        let Some(first) = walk.steps.first() else {
            return false;
        };
        if first.block as u64 != self.entry.0 {
            return false;
        }
        for s in &walk.steps {
            if s.block as usize >= self.blocks || (s.loops > 0 && !self.has_loop[s.block as usize])
            {
                return false;
            }
        }
        let linked = walk
            .steps
            .windows(2)
            .all(|w| self.succ[w[0].block as usize].contains(&w[1].block));
        linked && self.is_sink(walk.steps.last().unwrap().block as usize)
    }
}

/// Builds a layered DAG over about `sqrt(blocks)` layers, each at most
/// `branch_factor` times wider than the one before. Every block past the
/// entry gets a predecessor in the previous layer, then each non-sink block
/// draws 1..=branch_factor successors in the next two layers.
pub fn gen_program(params: &ProgramParams, rng_seed: u64) -> Result<SyntheticProgram> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = params.blocks;
    let bf = params.branch_factor;
    let width = n.div_ceil(((n as f64).sqrt().round() as usize).max(2));
    let mut layers: Vec<Vec<usize>> = vec![vec![0]];
    let mut next = 1;
    while next < n {
        let size = width.min(layers.last().unwrap().len() * bf).min(n - next);
        layers.push((next..next + size).collect());
        next += size;
    }

    let mut succ: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for li in 1..layers.len() {
        for &b in &layers[li] {
            let room: Vec<usize> = layers[li - 1]
                .iter()
                .copied()
                .filter(|&p| succ[p].len() < bf)
                .collect();
            // Layer widths guarantee room.
            let p = room[rng.gen_range(0..room.len())];
            succ[p].insert(b as u32);
        }
    }
    for li in 0..layers.len() - 1 {
        let targets: Vec<usize> = layers[li + 1..layers.len().min(li + 3)]
            .iter()
            .flatten()
            .copied()
            .collect();
        for &b in &layers[li] {
            let k = rng.gen_range(1..=bf.min(targets.len()));
            for t in sample(&mut rng, targets.len(), targets.len()) {
                if succ[b].len() >= k {
                    break;
                }
                succ[b].insert(targets[t] as u32);
            }
        }
    }
    let has_loop: Vec<bool> = (0..n)
        .map(|_| rng.gen_bool(params.self_loop_prob))
        .collect();

    let edges = succ
        .iter()
        .enumerate()
        .flat_map(|(a, s)| {
            s.iter()
                .map(move |&b| (BlockId(a as u64), BlockId(b as u64)))
        })
        .chain(
            has_loop
                .iter()
                .enumerate()
                .filter(|(_, &l)| l)
                .map(|(b, _)| (BlockId(b as u64), BlockId(b as u64))),
        )
        .collect();
    Ok(SyntheticProgram {
        blocks: n,
        edges,
        self_loops: has_loop
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(b, _)| BlockId(b as u64))
            .collect(),
        entry: BlockId(0),
        succ: succ.into_iter().map(|s| s.into_iter().collect()).collect(),
        has_loop,
        loop_continue_prob: params.loop_continue_prob,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Step {
    pub block: u32,
    /// Times the block's self-loop was taken.
    pub loops: u32,
}

/// One execution: the visited blocks in order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Walk {
    pub steps: Vec<Step>,
}

impl Walk {
    pub fn raw_counts(&self) -> RawCounts {
        let mut raw = RawCounts::new();
        for s in &self.steps {
            if s.loops > 0 {
                let b = BlockId(s.block as u64);
                *raw.entry((b, b)).or_insert(0) += s.loops as u64;
            }
        }
        for w in self.steps.windows(2) {
            let key = (BlockId(w[0].block as u64), BlockId(w[1].block as u64));
            *raw.entry(key).or_insert(0) += 1;
        }
        raw
    }

    pub fn trace(&self) -> SeedTrace {
        SeedTrace::from_raw(self.raw_counts()).expect("walk counts are positive")
    }

    /// Bytes standing in for the seed's content.
    pub fn encode(&self) -> Vec<u8> {
        self.steps
            .iter()
            .flat_map(|s| {
                s.block
                    .to_le_bytes()
                    .into_iter()
                    .chain(s.loops.to_le_bytes())
            })
            .collect()
    }

    pub fn content_hash(&self) -> ContentHash {
        ContentHash::of(&self.encode())
    }

    /// Blocks executed, loop iterations included.
    pub fn cost(&self) -> u64 {
        self.steps.iter().map(|s| 1 + s.loops as u64).sum()
    }

    pub fn to_record(&self, instance: usize, birth: u64, name: String) -> SeedRecord {
        SeedRecord {
            name,
            instance,
            birth,
            size_bytes: self.steps.len() as u64,
            exec_time_us: Some(self.cost()),
            content_hash: self.content_hash(),
            trace: self.trace(),
        }
    }
}

/// `k` random entry-to-sink walks as instance-0 seeds with births `0..k`.
pub fn gen_corpus(program: &SyntheticProgram, k: usize, rng_seed: u64) -> Vec<SeedRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..k)
        .map(|b| {
            program
                .random_walk(&mut rng)
                .to_record(0, b as u64, format!("id:{b:06},orig"))
        })
        .collect()
}

/// Derives `energy` candidates from `parent`, each keeping a random prefix
/// and branching randomly from there. A candidate is kept iff it reaches an
/// edge missing from `coverage`, which is then updated.
pub fn mutate_round(
    program: &SyntheticProgram,
    parent: &Walk,
    energy: usize,
    rng: &mut impl Rng,
    coverage: &mut HashSet<EdgeKey>,
) -> Vec<Walk> {
    let mut kept = Vec::new();
    for _ in 0..energy {
        let cut = rng.gen_range(0..parent.steps.len());
        let child = program.continue_walk(parent.steps[..=cut].to_vec(), rng);
        let trace = child.trace();
        let novel: Vec<EdgeKey> = trace
            .edges()
            .iter()
            .filter(|e| !coverage.contains(e))
            .copied()
            .collect();
        if !novel.is_empty() {
            coverage.extend(novel);
            kept.push(child);
        }
    }
    kept
}

/// Deterministic stage: `energy` candidates drawn from a stream seeded by
/// the parent's content, so every instance derives the same ones.
pub fn deterministic_round(
    program: &SyntheticProgram,
    parent: &Walk,
    energy: usize,
    coverage: &mut HashSet<EdgeKey>,
) -> Vec<Walk> {
    let seed = parent.content_hash().0;
    mutate_round(
        program,
        parent,
        energy,
        &mut ChaCha8Rng::from_seed(seed),
        coverage,
    )
}
