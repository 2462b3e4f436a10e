//! Corpus generators and independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use fuzz_divide::corpus::{ContentHash, InstanceCorpus, SeedRecord};
use fuzz_divide::coverage::{EdgeKey, EdgeSet, SeedTrace};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn record(instance: usize, birth: u64, edges: Vec<EdgeKey>) -> SeedRecord {
    let content = format!("{instance}/{birth}/{edges:?}");
    SeedRecord {
        name: format!("id:{birth:06},src:000000"),
        instance,
        birth,
        size_bytes: 1 + edges.len() as u64,
        exec_time_us: Some(10 + (birth * 7919) % 1000),
        content_hash: ContentHash::of(content.as_bytes()),
        trace: SeedTrace::from_edges(edges).expect("one bucket per pair"),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub instances: usize,
    pub max_seeds: usize,
    pub max_edges: usize,
}

/// A universe of at most `max_edges` EdgeKeys over a small block range, with
/// cycles, self-loops, and several buckets per pair allowed.
pub fn universe(rng: &mut impl Rng, max_edges: usize) -> Vec<EdgeKey> {
    let size = rng.gen_range(1..=max_edges);
    // Enough blocks that `size` distinct pairs exist.
    let min_blocks = (size as f64).sqrt().ceil() as u64 + 1;
    let blocks = rng.gen_range(min_blocks..=(size as u64 / 2).max(min_blocks));
    let mut set = BTreeSet::new();
    while set.len() < size {
        let src = rng.gen_range(0..blocks);
        let dst = if rng.gen_bool(0.05) {
            src
        } else {
            rng.gen_range(0..blocks)
        };
        let bucket = if rng.gen_bool(0.8) {
            0
        } else {
            rng.gen_range(0..8)
        };
        set.insert(EdgeKey::new(src, dst, bucket));
    }
    set.into_iter().collect()
}

/// Random subset of `universe`, keeping one bucket per pair, never empty.
pub fn random_trace(rng: &mut impl Rng, universe: &[EdgeKey], density: f64) -> Vec<EdgeKey> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for e in universe {
        if rng.gen_bool(density) && seen.insert((e.src, e.dst)) {
            out.push(*e);
        }
    }
    if out.is_empty() {
        out.push(*universe.choose(rng).unwrap());
    }
    out
}

pub fn random_corpora(rng: &mut impl Rng, shape: Shape) -> Vec<InstanceCorpus> {
    let universe = universe(rng, shape.max_edges);
    let density = rng.gen_range(0.02..0.4);
    (0..shape.instances)
        .map(|i| {
            let k = rng.gen_range(1..=shape.max_seeds);
            let mut births: Vec<u64> = (0..(k as u64 * 2)).collect();
            births.shuffle(rng);
            let seeds = births[..k]
                .iter()
                .map(|&b| record(i, b, random_trace(rng, &universe, density)))
                .collect();
            InstanceCorpus::new(i, seeds).unwrap()
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn all_edges(corpora: &[InstanceCorpus]) -> EdgeSet {
    corpora
        .iter()
        .flat_map(|c| c.seeds.iter())
        .flat_map(|s| s.trace.edges().iter().copied())
        .collect()
}

/// Plain-graph adjacency over node indices, self-loops dropped.
pub fn adjacency(edges: &EdgeSet) -> (Vec<u64>, Vec<BTreeSet<usize>>) {
    let nodes: BTreeSet<u64> = edges.iter().flat_map(|e| [e.src.0, e.dst.0]).collect();
    let nodes: Vec<u64> = nodes.into_iter().collect();
    let index: BTreeMap<u64, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut adj = vec![BTreeSet::new(); nodes.len()];
    for e in edges.iter().filter(|e| e.src != e.dst) {
        adj[index[&e.src.0]].insert(index[&e.dst.0]);
    }
    (nodes, adj)
}

/// Reachability closure by repeated DFS.
pub fn reach(adj: &[BTreeSet<usize>]) -> Vec<Vec<bool>> {
    let n = adj.len();
    let mut out = vec![vec![false; n]; n];
    for s in 0..n {
        let mut stack = vec![s];
        out[s][s] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !out[s][v] {
                    out[s][v] = true;
                    stack.push(v);
                }
            }
        }
    }
    out
}

/// Kahn's algorithm: true when the graph has no cycle.
pub fn is_acyclic(adj: &[BTreeSet<usize>]) -> bool {
    let mut indeg = vec![0usize; adj.len()];
    for vs in adj {
        for &v in vs {
            indeg[v] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..adj.len()).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(u) = queue.pop() {
        seen += 1;
        for &v in &adj[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push(v);
            }
        }
    }
    seen == adj.len()
}

/// Writes an AFL-style sync directory: `fuzzer0N/queue/id:...` files with
/// `.trace` sidecars from random walks of one synthetic program. Every
/// instance after the first also holds a synced copy of instance 0's first
/// seed. Returns the instance directories.
pub fn write_sync_dir(
    root: &std::path::Path,
    instances: usize,
    seeds_per_instance: usize,
    seed: u64,
) -> Vec<std::path::PathBuf> {
    use fuzz_divide::simulator::{gen_program, ProgramParams};

    let program = gen_program(
        &ProgramParams {
            blocks: 40,
            ..Default::default()
        },
        seed,
    )
    .unwrap();
    let mut rng = rng(seed ^ 0x5eed);
    let mut first = None;
    let mut dirs = Vec::new();
    for i in 0..instances {
        let dir = root.join(format!("fuzzer{i:02}"));
        let queue = dir.join("queue");
        std::fs::create_dir_all(&queue).unwrap();
        let write = |name: String, body: &[u8], trace: String| {
            std::fs::write(queue.join(&name), body).unwrap();
            std::fs::write(queue.join(format!("{name}.trace")), trace).unwrap();
        };
        for b in 0..seeds_per_instance {
            let walk = program.random_walk(&mut rng);
            let body = walk.encode();
            let trace = walk.trace().to_trace_file();
            if i == 0 && b == 0 {
                first = Some((body.clone(), trace.clone()));
            }
            write(format!("id:{b:06},orig:w{b}"), &body, trace);
        }
        if i > 0 {
            let (body, trace) = first.clone().unwrap();
            let b = seeds_per_instance;
            write(format!("id:{b:06},sync:fuzzer00,src:000000"), &body, trace);
        }
        dirs.push(dir);
    }
    dirs
}

/// Nine blocks, two instances. Instance 0 holds S1..S4 by age; instance 1
/// holds copies of S3, S2, S4 under other content. Only S1 reaches 2->7.
pub mod nine_block {
    use super::*;
    use fuzz_divide::coverage::EdgeKey;

    pub const S1: &[(u64, u64, u8)] = &[(0, 1, 0), (1, 2, 0), (2, 7, 0)];
    pub const S2: &[(u64, u64, u8)] = &[(0, 1, 0), (1, 2, 0), (2, 3, 0), (3, 4, 0), (4, 8, 0)];
    pub const S3: &[(u64, u64, u8)] = &[
        (0, 1, 0),
        (1, 2, 0),
        (2, 2, 2),
        (2, 3, 0),
        (3, 5, 0),
        (5, 6, 0),
    ];
    pub const S4: &[(u64, u64, u8)] = &[
        (0, 1, 0),
        (1, 2, 0),
        (2, 2, 2),
        (2, 3, 0),
        (3, 4, 0),
        (4, 8, 0),
    ];

    pub fn keys(e: &[(u64, u64, u8)]) -> Vec<EdgeKey> {
        e.iter().map(|&(s, d, b)| EdgeKey::new(s, d, b)).collect()
    }

    pub fn corpora() -> Vec<InstanceCorpus> {
        let a = [S1, S2, S3, S4]
            .iter()
            .enumerate()
            .map(|(b, e)| record(0, b as u64, keys(e)))
            .collect();
        let b = [S3, S2, S4]
            .iter()
            .enumerate()
            .map(|(b, e)| {
                let mut r = record(1, b as u64, keys(e));
                r.content_hash = ContentHash::of(format!("t{b}").as_bytes());
                r
            })
            .collect();
        vec![
            InstanceCorpus::new(0, a).unwrap(),
            InstanceCorpus::new(1, b).unwrap(),
        ]
    }
}
