//! Control-flow graph aggregated from an edge set, with cycle-tolerant depths.
//!
//! Depth is the longest-path distance on the SCC condensation: every node of a
//! strongly connected component shares its component's depth, and components
//! without predecessors sit at depth 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::coverage::{BlockId, EdgeKey, EdgeSet};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Cfg {
    nodes: BTreeSet<BlockId>,
    edges: EdgeSet,
    entries: BTreeSet<BlockId>,
}

impl Cfg {
    pub fn nodes(&self) -> &BTreeSet<BlockId> {
        &self.nodes
    }

    /// Parallel edges differing only in bucket are kept apart.
    pub fn edges(&self) -> &EdgeSet {
        &self.edges
    }

    /// Nodes without an incoming edge from another node.
    pub fn entries(&self) -> &BTreeSet<BlockId> {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Removes edges; nodes stay, entries are recomputed.
    pub fn remove_edges<'a>(&mut self, edges: impl IntoIterator<Item = &'a EdgeKey>) {
        for e in edges {
            self.edges.remove(e);
        }
        self.entries = compute_entries(&self.nodes, &self.edges);
    }

    /// Nodes with at least one incoming edge and no outgoing edge to another
    /// node. A self-loop does not stop a node from being a leaf.
    pub fn leaves(&self) -> BTreeSet<BlockId> {
        let with_in: BTreeSet<BlockId> = self.edges.iter().map(|e| e.dst).collect();
        let with_out: BTreeSet<BlockId> = self
            .edges
            .iter()
            .filter(|e| !e.is_self_loop())
            .map(|e| e.src)
            .collect();
        with_in.difference(&with_out).copied().collect()
    }

    /// Graphviz rendering, one statement per edge labeled with its bucket.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cfg {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  \"{n}\";");
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"b{}\"];",
                e.src,
                e.dst,
                e.bucket.index()
            );
        }
        out.push_str("}\n");
        out
    }
}

fn compute_entries(nodes: &BTreeSet<BlockId>, edges: &EdgeSet) -> BTreeSet<BlockId> {
    let targets: BTreeSet<BlockId> = edges
        .iter()
        .filter(|e| !e.is_self_loop())
        .map(|e| e.dst)
        .collect();
    nodes.difference(&targets).copied().collect()
}

pub fn build_cfg(edges: &EdgeSet) -> Cfg {
    let nodes: BTreeSet<BlockId> = edges.iter().flat_map(|e| [e.src, e.dst]).collect();
    let entries = compute_entries(&nodes, edges);
    Cfg {
        nodes,
        edges: edges.clone(),
        entries,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DepthMap {
    pub depth: BTreeMap<BlockId, u32>,
    /// Component index, numbered in topological order of the condensation.
    pub scc: BTreeMap<BlockId, usize>,
}

impl DepthMap {
    pub fn depth_of(&self, node: BlockId) -> u32 {
        self.depth.get(&node).copied().unwrap_or(0)
    }
}

/// Strongly connected components of a graph over `0..n`, in topological order
/// of the condensation (sources first). Iterative Tarjan.
pub(crate) fn tarjan_scc(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0;
    // (node, next child position)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*pos) {
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
        }
    }
    // Tarjan emits sinks first.
    comps.reverse();
    comps
}

pub fn depth_map(cfg: &Cfg) -> DepthMap {
    let ids: Vec<BlockId> = cfg.nodes.iter().copied().collect();
    let pos: BTreeMap<BlockId, usize> = ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let mut adj = vec![Vec::new(); ids.len()];
    for e in &cfg.edges {
        adj[pos[&e.src]].push(pos[&e.dst]);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let comps = tarjan_scc(&adj);
    let mut comp_of = vec![0; ids.len()];
    for (c, members) in comps.iter().enumerate() {
        for &v in members {
            comp_of[v] = c;
        }
    }
    let mut comp_depth = vec![0u32; comps.len()];
    for (c, members) in comps.iter().enumerate() {
        for &v in members {
            for &w in &adj[v] {
                let cw = comp_of[w];
                if cw != c {
                    comp_depth[cw] = comp_depth[cw].max(comp_depth[c] + 1);
                }
            }
        }
    }
    DepthMap {
        depth: ids
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, comp_depth[comp_of[i]]))
            .collect(),
        scc: ids
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, comp_of[i]))
            .collect(),
    }
}

/// Deepest candidate, smallest id on ties. Leaves take precedence over
/// non-leaf candidates.
pub(crate) fn pick_deepest(
    candidates: impl Iterator<Item = (BlockId, u32, bool)>,
) -> Option<BlockId> {
    candidates
        .max_by(|a, b| (a.2, a.1).cmp(&(b.2, b.1)).then_with(|| b.0.cmp(&a.0)))
        .map(|(id, _, _)| id)
}

/// The leaf with the greatest depth, smallest id on ties. If every remaining
/// sink lies on a cycle, falls back to the deepest node that still has an
/// incoming edge. `None` only for a graph without edges.
pub fn deepest_leaf(cfg: &Cfg, depths: &DepthMap) -> Option<BlockId> {
    let leaves = cfg.leaves();
    let with_in: BTreeSet<BlockId> = cfg.edges.iter().map(|e| e.dst).collect();
    pick_deepest(
        with_in
            .iter()
            .map(|&n| (n, depths.depth_of(n), leaves.contains(&n))),
    )
}
