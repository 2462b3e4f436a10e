//! Edge-coverage model: block identities, hit-count buckets, trace files, and
//! per-instance coverage aggregation.
//!
//! An edge is the triple `(src, dst, bucket)`. The same control-flow transition
//! observed with hit counts in different buckets yields two distinct edges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::InstanceCorpus;
use crate::error::{Error, Result};

/// Identifier of a basic block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Smallest hit count of each bucket. Bucket `i` spans
/// `BUCKET_LOWER_BOUNDS[i] ..= BUCKET_LOWER_BOUNDS[i + 1] - 1`, the last is open.
pub const BUCKET_LOWER_BOUNDS: [u64; 8] = [1, 2, 3, 4, 8, 16, 32, 128];

/// Quantized hit count, one of eight fixed ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HitBucket(u8);

impl HitBucket {
    pub const COUNT: usize = BUCKET_LOWER_BOUNDS.len();

    pub fn new(index: u8) -> Option<Self> {
        ((index as usize) < Self::COUNT).then_some(HitBucket(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// A hit count that falls in this bucket.
    pub fn representative(self) -> u64 {
        BUCKET_LOWER_BOUNDS[self.0 as usize]
    }
}

/// Maps a raw hit count to its bucket.
pub fn bucketize(count: u64) -> Result<HitBucket> {
    if count == 0 {
        return Err(Error::InvalidCount(count));
    }
    let index = BUCKET_LOWER_BOUNDS
        .iter()
        .rposition(|&lo| count >= lo)
        .expect("count >= 1 always matches the first bound");
    Ok(HitBucket(index as u8))
}

/// A directed control-flow edge together with its hit bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub src: BlockId,
    pub dst: BlockId,
    pub bucket: HitBucket,
}

impl EdgeKey {
    pub fn new(src: u64, dst: u64, bucket: u8) -> Self {
        EdgeKey {
            src: BlockId(src),
            dst: BlockId(dst),
            bucket: HitBucket::new(bucket).expect("bucket index out of range"),
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.src == self.dst
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}#{}", self.src, self.dst, self.bucket.0)
    }
}

pub type EdgeSet = BTreeSet<EdgeKey>;

/// Raw per-transition hit counts of one execution.
pub type RawCounts = BTreeMap<(BlockId, BlockId), u64>;

/// Coverage of one seed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SeedTrace {
    edges: EdgeSet,
    raw: Option<RawCounts>,
}

impl SeedTrace {
    pub fn from_raw(raw: RawCounts) -> Result<Self> {
        let edges = raw
            .iter()
            .map(|(&(src, dst), &count)| {
                Ok(EdgeKey {
                    src,
                    dst,
                    bucket: bucketize(count)?,
                })
            })
            .collect::<Result<EdgeSet>>()?;
        Ok(SeedTrace {
            edges,
            raw: Some(raw),
        })
    }

    /// Builds a trace from already-bucketed edges. A single execution has one
    /// count per transition, so two buckets for the same `(src, dst)` are rejected.
    pub fn from_edges(edges: impl IntoIterator<Item = EdgeKey>) -> Result<Self> {
        let edges: EdgeSet = edges.into_iter().collect();
        let mut seen = BTreeSet::new();
        for e in &edges {
            if !seen.insert((e.src, e.dst)) {
                return Err(Error::InvalidInput(format!(
                    "transition {}->{} appears with two hit buckets",
                    e.src, e.dst
                )));
            }
        }
        Ok(SeedTrace { edges, raw: None })
    }

    pub fn edges(&self) -> &EdgeSet {
        &self.edges
    }

    pub fn raw(&self) -> Option<&RawCounts> {
        self.raw.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Trace-file text. Without raw counts each edge is written with the
    /// smallest count of its bucket.
    pub fn to_trace_file(&self) -> String {
        match &self.raw {
            Some(raw) => serialize_trace(raw),
            None => {
                let raw: RawCounts = self
                    .edges
                    .iter()
                    .map(|e| ((e.src, e.dst), e.bucket.representative()))
                    .collect();
                serialize_trace(&raw)
            }
        }
    }
}

/// Renders raw counts in the trace-file format: one `<src> <dst> <count>` line
/// per transition, sorted by `(src, dst)`, LF-terminated.
pub fn serialize_trace(raw: &RawCounts) -> String {
    let mut out = String::with_capacity(raw.len() * 40);
    for (&(src, dst), &count) in raw {
        out.push_str(&format!("{src} {dst} {count}\n"));
    }
    out
}

fn parse_block(field: &str, line: usize) -> Result<BlockId> {
    let ok = field.len() == 16
        && field
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
    if !ok {
        return Err(Error::TraceFormat {
            line,
            message: format!("block id {field:?} is not 16 lowercase hex digits"),
        });
    }
    // Validated above, cannot fail.
    Ok(BlockId(u64::from_str_radix(field, 16).unwrap()))
}

/// Parses a trace file. Line order is not enforced on input.
pub fn parse_trace(bytes: &[u8]) -> Result<SeedTrace> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = 1 + bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count();
        Error::TraceFormat {
            line,
            message: "not valid UTF-8".into(),
        }
    })?;
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut raw = RawCounts::new();
    if body.is_empty() {
        return Ok(SeedTrace {
            edges: EdgeSet::new(),
            raw: Some(raw),
        });
    }
    for (i, line_text) in body.split('\n').enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = line_text.split(' ').collect();
        if fields.len() != 3 {
            return Err(Error::TraceFormat {
                line,
                message: format!("expected `<src> <dst> <count>`, got {line_text:?}"),
            });
        }
        let src = parse_block(fields[0], line)?;
        let dst = parse_block(fields[1], line)?;
        let count_ok = !fields[2].is_empty() && fields[2].bytes().all(|b| b.is_ascii_digit());
        let count = count_ok
            .then(|| fields[2].parse::<u64>().ok())
            .flatten()
            .filter(|&c| c >= 1)
            .ok_or_else(|| Error::TraceFormat {
                line,
                message: format!("count {:?} is not a decimal >= 1", fields[2]),
            })?;
        if raw.insert((src, dst), count).is_some() {
            return Err(Error::TraceFormat {
                line,
                message: format!("duplicate transition {src} {dst}"),
            });
        }
    }
    SeedTrace::from_raw(raw)
}

/// Edge sets of every instance, their intersection, and what each instance
/// covers outside the intersection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregateCoverage {
    pub per_instance: Vec<EdgeSet>,
    pub overlap: EdgeSet,
    pub complement: Vec<EdgeSet>,
}

impl AggregateCoverage {
    pub fn from_edge_sets(per_instance: Vec<EdgeSet>) -> Result<Self> {
        let (first, rest) = per_instance
            .split_first()
            .ok_or_else(|| Error::InvalidInput("no instances to aggregate".into()))?;
        let overlap: EdgeSet = first
            .iter()
            .filter(|e| rest.iter().all(|s| s.contains(e)))
            .copied()
            .collect();
        let complement = per_instance
            .iter()
            .map(|s| s.difference(&overlap).copied().collect())
            .collect();
        Ok(AggregateCoverage {
            per_instance,
            overlap,
            complement,
        })
    }

    pub fn union(&self) -> EdgeSet {
        self.per_instance.iter().flatten().copied().collect()
    }
}

/// Union of the edges of every seed in a corpus.
pub fn corpus_edges(corpus: &InstanceCorpus) -> EdgeSet {
    corpus
        .seeds
        .iter()
        .flat_map(|s| s.trace.edges().iter().copied())
        .collect()
}

pub fn aggregate_instances(corpora: &[InstanceCorpus]) -> Result<AggregateCoverage> {
    AggregateCoverage::from_edge_sets(corpora.iter().map(corpus_edges).collect())
}
