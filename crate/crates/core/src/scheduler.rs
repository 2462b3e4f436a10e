//! When to redistribute, and one pull/distribute/push round over a sync
//! directory.
//!
//! Time is measured in abstract ticks: seconds for the on-disk orchestrator,
//! epochs in the simulator.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::corpus::{
    dedup_by_content, ingest_instance, parse_birth, stage_allowlist, InstanceCorpus, SeedRecord,
};
use crate::coverage::{aggregate_instances, EdgeSet};
use crate::distributor::{distribute, DistributionReport};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.10;
pub const DEFAULT_WARMUP_SECS: u64 = 3600;

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerState {
    /// Distinct edges at the last completed distribution.
    pub baseline_edges: usize,
    pub warmup: u64,
    pub threshold: f64,
    pub start: u64,
    pub last_run: Option<u64>,
    pub rounds: u64,
}

impl SchedulerState {
    pub fn new(start: u64, warmup: u64, threshold: f64) -> Self {
        SchedulerState {
            baseline_edges: 0,
            warmup,
            threshold,
            start,
            last_run: None,
            rounds: 0,
        }
    }

    /// Marks a distribution as completed with `edges` distinct edges.
    pub fn record_round(&mut self, edges: usize, now: u64) {
        self.baseline_edges = edges;
        self.last_run = Some(now);
        self.rounds += 1;
    }
}

/// First round once the warmup has elapsed; afterwards whenever edge coverage
/// grew by strictly more than `threshold` relative to the last round.
pub fn should_redistribute(state: &SchedulerState, current_edges: usize, now: u64) -> bool {
    if state.rounds == 0 {
        return now.saturating_sub(state.start) >= state.warmup;
    }
    if state.baseline_edges == 0 {
        return current_edges > 0;
    }
    let growth = current_edges.saturating_sub(state.baseline_edges) as f64;
    growth / state.baseline_edges as f64 > state.threshold
}

/// Subdirectories of `sync_dir` that hold a `queue/`, sorted by name.
pub fn instance_dirs(sync_dir: &Path) -> Result<Vec<PathBuf>> {
    let listing = fs::read_dir(sync_dir).map_err(|e| Error::io(sync_dir, e))?;
    let mut dirs = Vec::new();
    for entry in listing {
        let entry = entry.map_err(|e| Error::io(sync_dir, e))?;
        let path = entry.path();
        if path.join("queue").is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no instance directories with a queue/",
            sync_dir.display()
        )));
    }
    Ok(dirs)
}

pub fn ingest_sync_dir(sync_dir: &Path) -> Result<Vec<InstanceCorpus>> {
    instance_dirs(sync_dir)?
        .iter()
        .enumerate()
        .map(|(i, dir)| ingest_instance(dir, i))
        .collect()
}

/// Distinct edges across every instance of `sync_dir`.
pub fn current_edges(sync_dir: &Path) -> Result<usize> {
    let corpora = ingest_sync_dir(sync_dir)?;
    Ok(aggregate_instances(&corpora)?.union().len())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundSummary {
    pub instances: usize,
    pub seeds_in: usize,
    pub duplicates: usize,
    pub seeds_assigned: usize,
    pub seeds_preserved: usize,
    pub overlap_edges: usize,
    pub total_edges: usize,
    pub allowlists: Vec<PathBuf>,
    pub report_path: Option<PathBuf>,
}

fn write_atomic(path: &Path, body: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut f = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    f.write_all(body.as_bytes())
        .map_err(|e| Error::io(f.path(), e))?;
    f.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Ingests every instance, deduplicates, distributes, and rewrites each
/// instance's `allowlist.txt`. Nothing is written unless every step up to
/// staging all allow-lists succeeds.
pub fn orchestrate_once(
    sync_dir: &Path,
    rng_seed: u64,
    report: Option<&Path>,
) -> Result<RoundSummary> {
    let dirs = instance_dirs(sync_dir)?;
    let corpora = dirs
        .iter()
        .enumerate()
        .map(|(i, dir)| ingest_instance(dir, i))
        .collect::<Result<Vec<_>>>()?;
    let seeds_in = corpora.iter().map(|c| c.seeds.len()).sum();
    let total_edges = aggregate_instances(&corpora)?.union().len();
    let (corpora, dedup) = dedup_by_content(corpora);
    let result = distribute(&corpora, rng_seed)?;

    let staged = corpora
        .iter()
        .zip(&dirs)
        .enumerate()
        .map(|(i, (corpus, dir))| {
            let seeds = result.allowed(i).map(|n| {
                corpus
                    .get(n)
                    .expect("distribution names come from the corpus")
            });
            stage_allowlist(dir, seeds)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = RoundSummary {
        instances: corpora.len(),
        seeds_in,
        duplicates: dedup.aliases.len(),
        seeds_assigned: result.assigned.iter().map(Vec::len).sum(),
        seeds_preserved: result.preserved.iter().map(Vec::len).sum(),
        overlap_edges: result.overlap.len(),
        total_edges,
        allowlists: Vec::new(),
        report_path: None,
    };
    if let Some(path) = report {
        let json = DistributionReport::new(&result, &corpora).to_json();
        write_atomic(path, &json)?;
        summary.report_path = Some(path.to_path_buf());
    }
    for s in staged {
        summary.allowlists.push(s.commit()?);
    }
    log::info!(
        "distributed {} seeds ({} assigned, {} preserved) over {} instances",
        summary.seeds_in,
        summary.seeds_assigned,
        summary.seeds_preserved,
        summary.instances
    );
    Ok(summary)
}

/// Consumer rule for allow-lists: a seed may be scheduled if it is listed, or
/// if it was born after the newest seed the round saw.
pub fn is_schedulable(
    allowlist: &std::collections::BTreeSet<String>,
    high_water: Option<u64>,
    name: &str,
) -> bool {
    if allowlist.contains(name) {
        return true;
    }
    match (parse_birth(name), high_water) {
        (Some(b), Some(hw)) => b > hw,
        (Some(_), None) => true,
        (None, _) => false,
    }
}

/// Youngest birth in a corpus, the high-water mark for [`is_schedulable`].
pub fn high_water(seeds: &[SeedRecord]) -> Option<u64> {
    seeds.iter().map(|s| s.birth).max()
}

/// Polling driver for watch mode.
#[derive(Debug)]
pub struct Watcher {
    pub sync_dir: PathBuf,
    pub rng_seed: u64,
    pub report: Option<PathBuf>,
    pub state: SchedulerState,
}

impl Watcher {
    pub fn new(sync_dir: PathBuf, rng_seed: u64, state: SchedulerState) -> Self {
        Watcher {
            sync_dir,
            rng_seed,
            report: None,
            state,
        }
    }

    /// Checks the schedule at `now` and runs a round if due. Round `r` uses
    /// `rng_seed + r`.
    pub fn poll(&mut self, now: u64) -> Result<Option<RoundSummary>> {
        let edges = current_edges(&self.sync_dir)?;
        if !should_redistribute(&self.state, edges, now) {
            log::debug!("{edges} edges; no redistribution at t={now}");
            return Ok(None);
        }
        let seed = self.rng_seed.wrapping_add(self.state.rounds);
        let summary = orchestrate_once(&self.sync_dir, seed, self.report.as_deref())?;
        self.state.record_round(summary.total_edges, now);
        Ok(Some(summary))
    }
}

/// Union of edges named by the allow-lists of a sync directory.
pub fn allowlisted_edges(sync_dir: &Path) -> Result<EdgeSet> {
    let dirs = instance_dirs(sync_dir)?;
    let mut edges = EdgeSet::new();
    for (i, dir) in dirs.iter().enumerate() {
        let corpus = ingest_instance(dir, i)?;
        let list = crate::corpus::read_allowlist(dir)?;
        for s in corpus.seeds.iter().filter(|s| list.contains(&s.name)) {
            edges.extend(s.trace.edges().iter().copied());
        }
    }
    Ok(edges)
}
