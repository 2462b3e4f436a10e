//! Epoch-stepped parallel fuzzing campaigns over a synthetic program.
//!
//! Each instance executes `execs_per_epoch` candidates per epoch, scheduling
//! seeds cyclically through its queue the way AFL cycles its queue. The
//! first time an instance schedules a seed it runs a deterministic stage of
//! `det_energy` candidates that is identical on every instance; each
//! schedule then adds `energy` random candidates. New seeds are kept only
//! when they reach a globally new edge, and are copied to every other instance at the
//! end of the epoch. Policies differ in which queued seeds an instance may
//! schedule:
//!
//! * `shared`: all of them (plain AFL parallel mode).
//! * `edge`: its allow-list from task distribution, plus seeds it found
//!   itself since the last round.
//! * `pfuzz`: an approximation of P-FUZZ. Every seed, split round-robin by
//!   birth.
//! * `pafl`: an approximation of PAFL. Seeds hitting an edge that fewer than
//!   the median number of seeds hit, split round-robin.
//!
//! The non-shared policies redistribute on the scheduler's rule, with time
//! measured in epochs.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::program::{
    deterministic_round, gen_program, mutate_round, ProgramParams, SyntheticProgram, Walk,
};
use super::stats::mann_whitney_u;
use crate::corpus::InstanceCorpus;
use crate::coverage::{EdgeKey, SeedTrace};
use crate::distributor::{distribute, REPORT_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::scheduler::{should_redistribute, SchedulerState, DEFAULT_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Shared,
    Pfuzz,
    Pafl,
    Edge,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Shared => "shared",
            Policy::Pfuzz => "pfuzz",
            Policy::Pafl => "pafl",
            Policy::Edge => "edge",
        }
    }

    /// Baselines reconstructed from their published descriptions.
    pub fn is_approximation(self) -> bool {
        matches!(self, Policy::Pfuzz | Policy::Pafl)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "shared" => Policy::Shared,
            "pfuzz" => Policy::Pfuzz,
            "pafl" => Policy::Pafl,
            "edge" => Policy::Edge,
            other => return Err(Error::InvalidInput(format!("unknown policy {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub instances: usize,
    pub epochs: usize,
    /// Deterministic-stage candidates per seed and instance.
    pub det_energy: usize,
    /// Random candidates each time a seed is scheduled.
    pub energy: usize,
    /// Candidate executions per instance and epoch.
    pub execs_per_epoch: usize,
    pub initial_seeds: usize,
    pub policy: Policy,
    pub program: ProgramParams,
    pub rng_seed: u64,
    pub repeats: usize,
    pub threshold: f64,
    pub warmup_epochs: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            instances: 2,
            epochs: 30,
            det_energy: 16,
            energy: 2,
            execs_per_epoch: 96,
            initial_seeds: 16,
            policy: Policy::Edge,
            program: ProgramParams::default(),
            rng_seed: 0,
            repeats: 5,
            threshold: DEFAULT_THRESHOLD,
            warmup_epochs: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.instances > 64 {
            return Err(Error::InvalidInput("instances must be in 1..=64".into()));
        }
        if self.initial_seeds == 0 {
            return Err(Error::InvalidInput("initial_seeds must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidInput("repeats must be >= 1".into()));
        }
        Ok(())
    }

    /// Seed of repeat `r`.
    pub fn repeat_seed(&self, r: usize) -> u64 {
        splitmix(self.rng_seed ^ splitmix(r as u64))
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub total_seeds: usize,
    /// Share of existing seeds mutated by at least one instance so far.
    pub mutation_rate: f64,
    /// Share of existing seeds mutated by more than one instance so far.
    pub overlap_rate: f64,
    pub global_edges: usize,
    pub per_instance_edges: Vec<usize>,
}

/// Entry 0 describes the initial corpus; entry `e` the state after epoch `e`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CampaignMetrics {
    pub policy: Option<Policy>,
    pub rng_seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub rounds: u64,
    /// Children kept whose trace had no globally new edge at birth. Always 0.
    pub stale_children: usize,
}

impl CampaignMetrics {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("at least the initial snapshot")
    }

    pub fn final_edges(&self) -> usize {
        self.last().global_edges
    }

    pub fn final_overlap_rate(&self) -> f64 {
        self.last().overlap_rate
    }
}

struct SimSeed {
    walk: Walk,
    trace: SeedTrace,
}

struct Campaign<'a> {
    config: &'a SimConfig,
    program: SyntheticProgram,
    seeds: Vec<SimSeed>,
    /// Bit `i` set when instance `i` has mutated the seed.
    mutated_by: Vec<u64>,
    /// Bit `i` set once instance `i` ran the deterministic stage on the seed.
    det_done: Vec<u64>,
    coverage: HashSet<EdgeKey>,
    queues: Vec<Vec<usize>>,
    queue_edges: Vec<HashSet<EdgeKey>>,
    cursors: Vec<usize>,
    /// `None` until the first distribution.
    allowed: Vec<Option<HashSet<usize>>>,
    found_since_round: Vec<Vec<usize>>,
    rngs: Vec<ChaCha8Rng>,
    scheduler: SchedulerState,
    stale_children: usize,
}

impl<'a> Campaign<'a> {
    /// The target and its initial corpus come from `config.rng_seed`; the
    /// fuzzing itself from `rng_seed`.
    fn new(config: &'a SimConfig, rng_seed: u64) -> Result<Self> {
        let n = config.instances;
        let program = gen_program(&config.program, splitmix(config.rng_seed ^ 0x70))?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(splitmix(config.rng_seed ^ 0xc0));
        let mut seeds = Vec::new();
        let mut coverage = HashSet::new();
        for _ in 0..config.initial_seeds {
            let walk = program.random_walk(&mut init_rng);
            let trace = walk.trace();
            coverage.extend(trace.edges().iter().copied());
            seeds.push(SimSeed { walk, trace });
        }
        let all: Vec<usize> = (0..seeds.len()).collect();
        Ok(Campaign {
            config,
            program,
            mutated_by: vec![0; seeds.len()],
            det_done: vec![0; seeds.len()],
            queue_edges: vec![coverage.clone(); n],
            seeds,
            coverage,
            queues: vec![all; n],
            cursors: vec![0; n],
            allowed: vec![None; n],
            found_since_round: vec![Vec::new(); n],
            rngs: (0..n)
                .map(|i| ChaCha8Rng::seed_from_u64(splitmix(rng_seed ^ (0x100 + i as u64))))
                .collect(),
            scheduler: SchedulerState::new(0, config.warmup_epochs, config.threshold),
            stale_children: 0,
        })
    }

    fn schedulable(&self, i: usize) -> Vec<usize> {
        match &self.allowed[i] {
            None => self.queues[i].clone(),
            Some(set) => {
                let own: HashSet<usize> = self.found_since_round[i].iter().copied().collect();
                self.queues[i]
                    .iter()
                    .copied()
                    .filter(|s| set.contains(s) || own.contains(s))
                    .collect()
            }
        }
    }

    fn step(&mut self) -> Vec<(usize, usize)> {
        let mut found = Vec::new();
        for i in 0..self.config.instances {
            let list = self.schedulable(i);
            if list.is_empty() {
                continue;
            }
            let start = self.cursors[i] % list.len();
            let mut spent = 0;
            let mut j = 0;
            while spent < self.config.execs_per_epoch {
                let parent = list[(start + j) % list.len()];
                j += 1;
                // Every schedule costs at least one execution.
                spent += self.config.energy.max(1);
                self.mutated_by[parent] |= 1 << i;
                let before = self.coverage.len();
                let mut children = Vec::new();
                if self.det_done[parent] & (1 << i) == 0 {
                    self.det_done[parent] |= 1 << i;
                    spent += self.config.det_energy;
                    children = deterministic_round(
                        &self.program,
                        &self.seeds[parent].walk,
                        self.config.det_energy,
                        &mut self.coverage,
                    );
                }
                children.extend(mutate_round(
                    &self.program,
                    &self.seeds[parent].walk,
                    self.config.energy,
                    &mut self.rngs[i],
                    &mut self.coverage,
                ));
                if children.len() > self.coverage.len() - before {
                    self.stale_children += 1;
                }
                for walk in children {
                    let trace = walk.trace();
                    let id = self.seeds.len();
                    self.queue_edges[i].extend(trace.edges().iter().copied());
                    self.seeds.push(SimSeed { walk, trace });
                    self.mutated_by.push(0);
                    self.det_done.push(0);
                    self.queues[i].push(id);
                    self.found_since_round[i].push(id);
                    found.push((i, id));
                }
            }
            self.cursors[i] = start + j;
        }
        found
    }

    fn sync(&mut self, found: &[(usize, usize)]) {
        for &(owner, id) in found {
            for j in 0..self.config.instances {
                if j != owner {
                    self.queues[j].push(id);
                    let edges = self.seeds[id].trace.edges().iter().copied();
                    self.queue_edges[j].extend(edges);
                }
            }
        }
    }

    fn metrics(&self, epoch: usize) -> EpochMetrics {
        let total = self.seeds.len();
        let mutated = self.mutated_by.iter().filter(|&&m| m != 0).count();
        let overlapped = self
            .mutated_by
            .iter()
            .filter(|&&m| m.count_ones() > 1)
            .count();
        EpochMetrics {
            epoch,
            total_seeds: total,
            mutation_rate: mutated as f64 / total as f64,
            overlap_rate: overlapped as f64 / total as f64,
            global_edges: self.coverage.len(),
            per_instance_edges: self.queue_edges.iter().map(HashSet::len).collect(),
        }
    }

    fn distribute_edge(&self, round_seed: u64) -> Result<Vec<HashSet<usize>>> {
        // Queue position is the instance-local birth, as in AFL's id numbering.
        let corpora = self
            .queues
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let seeds = q
                    .iter()
                    .enumerate()
                    .map(|(pos, &id)| {
                        self.seeds[id]
                            .walk
                            .to_record(i, pos as u64, format!("id:{pos:06}"))
                    })
                    .collect();
                InstanceCorpus::new(i, seeds)
            })
            .collect::<Result<Vec<_>>>()?;
        let result = distribute(&corpora, round_seed)?;
        Ok((0..self.config.instances)
            .map(|i| {
                result
                    .allowed(i)
                    .map(|name| {
                        let pos: usize = name[3..9].parse().expect("generated name");
                        self.queues[i][pos]
                    })
                    .collect()
            })
            .collect())
    }

    fn round_robin(&self, kept: impl Iterator<Item = usize>) -> Vec<HashSet<usize>> {
        let n = self.config.instances;
        let mut out = vec![HashSet::new(); n];
        for (r, id) in kept.enumerate() {
            out[r % n].insert(id);
        }
        out
    }

    fn distribute_pafl(&self) -> Vec<HashSet<usize>> {
        let mut hits: HashMap<EdgeKey, usize> = HashMap::new();
        for s in &self.seeds {
            for e in s.trace.edges() {
                *hits.entry(*e).or_insert(0) += 1;
            }
        }
        let mut counts: Vec<usize> = hits.values().copied().collect();
        counts.sort_unstable();
        let median = counts.get(counts.len() / 2).copied().unwrap_or(0);
        self.round_robin((0..self.seeds.len()).filter(|&id| {
            self.seeds[id]
                .trace
                .edges()
                .iter()
                .any(|e| hits[e] < median)
        }))
    }

    fn redistribute(&mut self, round_seed: u64) -> Result<()> {
        let allowed = match self.config.policy {
            Policy::Shared => return Ok(()),
            Policy::Edge => self.distribute_edge(round_seed)?,
            Policy::Pfuzz => self.round_robin(0..self.seeds.len()),
            Policy::Pafl => self.distribute_pafl(),
        };
        for (i, set) in allowed.into_iter().enumerate() {
            self.allowed[i] = Some(set);
            self.found_since_round[i].clear();
            self.cursors[i] = 0;
        }
        Ok(())
    }

    fn run(mut self, rng_seed: u64) -> Result<CampaignMetrics> {
        let mut out = CampaignMetrics {
            policy: Some(self.config.policy),
            rng_seed,
            epochs: vec![self.metrics(0)],
            ..Default::default()
        };
        for epoch in 1..=self.config.epochs {
            let found = self.step();
            self.sync(&found);
            out.epochs.push(self.metrics(epoch));
            if self.config.policy != Policy::Shared {
                let now = epoch as u64;
                let edges = self.coverage.len();
                if should_redistribute(&self.scheduler, edges, now) {
                    let round_seed = splitmix(rng_seed ^ (0x1000 + self.scheduler.rounds));
                    self.redistribute(round_seed)?;
                    self.scheduler.record_round(edges, now);
                }
            }
        }
        out.rounds = self.scheduler.rounds;
        out.stale_children = self.stale_children;
        Ok(out)
    }
}

/// One campaign seeded with `config.rng_seed`.
pub fn run_campaign(config: &SimConfig) -> Result<CampaignMetrics> {
    config.validate()?;
    run_with_seed(config, config.rng_seed)
}

fn run_with_seed(config: &SimConfig, rng_seed: u64) -> Result<CampaignMetrics> {
    Campaign::new(config, rng_seed)?.run(rng_seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: Policy,
    /// Relative drop of mean final overlap rate against the baseline.
    pub overlap_reduction_pct: f64,
    /// Relative gain of mean final edge coverage against the baseline.
    pub coverage_gain_pct: f64,
    /// Mann-Whitney on final edge coverage, policy against baseline.
    pub p_value: f64,
    pub policy_final_edges: Vec<usize>,
    pub baseline_final_edges: Vec<usize>,
    pub policy_final_overlap: Vec<f64>,
    pub baseline_final_overlap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    pub rng_seed: u64,
    pub rounds: u64,
    pub total_seeds: Vec<usize>,
    pub mutation_rate: Vec<f64>,
    pub overlap_rate: Vec<f64>,
    pub global_edges: Vec<usize>,
    pub per_instance_edges: Vec<Vec<usize>>,
}

impl From<&CampaignMetrics> for Series {
    fn from(m: &CampaignMetrics) -> Self {
        Series {
            rng_seed: m.rng_seed,
            rounds: m.rounds,
            total_seeds: m.epochs.iter().map(|e| e.total_seeds).collect(),
            mutation_rate: m.epochs.iter().map(|e| e.mutation_rate).collect(),
            overlap_rate: m.epochs.iter().map(|e| e.overlap_rate).collect(),
            global_edges: m.epochs.iter().map(|e| e.global_edges).collect(),
            per_instance_edges: m
                .epochs
                .iter()
                .map(|e| e.per_instance_edges.clone())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub schema_version: &'static str,
    pub config: SimConfig,
    pub approximation: bool,
    pub policy_runs: Vec<Series>,
    pub baseline_runs: Vec<Series>,
    pub comparison: Comparison,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn pct_change(from: f64, to: f64) -> f64 {
    if from == 0.0 {
        0.0
    } else {
        (to - from) / from * 100.0
    }
}

/// Runs `config.repeats` paired campaigns of `config.policy` and of the
/// shared baseline on one program and initial corpus. Repeat `r` gives both
/// policies the same per-instance random streams.
pub fn compare_with_shared(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let baseline_config = SimConfig {
        policy: Policy::Shared,
        ..config.clone()
    };
    let mut policy_runs = Vec::new();
    let mut baseline_runs = Vec::new();
    for r in 0..config.repeats {
        let seed = config.repeat_seed(r);
        policy_runs.push(run_with_seed(config, seed)?);
        baseline_runs.push(if config.policy == Policy::Shared {
            policy_runs[r].clone()
        } else {
            run_with_seed(&baseline_config, seed)?
        });
    }
    let policy_edges: Vec<usize> = policy_runs
        .iter()
        .map(CampaignMetrics::final_edges)
        .collect();
    let baseline_edges: Vec<usize> = baseline_runs
        .iter()
        .map(CampaignMetrics::final_edges)
        .collect();
    let policy_overlap: Vec<f64> = policy_runs
        .iter()
        .map(CampaignMetrics::final_overlap_rate)
        .collect();
    let baseline_overlap: Vec<f64> = baseline_runs
        .iter()
        .map(CampaignMetrics::final_overlap_rate)
        .collect();
    let as_f64 = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let p_value = mann_whitney_u(&as_f64(&policy_edges), &as_f64(&baseline_edges))?.p_value;

    let comparison = Comparison {
        baseline: Policy::Shared,
        overlap_reduction_pct: -pct_change(
            mean(baseline_overlap.iter().copied()),
            mean(policy_overlap.iter().copied()),
        ),
        coverage_gain_pct: pct_change(
            mean(baseline_edges.iter().map(|&x| x as f64)),
            mean(policy_edges.iter().map(|&x| x as f64)),
        ),
        p_value,
        policy_final_edges: policy_edges,
        baseline_final_edges: baseline_edges,
        policy_final_overlap: policy_overlap,
        baseline_final_overlap: baseline_overlap,
    };
    Ok(SimReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        approximation: config.policy.is_approximation(),
        policy_runs: policy_runs.iter().map(Series::from).collect(),
        baseline_runs: baseline_runs.iter().map(Series::from).collect(),
        comparison,
    })
}
