//! Edge-coverage-based task distribution for parallel fuzzing.
//!
//! Seeds from every fuzzing instance are traced, the edges all instances
//! share are split among instances by assigning covering seeds, and each
//! instance is confined to its share through an allow-list file. The crate
//! also carries corpus-distillation baselines, the redistribution schedule,
//! and a campaign simulator for comparing policies.

pub mod cfg;
pub mod corpus;
pub mod coverage;
pub mod distill;
pub mod distributor;
mod error;
pub mod scheduler;
pub mod simulator;

pub use cfg::{build_cfg, deepest_leaf, depth_map, Cfg, DepthMap};
pub use corpus::{
    dedup_by_content, ingest_instance, write_allowlist, ContentHash, DedupReport, InstanceCorpus,
    SeedRecord,
};
pub use coverage::{
    aggregate_instances, bucketize, parse_trace, serialize_trace, AggregateCoverage, BlockId,
    EdgeKey, EdgeSet, HitBucket, SeedTrace,
};
pub use distill::{Algorithm, DistillOutcome};
pub use distributor::{
    distribute, pick_seed_for_leaf, preserve_tail, verify_properties, DistributionReport,
    DistributionResult, PickRecord, PropertyReport,
};
pub use error::{Error, Result};
pub use scheduler::{orchestrate_once, should_redistribute, RoundSummary, SchedulerState};
