//! Deterministic parallel-fuzzing campaign simulator.

mod campaign;
mod program;
mod stats;

pub use campaign::{
    compare_with_shared, run_campaign, CampaignMetrics, Comparison, EpochMetrics, Policy, Series,
    SimConfig, SimReport,
};
pub use program::{
    deterministic_round, gen_corpus, gen_program, mutate_round, ProgramParams, Step,
    SyntheticProgram, Walk,
};
pub use stats::{mann_whitney_u, MannWhitney, EXACT_LIMIT};
