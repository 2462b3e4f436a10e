use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use fuzz_divide::cfg::build_cfg;
use fuzz_divide::corpus::ingest_instance;
use fuzz_divide::coverage::{aggregate_instances, parse_trace};
use fuzz_divide::distill::{self, Algorithm};
use fuzz_divide::scheduler::{
    ingest_sync_dir, orchestrate_once, RoundSummary, SchedulerState, Watcher,
};
use fuzz_divide::simulator::{compare_with_shared, Policy, ProgramParams, SimConfig};
use fuzz_divide::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INTEGRITY: u8 = 3;

const SUBCOMMANDS: [&str; 4] = ["distribute", "distill", "simulate", "inspect"];

/// Edge-coverage-based task distribution for parallel fuzzing.
#[derive(Debug, Parser)]
#[command(
    name = "fuzz-divide",
    version,
    arg_required_else_help = true,
    args_override_self = true
)]
struct Cli {
    /// Log filter, e.g. `info` or `fuzz_divide=debug`. Falls back to FUZZ_DIVIDE_LOG, then `warn`.
    #[arg(long, global = true)]
    log_level: Option<String>,

    /// File of `key = value` lines applied as flags before the command line.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split the seeds of a sync directory among its instances.
    Distribute(DistributeArgs),
    /// Reduce one instance's queue to a covering subset.
    Distill(DistillArgs),
    /// Compare a policy against plain parallel mode on a synthetic program.
    Simulate(SimulateArgs),
    /// Show traces, per-instance coverage, or the shared-edge CFG.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct DistributeArgs {
    /// Directory holding one subdirectory per instance, each with a queue/.
    #[arg(long)]
    sync_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    /// Relative edge growth that triggers a new round in watch mode.
    #[arg(long, default_value_t = fuzz_divide::scheduler::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Seconds before the first round in watch mode.
    #[arg(long, default_value_t = fuzz_divide::scheduler::DEFAULT_WARMUP_SECS)]
    warmup: u64,
    /// Keep polling and redistribute whenever the schedule says so.
    #[arg(long)]
    watch: bool,
    /// Seconds between polls in watch mode.
    #[arg(long, default_value_t = 30)]
    poll: u64,
    /// Stop watch mode after this many rounds.
    #[arg(long)]
    max_rounds: Option<u64>,
    /// Write the JSON distribution report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DistillArgs {
    /// Instance directory with a queue/.
    instance_dir: PathBuf,
    /// unweighted, time, size, ours, or optimal.
    #[arg(long, default_value = "ours")]
    algo: String,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = SimConfig::default().instances)]
    instances: usize,
    #[arg(long, default_value_t = SimConfig::default().epochs)]
    epochs: usize,
    /// shared, pfuzz, pafl, or edge.
    #[arg(long, default_value = "edge")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, default_value_t = SimConfig::default().repeats)]
    repeats: usize,
    /// Random mutations each time a seed is scheduled.
    #[arg(long, default_value_t = SimConfig::default().energy)]
    energy: usize,
    /// Deterministic-stage mutations per seed and instance.
    #[arg(long, default_value_t = SimConfig::default().det_energy)]
    det_energy: usize,
    /// Executions per instance and epoch.
    #[arg(long, default_value_t = SimConfig::default().execs_per_epoch)]
    execs_per_epoch: usize,
    #[arg(long, default_value_t = SimConfig::default().initial_seeds)]
    initial_seeds: usize,
    #[arg(long, default_value_t = ProgramParams::default().blocks)]
    blocks: usize,
    #[arg(long, default_value_t = ProgramParams::default().branch_factor)]
    branch_factor: usize,
    #[arg(long, default_value_t = ProgramParams::default().self_loop_prob)]
    self_loop_prob: f64,
    #[arg(long, default_value_t = ProgramParams::default().loop_continue_prob)]
    loop_continue_prob: f64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Print the edges of one trace file.
    #[arg(long, conflicts_with = "sync_dir")]
    trace: Option<PathBuf>,
    /// Print per-instance and shared coverage of a sync directory.
    #[arg(long)]
    sync_dir: Option<PathBuf>,
    /// Write the CFG (of the trace, or of the shared edges) as DOT.
    #[arg(long, value_name = "FILE")]
    dump_cfg: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Input(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn write_output(path: &Path, body: &str) -> CliResult {
    fs::write(path, body).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Rewrites `key = value` config lines into flags placed right after the
/// subcommand, so later command-line flags override them.
fn apply_config(argv: Vec<String>) -> CliResult<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = argv.get(i + 1).cloned();
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| Failure::Input(format!("{path}: {e}")))?;
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Input(format!(
                "{path}:{}: expected `key = value`",
                n + 1
            )));
        };
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => flags.push(flag),
            "false" => {}
            v => {
                flags.push(flag);
                flags.push(v.to_string());
            }
        }
    }
    let Some(at) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let mut out = argv[..=at].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[at + 1..]);
    Ok(out)
}

fn init_logging(level: Option<&str>) {
    let env = env_logger::Env::new().filter_or("FUZZ_DIVIDE_LOG", "warn");
    let mut builder = env_logger::Builder::from_env(env);
    if let Some(level) = level {
        builder.parse_filters(level);
    }
    let _ = builder.try_init();
}

fn print_round(s: &RoundSummary) {
    println!(
        "instances: {}  seeds: {} ({} duplicates)  assigned: {}  preserved: {}",
        s.instances, s.seeds_in, s.duplicates, s.seeds_assigned, s.seeds_preserved
    );
    println!("edges: {} total, {} shared", s.total_edges, s.overlap_edges);
    for p in &s.allowlists {
        println!("wrote {}", p.display());
    }
    if let Some(p) = &s.report_path {
        println!("report {}", p.display());
    }
}

fn distribute(args: DistributeArgs) -> CliResult {
    if !args.sync_dir.is_dir() {
        return Err(Failure::Input(format!(
            "--sync-dir {}: not a directory",
            args.sync_dir.display()
        )));
    }
    if !args.watch {
        let summary = orchestrate_once(&args.sync_dir, args.rng_seed, args.report.as_deref())?;
        print_round(&summary);
        return Ok(());
    }
    let start = Instant::now();
    let state = SchedulerState::new(0, args.warmup, args.threshold);
    let mut watcher = Watcher::new(args.sync_dir, args.rng_seed, state);
    watcher.report = args.report;
    loop {
        let now = start.elapsed().as_secs();
        if let Some(summary) = watcher.poll(now)? {
            println!("round {} at {now}s", watcher.state.rounds);
            print_round(&summary);
        }
        if args.max_rounds.is_some_and(|m| watcher.state.rounds >= m) {
            return Ok(());
        }
        std::thread::sleep(Duration::from_secs(args.poll));
    }
}

fn distill_cmd(args: DistillArgs) -> CliResult {
    let algorithm: Algorithm = args
        .algo
        .parse()
        .map_err(|_| Failure::Usage(format!("--algo {}: unknown algorithm", args.algo)))?;
    let corpus = ingest_instance(&args.instance_dir, 0)?;
    let outcome = distill::run(&corpus, algorithm, args.rng_seed)?;
    println!(
        "{algorithm}: kept {} of {} seeds covering {} edges",
        outcome.picked.len(),
        corpus.seeds.len(),
        outcome.covered.len()
    );
    for name in &outcome.picked {
        println!("{name}");
    }
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&outcome.report()).expect("report serializes");
        write_output(path, &(json + "\n"))?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult {
    let policy: Policy = args
        .policy
        .parse()
        .map_err(|_| Failure::Usage(format!("--policy {}: unknown policy", args.policy)))?;
    let config = SimConfig {
        instances: args.instances,
        epochs: args.epochs,
        det_energy: args.det_energy,
        energy: args.energy,
        execs_per_epoch: args.execs_per_epoch,
        initial_seeds: args.initial_seeds,
        policy,
        program: ProgramParams {
            blocks: args.blocks,
            branch_factor: args.branch_factor,
            self_loop_prob: args.self_loop_prob,
            loop_continue_prob: args.loop_continue_prob,
        },
        rng_seed: args.rng_seed,
        repeats: args.repeats,
        ..SimConfig::default()
    };
    let report = compare_with_shared(&config)?;
    let c = &report.comparison;
    println!(
        "{policy} vs shared, {} instances, {} epochs, {} repeats",
        config.instances, config.epochs, config.repeats
    );
    println!(
        "final edges: {:?} vs {:?}",
        c.policy_final_edges, c.baseline_final_edges
    );
    println!(
        "overlap reduction {:.1}%  coverage gain {:.2}%  p = {:.4}",
        c.overlap_reduction_pct, c.coverage_gain_pct, c.p_value
    );
    if report.approximation {
        println!("note: {policy} is an approximation of the published design");
    }
    if let Some(path) = &args.report {
        write_output(path, &report.to_json())?;
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> CliResult {
    let edges = if let Some(path) = &args.trace {
        let bytes =
            fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let trace =
            parse_trace(&bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        for e in trace.edges() {
            println!("{} -> {} bucket {}", e.src, e.dst, e.bucket.index());
        }
        println!("{} edges", trace.edges().len());
        trace.edges().clone()
    } else if let Some(dir) = &args.sync_dir {
        let corpora = ingest_sync_dir(dir)?;
        let agg = aggregate_instances(&corpora)?;
        for (c, edges) in corpora.iter().zip(&agg.per_instance) {
            println!(
                "{}: {} seeds, {} edges, {} skipped",
                c.label,
                c.seeds.len(),
                edges.len(),
                c.skipped
            );
        }
        println!("shared edges: {}", agg.overlap.len());
        agg.overlap
    } else {
        return Err(Failure::Usage("inspect needs --trace or --sync-dir".into()));
    };
    if let Some(out) = &args.dump_cfg {
        write_output(out, &build_cfg(&edges).to_dot())?;
    }
    Ok(())
}

fn run(argv: Vec<String>) -> u8 {
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(f) => return report_failure(f),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    init_logging(cli.log_level.as_deref());
    let outcome = match cli.command {
        Command::Distribute(a) => distribute(a),
        Command::Distill(a) => distill_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::Inspect(a) => inspect(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> u8 {
    match f {
        Failure::Usage(m) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Failure::Input(m) => {
            eprintln!("error: {m}");
            EXIT_INPUT
        }
        Failure::Core(e) => {
            eprintln!("error: {e}");
            if e.is_integrity() {
                EXIT_INTEGRITY
            } else {
                EXIT_INPUT
            }
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args().collect()))
}
