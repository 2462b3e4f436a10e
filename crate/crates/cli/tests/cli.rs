use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuzz-divide"))
        .args(args)
        .env_remove("FUZZ_DIVIDE_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn hex(b: u64) -> String {
    format!("{b:016x}")
}

fn seed(queue: &Path, name: &str, body: &[u8], edges: &[(u64, u64)]) {
    fs::write(queue.join(name), body).unwrap();
    let trace: String = edges
        .iter()
        .map(|&(s, d)| format!("{} {} 1\n", hex(s), hex(d)))
        .collect();
    fs::write(queue.join(format!("{name}.trace")), trace).unwrap();
}

/// Two instances over a small diamond; both reach 0->1->2, each has one
/// private edge.
fn sync_dir(root: &Path) {
    for (i, private) in [(0, (2, 3)), (1, (2, 4))] {
        let queue = root.join(format!("fuzzer{i:02}/queue"));
        fs::create_dir_all(&queue).unwrap();
        seed(
            &queue,
            "id:000000,orig:a",
            format!("a{i}").as_bytes(),
            &[(0, 1), (1, 2)],
        );
        seed(
            &queue,
            "id:000001,src:000000",
            format!("b{i}").as_bytes(),
            &[(0, 1), (1, 2), private],
        );
    }
}

#[test]
fn no_arguments_is_a_usage_error() {
    let o = bin(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(bin(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        bin(&["simulate", "--policy", "nope"]).status.code(),
        Some(1)
    );
}

#[test]
fn help_lists_defaults() {
    let o = bin(&["simulate", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for flag in [
        "--instances",
        "--epochs",
        "--policy",
        "--rng-seed",
        "--energy",
    ] {
        assert!(text.contains(flag), "{flag} missing");
    }
    assert!(text.contains("[default: edge]"));
}

#[test]
fn missing_sync_dir_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let o = bin(&["distribute", "--sync-dir", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn distribute_writes_allowlists_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    sync_dir(tmp.path());
    let report = tmp.path().join("report.json");
    let o = bin(&[
        "distribute",
        "--sync-dir",
        tmp.path().to_str().unwrap(),
        "--rng-seed",
        "3",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("instances: 2"));
    let mut listed = Vec::new();
    for i in 0..2 {
        let list =
            fs::read_to_string(tmp.path().join(format!("fuzzer{i:02}/allowlist.txt"))).unwrap();
        listed.extend(list.lines().map(|l| (i, l.to_string())));
    }
    // Each private edge lives only in the younger seed of its instance.
    assert!(listed.contains(&(0, "id:000001,src:000000".into())));
    assert!(listed.contains(&(1, "id:000001,src:000000".into())));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["schema_version"], "1");
}

#[test]
fn malformed_trace_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    sync_dir(tmp.path());
    fs::write(
        tmp.path().join("fuzzer01/queue/id:000000,orig:a.trace"),
        "zz 0000000000000001 1\n",
    )
    .unwrap();
    let o = bin(&["distribute", "--sync-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("id:000000,orig:a.trace"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = tmp.path().join(name);
        let o = bin(&[
            "simulate",
            "--instances",
            "2",
            "--epochs",
            "5",
            "--repeats",
            "2",
            "--policy",
            "edge",
            "--rng-seed",
            "7",
            "--report",
            path.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(path).unwrap()
    };
    let a = run("a.json");
    assert_eq!(a, run("b.json"));
    let json: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(json["schema_version"], "1");
    assert_eq!(json["config"]["epochs"], 5);
}

#[test]
fn config_file_sets_flags_and_command_line_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("sim.conf");
    fs::write(
        &conf,
        "# campaign\nepochs = 3\nrepeats = 1\ninstances = 3\n",
    )
    .unwrap();
    let report = tmp.path().join("r.json");
    let o = bin(&[
        "--config",
        conf.to_str().unwrap(),
        "simulate",
        "--instances",
        "2",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["config"]["epochs"], 3);
    assert_eq!(json["config"]["instances"], 2);
}

#[test]
fn inspect_dumps_the_shared_cfg() {
    let tmp = tempfile::tempdir().unwrap();
    sync_dir(tmp.path());
    let dot = tmp.path().join("cfg.dot");
    let o = bin(&[
        "inspect",
        "--sync-dir",
        tmp.path().to_str().unwrap(),
        "--dump-cfg",
        dot.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("shared edges: 2"));
    let text = fs::read_to_string(dot).unwrap();
    assert!(text.starts_with("digraph"));
    assert!(text.contains("->"));
}

#[test]
fn inspect_prints_a_trace() {
    let tmp = tempfile::tempdir().unwrap();
    sync_dir(tmp.path());
    let trace = tmp.path().join("fuzzer00/queue/id:000001,src:000000.trace");
    let o = bin(&["inspect", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("3 edges"));
}

#[test]
fn distill_lists_a_cover() {
    let tmp = tempfile::tempdir().unwrap();
    sync_dir(tmp.path());
    let o = bin(&["distill", tmp.path().join("fuzzer00").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("id:000001,src:000000"));
    assert!(!stdout(&o).contains("id:000000,orig:a"));
}
