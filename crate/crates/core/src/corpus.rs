//! Seed metadata, ingestion of AFL-style instance directories, content
//! deduplication, and allow-list files.
//!
//! Layout read by [`ingest_instance`]:
//!
//! ```text
//! <instance>/queue/id:000000,orig          seed bytes
//! <instance>/queue/id:000000,orig.trace    trace file (see `coverage`)
//! <instance>/queue/id:000000,orig.meta     optional `key = value` sidecar
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::coverage::{parse_trace, SeedTrace};
use crate::error::{Error, Result};

pub const TRACE_SUFFIX: &str = ".trace";
pub const META_SUFFIX: &str = ".meta";
pub const ALLOWLIST_FILE: &str = "allowlist.txt";

/// SHA-256 of a seed's bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({self})")
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedRecord {
    pub name: String,
    pub instance: usize,
    /// Queue position; larger is younger.
    pub birth: u64,
    pub size_bytes: u64,
    /// `None` when no sidecar supplied it.
    pub exec_time_us: Option<u64>,
    pub content_hash: ContentHash,
    pub trace: SeedTrace,
}

impl SeedRecord {
    pub fn exec_time(&self) -> u64 {
        self.exec_time_us.unwrap_or(0)
    }
}

/// The seeds of one fuzzing instance, ordered by birth.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InstanceCorpus {
    pub instance: usize,
    /// Directory name of the instance, empty for in-memory corpora.
    pub label: String,
    pub seeds: Vec<SeedRecord>,
    /// Queue entries skipped because their filename did not parse.
    pub skipped: usize,
}

impl InstanceCorpus {
    /// Sorts `seeds` by birth. Fails if two seeds share a birth or belong to
    /// another instance.
    pub fn new(instance: usize, mut seeds: Vec<SeedRecord>) -> Result<Self> {
        seeds.sort_by_key(|s| s.birth);
        if let Some(w) = seeds.windows(2).find(|w| w[0].birth == w[1].birth) {
            return Err(Error::InvalidInput(format!(
                "instance {instance}: seeds {} and {} share birth {}",
                w[0].name, w[1].name, w[0].birth
            )));
        }
        if let Some(s) = seeds.iter().find(|s| s.instance != instance) {
            return Err(Error::InvalidInput(format!(
                "seed {} claims instance {} inside corpus {instance}",
                s.name, s.instance
            )));
        }
        Ok(InstanceCorpus {
            instance,
            label: String::new(),
            seeds,
            skipped: 0,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&SeedRecord> {
        self.seeds.iter().find(|s| s.name == name)
    }
}

/// Parses the six decimal digits following `id:` in an AFL queue filename.
pub fn parse_birth(file_name: &str) -> Option<u64> {
    let rest = file_name.strip_prefix("id:")?;
    let digits = rest.get(..6)?;
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    match rest.as_bytes().get(6) {
        None | Some(b',') => digits.parse().ok(),
        Some(_) => None,
    }
}

#[derive(Debug, Default, PartialEq, Eq)]
struct Meta {
    exec_time_us: Option<u64>,
    size_bytes: Option<u64>,
}

fn parse_meta(path: &Path, text: &str) -> Result<Meta> {
    let mut meta = Meta::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", i + 1),
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
        let value: u64 = value.trim().parse().map_err(|_| {
            bad(format!(
                "value {:?} is not a non-negative integer",
                value.trim()
            ))
        })?;
        match key.trim() {
            "exec_time_us" => meta.exec_time_us = Some(value),
            "size_bytes" => meta.size_bytes = Some(value),
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    Ok(meta)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads `<dir>/queue`. The instance label is the directory's file name.
///
/// Queue entries whose names do not follow `id:NNNNNN[,...]` are skipped and
/// counted in [`InstanceCorpus::skipped`]. A sidecar `size_bytes` overrides the
/// file length.
pub fn ingest_instance(dir: &Path, instance: usize) -> Result<InstanceCorpus> {
    let queue = dir.join("queue");
    let listing = fs::read_dir(&queue).map_err(|e| Error::io(&queue, e))?;
    let mut names = Vec::new();
    for entry in listing {
        let entry = entry.map_err(|e| Error::io(&queue, e))?;
        let ty = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        if !ty.is_file() {
            continue;
        }
        match entry.file_name().into_string() {
            Ok(name) => names.push(name),
            Err(_) => names.push(String::new()),
        }
    }
    names.sort();

    let mut seeds = Vec::new();
    let mut skipped = 0;
    let mut missing = Vec::new();
    for name in &names {
        if name.ends_with(TRACE_SUFFIX) || name.ends_with(META_SUFFIX) {
            continue;
        }
        let Some(birth) = parse_birth(name) else {
            log::warn!(
                "{}: skipping unrecognized queue entry {name:?}",
                queue.display()
            );
            skipped += 1;
            continue;
        };
        let seed_path = queue.join(name);
        let trace_path = queue.join(format!("{name}{TRACE_SUFFIX}"));
        if !trace_path.is_file() {
            missing.push(name.clone());
            continue;
        }
        let bytes = read(&seed_path)?;
        let trace = parse_trace(&read(&trace_path)?).map_err(|e| Error::Format {
            path: trace_path.clone(),
            message: e.to_string(),
        })?;
        let meta_path = queue.join(format!("{name}{META_SUFFIX}"));
        let meta = if meta_path.is_file() {
            let text = String::from_utf8_lossy(&read(&meta_path)?).into_owned();
            parse_meta(&meta_path, &text)?
        } else {
            Meta::default()
        };
        seeds.push(SeedRecord {
            name: name.clone(),
            instance,
            birth,
            size_bytes: meta.size_bytes.unwrap_or(bytes.len() as u64),
            exec_time_us: meta.exec_time_us,
            content_hash: ContentHash::of(&bytes),
            trace,
        });
    }
    let label = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    if !missing.is_empty() {
        return Err(Error::MissingTraces {
            instance: label,
            seeds: missing,
        });
    }
    let mut corpus = InstanceCorpus::new(instance, seeds)
        .map_err(|e| Error::Format {
            path: queue.clone(),
            message: e.to_string(),
        })?
        .with_label(label);
    corpus.skipped = skipped;
    Ok(corpus)
}

/// Which copy of each content survived deduplication.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DedupReport {
    pub canonical: BTreeMap<ContentHash, (usize, String)>,
    pub aliases: Vec<(usize, String)>,
}

/// Keeps one seed per content hash across all corpora: the one with the
/// smallest `(birth, instance)`.
pub fn dedup_by_content(corpora: Vec<InstanceCorpus>) -> (Vec<InstanceCorpus>, DedupReport) {
    let mut best: BTreeMap<ContentHash, (u64, usize, String)> = BTreeMap::new();
    for c in &corpora {
        for s in &c.seeds {
            let cand = (s.birth, c.instance, s.name.clone());
            best.entry(s.content_hash)
                .and_modify(|cur| {
                    if (cand.0, cand.1) < (cur.0, cur.1) {
                        *cur = cand.clone();
                    }
                })
                .or_insert(cand);
        }
    }
    let mut report = DedupReport::default();
    let corpora = corpora
        .into_iter()
        .map(|mut c| {
            let instance = c.instance;
            c.seeds.retain(|s| {
                let (birth, inst, _) = &best[&s.content_hash];
                let keep = *birth == s.birth && *inst == instance;
                if !keep {
                    report.aliases.push((instance, s.name.clone()));
                }
                keep
            });
            c
        })
        .collect();
    report.canonical = best
        .into_iter()
        .map(|(h, (_, inst, name))| (h, (inst, name)))
        .collect();
    (corpora, report)
}

/// Allow-list body: names sorted by birth, one per line.
pub fn allowlist_text<'a>(seeds: impl IntoIterator<Item = &'a SeedRecord>) -> String {
    let mut sorted: Vec<&SeedRecord> = seeds.into_iter().collect();
    sorted.sort_by(|a, b| (a.birth, &a.name).cmp(&(b.birth, &b.name)));
    let mut out = String::new();
    for s in sorted {
        out.push_str(&s.name);
        out.push('\n');
    }
    out
}

/// Names listed in an allow-list file.
pub fn read_allowlist(dir: &Path) -> Result<BTreeSet<String>> {
    let path = dir.join(ALLOWLIST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// An allow-list written to a temporary file next to its destination, not yet
/// visible to readers. Dropping it discards the temporary file.
#[derive(Debug)]
pub struct StagedAllowlist {
    file: tempfile::NamedTempFile,
    target: PathBuf,
}

impl StagedAllowlist {
    pub fn target(&self) -> &Path {
        &self.target
    }

    /// Atomically replaces the destination.
    pub fn commit(self) -> Result<PathBuf> {
        let target = self.target;
        self.file
            .persist(&target)
            .map_err(|e| Error::io(&target, e.error))?;
        Ok(target)
    }
}

pub fn stage_allowlist<'a>(
    dir: &Path,
    seeds: impl IntoIterator<Item = &'a SeedRecord>,
) -> Result<StagedAllowlist> {
    let target = dir.join(ALLOWLIST_FILE);
    let mut file = tempfile::Builder::new()
        .prefix(".allowlist.")
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    file.write_all(allowlist_text(seeds).as_bytes())
        .and_then(|_| file.as_file().sync_all())
        .map_err(|e| Error::io(file.path(), e))?;
    Ok(StagedAllowlist { file, target })
}

/// Writes `<dir>/allowlist.txt` through a temporary file and rename.
pub fn write_allowlist<'a>(
    dir: &Path,
    seeds: impl IntoIterator<Item = &'a SeedRecord>,
) -> Result<PathBuf> {
    stage_allowlist(dir, seeds)?.commit()
}
