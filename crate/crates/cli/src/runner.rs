//! Content-addressed run directories and sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{validate, Diagnostics, RunConfig};
use crate::experiments::execute;

/// Overrides the output root of every run.
pub const OUTPUT_ROOT_ENV: &str = "PEVO_OUTPUT_ROOT";
/// Root used when neither the environment nor the config names one.
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration:\n{}", render(.0))]
    Invalid(Diagnostics),
    #[error("numerical failure: {0}")]
    Numerical(#[from] pevo::Error),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
}

fn render(d: &Diagnostics) -> String {
    d.errors().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tag: String,
    pub hash: String,
    pub config: RunConfig,
    pub version: String,
    pub timing: Timing,
    pub verdicts: std::collections::BTreeMap<String, bool>,
    /// Set when the solver stopped early on blow-up; the records still hold
    /// everything computed up to that point.
    pub partial: bool,
    pub blow_up: Option<f64>,
    pub manifest: Vec<ManifestEntry>,
}

impl RunRecord {
    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.tag, self.hash)
    }

    /// The record without its wall-clock timing.
    pub fn content(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("serializable record");
        v.as_object_mut().expect("object").remove("timing");
        v
    }
}

/// First 16 hex digits of the SHA-256 of the canonical config JSON (sorted
/// keys, `output_dir` dropped).
pub fn content_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = None;
    let canonical = serde_json::to_string(&serde_json::to_value(&c).expect("serializable config")).expect("json");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Environment override, then the config's `output_dir`, then [`DEFAULT_OUTPUT_ROOT`].
pub fn output_root(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub fn run(cfg: &RunConfig) -> Result<RunRecord, RunError> {
    run_in(cfg, &output_root(cfg))
}

/// Validates, executes and writes `root/<tag>-<hash>/{trace.csv, report.json, meta.json}`.
pub fn run_in(cfg: &RunConfig, root: &Path) -> Result<RunRecord, RunError> {
    let diagnostics = validate(cfg);
    if !diagnostics.is_ok() {
        return Err(RunError::Invalid(diagnostics));
    }
    let started_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let clock = Instant::now();
    let outcome = execute(cfg)?;
    let hash = content_hash(cfg);
    let dir = root.join(format!("{}-{hash}", cfg.tag));
    fs::create_dir_all(&dir)?;
    let trace = outcome.trace.to_csv();
    let mut report = outcome.report;
    report["verdicts"] = serde_json::to_value(&outcome.verdicts)?;
    report["warnings"] = serde_json::to_value(diagnostics.warnings().collect::<Vec<_>>())?;
    let report = serde_json::to_string_pretty(&report)? + "\n";
    let mut manifest = Vec::new();
    for (name, body) in [("trace.csv", &trace), ("report.json", &report)] {
        fs::write(dir.join(name), body)?;
        manifest.push(ManifestEntry { file: name.into(), bytes: body.len() as u64 });
    }
    let record = RunRecord {
        tag: cfg.tag.clone(),
        hash,
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        timing: Timing { started_unix_ms, elapsed_ms: clock.elapsed().as_millis() },
        verdicts: outcome.verdicts,
        partial: outcome.blow_up.is_some(),
        blow_up: outcome.blow_up,
        manifest,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(record)
}

/// Checks that every manifest file exists with its recorded length.
pub fn verify_manifest(record: &RunRecord, root: &Path) -> bool {
    let dir = root.join(record.dir_name());
    record.manifest.iter().all(|m| fs::metadata(dir.join(&m.file)).map(|md| md.len() == m.bytes).unwrap_or(false))
}

/// Outcome of one config in a sweep.
#[derive(Debug)]
pub struct SweepEntry {
    pub source: String,
    pub result: Result<RunRecord, RunError>,
}

impl SweepEntry {
    fn sort_key(&self) -> (u8, String) {
        match &self.result {
            Ok(r) => (0, format!("{}-{}", r.tag, r.hash)),
            Err(_) => (1, self.source.clone()),
        }
    }
}

/// Runs independent configs on `parallelism` threads. Records come back
/// sorted by `tag-hash`, failures last by source name.
pub fn sweep(configs: Vec<(String, RunConfig)>, root: &Path, parallelism: usize) -> Result<Vec<SweepEntry>, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| RunError::Io(std::io::Error::other(e)))?;
    let mut entries: Vec<SweepEntry> = pool.install(|| {
        configs
            .into_par_iter()
            .map(|(source, cfg)| SweepEntry { result: run_in(&cfg, root), source })
            .collect()
    });
    entries.sort_by_key(SweepEntry::sort_key);
    Ok(entries)
}

/// Reads every `*.json` file of `dir`, in name order. Unparsable files are
/// returned as errors next to their names.
pub fn load_configs(dir: &Path) -> std::io::Result<Vec<(String, Result<RunConfig, serde_json::Error>)>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p)?;
            Ok((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), RunConfig::from_json(&text)))
        })
        .collect()
}
