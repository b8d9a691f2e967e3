//! Runs every (image, prompt, backend, trial) combination and appends one
//! record per completed query to a JSON-lines log.
//!
//! The log is append-only. On startup it is scanned to rebuild the set of
//! completed keys, and a torn final line left by a crash is truncated away.
//! Workers issue queries; the calling thread is the only writer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::{parse_verdict, score_verdict, Prediction, Verdict};
use crate::prompting::{render, PromptError, PromptParams};
use crate::synth::{read_manifest, resolve_image_path, Label, ManifestEntry, SceneClass, SynthError};
use crate::vqa::{BackendError, QueryRequest, VqaBackend};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Manifest(#[from] SynthError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("image for {image_id} not readable at {path}: {source}")]
    Image {
        image_id: String,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("trial log {path}:{line} is corrupt: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("backend configuration error, run aborted: {0}")]
    Backend(BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub manifest_path: PathBuf,
    pub prompt_ids: Vec<u8>,
    pub backends: Vec<String>,
    /// Overrides the backend's own default trial count.
    pub trials_per_backend: BTreeMap<String, u32>,
    pub concurrency_cap: usize,
    pub output_log_path: PathBuf,
}

impl RunPlan {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.prompt_ids.is_empty() {
            return Err(RunError::Plan("prompt_ids must not be empty".into()));
        }
        if let Some(id) = self.prompt_ids.iter().find(|&&p| !(1..=5).contains(&p)) {
            return Err(RunError::Plan(format!("prompt id {id} outside 1..=5")));
        }
        if self.backends.is_empty() {
            return Err(RunError::Plan("no backends listed".into()));
        }
        let unique: HashSet<_> = self.backends.iter().collect();
        if unique.len() != self.backends.len() {
            return Err(RunError::Plan("backend listed twice".into()));
        }
        if let Some((id, _)) = self.trials_per_backend.iter().find(|(_, &n)| n == 0) {
            return Err(RunError::Plan(format!("trials for {id} must be at least 1")));
        }
        if self.concurrency_cap == 0 {
            return Err(RunError::Plan("concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrialKey {
    pub image_id: String,
    pub prompt_id: u8,
    pub backend_id: String,
    pub trial_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub image_id: String,
    pub ground_truth_label: Label,
    pub ground_truth_class: SceneClass,
    pub prompt_id: u8,
    pub backend_id: String,
    pub trial_index: u32,
    pub status: TrialStatus,
    pub raw_text: String,
    pub verdict: Option<Verdict>,
    pub binary_prediction: Option<Prediction>,
    pub attempt_count: u32,
    pub latency: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn key(&self) -> TrialKey {
        TrialKey {
            image_id: self.image_id.clone(),
            prompt_id: self.prompt_id,
            backend_id: self.backend_id.clone(),
            trial_index: self.trial_index,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }

    /// Successful record whose verdict and prediction derive from `raw_text`.
    pub fn completed(entry: &ManifestEntry, prompt_id: u8, backend_id: &str, trial_index: u32, raw_text: String) -> Self {
        let verdict = parse_verdict(&raw_text);
        Self {
            image_id: entry.image_id.clone(),
            ground_truth_label: entry.label,
            ground_truth_class: entry.class,
            prompt_id,
            backend_id: backend_id.to_string(),
            trial_index,
            status: TrialStatus::Ok,
            raw_text,
            verdict: Some(verdict),
            binary_prediction: Some(score_verdict(verdict)),
            attempt_count: 1,
            latency: 0.0,
            timestamp: 0.0,
            error: None,
        }
    }
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Reads a trial log, truncating a torn final line in place. A missing file
/// is an empty log.
pub fn recover_log(path: &Path) -> Result<Vec<TrialRecord>, RunError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        log::warn!(
            "truncating {} trailing bytes of an unfinished record in {}",
            bytes.len() - complete,
            path.display()
        );
        OpenOptions::new().write(true).open(path)?.set_len(complete as u64)?;
    }
    parse_log(path, &bytes[..complete])
}

/// Reads a trial log without modifying it; a torn final line is ignored.
pub fn read_log(path: &Path) -> Result<Vec<TrialRecord>, RunError> {
    let bytes = fs::read(path)?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    parse_log(path, &bytes[..complete])
}

fn parse_log(path: &Path, bytes: &[u8]) -> Result<Vec<TrialRecord>, RunError> {
    let text = std::str::from_utf8(bytes).map_err(|e| RunError::CorruptLog {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| RunError::CorruptLog {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// One record per key: the successful one if any, else the latest failure.
pub fn resolve_records(records: Vec<TrialRecord>) -> Vec<TrialRecord> {
    let mut by_key: BTreeMap<TrialKey, TrialRecord> = BTreeMap::new();
    for r in records {
        let key = r.key();
        match by_key.get(&key) {
            Some(existing) if existing.is_ok() => {}
            _ => {
                by_key.insert(key, r);
            }
        }
    }
    by_key.into_values().collect()
}

/// Resolved records sorted by (image, prompt, backend, trial) with latency and
/// timestamp zeroed, one JSON object per line. Two runs over the same inputs
/// with a deterministic backend produce identical output.
pub fn canonical_log(records: &[TrialRecord]) -> String {
    let mut out = String::new();
    for mut r in resolve_records(records.to_vec()) {
        r.latency = 0.0;
        r.timestamp = 0.0;
        out.push_str(&serde_json::to_string(&r).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after writing this many new records, dropping work in flight.
    /// Simulates an interrupted run.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub planned: usize,
    pub already_complete: usize,
    pub written_ok: usize,
    pub written_failed: usize,
    pub interrupted: bool,
    pub failures: Vec<(TrialKey, String)>,
}

impl RunSummary {
    pub fn remaining(&self) -> usize {
        self.planned - self.already_complete - self.written_ok
    }
}

struct Task {
    image: usize,
    prompt: usize,
    backend: usize,
    trial: u32,
}

enum Outcome {
    Record(TrialRecord),
    Abort(BackendError),
}

/// A backend ready to query, with its resolved trial count.
pub struct PlannedBackend {
    pub backend: Arc<dyn VqaBackend>,
    pub trials: u32,
}

/// Executes `plan` against `backends` (keyed by id), resuming from whatever
/// the log already holds.
pub fn execute(
    plan: &RunPlan,
    backends: &HashMap<String, PlannedBackend>,
    prompt_params: &PromptParams,
    options: &RunOptions,
) -> Result<RunSummary, RunError> {
    plan.validate()?;
    let entries = read_manifest(&plan.manifest_path)?;
    let selected: Vec<(&str, &PlannedBackend)> = plan
        .backends
        .iter()
        .map(|id| {
            backends
                .get(id)
                .map(|b| (id.as_str(), b))
                .ok_or_else(|| RunError::Plan(format!("backend '{id}' is not configured")))
        })
        .collect::<Result<_, _>>()?;
    let prompts: Vec<(u8, String)> = plan
        .prompt_ids
        .iter()
        .map(|&id| Ok((id, render(id, prompt_params)?)))
        .collect::<Result<_, PromptError>>()?;

    if let Some(parent) = plan.output_log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let done: HashSet<TrialKey> = recover_log(&plan.output_log_path)?
        .into_iter()
        .filter(TrialRecord::is_ok)
        .map(|r| r.key())
        .collect();

    let mut summary = RunSummary::default();
    let mut tasks = Vec::new();
    for (ii, entry) in entries.iter().enumerate() {
        for (pi, (prompt_id, _)) in prompts.iter().enumerate() {
            for (bi, (backend_id, planned)) in selected.iter().enumerate() {
                let trials = plan.trials_per_backend.get(*backend_id).copied().unwrap_or(planned.trials);
                for trial in 0..trials {
                    summary.planned += 1;
                    let key = TrialKey {
                        image_id: entry.image_id.clone(),
                        prompt_id: *prompt_id,
                        backend_id: backend_id.to_string(),
                        trial_index: trial,
                    };
                    if done.contains(&key) {
                        summary.already_complete += 1;
                    } else {
                        tasks.push(Task {
                            image: ii,
                            prompt: pi,
                            backend: bi,
                            trial,
                        });
                    }
                }
            }
        }
    }

    // Images are sent exactly as stored.
    let mut needed = vec![false; entries.len()];
    for t in &tasks {
        needed[t.image] = true;
    }
    let mut images: Vec<Vec<u8>> = vec![Vec::new(); entries.len()];
    for (i, entry) in entries.iter().enumerate().filter(|(i, _)| needed[*i]) {
        let path = resolve_image_path(&plan.manifest_path, entry);
        images[i] = fs::read(&path).map_err(|source| RunError::Image {
            image_id: entry.image_id.clone(),
            path,
            source,
        })?;
    }

    if tasks.is_empty() {
        return Ok(summary);
    }

    let mut writer = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&plan.output_log_path)?,
    );
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = plan.concurrency_cap.min(tasks.len());
    let (tx, rx) = mpsc::channel::<Outcome>();

    let result = std::thread::scope(|s| -> Result<(), RunError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (tasks, next, stop) = (&tasks, &next, &stop);
            let (entries, images, prompts, selected) = (&entries, &images, &prompts, &selected);
            s.spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(task) = tasks.get(i) else { break };
                    let entry = &entries[task.image];
                    let (prompt_id, prompt_text) = &prompts[task.prompt];
                    let (backend_id, planned) = selected[task.backend];
                    let request = QueryRequest {
                        prompt_id: *prompt_id,
                        prompt_text,
                        image_id: &entry.image_id,
                        trial_index: task.trial,
                        png: &images[task.image],
                    };
                    let outcome = match planned.backend.query(&request) {
                        Ok(resp) => {
                            let mut r = TrialRecord::completed(entry, *prompt_id, backend_id, task.trial, resp.text);
                            r.attempt_count = resp.attempt_count;
                            r.latency = resp.latency_secs;
                            r.timestamp = now_unix();
                            Outcome::Record(r)
                        }
                        Err(e) if e.is_config() => Outcome::Abort(e),
                        Err(e) => Outcome::Record(TrialRecord {
                            image_id: entry.image_id.clone(),
                            ground_truth_label: entry.label,
                            ground_truth_class: entry.class,
                            prompt_id: *prompt_id,
                            backend_id: backend_id.to_string(),
                            trial_index: task.trial,
                            status: TrialStatus::Failed,
                            raw_text: String::new(),
                            verdict: None,
                            binary_prediction: None,
                            attempt_count: match &e {
                                BackendError::Transport { attempts, .. } => *attempts,
                                _ => 1,
                            },
                            latency: 0.0,
                            timestamp: now_unix(),
                            error: Some(e.to_string()),
                        }),
                    };
                    if tx.send(outcome).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let mut written = 0;
        for outcome in rx.iter() {
            let record = match outcome {
                Outcome::Record(r) => r,
                Outcome::Abort(e) => {
                    stop.store(true, Ordering::SeqCst);
                    writer.flush()?;
                    return Err(RunError::Backend(e));
                }
            };
            serde_json::to_writer(&mut writer, &record).map_err(std::io::Error::other)?;
            writer.write_all(b"\n")?;
            writer.flush()?;
            if record.is_ok() {
                summary.written_ok += 1;
            } else {
                summary.written_failed += 1;
                summary
                    .failures
                    .push((record.key(), record.error.clone().unwrap_or_default()));
            }
            written += 1;
            if options.stop_after.is_some_and(|n| written >= n) {
                stop.store(true, Ordering::SeqCst);
                summary.interrupted = summary.remaining() > 0;
                break;
            }
        }
        Ok(())
    });
    result?;
    writer.flush()?;
    summary.failures.sort();
    Ok(summary)
}
