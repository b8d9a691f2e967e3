mod support;

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use thermal_vqa::metrics::{compute_table, AucMethod};
use thermal_vqa::prompting::PromptParams;
use thermal_vqa::runner::{
    canonical_log, execute, read_log, recover_log, resolve_records, PlannedBackend, RunError, RunOptions, RunPlan,
    TrialRecord,
};
use thermal_vqa::synth::{generate_dataset, write_dataset, ClassCounts};
use thermal_vqa::vqa::{
    build_backend, BackendConfig, BackendContext, BackendError, QueryRequest, RawResponse, ReplayBackend,
    TranscriptEntry, VqaBackend,
};
use thermal_vqa::score_verdict;

/// Default 60-scene dataset, written once per test binary.
fn dataset() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let scenes = generate_dataset(7, ClassCounts::default()).unwrap();
        write_dataset(dir.path(), &scenes, false).unwrap();
        dir
    })
    .path()
}

fn oracle_backends() -> HashMap<String, PlannedBackend> {
    let backend = build_backend(&BackendConfig::oracle(), &BackendContext::default()).unwrap();
    HashMap::from([("oracle".to_string(), PlannedBackend { backend, trials: 3 })])
}

fn oracle_plan(log: &Path, concurrency: usize) -> RunPlan {
    RunPlan {
        manifest_path: dataset().join("manifest.jsonl"),
        prompt_ids: vec![1, 2, 3, 4, 5],
        backends: vec!["oracle".into()],
        trials_per_backend: Default::default(),
        concurrency_cap: concurrency,
        output_log_path: log.to_path_buf(),
    }
}

fn run(plan: &RunPlan, backends: &HashMap<String, PlannedBackend>, stop_after: Option<usize>) -> thermal_vqa::runner::RunSummary {
    execute(plan, backends, &PromptParams::default(), &RunOptions { stop_after }).unwrap()
}

fn keys(records: &[TrialRecord]) -> HashSet<thermal_vqa::runner::TrialKey> {
    records.iter().map(TrialRecord::key).collect()
}

#[test]
fn oracle_run_covers_every_key_once() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("runs/log.jsonl");
    let summary = run(&oracle_plan(&log, 4), &oracle_backends(), None);
    assert_eq!((summary.planned, summary.written_ok, summary.written_failed), (900, 900, 0));
    let records = read_log(&log).unwrap();
    assert_eq!(records.len(), 900);
    assert_eq!(keys(&records).len(), 900);
    let mut by_pair: HashMap<(String, u8), HashSet<String>> = HashMap::new();
    for r in &records {
        assert!(r.trial_index < 3);
        assert_eq!(r.binary_prediction, r.verdict.map(score_verdict));
        by_pair
            .entry((r.image_id.clone(), r.prompt_id))
            .or_default()
            .insert(r.raw_text.clone());
    }
    assert!(by_pair.values().all(|texts| texts.len() == 1), "oracle trials differ");
    let table = compute_table(&records, AucMethod::FractionScore).unwrap();
    for row in &table.rows {
        assert_eq!(row.accuracy.all, Some(100.0));
        assert_eq!(row.range_acc_all, Some(0.0));
        assert_eq!(row.pct_unsure, Some(0.0));
        assert_eq!(row.auc, Some(100.0));
    }
}

#[test]
fn rerunning_a_complete_log_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let plan = oracle_plan(&log, 2);
    run(&plan, &oracle_backends(), None);
    let before = std::fs::read(&log).unwrap();
    let again = run(&plan, &oracle_backends(), None);
    assert_eq!((again.already_complete, again.written_ok), (900, 0));
    assert_eq!(std::fs::read(&log).unwrap(), before);
}

#[test]
fn interrupted_run_resumes_to_the_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let full_log = dir.path().join("full.jsonl");
    run(&oracle_plan(&full_log, 4), &oracle_backends(), None);

    let log = dir.path().join("resumed.jsonl");
    let plan = oracle_plan(&log, 4);
    let first = run(&plan, &oracle_backends(), Some(317));
    assert!(first.interrupted);
    assert_eq!(first.written_ok, 317);
    // a crash mid-write leaves a torn line behind
    let mut f = std::fs::OpenOptions::new().append(true).open(&log).unwrap();
    f.write_all(br#"{"image_id":"normal_003","ground_truth_la"#).unwrap();
    drop(f);

    let second = run(&plan, &oracle_backends(), None);
    assert_eq!(second.already_complete, 317);
    assert_eq!(second.written_ok, 900 - 317);
    let records = read_log(&log).unwrap();
    assert_eq!(records.len(), 900);
    assert_eq!(keys(&records).len(), 900);
    assert_eq!(canonical_log(&records), canonical_log(&read_log(&full_log).unwrap()));
}

#[test]
fn concurrency_changes_only_arrival_order() {
    let dir = tempfile::tempdir().unwrap();
    let serial = dir.path().join("serial.jsonl");
    let parallel = dir.path().join("parallel.jsonl");
    run(&oracle_plan(&serial, 1), &oracle_backends(), None);
    run(&oracle_plan(&parallel, 8), &oracle_backends(), None);
    assert_eq!(
        canonical_log(&read_log(&serial).unwrap()),
        canonical_log(&read_log(&parallel).unwrap())
    );
}

fn transcript_entry(image: &str, trial: u32, text: &str) -> TranscriptEntry {
    TranscriptEntry {
        backend_id: "rep".into(),
        prompt_id: 1,
        image_id: image.into(),
        trial,
        text: text.into(),
    }
}

#[test]
fn failures_are_recorded_then_retried_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = support::stub_dataset(&dir.path().join("data"), "2,1,0,0".parse().unwrap());
    let log = dir.path().join("log.jsonl");
    let plan = RunPlan {
        manifest_path: manifest,
        prompt_ids: vec![1],
        backends: vec!["rep".into()],
        trials_per_backend: [("rep".to_string(), 2)].into(),
        concurrency_cap: 2,
        output_log_path: log.clone(),
    };
    let complete = vec![
        transcript_entry("normal_000", 0, "a) Yes"),
        transcript_entry("normal_000", 1, "a) Yes"),
        transcript_entry("normal_001", 0, "b) No"),
        transcript_entry("normal_001", 1, "a) Yes"),
        transcript_entry("overheating_000", 0, "b) No"),
        transcript_entry("overheating_000", 1, "It is difficult to say."),
    ];
    let partial: Vec<_> = complete.iter().filter(|e| e.image_id != "normal_001").cloned().collect();
    let backends = |t: Vec<TranscriptEntry>| {
        HashMap::from([(
            "rep".to_string(),
            PlannedBackend {
                backend: Arc::new(ReplayBackend::new("rep", "rep", t)) as Arc<dyn VqaBackend>,
                trials: 3,
            },
        )])
    };
    let first = run(&plan, &backends(partial), None);
    assert_eq!((first.planned, first.written_ok, first.written_failed), (6, 4, 2));
    assert!(first.failures.iter().all(|(k, e)| k.image_id == "normal_001" && e.contains("no entry")));
    let table = compute_table(&resolve_records(read_log(&log).unwrap()), AucMethod::FractionScore).unwrap();
    assert_eq!(table.rows[0].failed, 2);
    // failed trials are left out of the denominators
    assert_eq!(table.rows[0].accuracy.all, Some(100.0));

    let second = run(&plan, &backends(complete), None);
    assert_eq!((second.already_complete, second.written_ok, second.written_failed), (4, 2, 0));
    let raw = read_log(&log).unwrap();
    assert_eq!(raw.len(), 8);
    let resolved = resolve_records(raw);
    assert_eq!(resolved.len(), 6);
    assert!(resolved.iter().all(TrialRecord::is_ok));
    let ok_keys: Vec<_> = read_log(&log).unwrap().into_iter().filter(|r| r.is_ok()).map(|r| r.key()).collect();
    assert_eq!(ok_keys.len(), keys(&resolved).len(), "a key completed twice");
}

struct Misconfigured;

impl VqaBackend for Misconfigured {
    fn id(&self) -> &str {
        "broken"
    }

    fn query(&self, _: &QueryRequest<'_>) -> Result<RawResponse, BackendError> {
        Err(BackendError::Config {
            backend: "broken".into(),
            message: "HTTP 401".into(),
        })
    }
}

#[test]
fn configuration_errors_abort_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = support::stub_dataset(&dir.path().join("data"), "1,1,0,0".parse().unwrap());
    let plan = RunPlan {
        manifest_path: manifest,
        prompt_ids: vec![1],
        backends: vec!["broken".into()],
        trials_per_backend: Default::default(),
        concurrency_cap: 1,
        output_log_path: dir.path().join("log.jsonl"),
    };
    let backends = HashMap::from([(
        "broken".to_string(),
        PlannedBackend {
            backend: Arc::new(Misconfigured) as Arc<dyn VqaBackend>,
            trials: 1,
        },
    )]);
    let err = execute(&plan, &backends, &PromptParams::default(), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, RunError::Backend(_)), "{err}");
}

#[test]
fn plan_validation() {
    let log = Path::new("/nonexistent/log.jsonl");
    let mut plan = oracle_plan(log, 1);
    plan.prompt_ids.clear();
    assert!(matches!(plan.validate(), Err(RunError::Plan(_))));
    let mut plan = oracle_plan(log, 1);
    plan.prompt_ids = vec![6];
    assert!(plan.validate().is_err());
    let mut plan = oracle_plan(log, 1);
    plan.trials_per_backend.insert("oracle".into(), 0);
    assert!(plan.validate().is_err());
    let mut plan = oracle_plan(log, 1);
    plan.backends = vec!["missing".into()];
    let err = execute(&plan, &oracle_backends(), &PromptParams::default(), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, RunError::Plan(_)));
}

#[test]
fn corrupt_interior_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    std::fs::write(&log, "not json\n{}\n").unwrap();
    assert!(matches!(recover_log(&log), Err(RunError::CorruptLog { line: 1, .. })));
}

#[test]
fn replayed_runs_are_bit_reproducible() {
    let row = support::reference_row("llava-13b", 4);
    let groups = [support::Replay::from(&row)];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest_a = support::stub_dataset(&a.path().join("data"), ClassCounts::default());
    let manifest_b = support::stub_dataset(&b.path().join("data"), ClassCounts::default());
    let ra = support::replay_through_runner(a.path(), &manifest_a, &groups);
    let rb = support::replay_through_runner(b.path(), &manifest_b, &groups);
    assert_eq!(canonical_log(&ra), canonical_log(&rb));
    let ta = compute_table(&ra, AucMethod::FractionScore).unwrap();
    let tb = compute_table(&rb, AucMethod::FractionScore).unwrap();
    assert_eq!(ta, tb);
}
