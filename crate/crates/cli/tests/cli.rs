use std::path::Path;
use std::process::{Command, Output};

use thermal_vqa::synth::read_manifest;
use thermal_vqa::transcripts::{build_transcript, spread};
use thermal_vqa::vqa::write_transcript;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_thermal-vqa"));
    cmd.env_remove("RUST_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn thermal-vqa")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, counts: &str) -> std::path::PathBuf {
    let data = dir.join("data");
    let o = run(&["synth", "--seed", "3", "--out", p(&data), "--counts", counts]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    data.join("manifest.jsonl")
}

#[test]
fn synth_then_oracle_eval_agrees_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "27,13,12,8");
    assert_eq!(read_manifest(&manifest).unwrap().len(), 60);
    for extra in [&[][..], &["--preprocess"][..]] {
        let mut args = vec!["oracle-eval", "--manifest", p(&manifest)];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success());
        let out = stdout(&o);
        assert!(out.contains("agreement: 60/60 (100.0%)"), "{out}");
        assert!(!out.contains("disagrees"), "{out}");
    }
}

#[test]
fn preprocess_writes_a_cropped_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "2,1,1,1");
    let crops = dir.path().join("crops");
    let o = run(&["preprocess", "--manifest", p(&manifest), "--out", p(&crops)]);
    assert!(o.status.success());
    let entries = read_manifest(&crops.join("manifest.jsonl")).unwrap();
    assert_eq!(entries.len(), 5);
    assert!(entries.iter().all(|e| crops.join(&e.path).exists()));
    let o = run(&["preprocess", "--manifest", p(&manifest), "--out", p(&crops), "--inset", "0.7"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn oracle_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "3,2,2,1");
    let plan = dir.path().join("plan.toml");
    std::fs::write(
        &plan,
        format!(
            "manifest = {:?}\nbackends = [\"oracle\"]\nprompts = [1, 5]\nlog = \"runs/log.jsonl\"\nconcurrency = 3\n",
            p(&manifest)
        ),
    )
    .unwrap();

    let o = run(&["run", "--plan", p(&plan), "--stop-after", "10"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("stopped early"));
    let o = run(&["run", "--plan", p(&plan)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("planned 48 | already complete 10 | written 38 ok, 0 failed"), "{}", stdout(&o));

    let log = dir.path().join("runs/log.jsonl");
    let out_dir = dir.path().join("report");
    let o = run(&["report", "--log", p(&log), "--out", p(&out_dir)]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("Model: oracle (3 trials)"));
    let all_line = text.lines().find(|l| l.starts_with("Avg. Acc. (all)")).unwrap();
    assert_eq!(all_line.split_whitespace().skip(3).collect::<Vec<_>>(), ["100.0", "100.0"]);
    assert!(text.contains("Mean Avg. Acc. (all) over prompts: 100.0"));
    assert!(out_dir.join("metrics.csv").exists() && out_dir.join("report.txt").exists());
}

#[test]
fn replayed_blip2_log_reports_published_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "27,13,12,8");
    let entries = read_manifest(&manifest).unwrap();
    let transcript = build_transcript("blip-2", 5, &entries, &spread([60, 39, 36, 24], 0, 3)).unwrap();
    write_transcript(&dir.path().join("blip2.jsonl"), &transcript).unwrap();
    let plan = dir.path().join("plan.toml");
    std::fs::write(
        &plan,
        format!(
            "manifest = {:?}\nbackends = [\"blip-2\"]\nprompts = [5]\nlog = \"log.jsonl\"\n\n\
             [backend.blip-2]\nkind = \"replay\"\ntranscript = \"blip2.jsonl\"\n",
            p(&manifest)
        ),
    )
    .unwrap();
    let o = run(&["run", "--plan", p(&plan)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["report", "--log", p(&dir.path().join("log.jsonl"))]);
    let text = stdout(&o);
    let row = |name: &str| {
        text.lines()
            .find(|l| l.starts_with(name))
            .unwrap()
            .split_whitespace()
            .last()
            .unwrap()
            .to_string()
    };
    assert_eq!(row("Avg. Acc. (all)"), "88.3");
    assert_eq!(row("Avg. Acc. (normal)"), "74.1");
    assert_eq!(row("Avg. Acc. (anomaly)"), "100.0");
    assert_eq!(row("%Unsure (all)"), "0.0");
}

#[test]
fn missing_transcript_entries_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "1,1,0,0");
    let entries = read_manifest(&manifest).unwrap();
    let mut transcript = build_transcript("rep", 1, &entries, &spread([1, 1, 0, 0], 0, 1)).unwrap();
    transcript.pop();
    write_transcript(&dir.path().join("t.jsonl"), &transcript).unwrap();
    let plan = dir.path().join("plan.toml");
    std::fs::write(
        &plan,
        format!(
            "manifest = {:?}\nbackends = [\"rep\"]\nprompts = [1]\nlog = \"log.jsonl\"\n\n\
             [trials]\nrep = 1\n\n[backend.rep]\nkind = \"replay\"\ntranscript = \"t.jsonl\"\n",
            p(&manifest)
        ),
    )
    .unwrap();
    let o = run(&["run", "--plan", p(&plan)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed: image="));
}

#[test]
fn configuration_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, "[backend.chatgpt-4o]\napi_key = \"sk-test\"\n").unwrap();
    let o = run(&["--config", p(&cfg), "render-prompt", "--id", "1"]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["render-prompt", "--id", "9"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["report", "--log", p(&dir.path().join("absent.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));

    let plan = dir.path().join("plan.toml");
    std::fs::write(&plan, "manifest = \"m.jsonl\"\nbackends = [\"nope\"]\nlog = \"l.jsonl\"\n").unwrap();
    let o = run(&["run", "--plan", p(&plan)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn render_prompt_uses_threshold() {
    let o = run(&["render-prompt", "--id", "1", "--threshold", "45"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("less than 45"));
    assert!(text.contains("Even and smooth thermal distribution"));
}
