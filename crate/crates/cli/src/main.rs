use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use thermal_vqa::config::{load_plan, GlobalConfig};
use thermal_vqa::metrics::{auc_summary, compute_table, emit_report, to_text, AucMethod, ReportFormat};
use thermal_vqa::oracle::classify;
use thermal_vqa::preprocess::{preprocess, DEFAULT_INSET_FRACTION};
use thermal_vqa::prompting::{render, PromptParams};
use thermal_vqa::runner::{execute, read_log, PlannedBackend, RunOptions};
use thermal_vqa::synth::{
    generate_dataset, read_manifest, resolve_image_path, write_manifest, ClassCounts, ManifestEntry, SceneClass,
    MANIFEST_FILE,
};
use thermal_vqa::thermal::{decode, ThermalImage};
use thermal_vqa::vqa::build_backend;

#[derive(Parser)]
#[command(name = "thermal-vqa", version, about = "Battery thermal anomaly detection with VQA backends")]
struct Cli {
    /// Global config file (TOML). Built-in presets are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset with a manifest.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Scenes per class: normal,overheating,reflection,spatial_tape.
        #[arg(long, default_value = "27,13,12,8")]
        counts: ClassCounts,
        /// Also write each temperature field as CSV.
        #[arg(long)]
        fields: bool,
    },
    /// Crop and rotate every image of a manifest to its battery region.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction trimmed from each side of the detected rectangle.
        #[arg(long, default_value_t = DEFAULT_INSET_FRACTION)]
        inset: f64,
    },
    /// Print a rendered prompt.
    RenderPrompt {
        #[arg(long)]
        id: u8,
        /// Temperature threshold; defaults to the oracle threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Execute a run plan, resuming from an existing log.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Stop after writing this many new records.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Compute metrics from a trial log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "fraction_score")]
        auc_method: AucMethod,
        /// Directory for metrics.csv and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Compare oracle verdicts with manifest labels.
    OracleEval {
        #[arg(long)]
        manifest: PathBuf,
        /// Crop each image before classifying.
        #[arg(long)]
        preprocess: bool,
        #[arg(long, default_value_t = DEFAULT_INSET_FRACTION)]
        inset: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
    Both,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = Result<(), Failure>;

trait Classify<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn runtime_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn runtime_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = load_config(cli.config.as_deref()).and_then(|cfg| dispatch(cli.command, &cfg));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<GlobalConfig, Failure> {
    let cfg = match path {
        Some(p) => GlobalConfig::load(p).config_err()?,
        None => GlobalConfig::default(),
    };
    cfg.validate().config_err()?;
    Ok(cfg)
}

fn dispatch(command: Command, cfg: &GlobalConfig) -> Outcome {
    match command {
        Command::Synth {
            seed,
            out,
            counts,
            fields,
        } => synth(seed, &out, counts, fields),
        Command::Preprocess { manifest, out, inset } => preprocess_cmd(cfg, &manifest, &out, inset),
        Command::RenderPrompt { id, threshold } => {
            let mut params: PromptParams = cfg.prompt_params();
            if let Some(t) = threshold {
                params.threshold = t;
            }
            println!("{}", render(id, &params).config_err()?);
            Ok(())
        }
        Command::Run { plan, stop_after } => run(cfg, &plan, stop_after),
        Command::Report {
            log,
            auc_method,
            out,
            format,
        } => report(&log, auc_method, out.as_deref(), format),
        Command::OracleEval {
            manifest,
            preprocess,
            inset,
        } => oracle_eval(cfg, &manifest, preprocess.then_some(inset)),
    }
}

fn synth(seed: u64, out: &Path, counts: ClassCounts, fields: bool) -> Outcome {
    let scenes = generate_dataset(seed, counts).runtime_err()?;
    let manifest = thermal_vqa::synth::write_dataset(out, &scenes, fields).runtime_err()?;
    println!("wrote {} scenes; manifest {}", scenes.len(), manifest.display());
    Ok(())
}

fn preprocess_cmd(cfg: &GlobalConfig, manifest: &Path, out: &Path, inset: f64) -> Outcome {
    if !(0.0..0.5).contains(&inset) {
        return Err(Failure::Config(anyhow!("--inset must lie in [0, 0.5)")));
    }
    let entries = read_manifest(manifest).config_err()?;
    std::fs::create_dir_all(out).runtime_err()?;
    let mut cropped = Vec::with_capacity(entries.len());
    for entry in &entries {
        let path = resolve_image_path(manifest, entry);
        let image = ThermalImage::load_png(&path)
            .with_context(|| format!("loading {}", path.display()))
            .runtime_err()?;
        let (rect, crop) = preprocess(&image, &cfg.colormap, inset)
            .with_context(|| format!("preprocessing {}", entry.image_id))
            .runtime_err()?;
        log::info!(
            "{}: center ({:.1}, {:.1}) size {:.1}x{:.1} angle {:.1}",
            entry.image_id,
            rect.center.0,
            rect.center.1,
            rect.width,
            rect.height,
            rect.angle_deg
        );
        let file = format!("{}.png", entry.image_id);
        crop.save_png(out.join(&file)).runtime_err()?;
        cropped.push(ManifestEntry {
            path: file,
            ..entry.clone()
        });
    }
    let path = out.join(MANIFEST_FILE);
    write_manifest(&path, &cropped).runtime_err()?;
    println!("cropped {} images; manifest {}", cropped.len(), path.display());
    Ok(())
}

fn run(cfg: &GlobalConfig, plan_path: &Path, stop_after: Option<usize>) -> Outcome {
    let (plan, merged) = load_plan(plan_path, cfg).config_err()?;
    let ctx = merged.context();
    let mut backends = HashMap::new();
    for id in &plan.backends {
        let bc = merged.resolved_backend(id).expect("plan backends checked on load");
        let backend = build_backend(&bc, &ctx).config_err()?;
        backends.insert(
            id.clone(),
            PlannedBackend {
                backend,
                trials: bc.trials_per_pair(),
            },
        );
    }
    let options = RunOptions { stop_after };
    let summary = execute(&plan, &backends, &merged.prompt_params(), &options).map_err(|e| match e {
        thermal_vqa::runner::RunError::Plan(_)
        | thermal_vqa::runner::RunError::Backend(_)
        | thermal_vqa::runner::RunError::Prompt(_) => Failure::Config(e.into()),
        _ => Failure::Runtime(e.into()),
    })?;
    println!(
        "planned {} | already complete {} | written {} ok, {} failed{}",
        summary.planned,
        summary.already_complete,
        summary.written_ok,
        summary.written_failed,
        if summary.interrupted { " | stopped early" } else { "" }
    );
    println!("log: {}", plan.output_log_path.display());
    if !summary.failures.is_empty() {
        for (key, err) in &summary.failures {
            eprintln!(
                "failed: image={} prompt={} backend={} trial={}: {err}",
                key.image_id, key.prompt_id, key.backend_id, key.trial_index
            );
        }
        return Err(Failure::Runtime(anyhow!(
            "{} trial(s) failed; rerun the plan to retry them",
            summary.failures.len()
        )));
    }
    Ok(())
}

fn report(log: &Path, method: AucMethod, out: Option<&Path>, format: Format) -> Outcome {
    let records = read_log(log)
        .with_context(|| format!("reading {}", log.display()))
        .config_err()?;
    let records = thermal_vqa::runner::resolve_records(records);
    if records.is_empty() {
        return Err(Failure::Config(anyhow!("{} holds no records", log.display())));
    }
    let table = compute_table(&records, method).runtime_err()?;
    print!("{}", to_text(&table));
    print!("{}", auc_summary(&table));
    if let Some(dir) = out {
        let format = match format {
            Format::Csv => ReportFormat::Csv,
            Format::Text => ReportFormat::Text,
            Format::Both => ReportFormat::Both,
        };
        for p in emit_report(&table, dir, format).runtime_err()? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn oracle_eval(cfg: &GlobalConfig, manifest: &Path, inset: Option<f64>) -> Outcome {
    let entries = read_manifest(manifest).config_err()?;
    // class -> (agree, total, expected condition pattern held)
    let mut per_class: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    let mut disagreements = Vec::new();
    for entry in &entries {
        let path = resolve_image_path(manifest, entry);
        let mut image = ThermalImage::load_png(&path)
            .with_context(|| format!("loading {}", path.display()))
            .runtime_err()?;
        if let Some(inset) = inset {
            image = preprocess(&image, &cfg.colormap, inset)
                .with_context(|| format!("preprocessing {}", entry.image_id))
                .runtime_err()?
                .1;
        }
        let decoded = decode(&image, &cfg.colormap);
        let (verdict, pattern) = match classify(&decoded.field, &cfg.oracle) {
            Ok(r) => (r.verdict, expected_pattern(entry.class) == (r.temp_ok, r.smooth_ok)),
            Err(e) => {
                log::warn!("{}: {e}", entry.image_id);
                (thermal_vqa::Verdict::Anomaly, false)
            }
        };
        let predicted_anomaly = thermal_vqa::score_verdict(verdict).is_anomaly();
        let agree = predicted_anomaly == entry.class.is_anomaly();
        let e = per_class.entry(entry.class.as_str()).or_default();
        e.1 += 1;
        e.0 += agree as usize;
        e.2 += pattern as usize;
        if !agree {
            disagreements.push(entry.image_id.clone());
        }
    }
    let total: usize = per_class.values().map(|v| v.1).sum();
    let agree: usize = per_class.values().map(|v| v.0).sum();
    println!("{:<14}{:>8}{:>8}{:>12}{:>10}", "class", "images", "agree", "agree (%)", "pattern");
    for class in SceneClass::ALL {
        if let Some((a, n, p)) = per_class.get(class.as_str()) {
            println!(
                "{:<14}{:>8}{:>8}{:>12.1}{:>10}",
                class.as_str(),
                n,
                a,
                100.0 * *a as f64 / *n as f64,
                format!("{p}/{n}")
            );
        }
    }
    if total > 0 {
        println!("agreement: {agree}/{total} ({:.1}%)", 100.0 * agree as f64 / total as f64);
    }
    for id in disagreements {
        println!("disagrees: {id}");
    }
    Ok(())
}

/// (temperature ok, smoothness ok) each class should produce.
fn expected_pattern(class: SceneClass) -> (bool, bool) {
    match class {
        SceneClass::Normal => (true, true),
        SceneClass::Overheating => (false, true),
        SceneClass::SpatialTape => (true, false),
        SceneClass::Reflection => (false, false),
    }
}
