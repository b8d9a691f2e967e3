//! Global configuration and run plans, both TOML files.
//!
//! Global config:
//!
//! ```toml
//! [colormap]
//! t_min = 25.0
//! t_max = 60.0
//!
//! [oracle]
//! temp_threshold = 50.0
//!
//! [paths]
//! data_dir = "data"
//! runs_dir = "runs"
//!
//! [backend.chatgpt-4o]          # overlays the preset of the same name
//! model = "gpt-4o-2024-08-06"
//!
//! [backend.blip-replay]
//! kind = "replay"
//! transcript = "transcripts/blip.jsonl"
//! replay_source = "blip-2"
//! ```
//!
//! A plan file holds `manifest`, `prompts`, `backends`, `concurrency`, `log`
//! and an optional `[trials]` table, and may carry any global section too.
//! Relative paths resolve against the file's directory.
//!
//! Secrets never appear in files: a backend names the environment variable
//! holding its key, and `THERMAL_VQA_<ID>_AUTH_ENV` (id uppercased, `-` as
//! `_`) overrides that name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::oracle::OracleParams;
use crate::prompting::PromptParams;
use crate::runner::RunPlan;
use crate::thermal::{ColormapSpec, Rgb};
use crate::vqa::{preset, presets, BackendConfig, BackendContext, BackendKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColormapSection {
    t_min: Option<f64>,
    t_max: Option<f64>,
    names: Option<Vec<String>>,
    colors: Option<Vec<[u8; 3]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleSection {
    temp_threshold: Option<f64>,
    spot_deviation: Option<f64>,
    neighborhood_radius: Option<usize>,
    min_blob_area: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsSection {
    data_dir: Option<PathBuf>,
    runs_dir: Option<PathBuf>,
    report_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackendSection {
    preset: Option<String>,
    kind: Option<BackendKind>,
    endpoint: Option<String>,
    model: Option<String>,
    auth_env_var: Option<String>,
    temperature: Option<f64>,
    temperature_supported: Option<bool>,
    prompt_field: Option<String>,
    timeout: Option<f64>,
    max_retries: Option<u32>,
    initial_backoff_ms: Option<u64>,
    poll_interval_ms: Option<u64>,
    requests_per_minute: Option<u32>,
    max_in_flight: Option<usize>,
    trials: Option<u32>,
    transcript: Option<PathBuf>,
    replay_source: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    colormap: Option<ColormapSection>,
    oracle: Option<OracleSection>,
    paths: Option<PathsSection>,
    #[serde(default)]
    backend: BTreeMap<String, BackendSection>,
    // plan keys
    manifest: Option<PathBuf>,
    prompts: Option<Vec<u8>>,
    backends: Option<Vec<String>>,
    concurrency: Option<usize>,
    log: Option<PathBuf>,
    #[serde(default)]
    trials: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub runs_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            runs_dir: "runs".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalConfig {
    pub backends: Vec<BackendConfig>,
    pub colormap: ColormapSpec,
    pub oracle: OracleParams,
    pub paths: Paths,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            backends: presets(),
            colormap: ColormapSpec::default(),
            oracle: OracleParams::default(),
            paths: Paths::default(),
        }
    }
}

fn read_file(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text).map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

fn parse_str(text: &str) -> Result<ConfigFile, String> {
    toml::from_str(text).map_err(|e| e.message().to_string())
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

pub fn auth_override_var(backend_id: &str) -> String {
    let id: String = backend_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("THERMAL_VQA_{id}_AUTH_ENV")
}

impl GlobalConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply(read_file(path)?, &base_dir(path))?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let file = parse_str(text).map_err(|message| ConfigError::Parse {
            path: PathBuf::from("<string>"),
            message,
        })?;
        cfg.apply(file, base)?;
        Ok(cfg)
    }

    fn apply(&mut self, file: ConfigFile, base: &Path) -> Result<(), ConfigError> {
        if let Some(c) = file.colormap {
            let names = match c.names {
                Some(n) => <[String; 7]>::try_from(n)
                    .map_err(|n| ConfigError::Invalid(format!("colormap needs 7 names, got {}", n.len())))?,
                None => self.colormap.anchor_names().clone(),
            };
            let colors = match c.colors {
                Some(v) => <[[u8; 3]; 7]>::try_from(v)
                    .map_err(|v| ConfigError::Invalid(format!("colormap needs 7 colors, got {}", v.len())))?
                    .map(Rgb),
                None => *self.colormap.anchor_colors(),
            };
            self.colormap = ColormapSpec::new(
                colors,
                names,
                c.t_min.unwrap_or(self.colormap.t_min()),
                c.t_max.unwrap_or(self.colormap.t_max()),
            )
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(o) = file.oracle {
            let p = &mut self.oracle;
            p.temp_threshold = o.temp_threshold.unwrap_or(p.temp_threshold);
            p.spot_deviation = o.spot_deviation.unwrap_or(p.spot_deviation);
            p.neighborhood_radius = o.neighborhood_radius.unwrap_or(p.neighborhood_radius);
            p.min_blob_area = o.min_blob_area.unwrap_or(p.min_blob_area);
        }
        self.oracle
            .validate(self.colormap.t_max() - self.colormap.t_min())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(p) = file.paths {
            if let Some(d) = p.data_dir {
                self.paths.data_dir = resolve(base, d);
            }
            if let Some(d) = p.runs_dir {
                self.paths.runs_dir = resolve(base, d);
            }
            if let Some(d) = p.report_dir {
                self.paths.report_dir = resolve(base, d);
            }
        }
        for (id, section) in file.backend {
            let existing = self.backends.iter().position(|b| b.id == id);
            let mut cfg = match (&section.preset, existing) {
                (Some(name), _) => {
                    let mut p = preset(name)
                        .ok_or_else(|| ConfigError::Invalid(format!("backend '{id}': unknown preset '{name}'")))?;
                    p.id = id.clone();
                    p
                }
                (None, Some(i)) => self.backends[i].clone(),
                (None, None) => {
                    let kind = section.kind.ok_or_else(|| {
                        ConfigError::Invalid(format!("backend '{id}' needs a kind or a preset"))
                    })?;
                    BackendConfig::new(id.clone(), kind)
                }
            };
            overlay(&mut cfg, section, base);
            cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            match existing {
                Some(i) => self.backends[i] = cfg,
                None => self.backends.push(cfg),
            }
        }
        Ok(())
    }

    pub fn backend(&self, id: &str) -> Option<&BackendConfig> {
        self.backends.iter().find(|b| b.id == id)
    }

    /// Backend config with the environment override of its auth variable name
    /// applied.
    pub fn resolved_backend(&self, id: &str) -> Option<BackendConfig> {
        let mut cfg = self.backend(id)?.clone();
        if let Ok(var) = std::env::var(auth_override_var(id)) {
            if !var.trim().is_empty() {
                cfg.auth_env_var = Some(var);
            }
        }
        Some(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for b in &self.backends {
            if !seen.insert(&b.id) {
                return Err(ConfigError::Invalid(format!("backend id '{}' defined twice", b.id)));
            }
        }
        Ok(())
    }

    pub fn context(&self) -> BackendContext {
        BackendContext {
            colormap: self.colormap.clone(),
            oracle: self.oracle,
        }
    }

    pub fn prompt_params(&self) -> PromptParams {
        PromptParams::from_colormap(&self.colormap, self.oracle.temp_threshold)
    }
}

fn overlay(cfg: &mut BackendConfig, s: BackendSection, base: &Path) {
    if let Some(k) = s.kind {
        cfg.kind = k;
    }
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                cfg.$field = v;
            }
        };
    }
    set!(temperature_supported, s.temperature_supported);
    set!(prompt_field, s.prompt_field);
    set!(timeout_secs, s.timeout);
    set!(max_retries, s.max_retries);
    set!(initial_backoff_ms, s.initial_backoff_ms);
    set!(poll_interval_ms, s.poll_interval_ms);
    set!(max_in_flight, s.max_in_flight);
    if s.endpoint.is_some() {
        cfg.endpoint = s.endpoint;
    }
    if s.model.is_some() {
        cfg.model_name = s.model;
    }
    if s.auth_env_var.is_some() {
        cfg.auth_env_var = s.auth_env_var;
    }
    if s.temperature.is_some() {
        cfg.sampling_temperature = s.temperature;
    }
    if s.requests_per_minute.is_some() {
        cfg.requests_per_minute = s.requests_per_minute;
    }
    if s.trials.is_some() {
        cfg.trials = s.trials;
    }
    if let Some(t) = s.transcript {
        cfg.transcript_path = Some(resolve(base, t));
    }
    if s.replay_source.is_some() {
        cfg.replay_source = s.replay_source;
    }
}

/// Reads a plan file. Global sections inside it extend `global`.
pub fn load_plan(path: &Path, global: &GlobalConfig) -> Result<(RunPlan, GlobalConfig), ConfigError> {
    let file = read_file(path)?;
    let base = base_dir(path);
    let missing = |key: &str| ConfigError::Invalid(format!("{}: missing key '{key}'", path.display()));
    let manifest = file.manifest.clone().ok_or_else(|| missing("manifest"))?;
    let log = file.log.clone().ok_or_else(|| missing("log"))?;
    let plan = RunPlan {
        manifest_path: resolve(&base, manifest),
        prompt_ids: file.prompts.clone().unwrap_or_else(|| vec![1, 2, 3, 4, 5]),
        backends: file.backends.clone().ok_or_else(|| missing("backends"))?,
        trials_per_backend: file.trials.clone(),
        concurrency_cap: file.concurrency.unwrap_or(4),
        output_log_path: resolve(&base, log),
    };
    plan.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut merged = global.clone();
    merged.apply(file, &base)?;
    merged.validate()?;
    for id in &plan.backends {
        if merged.backend(id).is_none() {
            return Err(ConfigError::Invalid(format!("plan names unknown backend '{id}'")));
        }
    }
    Ok((plan, merged))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_hold_presets() {
        let cfg = GlobalConfig::default();
        assert!(cfg.backend("chatgpt-4o").is_some());
        assert!(cfg.backend("oracle").is_some());
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_overlay_presets_and_add_backends() {
        let text = r#"
            [oracle]
            temp_threshold = 45.0

            [backend.chatgpt-4o]
            model = "gpt-4o-mini"

            [backend.local]
            kind = "replay"
            transcript = "t.jsonl"
        "#;
        let cfg = GlobalConfig::from_toml_str(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.oracle.temp_threshold, 45.0);
        let gpt = cfg.backend("chatgpt-4o").unwrap();
        assert_eq!(gpt.model_name.as_deref(), Some("gpt-4o-mini"));
        assert_eq!(gpt.auth_env_var.as_deref(), Some("OPENAI_API_KEY"));
        let local = cfg.backend("local").unwrap();
        assert_eq!(local.transcript_path.as_deref(), Some(Path::new("/cfg/t.jsonl")));
        assert_eq!(cfg.prompt_params().threshold, 45.0);
    }

    #[test]
    fn secrets_and_unknown_keys_rejected() {
        let err = GlobalConfig::from_toml_str("[backend.chatgpt-4o]\napi_key = \"sk-x\"\n", Path::new("."));
        assert!(matches!(err, Err(ConfigError::Parse { .. })));
        let err = GlobalConfig::from_toml_str("[backend.new]\nendpoint = \"http://x\"\n", Path::new("."));
        assert!(matches!(err, Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn colormap_section_validates_lengths() {
        let err = GlobalConfig::from_toml_str("[colormap]\nnames = [\"a\"]\n", Path::new("."));
        assert!(matches!(err, Err(ConfigError::Invalid(_))));
        let cfg = GlobalConfig::from_toml_str("[colormap]\nt_min = 20.0\nt_max = 70.0\n", Path::new(".")).unwrap();
        assert_eq!((cfg.colormap.t_min(), cfg.colormap.t_max()), (20.0, 70.0));
    }

    #[test]
    fn auth_override_name() {
        assert_eq!(auth_override_var("llava-13b"), "THERMAL_VQA_LLAVA_13B_AUTH_ENV");
    }
}
