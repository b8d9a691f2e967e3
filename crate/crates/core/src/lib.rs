//! Zero-shot battery thermal anomaly detection benchmark.
//!
//! Synthesizes colormap-encoded battery thermal images, renders the
//! prior-knowledge prompts, queries visual question answering backends over
//! repeated trials, parses their verdicts and scores them.

pub mod config;
pub mod geometry;
pub mod metrics;
pub mod oracle;
pub mod parser;
pub mod preprocess;
pub mod prompting;
pub mod runner;
pub mod synth;
pub mod thermal;
pub mod transcripts;
pub mod vqa;

pub use oracle::{classify, OracleParams, OracleReport};
pub use parser::{parse_verdict, score_verdict, Prediction, Verdict};
pub use synth::{Label, SceneClass};
pub use thermal::{ColormapSpec, Rgb, TemperatureField, ThermalImage};
