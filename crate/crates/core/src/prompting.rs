//! The five query prompts, stored as plain-text templates.
//!
//! Placeholders:
//! - `{colormap_names}`: `"black", "blue", ...`
//! - `{colormap_names_inner_commas}`: `"black," "blue," ... "white"`
//! - `{first_color}`, `{last_color}`
//! - `{t_min}`, `{t_max}`, `{threshold}`
//!
//! Rendering substitutes placeholders and nothing else.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::thermal::ColormapSpec;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unknown prompt id {0}; valid ids are 1..=5")]
    UnknownId(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: u8,
    pub body: &'static str,
}

static TEMPLATES: [PromptTemplate; 5] = [
    PromptTemplate {
        id: 1,
        body: include_str!("../resources/prompts/prompt1.txt"),
    },
    PromptTemplate {
        id: 2,
        body: include_str!("../resources/prompts/prompt2.txt"),
    },
    PromptTemplate {
        id: 3,
        body: include_str!("../resources/prompts/prompt3.txt"),
    },
    PromptTemplate {
        id: 4,
        body: include_str!("../resources/prompts/prompt4.txt"),
    },
    PromptTemplate {
        id: 5,
        body: include_str!("../resources/prompts/prompt5.txt"),
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptParams {
    pub colormap_names: Vec<String>,
    pub t_min: f64,
    pub t_max: f64,
    pub threshold: f64,
}

impl Default for PromptParams {
    fn default() -> Self {
        Self::from_colormap(&ColormapSpec::default(), 50.0)
    }
}

impl PromptParams {
    pub fn from_colormap(cmap: &ColormapSpec, threshold: f64) -> Self {
        Self {
            colormap_names: cmap.anchor_names().to_vec(),
            t_min: cmap.t_min(),
            t_max: cmap.t_max(),
            threshold,
        }
    }
}

pub fn list_templates() -> &'static [PromptTemplate] {
    &TEMPLATES
}

pub fn template(id: u8) -> Result<&'static PromptTemplate, PromptError> {
    TEMPLATES
        .iter()
        .find(|t| t.id == id)
        .ok_or(PromptError::UnknownId(id))
}

pub fn render(id: u8, params: &PromptParams) -> Result<String, PromptError> {
    Ok(template(id)?.render(params))
}

impl PromptTemplate {
    pub fn render(&self, params: &PromptParams) -> String {
        let names = &params.colormap_names;
        let quoted = names
            .iter()
            .map(|n| format!("\"{n}\""))
            .collect::<Vec<_>>()
            .join(", ");
        let inner_commas = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if i + 1 < names.len() {
                    format!("\"{n},\"")
                } else {
                    format!("\"{n}\"")
                }
            })
            .collect::<Vec<_>>()
            .join(" ");
        let body = self.body.trim_end();
        body.replace("{colormap_names_inner_commas}", &inner_commas)
            .replace("{colormap_names}", &quoted)
            .replace("{first_color}", names.first().map_or("", String::as_str))
            .replace("{last_color}", names.last().map_or("", String::as_str))
            .replace("{t_min}", &format_number(params.t_min))
            .replace("{t_max}", &format_number(params.t_max))
            .replace("{threshold}", &format_number(params.threshold))
    }
}

/// Integral values print without a decimal point (`50`, not `50.0`).
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
