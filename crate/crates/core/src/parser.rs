//! Maps free-text model answers onto a three-way verdict.
//!
//! The query asks whether the battery is *normal*, so "a) Yes" means Normal
//! and "b) No" means Anomaly. Explicit option tokens win over a trailing
//! yes/no, because explanations routinely restate conditions with "yes" or
//! "no" in them. Anything unresolvable lands in `Unsure`.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Normal,
    Anomaly,
    Unsure,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Normal => "normal",
            Verdict::Anomaly => "anomaly",
            Verdict::Unsure => "unsure",
        })
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Verdict::Normal),
            "anomaly" => Ok(Verdict::Anomaly),
            "unsure" => Ok(Verdict::Unsure),
            other => Err(format!("unknown verdict '{other}'")),
        }
    }
}

/// Binary decision used for accuracy and AUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Normal,
    Anomaly,
}

impl Prediction {
    pub fn is_anomaly(self) -> bool {
        self == Prediction::Anomaly
    }
}

/// Unsure is scored as anomaly.
pub fn score_verdict(verdict: Verdict) -> Prediction {
    match verdict {
        Verdict::Normal => Prediction::Normal,
        Verdict::Anomaly | Verdict::Unsure => Prediction::Anomaly,
    }
}

// The prompt's own option list, echoed back by some models.
static ECHOED_OPTIONS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\ba\)\s*yes[\s,;/]*b\)\s*no\b").unwrap());

static OPTION_A: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:\ba\)\s*yes\b|\(a\)|\banswer\s*:\s*\**\s*\(?a\b\)?|^\W*a\W*$)").unwrap()
});

static OPTION_B: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:\bb\)\s*no\b|\(b\)|\banswer\s*:\s*\**\s*\(?b\b\)?|^\W*b\W*$)").unwrap()
});

static LEADING_YES_NO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\W_]*(yes|no)\b").unwrap());

pub fn parse_verdict(text: &str) -> Verdict {
    let text = text.trim();
    if text.is_empty() {
        return Verdict::Unsure;
    }
    let stripped = ECHOED_OPTIONS.replace_all(text, " ");
    let a = OPTION_A.is_match(&stripped);
    let b = OPTION_B.is_match(&stripped);
    match (a, b) {
        (true, false) => return Verdict::Normal,
        (false, true) => return Verdict::Anomaly,
        (true, true) => return Verdict::Unsure,
        (false, false) => {}
    }
    match final_sentence(&stripped).and_then(|s| LEADING_YES_NO.captures(s)) {
        Some(c) if c[1].eq_ignore_ascii_case("yes") => Verdict::Normal,
        Some(_) => Verdict::Anomaly,
        None => Verdict::Unsure,
    }
}

fn final_sentence(text: &str) -> Option<&str> {
    text.split(['.', '!', '?', '\n'])
        .map(str::trim)
        .rfind(|s| s.chars().any(char::is_alphanumeric))
}
