//! Accuracy, range, unsure rate and AUC over trial logs, plus report output.
//!
//! Everything is computed at full precision; rounding to 0.1 happens only when
//! formatting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::{Prediction, Verdict};
use crate::runner::TrialRecord;
use crate::synth::{ClassCounts, Label, SceneClass};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("records mix several (backend, prompt) groups")]
    MixedGroup,
    #[error("AUC needs both normal and anomalous images{0}")]
    SingleClass(String),
    #[error("no successful records")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Normal,
    Anomaly,
    Overheating,
    Reflection,
    SpatialTape,
}

impl Subset {
    pub const ALL: [Subset; 6] = [
        Subset::All,
        Subset::Normal,
        Subset::Anomaly,
        Subset::Overheating,
        Subset::Reflection,
        Subset::SpatialTape,
    ];

    pub fn contains(self, class: SceneClass) -> bool {
        match self {
            Subset::All => true,
            Subset::Normal => class == SceneClass::Normal,
            Subset::Anomaly => class.is_anomaly(),
            Subset::Overheating => class == SceneClass::Overheating,
            Subset::Reflection => class == SceneClass::Reflection,
            Subset::SpatialTape => class == SceneClass::SpatialTape,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Normal => "normal",
            Subset::Anomaly => "anomaly",
            Subset::Overheating => "overheating",
            Subset::Reflection => "reflection",
            Subset::SpatialTape => "spatial tape",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMethod {
    #[default]
    FractionScore,
    PerTrialBinary,
}

impl AucMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AucMethod::FractionScore => "fraction_score",
            AucMethod::PerTrialBinary => "per_trial_binary",
        }
    }
}

impl FromStr for AucMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fraction_score" => Ok(AucMethod::FractionScore),
            "per_trial_binary" => Ok(AucMethod::PerTrialBinary),
            other => Err(format!(
                "unknown AUC method '{other}' (expected fraction_score or per_trial_binary)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialAccuracy {
    /// (trial index, accuracy percent), ascending by trial.
    pub per_trial: Vec<(u32, f64)>,
    pub average: f64,
}

fn ok_records(records: &[TrialRecord]) -> impl Iterator<Item = &TrialRecord> {
    records.iter().filter(|r| r.is_ok() && r.binary_prediction.is_some())
}

fn check_single_group(records: &[TrialRecord]) -> Result<(), MetricsError> {
    let mut groups = records.iter().map(|r| (&r.backend_id, r.prompt_id));
    if let Some(first) = groups.next() {
        if groups.any(|g| g != first) {
            return Err(MetricsError::MixedGroup);
        }
    }
    Ok(())
}

fn is_correct(r: &TrialRecord) -> bool {
    let predicted_anomaly = r.binary_prediction.is_some_and(Prediction::is_anomaly);
    predicted_anomaly == (r.ground_truth_label == Label::Anomaly)
}

/// Per-trial accuracy on `subset` and its mean. `None` when the subset has no
/// successful records.
pub fn accuracy(records: &[TrialRecord], subset: Subset) -> Result<Option<TrialAccuracy>, MetricsError> {
    check_single_group(records)?;
    let mut per_trial: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in ok_records(records).filter(|r| subset.contains(r.ground_truth_class)) {
        let e = per_trial.entry(r.trial_index).or_default();
        e.1 += 1;
        if is_correct(r) {
            e.0 += 1;
        }
    }
    if per_trial.is_empty() {
        return Ok(None);
    }
    let per_trial: Vec<(u32, f64)> = per_trial
        .into_iter()
        .map(|(t, (c, n))| (t, 100.0 * c as f64 / n as f64))
        .collect();
    let average = per_trial.iter().map(|p| p.1).sum::<f64>() / per_trial.len() as f64;
    Ok(Some(TrialAccuracy { per_trial, average }))
}

/// Max minus min per-trial accuracy over all images.
pub fn range_across_trials(records: &[TrialRecord]) -> Result<Option<f64>, MetricsError> {
    Ok(accuracy(records, Subset::All)?.map(|acc| {
        let (lo, hi) = acc
            .per_trial
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, a)| (lo.min(a), hi.max(a)));
        hi - lo
    }))
}

/// Share of successful records whose raw verdict is Unsure.
pub fn pct_unsure(records: &[TrialRecord]) -> Option<f64> {
    let (mut unsure, mut total) = (0usize, 0usize);
    for r in ok_records(records) {
        total += 1;
        if r.verdict == Some(Verdict::Unsure) {
            unsure += 1;
        }
    }
    (total > 0).then(|| 100.0 * unsure as f64 / total as f64)
}

/// Area under the ROC curve of `scores` (higher means more anomalous), by the
/// trapezoid rule over every distinct threshold. Ties contribute half.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<f64, MetricsError> {
    let positives = scores.iter().filter(|s| s.1).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass(String::new()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / positives as f64;
        let fpr = fp as f64 / negatives as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        (prev_tpr, prev_fpr) = (tpr, fpr);
    }
    Ok(area)
}

/// Per image: share of trials predicting anomaly, paired with whether the
/// image is anomalous.
pub fn fraction_scores(records: &[TrialRecord]) -> Vec<(f64, bool)> {
    let mut per_image: BTreeMap<&str, (usize, usize, bool)> = BTreeMap::new();
    for r in ok_records(records) {
        let e = per_image
            .entry(&r.image_id)
            .or_insert((0, 0, r.ground_truth_label == Label::Anomaly));
        e.1 += 1;
        if r.binary_prediction.is_some_and(Prediction::is_anomaly) {
            e.0 += 1;
        }
    }
    per_image
        .into_values()
        .map(|(a, n, anomalous)| (a as f64 / n as f64, anomalous))
        .collect()
}

/// AUC in percent.
pub fn auc(records: &[TrialRecord], method: AucMethod) -> Result<f64, MetricsError> {
    check_single_group(records)?;
    match method {
        AucMethod::FractionScore => roc_auc(&fraction_scores(records)).map(|a| 100.0 * a),
        AucMethod::PerTrialBinary => {
            // trial -> (tp, positives, tn, negatives)
            let mut per_trial: BTreeMap<u32, [usize; 4]> = BTreeMap::new();
            for r in ok_records(records) {
                let c = per_trial.entry(r.trial_index).or_default();
                let predicted = r.binary_prediction.is_some_and(Prediction::is_anomaly);
                if r.ground_truth_label == Label::Anomaly {
                    c[1] += 1;
                    c[0] += predicted as usize;
                } else {
                    c[3] += 1;
                    c[2] += !predicted as usize;
                }
            }
            if per_trial.is_empty() {
                return Err(MetricsError::Empty);
            }
            let mut sum = 0.0;
            for (t, [tp, p, tn, n]) in &per_trial {
                if *p == 0 || *n == 0 {
                    return Err(MetricsError::SingleClass(format!(" in trial {t}")));
                }
                sum += (*tp as f64 / *p as f64 + *tn as f64 / *n as f64) / 2.0;
            }
            Ok(100.0 * sum / per_trial.len() as f64)
        }
    }
}

/// Average accuracies per subset, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub all: Option<f64>,
    pub normal: Option<f64>,
    pub anomaly: Option<f64>,
    pub overheating: Option<f64>,
    pub reflection: Option<f64>,
    pub spatial_tape: Option<f64>,
}

impl AccuracyRow {
    pub fn get(&self, subset: Subset) -> Option<f64> {
        match subset {
            Subset::All => self.all,
            Subset::Normal => self.normal,
            Subset::Anomaly => self.anomaly,
            Subset::Overheating => self.overheating,
            Subset::Reflection => self.reflection,
            Subset::SpatialTape => self.spatial_tape,
        }
    }

    fn set(&mut self, subset: Subset, v: Option<f64>) {
        *match subset {
            Subset::All => &mut self.all,
            Subset::Normal => &mut self.normal,
            Subset::Anomaly => &mut self.anomaly,
            Subset::Overheating => &mut self.overheating,
            Subset::Reflection => &mut self.reflection,
            Subset::SpatialTape => &mut self.spatial_tape,
        } = v;
    }
}

/// Absolute differences between the reported aggregates and the ones
/// recomputed from their parts weighted by class size.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecompositionResiduals {
    pub all: Option<f64>,
    pub anomaly: Option<f64>,
}

impl DecompositionResiduals {
    pub fn within(&self, tolerance: f64) -> bool {
        self.all.is_none_or(|r| r <= tolerance) && self.anomaly.is_none_or(|r| r <= tolerance)
    }
}

pub fn decompose_check(row: &AccuracyRow, sizes: &ClassCounts) -> DecompositionResiduals {
    let n_anom = sizes.overheating + sizes.reflection + sizes.spatial_tape;
    let all = match (row.all, row.normal, row.anomaly) {
        (Some(all), Some(n), Some(a)) if sizes.normal + n_anom > 0 => {
            let expected = (sizes.normal as f64 * n + n_anom as f64 * a) / (sizes.normal + n_anom) as f64;
            Some((all - expected).abs())
        }
        _ => None,
    };
    let anomaly = match (row.anomaly, row.overheating, row.reflection, row.spatial_tape) {
        (Some(a), Some(o), Some(r), Some(t)) if n_anom > 0 => {
            let expected = (sizes.overheating as f64 * o + sizes.reflection as f64 * r + sizes.spatial_tape as f64 * t)
                / n_anom as f64;
            Some((a - expected).abs())
        }
        _ => None,
    };
    DecompositionResiduals { all, anomaly }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub backend_id: String,
    pub prompt_id: u8,
    pub trials: usize,
    pub records: usize,
    pub failed: usize,
    pub accuracy: AccuracyRow,
    pub range_acc_all: Option<f64>,
    pub pct_unsure: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub auc_method: AucMethod,
    pub rows: Vec<MetricsRow>,
}

pub fn compute_row(records: &[TrialRecord], method: AucMethod) -> Result<MetricsRow, MetricsError> {
    check_single_group(records)?;
    let first = records.first().ok_or(MetricsError::Empty)?;
    let mut accuracy_row = AccuracyRow::default();
    for subset in Subset::ALL {
        accuracy_row.set(subset, accuracy(records, subset)?.map(|a| a.average));
    }
    let trials: BTreeSet<u32> = ok_records(records).map(|r| r.trial_index).collect();
    Ok(MetricsRow {
        backend_id: first.backend_id.clone(),
        prompt_id: first.prompt_id,
        trials: trials.len(),
        records: records.len(),
        failed: records.iter().filter(|r| !r.is_ok()).count(),
        accuracy: accuracy_row,
        range_acc_all: range_across_trials(records)?,
        pct_unsure: pct_unsure(records),
        auc: auc(records, method).ok(),
    })
}

/// One row per (backend, prompt), backends in first-seen order, prompts ascending.
pub fn compute_table(records: &[TrialRecord], method: AucMethod) -> Result<MetricsTable, MetricsError> {
    let mut backend_order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, u8), Vec<TrialRecord>> = BTreeMap::new();
    for r in records {
        let b = match backend_order.iter().position(|&b| b == r.backend_id) {
            Some(i) => i,
            None => {
                backend_order.push(&r.backend_id);
                backend_order.len() - 1
            }
        };
        groups.entry((b, r.prompt_id)).or_default().push(r.clone());
    }
    let rows = groups
        .values()
        .map(|g| compute_row(g, method))
        .collect::<Result<_, _>>()?;
    Ok(MetricsTable { auc_method: method, rows })
}

impl MetricsTable {
    pub fn backends(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.backend_id.as_str()) {
                out.push(&r.backend_id);
            }
        }
        out
    }

    pub fn row(&self, backend_id: &str, prompt_id: u8) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.backend_id == backend_id && r.prompt_id == prompt_id)
    }

    /// Mean of overall accuracy across a backend's prompts.
    pub fn prompt_mean(&self, backend_id: &str) -> Option<f64> {
        let accs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.backend_id == backend_id)
            .filter_map(|r| r.accuracy.all)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

fn fmt_csv(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

pub fn to_csv(table: &MetricsTable) -> String {
    let mut out = String::from(
        "backend,prompt,trials,records,failed,avg_acc_all,avg_acc_normal,avg_acc_anomaly,\
         avg_acc_overheating,avg_acc_reflection,avg_acc_spatial_tape,range_acc_all,pct_unsure,auc,auc_method\n",
    );
    for r in &table.rows {
        let a = &r.accuracy;
        let cells = [
            r.backend_id.clone(),
            r.prompt_id.to_string(),
            r.trials.to_string(),
            r.records.to_string(),
            r.failed.to_string(),
            fmt_csv(a.all),
            fmt_csv(a.normal),
            fmt_csv(a.anomaly),
            fmt_csv(a.overheating),
            fmt_csv(a.reflection),
            fmt_csv(a.spatial_tape),
            fmt_csv(r.range_acc_all),
            fmt_csv(r.pct_unsure),
            fmt_csv(r.auc),
            table.auc_method.as_str().to_string(),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Metric rows against (backend, prompt) columns, one block per backend.
pub fn to_text(table: &MetricsTable) -> String {
    let mut out = String::new();
    let label_w = 26;
    let col_w = 8;
    for backend in table.backends() {
        let rows: Vec<&MetricsRow> = table.rows.iter().filter(|r| r.backend_id == backend).collect();
        let trials = rows.iter().map(|r| r.trials).max().unwrap_or(0);
        let _ = writeln!(out, "Model: {backend} ({trials} trials)");
        let rule = "-".repeat(label_w + col_w * rows.len());
        let _ = writeln!(out, "{rule}");
        let _ = write!(out, "{:<label_w$}", "Prompt");
        for r in &rows {
            let _ = write!(out, "{:>col_w$}", r.prompt_id);
        }
        out.push('\n');
        let _ = writeln!(out, "{rule}");
        let mut line = |name: String, f: &dyn Fn(&MetricsRow) -> Option<f64>| {
            let _ = write!(out, "{name:<label_w$}");
            for r in &rows {
                let _ = write!(out, "{:>col_w$}", fmt_pct(f(r)));
            }
            out.push('\n');
        };
        for subset in Subset::ALL {
            line(format!("Avg. Acc. ({})", subset.label()), &|r| r.accuracy.get(subset));
        }
        line("Range Acc. (all)".into(), &|r| r.range_acc_all);
        line("%Unsure (all)".into(), &|r| r.pct_unsure);
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(
            out,
            "Mean Avg. Acc. (all) over prompts: {}",
            fmt_pct(table.prompt_mean(backend))
        );
        let failed: usize = rows.iter().map(|r| r.failed).sum();
        if failed > 0 {
            let _ = writeln!(out, "Failed trials excluded: {failed}");
        }
        out.push('\n');
    }
    out
}

pub fn auc_summary(table: &MetricsTable) -> String {
    let mut out = format!("AUC (%) [{}]\n", table.auc_method.as_str());
    let _ = writeln!(out, "{:<20}{:>8}{:>10}", "Model", "Prompt", "AUC");
    for r in &table.rows {
        let _ = writeln!(out, "{:<20}{:>8}{:>10}", r.backend_id, r.prompt_id, fmt_pct(r.auc));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    Csv,
    Text,
    #[default]
    Both,
}

/// Writes `metrics.csv`, `report.txt` (accuracy tables plus the AUC summary),
/// or both into `dir`. Returns the written paths.
pub fn emit_report(table: &MetricsTable, dir: &Path, format: ReportFormat) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let p = dir.join("metrics.csv");
        fs::write(&p, to_csv(table))?;
        written.push(p);
    }
    if matches!(format, ReportFormat::Text | ReportFormat::Both) {
        let p = dir.join("report.txt");
        fs::write(&p, format!("{}{}", to_text(table), auc_summary(table)))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::score_verdict;
    use crate::runner::TrialStatus;

    fn rec(image: &str, class: SceneClass, trial: u32, verdict: Verdict) -> TrialRecord {
        TrialRecord {
            image_id: image.into(),
            ground_truth_label: class.into(),
            ground_truth_class: class,
            prompt_id: 1,
            backend_id: "b".into(),
            trial_index: trial,
            status: TrialStatus::Ok,
            raw_text: String::new(),
            verdict: Some(verdict),
            binary_prediction: Some(score_verdict(verdict)),
            attempt_count: 1,
            latency: 0.0,
            timestamp: 0.0,
            error: None,
        }
    }

    #[test]
    fn per_trial_accuracy_and_range() {
        let mut rs = Vec::new();
        // trial 0: 2/2 correct, trial 1: 1/2 correct
        rs.push(rec("n", SceneClass::Normal, 0, Verdict::Normal));
        rs.push(rec("a", SceneClass::Overheating, 0, Verdict::Anomaly));
        rs.push(rec("n", SceneClass::Normal, 1, Verdict::Unsure));
        rs.push(rec("a", SceneClass::Overheating, 1, Verdict::Anomaly));
        let acc = accuracy(&rs, Subset::All).unwrap().unwrap();
        assert_eq!(acc.per_trial, vec![(0, 100.0), (1, 50.0)]);
        assert_eq!(acc.average, 75.0);
        assert_eq!(range_across_trials(&rs).unwrap(), Some(50.0));
        assert_eq!(pct_unsure(&rs), Some(25.0));
        assert_eq!(accuracy(&rs, Subset::Reflection).unwrap(), None);
    }

    #[test]
    fn failed_records_leave_denominators() {
        let mut rs = vec![rec("n", SceneClass::Normal, 0, Verdict::Normal)];
        let mut failed = rec("a", SceneClass::Reflection, 0, Verdict::Normal);
        failed.status = TrialStatus::Failed;
        failed.verdict = None;
        failed.binary_prediction = None;
        rs.push(failed);
        assert_eq!(accuracy(&rs, Subset::All).unwrap().unwrap().average, 100.0);
        let row = compute_row(&rs, AucMethod::FractionScore).unwrap();
        assert_eq!((row.records, row.failed), (2, 1));
    }

    #[test]
    fn mixed_groups_rejected() {
        let mut other = rec("n", SceneClass::Normal, 0, Verdict::Normal);
        other.prompt_id = 2;
        let rs = vec![rec("n", SceneClass::Normal, 0, Verdict::Normal), other];
        assert_eq!(accuracy(&rs, Subset::All), Err(MetricsError::MixedGroup));
    }

    #[test]
    fn auc_needs_both_classes() {
        let rs = vec![rec("n", SceneClass::Normal, 0, Verdict::Normal)];
        assert!(matches!(auc(&rs, AucMethod::FractionScore), Err(MetricsError::SingleClass(_))));
        assert!(matches!(auc(&rs, AucMethod::PerTrialBinary), Err(MetricsError::SingleClass(_))));
    }

    #[test]
    fn roc_auc_handles_ties() {
        assert_eq!(roc_auc(&[(0.5, true), (0.5, false)]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[(1.0, true), (0.0, false)]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[(0.0, true), (1.0, false)]).unwrap(), 0.0);
    }

    #[test]
    fn auc_method_parsing() {
        assert_eq!("per_trial_binary".parse::<AucMethod>().unwrap(), AucMethod::PerTrialBinary);
        assert!("roc".parse::<AucMethod>().is_err());
    }

    #[test]
    fn report_renders_every_metric_row() {
        let rs = vec![
            rec("n", SceneClass::Normal, 0, Verdict::Normal),
            rec("a", SceneClass::SpatialTape, 0, Verdict::Anomaly),
        ];
        let table = compute_table(&rs, AucMethod::FractionScore).unwrap();
        let text = to_text(&table);
        for s in Subset::ALL {
            assert!(text.contains(&format!("Avg. Acc. ({})", s.label())));
        }
        assert!(text.contains("%Unsure (all)"));
        let csv = to_csv(&table);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("b,1,1,2,0,100,100,100,,,100,0,0,100,"));
    }
}
