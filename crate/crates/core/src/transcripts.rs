//! Builds replay transcripts that realize chosen per-class outcomes, for
//! replaying a known accuracy pattern through the runner and metrics.

use thiserror::Error;

use crate::synth::{ManifestEntry, SceneClass};
use crate::vqa::TranscriptEntry;

#[derive(Debug, Error, PartialEq)]
pub enum TranscriptError {
    #[error("trial {trial}: {correct} correct {class} answers requested but only {available} images")]
    TooManyCorrect {
        trial: u32,
        class: SceneClass,
        correct: usize,
        available: usize,
    },
    #[error("trial {trial}: {unsure} unsure answers requested but only {available} answers predict anomaly")]
    TooManyUnsure { trial: u32, unsure: usize, available: usize },
}

/// Outcome of one trial: correct answers per class in `SceneClass::ALL` order,
/// and how many anomaly-predicting answers are phrased as unsure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialOutcome {
    pub correct: [usize; 4],
    pub unsure: usize,
}

const SAYS_NORMAL: [&str; 3] = [
    "a) Yes. The thermal distribution is even and smooth, and the temperature stays below the limit.",
    "Answer: a. No hot or cold spots are visible and the colors stay in the cool range.",
    "The battery looks uniform without any hot spots. Yes.",
];

const SAYS_ANOMALY: [&str; 3] = [
    "b) No. The image shows a hot spot, so the distribution is not even.",
    "(b) The temperature appears to exceed the threshold in the upper region.",
    "There is a cold patch near the center. No, this is not a normal battery.",
];

const UNSURE: [&str; 2] = [
    "It is not possible to determine from the image alone whether the battery is normal.",
    "The colormap makes it difficult to say whether the temperature exceeds the limit.",
];

/// One transcript entry per (image, trial). Within each class the first
/// `correct` images in manifest order get the right answer. Unsure phrasing
/// goes first to wrong answers on normal images, then to right answers on
/// anomalous ones.
pub fn build_transcript(
    backend_id: &str,
    prompt_id: u8,
    entries: &[ManifestEntry],
    trials: &[TrialOutcome],
) -> Result<Vec<TranscriptEntry>, TranscriptError> {
    let mut out = Vec::with_capacity(entries.len() * trials.len());
    for (t, outcome) in trials.iter().enumerate() {
        let trial = t as u32;
        let mut seen = [0usize; 4];
        let mut answers: Vec<(usize, bool)> = Vec::with_capacity(entries.len());
        for (ci, class) in SceneClass::ALL.iter().enumerate() {
            let available = entries.iter().filter(|e| e.class == *class).count();
            if outcome.correct[ci] > available {
                return Err(TranscriptError::TooManyCorrect {
                    trial,
                    class: *class,
                    correct: outcome.correct[ci],
                    available,
                });
            }
        }
        for (i, e) in entries.iter().enumerate() {
            let ci = SceneClass::ALL.iter().position(|c| *c == e.class).expect("known class");
            let correct = seen[ci] < outcome.correct[ci];
            seen[ci] += 1;
            let predicts_anomaly = correct == e.class.is_anomaly();
            answers.push((i, predicts_anomaly));
        }
        let wrong_normals: Vec<usize> = answers
            .iter()
            .filter(|(i, a)| *a && !entries[*i].class.is_anomaly())
            .map(|(i, _)| *i)
            .collect();
        let right_anomalies: Vec<usize> = answers
            .iter()
            .filter(|(i, a)| *a && entries[*i].class.is_anomaly())
            .map(|(i, _)| *i)
            .collect();
        let available = wrong_normals.len() + right_anomalies.len();
        if outcome.unsure > available {
            return Err(TranscriptError::TooManyUnsure {
                trial,
                unsure: outcome.unsure,
                available,
            });
        }
        let unsure: Vec<usize> = wrong_normals
            .into_iter()
            .chain(right_anomalies)
            .take(outcome.unsure)
            .collect();
        for (k, (i, predicts_anomaly)) in answers.into_iter().enumerate() {
            let text = if unsure.contains(&i) {
                UNSURE[k % UNSURE.len()]
            } else if predicts_anomaly {
                SAYS_ANOMALY[k % SAYS_ANOMALY.len()]
            } else {
                SAYS_NORMAL[k % SAYS_NORMAL.len()]
            };
            out.push(TranscriptEntry {
                backend_id: backend_id.to_string(),
                prompt_id,
                image_id: entries[i].image_id.clone(),
                trial,
                text: text.to_string(),
            });
        }
    }
    Ok(out)
}

/// Splits per-class totals over `trials` trials as evenly as possible, earlier
/// trials taking the remainder.
pub fn spread(totals: [usize; 4], unsure: usize, trials: usize) -> Vec<TrialOutcome> {
    let share = |total: usize, t: usize| total / trials + usize::from(t < total % trials);
    (0..trials)
        .map(|t| TrialOutcome {
            correct: totals.map(|c| share(c, t)),
            unsure: share(unsure, t),
        })
        .collect()
}
