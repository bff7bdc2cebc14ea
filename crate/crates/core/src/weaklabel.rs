//! The weakly labeled training set: every eligible message paired with the
//! combiner's real-valued output on its response-diversity signals.

use serde::{Deserialize, Serialize};

use crate::classify::Label;
use crate::corpus::{ResponseGroup, TokenSeq, Vocabulary};
use crate::error::{Error, Result};
use crate::linear::{decision_value, FeatureVector, LinearModel};
use crate::lstm::SeqExample;
use crate::signals::{raw_signals, NormalizationStats, SignalConfig, SignalVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub entropy_norm: f64,
    pub m_p: f64,
    pub avg_len_norm: f64,
}

impl From<&SignalVector> for Provenance {
    fn from(s: &SignalVector) -> Self {
        Provenance {
            entropy_norm: s.entropy_norm,
            m_p: s.m_p,
            avg_len_norm: s.avg_len_norm,
        }
    }
}

/// One JSONL record of the weak dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabeledExample {
    pub message: String,
    pub ids: Vec<u32>,
    pub y: f64,
    pub signals: Provenance,
}

impl WeakLabeledExample {
    pub fn tokens(&self) -> TokenSeq {
        TokenSeq::new(self.message.split(' ').map(str::to_owned).collect())
    }

    pub fn to_seq_example(&self) -> SeqExample {
        SeqExample::new(self.ids.clone(), self.y)
    }
}

/// A human-annotated message, `+1` meaning context dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMessage {
    pub message: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakManifest {
    pub groups: usize,
    pub eligible: usize,
    pub flagged: usize,
    pub degenerate: usize,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
    pub y_mean: Option<f64>,
}

/// Feature vector the combiner sees for a message.
pub fn combiner_features(s: &SignalVector) -> FeatureVector {
    FeatureVector::dense(&s.features())
}

/// Builds `D` from the groups (already sorted by message text). Flagged and
/// degenerate groups are counted and skipped.
pub fn build_weak_dataset(
    groups: &[ResponseGroup],
    stats: Option<&NormalizationStats>,
    signal_config: &SignalConfig,
    combiner: &LinearModel,
    vocab: &Vocabulary,
) -> Result<(Vec<WeakLabeledExample>, WeakManifest)> {
    let stats = stats.ok_or(Error::MissingStats)?;
    let mut out = Vec::new();
    let mut manifest = WeakManifest {
        groups: groups.len(),
        eligible: 0,
        flagged: 0,
        degenerate: 0,
        y_min: None,
        y_max: None,
        y_mean: None,
    };
    for g in groups {
        if g.flagged {
            manifest.flagged += 1;
            continue;
        }
        let raw = match raw_signals(g, signal_config) {
            Ok(r) => r,
            Err(Error::DegenerateDistribution) => {
                manifest.degenerate += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let signals = stats.normalize(&raw);
        let y = decision_value(combiner, &combiner_features(&signals));
        out.push(WeakLabeledExample {
            message: g.message.text(),
            ids: vocab.encode(&g.message.tokens),
            y,
            signals: Provenance::from(&signals),
        });
    }
    out.sort_by(|a, b| a.message.cmp(&b.message));
    manifest.eligible = out.len();
    if !out.is_empty() {
        let ys = out.iter().map(|e| e.y);
        manifest.y_min = ys.clone().reduce(f64::min);
        manifest.y_max = ys.clone().reduce(f64::max);
        manifest.y_mean = Some(ys.sum::<f64>() / out.len() as f64);
    }
    Ok((out, manifest))
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn from_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Input(format!("line {}: {e}", i + 1))))
        .collect()
}
