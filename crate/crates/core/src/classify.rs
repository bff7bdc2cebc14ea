//! Threshold classification of regression scores, and the message-length and
//! minimal-document-frequency baselines.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

/// Human or predicted label of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    /// Needs the previous turn to be answered; `+1`.
    Dependent,
    /// Answerable on its own; `-1`.
    Independent,
}

impl Label {
    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Dependent
        } else {
            Label::Independent
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Dependent
    }

    pub fn sign(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            -1.0
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        if l.is_positive() {
            1
        } else {
            -1
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Label::Dependent),
            -1 => Ok(Label::Independent),
            other => Err(format!("label must be 1 or -1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    #[serde(rename = "T")]
    pub t: f64,
    pub tuned_accuracy: f64,
    pub source: String,
    /// Tuned on single-class labels; the threshold is a sentinel.
    #[serde(default)]
    pub degenerate: bool,
}

impl Threshold {
    pub fn fixed(t: f64) -> Self {
        Threshold {
            t,
            tuned_accuracy: 0.0,
            source: "fixed".into(),
            degenerate: false,
        }
    }
}

/// `+1` iff `score > T`.
pub fn predict(score: f64, threshold: &Threshold) -> Label {
    Label::from_positive(score > threshold.t)
}

/// Candidate thresholds: one below the minimum, midpoints between consecutive
/// distinct scores, one above the maximum. Ascending.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) else {
        return Vec::new();
    };
    let mut c = Vec::with_capacity(sorted.len() + 1);
    c.push(lo - 1.0);
    c.extend(sorted.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    c.push(hi + 1.0);
    c
}

/// Picks the candidate threshold with the highest accuracy; ties go to the
/// smallest candidate.
pub fn tune_threshold(scores: &[f64], labels: &[Label], source: &str) -> Result<Threshold> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Input(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("non-finite score".into()));
    }
    let n = scores.len();
    let mut pairs: Vec<(f64, bool)> = scores.iter().zip(labels).map(|(&s, l)| (s, l.is_positive())).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = pairs.iter().filter(|p| p.1).count();

    // Sweep ascending candidates; `below` counts pairs with score <= candidate.
    let mut best_t = f64::NAN;
    let mut best_correct = 0usize;
    let mut below = 0usize;
    let mut neg_below = 0usize;
    for t in threshold_candidates(scores) {
        while below < n && pairs[below].0 <= t {
            if !pairs[below].1 {
                neg_below += 1;
            }
            below += 1;
        }
        let pos_above = positives - (below - neg_below);
        let correct = pos_above + neg_below;
        if best_t.is_nan() || correct > best_correct {
            best_t = t;
            best_correct = correct;
        }
    }
    Ok(Threshold {
        t: best_t,
        tuned_accuracy: best_correct as f64 / n as f64,
        source: source.to_owned(),
        degenerate: positives == 0 || positives == n,
    })
}

/// Tunes `T_len` for the rule "dependent iff length < `T_len`".
pub fn tune_length_threshold(lengths: &[usize], labels: &[Label], source: &str) -> Result<Threshold> {
    let negated: Vec<f64> = lengths.iter().map(|&l| -(l as f64)).collect();
    let mut t = tune_threshold(&negated, labels, source)?;
    t.t = -t.t;
    Ok(t)
}

/// `+1` iff the message has fewer than `T_len` tokens.
pub fn baseline_length(msg: &TokenSeq, t_len: &Threshold) -> Label {
    Label::from_positive((msg.len() as f64) < t_len.t)
}

/// Number of distinct messages containing each token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfTable {
    counts: BTreeMap<String, u64>,
}

impl DfTable {
    pub fn build<'a>(messages: impl IntoIterator<Item = &'a TokenSeq>) -> Self {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for m in messages {
            let distinct: BTreeSet<&String> = m.tokens.iter().collect();
            for t in distinct {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        DfTable { counts }
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Self {
        DfTable {
            counts: counts.into_iter().filter(|(_, c)| *c > 0).collect(),
        }
    }

    pub fn df(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn max_df(&self) -> u64 {
        self.counts.values().copied().max().unwrap_or(0)
    }

    /// Smallest DF among the message's tokens; unknown tokens (and empty
    /// messages) give 0.
    pub fn min_df(&self, msg: &TokenSeq) -> u64 {
        msg.tokens.iter().map(|t| self.df(t)).min().unwrap_or(0)
    }
}

/// `+1` iff the message's minimal DF exceeds `T_df`.
pub fn baseline_mdf(msg: &TokenSeq, df: &DfTable, t_df: &Threshold) -> Label {
    Label::from_positive(df.min_df(msg) as f64 > t_df.t)
}
