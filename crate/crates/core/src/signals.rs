//! Response-diversity characteristics of a message.
//!
//! For each message three numbers are measured over the responses it received:
//!
//! * the Shannon entropy (base 2) of the pooled response word distribution,
//! * one minus the largest probability mass in that distribution, and
//! * the mean response length in tokens.
//!
//! Entropy and mean length are min-max normalized over the corpus; the
//! max-mass complement is already in `[0, 1]`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::ResponseGroup;
use crate::error::{Error, Result};

/// Pooled unigram distribution over the responses of one message. Entries are
/// keyed by token text in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct WordDistribution {
    tokens: Vec<String>,
    probs: Vec<f64>,
}

impl WordDistribution {
    /// Builds a distribution from raw counts. Zero counts are dropped.
    pub fn from_counts<I, S>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut merged: BTreeMap<String, u64> = BTreeMap::new();
        for (t, c) in counts {
            if c > 0 {
                *merged.entry(t.into()).or_default() += c;
            }
        }
        let total: u64 = merged.values().sum();
        if total == 0 {
            return Err(Error::DegenerateDistribution);
        }
        let (tokens, probs) = merged
            .into_iter()
            .map(|(t, c)| (t, c as f64 / total as f64))
            .unzip();
        Ok(WordDistribution { tokens, probs })
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.tokens.iter().map(String::as_str).zip(self.probs.iter().copied())
    }
}

/// Pools every response token of the group (with multiplicity), removes
/// stopwords and normalizes the counts.
pub fn word_distribution(group: &ResponseGroup, stopwords: &HashSet<String>) -> Result<WordDistribution> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for r in &group.responses {
        for t in &r.tokens {
            if !stopwords.contains(t) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    WordDistribution::from_counts(counts)
}

/// `Σ -p log2 p` over the distribution.
pub fn entropy(p: &WordDistribution) -> f64 {
    p.probs
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| -pi * pi.log2())
        .sum()
}

/// `1 - max p`.
pub fn max_mass_complement(p: &WordDistribution) -> f64 {
    let max = p.probs.iter().copied().fold(0.0_f64, f64::max);
    1.0 - max
}

/// Which tokens count toward a response's length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthCounting {
    #[default]
    RawTokens,
    PostStopword,
}

pub fn average_response_length(
    group: &ResponseGroup,
    counting: LengthCounting,
    stopwords: &HashSet<String>,
) -> f64 {
    if group.responses.is_empty() {
        return 0.0;
    }
    let total: usize = group
        .responses
        .iter()
        .map(|r| match counting {
            LengthCounting::RawTokens => r.len(),
            LengthCounting::PostStopword => r.tokens.iter().filter(|t| !stopwords.contains(*t)).count(),
        })
        .sum();
    total as f64 / group.responses.len() as f64
}

/// Observed range of a characteristic on the corpus it was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Option<Self> {
        let first = *values.first()?;
        Some(values.iter().fold(MinMax { min: first, max: first }, |acc, &v| MinMax {
            min: acc.min.min(v),
            max: acc.max.max(v),
        }))
    }

    /// Affine map onto `[0, 1]`, clamped for values outside the fitted range.
    /// A degenerate range maps everything to 0.
    pub fn apply(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0.0;
        }
        ((v - self.min) / span).clamp(0.0, 1.0)
    }

    pub fn invert(&self, x: f64) -> f64 {
        x * (self.max - self.min) + self.min
    }
}

/// Min-max normalizes `values` and returns the fitted range.
pub fn normalize(values: &[f64]) -> Result<(Vec<f64>, MinMax)> {
    let mm = MinMax::fit(values).ok_or_else(|| Error::Input("cannot normalize an empty list".into()))?;
    Ok((values.iter().map(|&v| mm.apply(v)).collect(), mm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min_entropy: f64,
    pub max_entropy: f64,
    pub min_avg_len: f64,
    pub max_avg_len: f64,
}

impl NormalizationStats {
    pub fn entropy(&self) -> MinMax {
        MinMax {
            min: self.min_entropy,
            max: self.max_entropy,
        }
    }

    pub fn avg_len(&self) -> MinMax {
        MinMax {
            min: self.min_avg_len,
            max: self.max_avg_len,
        }
    }

    pub fn normalize(&self, raw: &RawSignals) -> SignalVector {
        SignalVector {
            entropy_norm: self.entropy().apply(raw.entropy),
            m_p: raw.m_p,
            avg_len_norm: self.avg_len().apply(raw.avg_len),
            raw_entropy: raw.entropy,
            raw_avg_len: raw.avg_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSignals {
    pub entropy: f64,
    pub m_p: f64,
    pub avg_len: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalVector {
    pub entropy_norm: f64,
    pub m_p: f64,
    pub avg_len_norm: f64,
    pub raw_entropy: f64,
    pub raw_avg_len: f64,
}

impl SignalVector {
    /// The three normalized characteristics, in combiner feature order.
    pub fn features(&self) -> [f64; 3] {
        [self.entropy_norm, self.m_p, self.avg_len_norm]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignalConfig {
    pub stopwords: HashSet<String>,
    pub counting: LengthCounting,
}

pub fn raw_signals(group: &ResponseGroup, config: &SignalConfig) -> Result<RawSignals> {
    let p = word_distribution(group, &config.stopwords)?;
    Ok(RawSignals {
        entropy: entropy(&p),
        m_p: max_mass_complement(&p),
        avg_len: average_response_length(group, config.counting, &config.stopwords),
    })
}

/// Why a group received no signal row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    Flagged,
    Degenerate,
}

/// One row per group, aligned with the group list it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTable {
    pub rows: Vec<std::result::Result<SignalVector, Exclusion>>,
    pub stats: NormalizationStats,
}

impl SignalTable {
    /// Computes raw characteristics for every eligible group, fits the
    /// normalization on them, then normalizes.
    pub fn compute(groups: &[ResponseGroup], config: &SignalConfig) -> Self {
        let raw: Vec<std::result::Result<RawSignals, Exclusion>> = groups
            .iter()
            .map(|g| {
                if g.flagged {
                    Err(Exclusion::Flagged)
                } else {
                    raw_signals(g, config).map_err(|_| Exclusion::Degenerate)
                }
            })
            .collect();
        let entropies: Vec<f64> = raw.iter().flatten().map(|r| r.entropy).collect();
        let lengths: Vec<f64> = raw.iter().flatten().map(|r| r.avg_len).collect();
        let e = MinMax::fit(&entropies).unwrap_or(MinMax { min: 0.0, max: 0.0 });
        let l = MinMax::fit(&lengths).unwrap_or(MinMax { min: 0.0, max: 0.0 });
        let stats = NormalizationStats {
            min_entropy: e.min,
            max_entropy: e.max,
            min_avg_len: l.min,
            max_avg_len: l.max,
        };
        let rows = raw.into_iter().map(|r| r.map(|r| stats.normalize(&r))).collect();
        SignalTable { rows, stats }
    }

    /// TSV with header `message_id, raw_entropy, entropy_norm, m_p,
    /// raw_avg_len, avg_len_norm`. `message_id` is the group's position.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("message_id\traw_entropy\tentropy_norm\tm_p\traw_avg_len\tavg_len_norm\n");
        for (i, row) in self.rows.iter().enumerate() {
            if let Ok(s) = row {
                out.push_str(&format!(
                    "{i}\t{}\t{}\t{}\t{}\t{}\n",
                    s.raw_entropy, s.entropy_norm, s.m_p, s.raw_avg_len, s.avg_len_norm
                ));
            }
        }
        out
    }

    /// Reads the TSV form back; rows missing from the file are excluded
    /// groups (reported as `Flagged` since the reason is not stored).
    pub fn from_tsv(tsv: &str, n_groups: usize, stats: NormalizationStats) -> Result<Self> {
        let mut rows = vec![Err(Exclusion::Flagged); n_groups];
        for (lineno, line) in tsv.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Input(format!("signals TSV line {}: malformed", lineno + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let id: usize = f[0].parse().map_err(|_| bad())?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let row = rows.get_mut(id).ok_or_else(bad)?;
            *row = Ok(SignalVector {
                raw_entropy: num(f[1])?,
                entropy_norm: num(f[2])?,
                m_p: num(f[3])?,
                raw_avg_len: num(f[4])?,
                avg_len_norm: num(f[5])?,
            });
        }
        Ok(SignalTable { rows, stats })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub bin_start: f64,
    pub pct_positive: f64,
    pub pct_negative: f64,
    pub count: usize,
}

/// Fixed-width histogram over `[0, 1]` with per-bin label percentages.
/// Bins are half-open except the last, which includes 1.0.
pub fn histogram(values: &[f64], labels: &[i8], bin_width: f64) -> Result<Vec<Bin>> {
    if values.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} values but {} labels",
            values.len(),
            labels.len()
        )));
    }
    let n_bins = (1.0 / bin_width).round();
    if !(bin_width > 0.0) || n_bins < 1.0 || (n_bins * bin_width - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("bin width {bin_width} does not divide 1")));
    }
    let n_bins = n_bins as usize;
    let mut pos = vec![0usize; n_bins];
    let mut neg = vec![0usize; n_bins];
    for (&v, &y) in values.iter().zip(labels) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Input(format!("value {v} outside [0, 1]")));
        }
        // index via the bin count to avoid 0.15 / 0.05 = 2.9999 style errors
        let k = ((v * n_bins as f64 + 1e-12).floor() as usize).min(n_bins - 1);
        if y > 0 {
            pos[k] += 1;
        } else {
            neg[k] += 1;
        }
    }
    Ok((0..n_bins)
        .map(|k| {
            let count = pos[k] + neg[k];
            let pct = |c: usize| if count == 0 { 0.0 } else { 100.0 * c as f64 / count as f64 };
            Bin {
                bin_start: k as f64 / n_bins as f64,
                pct_positive: pct(pos[k]),
                pct_negative: pct(neg[k]),
                count,
            }
        })
        .collect())
}

pub fn histogram_csv(bins: &[Bin]) -> String {
    let mut out = String::from("bin_start,pct_positive,pct_negative,count\n");
    for b in bins {
        out.push_str(&format!(
            "{:.4},{},{},{}\n",
            b.bin_start, b.pct_positive, b.pct_negative, b.count
        ));
    }
    out
}
