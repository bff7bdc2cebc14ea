//! Conversation triples, tokenization, response grouping and the vocabulary.
//!
//! A corpus is a list of `(context, message, response)` triples. Every distinct
//! message (compared after tokenization) collects the responses it received
//! across the corpus into a [`ResponseGroup`]; the diversity of those responses
//! is what the [`signals`](crate::signals) module measures.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id for out-of-vocabulary tokens.
pub const UNK_ID: u32 = 0;
/// Reserved padding id.
pub const PAD_ID: u32 = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    #[serde(default)]
    pub context: String,
    pub message: String,
    pub response: String,
    /// Optional part-of-speech tags aligned with the message tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

impl Triple {
    pub fn new(context: &str, message: &str, response: &str) -> Self {
        Triple {
            context: context.to_owned(),
            message: message.to_owned(),
            response: response.to_owned(),
            tags: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(InputFormat::Jsonl),
            "tsv" => Ok(InputFormat::Tsv),
            other => Err(Error::validation(
                "format",
                format!("expected `jsonl` or `tsv`, got `{other}`"),
            )),
        }
    }
}

/// Tally of what [`parse_triples`] saw. Blank lines are not records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub records: usize,
    pub malformed: usize,
}

/// Parses triples from JSONL (`context`/`message`/`response` keys) or
/// three-column TSV. Malformed records are skipped and counted; more than half
/// malformed is treated as a wrong format choice.
pub fn parse_triples<R: BufRead>(
    reader: R,
    format: InputFormat,
) -> Result<(Vec<Triple>, ParseDiagnostics)> {
    let mut triples = Vec::new();
    let mut diag = ParseDiagnostics::default();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        diag.records += 1;
        let parsed = match format {
            InputFormat::Jsonl => serde_json::from_str::<Triple>(line).ok(),
            InputFormat::Tsv => {
                let fields: Vec<&str> = line.split('\t').collect();
                match fields.as_slice() {
                    [c, m, r] => Some(Triple::new(c, m, r)),
                    _ => None,
                }
            }
        };
        match parsed {
            Some(t) => triples.push(t),
            None => diag.malformed += 1,
        }
    }
    if diag.malformed * 2 > diag.records {
        return Err(Error::Format {
            records: diag.records,
            malformed: diag.malformed,
        });
    }
    Ok((triples, diag))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<u32>>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSeq { tokens, ids: None }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined token text; the identity key of a message.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn without(&self, stopwords: &HashSet<String>) -> TokenSeq {
        TokenSeq::new(
            self.tokens
                .iter()
                .filter(|t| !stopwords.contains(*t))
                .cloned()
                .collect(),
        )
    }

    pub fn with_ids(mut self, vocab: &Vocabulary) -> Self {
        self.ids = Some(vocab.encode(&self.tokens));
        self
    }
}

fn punctuation_only() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\p{P}+$").expect("static regex"))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub stopwords: HashSet<String>,
}

impl TokenizerConfig {
    pub fn lowercase() -> Self {
        TokenizerConfig {
            lowercase: true,
            stopwords: HashSet::new(),
        }
    }

    /// Reads a stopword list, one token per line. Blank lines and surrounding
    /// whitespace are ignored.
    pub fn load_stopwords(path: &std::path::Path, lowercase: bool) -> Result<HashSet<String>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| if lowercase { l.to_lowercase() } else { l.to_owned() })
            .collect())
    }
}

/// Splits on Unicode whitespace, optionally case-folds, drops tokens made only
/// of punctuation, then drops stopwords (matched after case-folding).
pub fn tokenize(text: &str, lowercase: bool, stopwords: Option<&HashSet<String>>) -> TokenSeq {
    let re = punctuation_only();
    let tokens = text
        .split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_owned() })
        .filter(|t| !re.is_match(t))
        .filter(|t| stopwords.is_none_or(|s| !s.contains(t)))
        .collect();
    TokenSeq::new(tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGroup {
    pub message: TokenSeq,
    pub message_raw: String,
    pub responses: Vec<TokenSeq>,
    pub frequency: usize,
    /// Fewer than `min_responses` responses; excluded from signal estimation.
    pub flagged: bool,
}

impl ResponseGroup {
    pub fn key(&self) -> String {
        self.message.text()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingDiagnostics {
    pub triples: usize,
    pub dropped_empty_message: usize,
    pub dropped_empty_response: usize,
    pub groups: usize,
    pub flagged: usize,
}

/// Groups triples by their tokenized message. Message and response tokens keep
/// their stopwords; stopword filtering happens where a statistic needs it.
/// Output is sorted by message text and responses keep input order.
pub fn group_by_message(
    triples: &[Triple],
    tokenizer: &TokenizerConfig,
    min_responses: usize,
) -> (Vec<ResponseGroup>, GroupingDiagnostics) {
    let mut diag = GroupingDiagnostics {
        triples: triples.len(),
        ..Default::default()
    };
    let mut by_key: BTreeMap<String, ResponseGroup> = BTreeMap::new();
    for t in triples {
        let message = tokenize(&t.message, tokenizer.lowercase, None);
        if message.is_empty() {
            diag.dropped_empty_message += 1;
            continue;
        }
        let response = tokenize(&t.response, tokenizer.lowercase, None);
        if response.is_empty() {
            diag.dropped_empty_response += 1;
            continue;
        }
        let group = by_key
            .entry(message.text())
            .or_insert_with(|| ResponseGroup {
                message,
                message_raw: t.message.clone(),
                responses: Vec::new(),
                frequency: 0,
                flagged: false,
            });
        group.responses.push(response);
        group.frequency += 1;
    }
    let groups: Vec<ResponseGroup> = by_key
        .into_values()
        .map(|mut g| {
            g.flagged = g.frequency < min_responses;
            g
        })
        .collect();
    diag.groups = groups.len();
    diag.flagged = groups.iter().filter(|g| g.flagged).count();
    (groups, diag)
}

/// Inverse of grouping: one triple per stored response, context left empty.
pub fn flatten_groups(groups: &[ResponseGroup]) -> Vec<Triple> {
    groups
        .iter()
        .flat_map(|g| {
            g.responses
                .iter()
                .map(move |r| Triple::new("", &g.message_raw, &r.text()))
        })
        .collect()
}

/// On-disk form of a group: one JSONL record per distinct message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub message: String,
    pub message_raw: String,
    pub frequency: usize,
    pub flagged: bool,
    pub responses: Vec<String>,
}

impl From<&ResponseGroup> for GroupRecord {
    fn from(g: &ResponseGroup) -> Self {
        GroupRecord {
            message: g.message.text(),
            message_raw: g.message_raw.clone(),
            frequency: g.frequency,
            flagged: g.flagged,
            responses: g.responses.iter().map(TokenSeq::text).collect(),
        }
    }
}

impl From<GroupRecord> for ResponseGroup {
    fn from(r: GroupRecord) -> Self {
        let split = |s: &str| TokenSeq::new(s.split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect());
        ResponseGroup {
            message: split(&r.message),
            message_raw: r.message_raw,
            responses: r.responses.iter().map(|s| split(s)).collect(),
            frequency: r.frequency,
            flagged: r.flagged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    min_count: usize,
    tokens: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Ids are assigned in descending corpus frequency with ties broken
    /// lexicographically, after the reserved UNK and PAD ids.
    pub fn build(groups: &[ResponseGroup], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::validation("min_count", "must be at least 1"));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for g in groups {
            for seq in std::iter::once(&g.message).chain(&g.responses) {
                for t in &seq.tokens {
                    *freq.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|&(t, c)| c >= min_count as u64 && t != UNK_TOKEN && t != PAD_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens = vec![UNK_TOKEN.to_owned(), PAD_TOKEN.to_owned()];
        let mut counts = vec![0, 0];
        for (t, c) in kept {
            tokens.push(t.to_owned());
            counts.push(c);
        }
        Ok(Self::from_parts(min_count, tokens, counts))
    }

    fn from_parts(min_count: usize, tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            min_count,
            tokens,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// SHA-256 over the id-ordered token list.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Vocabulary = serde_json::from_str(s)?;
        if v.tokens.len() < 2 || v.tokens[0] != UNK_TOKEN || v.tokens[1] != PAD_TOKEN {
            return Err(Error::Input("vocabulary lacks reserved UNK/PAD ids".into()));
        }
        if v.counts.len() != v.tokens.len() {
            return Err(Error::Input("vocabulary counts/tokens length mismatch".into()));
        }
        Ok(Self::from_parts(v.min_count, v.tokens, v.counts))
    }
}
