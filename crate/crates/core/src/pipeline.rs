//! File-based stages over a workspace directory.
//!
//! Each stage reads the artifacts of earlier stages, writes its own under
//! `<workspace>/<stage>/`, and records a `manifest.json` with the SHA-256 of
//! every input and output, the effective configuration and the seed. Stages
//! never share state in memory, so any of them can be rerun on its own.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{
    baseline_length, baseline_mdf, predict, tune_length_threshold, tune_threshold, DfTable, Label, Threshold,
};
use crate::corpus::{
    group_by_message, parse_triples, tokenize, GroupRecord, GroupingDiagnostics, InputFormat, ParseDiagnostics,
    ResponseGroup, TokenSeq, TokenizerConfig, Vocabulary, PAD_ID,
};
use crate::error::{Error, Result};
use crate::eval::build_report;
use crate::linear::{
    decision_value, extract_ngram_features, kfold_cv, train_linear, CvResult, FeatureIndex, FeatureVector,
    LinearModel, LinearOptions, Mode, C_GRID,
};
use crate::lstm::{self, ForwardMode, LstmModelFile, LstmParams, SeqExample, TrainConfig};
use crate::signals::{histogram, histogram_csv, LengthCounting, NormalizationStats, SignalConfig, SignalTable};
use crate::synth::{generate_synthetic, SyntheticSpec};
use crate::weaklabel::{build_weak_dataset, combiner_features, from_jsonl, to_jsonl, LabeledMessage, WeakLabeledExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Ingest,
    Signals,
    TrainCombiner,
    Weaklabel,
    TrainLstm,
    TuneThreshold,
    Predict,
    Evaluate,
    Histogram,
}

impl Stage {
    /// Execution order of a full run.
    pub const ALL: [Stage; 10] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Signals,
        Stage::TrainCombiner,
        Stage::Weaklabel,
        Stage::TrainLstm,
        Stage::TuneThreshold,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Histogram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Signals => "signals",
            Stage::TrainCombiner => "train-combiner",
            Stage::Weaklabel => "weaklabel",
            Stage::TrainLstm => "train-lstm",
            Stage::TuneThreshold => "tune-threshold",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Histogram => "histogram",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::validation("stage", format!("unknown stage `{s}`")))
    }
}

/// Workspace-relative artifact paths.
pub mod paths {
    pub const SYNTH_CORPUS: &str = "synth/corpus.jsonl";
    pub const SYNTH_TRUTH: &str = "synth/truth.jsonl";
    pub const SYNTH_COMBINER: &str = "synth/combiner_labels.jsonl";
    pub const SYNTH_TUNE: &str = "synth/tune_labels.jsonl";
    pub const SYNTH_TEST: &str = "synth/test_labels.jsonl";
    pub const GROUPS: &str = "ingest/groups.jsonl";
    pub const VOCAB: &str = "ingest/vocab.json";
    pub const INGEST_DIAGNOSTICS: &str = "ingest/diagnostics.json";
    pub const SIGNALS: &str = "signals/signals.tsv";
    pub const STATS: &str = "signals/stats.json";
    pub const COMBINER: &str = "train-combiner/model.json";
    pub const COMBINER_CV: &str = "train-combiner/cv.json";
    pub const WEAK: &str = "weaklabel/dataset.jsonl";
    pub const WEAK_SUMMARY: &str = "weaklabel/summary.json";
    pub const LSTM: &str = "train-lstm/model.json";
    pub const LSTM_LOG: &str = "train-lstm/train_log.csv";
    pub const EVAL_CONFIG: &str = "tune-threshold/eval_config.json";
    pub const SVM_REGRESSION: &str = "tune-threshold/svm_regression.json";
    pub const SVM_NGRAM: &str = "tune-threshold/svm_ngram.json";
    pub const SVM_LENGTH_MDF: &str = "tune-threshold/svm_length_mdf.json";
    pub const REPORT_JSON: &str = "evaluate/report.json";
    pub const REPORT_TEXT: &str = "evaluate/report.txt";
    pub const LOCK: &str = ".ctxdep.lock";

    pub fn predictions(system: &str) -> String {
        format!("predict/{system}.tsv")
    }

    pub fn histogram(signal: &str) -> String {
        format!("histogram/{signal}.csv")
    }
}

/// Systems compared by `evaluate`, in report order.
pub const SYSTEMS: [&str; 6] = ["lstm", "svm_regression", "svm_ngram", "svm_length_mdf", "length", "mdf"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramWidths {
    pub entropy: f64,
    pub m_p: f64,
    pub avg_len: f64,
}

impl Default for HistogramWidths {
    fn default() -> Self {
        HistogramWidths {
            entropy: 0.05,
            m_p: 0.05,
            avg_len: 0.1,
        }
    }
}

/// Everything a run needs. Unset input paths fall back to the outputs of the
/// `synth` stage. The top-level `seed` overrides the seeds of the nested
/// `synth` and `lstm` sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub format: InputFormat,
    pub lowercase: bool,
    pub stopwords: Option<PathBuf>,
    pub min_count: usize,
    pub min_responses: usize,
    pub length_counting: LengthCounting,
    pub combiner_labels: Option<PathBuf>,
    pub tune_labels: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    #[serde(rename = "C_grid")]
    pub c_grid: Vec<f64>,
    pub cv_folds: usize,
    pub svm_epochs: usize,
    pub epsilon: f64,
    pub lstm: TrainConfig,
    pub synth: SyntheticSpec,
    pub histogram: HistogramWidths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            corpus: None,
            format: InputFormat::Jsonl,
            lowercase: true,
            stopwords: None,
            min_count: 1,
            min_responses: 2,
            length_counting: LengthCounting::RawTokens,
            combiner_labels: None,
            tune_labels: None,
            test_labels: None,
            c_grid: C_GRID.to_vec(),
            cv_folds: 5,
            svm_epochs: 100,
            epsilon: 0.1,
            lstm: TrainConfig::default(),
            synth: SyntheticSpec::default(),
            histogram: HistogramWidths::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses JSON, reporting the path of the offending field on failure, then
    /// validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::validation(field, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let nested = |prefix: &str, e: Error| match e {
            Error::Validation { field, message } => Error::validation(format!("{prefix}.{field}"), message),
            other => other,
        };
        self.lstm.validate().map_err(|e| nested("lstm", e))?;
        if !(self.lstm.learning_rate > 0.0) {
            return Err(Error::validation("lstm.learning_rate", "must be positive"));
        }
        if self.lstm.epochs == 0 {
            return Err(Error::validation("lstm.epochs", "must be at least 1"));
        }
        self.synth.validate().map_err(|e| nested("synth", e))?;
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::validation("C_grid", "needs at least one positive finite value"));
        }
        if self.cv_folds < 2 {
            return Err(Error::validation("cv_folds", "must be at least 2"));
        }
        if self.svm_epochs == 0 {
            return Err(Error::validation("svm_epochs", "must be at least 1"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::validation("epsilon", "must be non-negative"));
        }
        if self.min_count == 0 {
            return Err(Error::validation("min_count", "must be at least 1"));
        }
        if self.min_responses == 0 {
            return Err(Error::validation("min_responses", "must be at least 1"));
        }
        let h = self.histogram;
        for (field, w) in [("entropy", h.entropy), ("m_p", h.m_p), ("avg_len", h.avg_len)] {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::validation(format!("histogram.{field}"), "bin width must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Copy with the top-level seed pushed into every seeded section.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.synth.seed = c.seed;
        c.lstm.seed = c.seed;
        c
    }

    fn linear_options(&self) -> LinearOptions {
        LinearOptions {
            epochs: self.svm_epochs,
            epsilon: self.epsilon,
            seed: self.seed,
        }
    }

    fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig {
            lowercase: self.lowercase,
            stopwords: HashSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    /// Path to SHA-256; workspace paths are relative to the workspace.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Outputs excluded from hashing because they record wall-clock time.
    pub logs: Vec<String>,
    pub config: serde_json::Value,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(stage: Stage) -> String {
    format!("{}/manifest.json", stage.name())
}

/// Advisory lock held for the duration of a stage.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(workspace: &Path) -> Result<Self> {
        fs::create_dir_all(workspace).map_err(|e| Error::io(workspace, e))?;
        let path = workspace.join(paths::LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WorkspaceLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

struct StageRun<'a> {
    stage: Stage,
    root: &'a Path,
    config: &'a PipelineConfig,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    logs: Vec<String>,
}

impl<'a> StageRun<'a> {
    fn new(stage: Stage, root: &'a Path, config: &'a PipelineConfig) -> Self {
        StageRun {
            stage,
            root,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            logs: Vec::new(),
        }
    }

    /// Reads a workspace artifact produced by `producer`.
    fn artifact(&mut self, rel: &str, producer: Stage) -> Result<String> {
        let path = self.root.join(rel);
        match fs::read_to_string(&path) {
            Ok(text) => {
                self.inputs.insert(rel.to_owned(), sha256_hex(text.as_bytes()));
                Ok(text)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::Dependency {
                stage: producer.name(),
                artifact: path,
            }),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Reads a user-supplied file.
    fn external(&mut self, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(text.as_bytes()));
        Ok(text)
    }

    /// A configured path, or the synth output standing in for it.
    fn input_or_synth(&mut self, configured: Option<&PathBuf>, synth_rel: &str) -> Result<String> {
        match configured {
            Some(p) => self.external(p),
            None => self.artifact(synth_rel, Stage::Synth),
        }
    }

    fn write(&mut self, rel: &str, content: &str) -> Result<()> {
        self.write_file(rel, content)?;
        self.outputs.insert(rel.to_owned(), sha256_hex(content.as_bytes()));
        Ok(())
    }

    fn write_log(&mut self, rel: &str, content: &str) -> Result<()> {
        self.write_file(rel, content)?;
        self.logs.push(rel.to_owned());
        Ok(())
    }

    fn write_file(&self, rel: &str, content: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, content).map_err(|e| Error::io(path, e))
    }

    fn finish(mut self) -> Result<Manifest> {
        let manifest = Manifest {
            stage: self.stage.name().to_owned(),
            seed: self.config.seed,
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
            logs: std::mem::take(&mut self.logs),
            config: serde_json::to_value(self.config)?,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        self.write_file(&manifest_path(self.stage), &serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

/// Runs one stage under the workspace lock.
pub fn run_stage(workspace: &Path, stage: Stage, config: &PipelineConfig) -> Result<Manifest> {
    config.validate()?;
    let _lock = WorkspaceLock::acquire(workspace)?;
    let config = config.effective();
    let mut run = StageRun::new(stage, workspace, &config);
    match stage {
        Stage::Synth => synth(&mut run)?,
        Stage::Ingest => ingest(&mut run)?,
        Stage::Signals => signals(&mut run)?,
        Stage::TrainCombiner => train_combiner(&mut run)?,
        Stage::Weaklabel => weaklabel(&mut run)?,
        Stage::TrainLstm => train_lstm(&mut run)?,
        Stage::TuneThreshold => tune(&mut run)?,
        Stage::Predict => predict_stage(&mut run)?,
        Stage::Evaluate => evaluate(&mut run)?,
        Stage::Histogram => histograms(&mut run)?,
    }
    run.finish()
}

/// Runs `stages` in order, stopping at the first failure.
pub fn run_stages(workspace: &Path, stages: &[Stage], config: &PipelineConfig) -> Result<Vec<Manifest>> {
    stages.iter().map(|&s| run_stage(workspace, s, config)).collect()
}

fn synth(run: &mut StageRun<'_>) -> Result<()> {
    let corpus = generate_synthetic(&run.config.synth)?;
    corpus.ensure_disjoint()?;
    run.write(paths::SYNTH_CORPUS, &corpus.corpus_jsonl()?)?;
    run.write(paths::SYNTH_TRUTH, &to_jsonl(&corpus.truth)?)?;
    run.write(paths::SYNTH_COMBINER, &to_jsonl(&corpus.combiner)?)?;
    run.write(paths::SYNTH_TUNE, &to_jsonl(&corpus.tune)?)?;
    run.write(paths::SYNTH_TEST, &to_jsonl(&corpus.test)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestDiagnostics {
    pub parse: ParseDiagnostics,
    pub grouping: GroupingDiagnostics,
    pub vocabulary: usize,
}

fn ingest(run: &mut StageRun<'_>) -> Result<()> {
    let cfg = run.config;
    let text = run.input_or_synth(cfg.corpus.as_ref(), paths::SYNTH_CORPUS)?;
    let (triples, parse) = parse_triples(BufReader::new(text.as_bytes()), cfg.format)?;
    let (groups, grouping) = group_by_message(&triples, &cfg.tokenizer(), cfg.min_responses);
    let vocab = Vocabulary::build(&groups, cfg.min_count)?;
    let records: Vec<GroupRecord> = groups.iter().map(GroupRecord::from).collect();
    run.write(paths::GROUPS, &to_jsonl(&records)?)?;
    run.write(paths::VOCAB, &vocab.to_json()?)?;
    let diag = IngestDiagnostics {
        parse,
        grouping,
        vocabulary: vocab.len(),
    };
    run.write(paths::INGEST_DIAGNOSTICS, &serde_json::to_string_pretty(&diag)?)
}

fn load_groups(run: &mut StageRun<'_>) -> Result<Vec<ResponseGroup>> {
    let text = run.artifact(paths::GROUPS, Stage::Ingest)?;
    Ok(from_jsonl::<GroupRecord>(&text)?.into_iter().map(ResponseGroup::from).collect())
}

fn load_vocab(run: &mut StageRun<'_>) -> Result<Vocabulary> {
    Vocabulary::from_json(&run.artifact(paths::VOCAB, Stage::Ingest)?)
}

fn signal_config(run: &mut StageRun<'_>) -> Result<SignalConfig> {
    let stopwords = match run.config.stopwords.clone() {
        Some(path) => {
            run.external(&path)?;
            TokenizerConfig::load_stopwords(&path, run.config.lowercase)?
        }
        None => HashSet::new(),
    };
    Ok(SignalConfig {
        stopwords,
        counting: run.config.length_counting,
    })
}

fn load_signals(run: &mut StageRun<'_>, n_groups: usize) -> Result<SignalTable> {
    let stats: NormalizationStats = serde_json::from_str(&run.artifact(paths::STATS, Stage::Signals)?)?;
    let tsv = run.artifact(paths::SIGNALS, Stage::Signals)?;
    SignalTable::from_tsv(&tsv, n_groups, stats)
}

fn signals(run: &mut StageRun<'_>) -> Result<()> {
    let groups = load_groups(run)?;
    let config = signal_config(run)?;
    let table = SignalTable::compute(&groups, &config);
    run.write(paths::SIGNALS, &table.to_tsv())?;
    run.write(paths::STATS, &serde_json::to_string_pretty(&table.stats)?)
}

fn labels_file(run: &mut StageRun<'_>, configured: Option<PathBuf>, synth_rel: &str) -> Result<Vec<LabeledMessage>> {
    let text = run.input_or_synth(configured.as_ref(), synth_rel)?;
    let labeled: Vec<LabeledMessage> = from_jsonl(&text)?;
    if labeled.is_empty() {
        return Err(Error::Input(format!("no labeled messages in {synth_rel} (or its configured override)")));
    }
    Ok(labeled)
}

/// Labeled messages that have a signal row, as combiner training examples.
fn signal_examples(
    labeled: &[LabeledMessage],
    groups: &[ResponseGroup],
    table: &SignalTable,
    tokenizer: &TokenizerConfig,
) -> Vec<(FeatureVector, f64, usize)> {
    let index: HashMap<String, usize> = groups.iter().enumerate().map(|(i, g)| (g.key(), i)).collect();
    labeled
        .iter()
        .filter_map(|m| {
            let key = tokenize(&m.message, tokenizer.lowercase, None).text();
            let gi = *index.get(&key)?;
            let s = table.rows[gi].as_ref().ok()?;
            Some((combiner_features(s), m.label.sign(), gi))
        })
        .collect()
}

fn train_combiner(run: &mut StageRun<'_>) -> Result<()> {
    let groups = load_groups(run)?;
    let table = load_signals(run, groups.len())?;
    let labeled = labels_file(run, run.config.combiner_labels.clone(), paths::SYNTH_COMBINER)?;
    let examples: Vec<(FeatureVector, f64)> = signal_examples(&labeled, &groups, &table, &run.config.tokenizer())
        .into_iter()
        .map(|(x, y, _)| (x, y))
        .collect();
    if examples.len() < run.config.cv_folds {
        return Err(Error::Input(format!(
            "only {} of {} labeled messages have signals; need at least {}",
            examples.len(),
            labeled.len(),
            run.config.cv_folds
        )));
    }
    let options = run.config.linear_options();
    let cv = kfold_cv(&examples, 3, Mode::Classification, run.config.cv_folds, &run.config.c_grid, &options)?;
    let fit = train_linear(&examples, 3, Mode::Classification, cv.best_c, &options)?;
    let mut model = fit.model;
    model.feature_index =
        FeatureIndex::from_names(vec!["entropy_norm".into(), "m_p".into(), "avg_len_norm".into()]);
    run.write(paths::COMBINER, &model.to_json()?)?;
    run.write(paths::COMBINER_CV, &serde_json::to_string_pretty(&cv)?)
}

fn weaklabel(run: &mut StageRun<'_>) -> Result<()> {
    let groups = load_groups(run)?;
    let vocab = load_vocab(run)?;
    let stats: Option<NormalizationStats> = match run.artifact(paths::STATS, Stage::Signals) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(Error::Dependency { .. }) => None,
        Err(e) => return Err(e),
    };
    let combiner = LinearModel::from_json(&run.artifact(paths::COMBINER, Stage::TrainCombiner)?)?;
    let config = signal_config(run)?;
    let (data, summary) = build_weak_dataset(&groups, stats.as_ref(), &config, &combiner, &vocab)?;
    run.write(paths::WEAK, &to_jsonl(&data)?)?;
    run.write(paths::WEAK_SUMMARY, &serde_json::to_string_pretty(&summary)?)
}

fn load_weak(run: &mut StageRun<'_>) -> Result<Vec<WeakLabeledExample>> {
    from_jsonl(&run.artifact(paths::WEAK, Stage::Weaklabel)?)
}

fn train_lstm(run: &mut StageRun<'_>) -> Result<()> {
    let vocab = load_vocab(run)?;
    let data: Vec<SeqExample> = load_weak(run)?
        .iter()
        .filter(|e| !e.ids.is_empty())
        .map(WeakLabeledExample::to_seq_example)
        .collect();
    if data.is_empty() {
        return Err(Error::Input("weak dataset is empty".into()));
    }
    let outcome = lstm::train(&data, vocab.len(), &run.config.lstm)?;
    let file = LstmModelFile::new(&outcome.params, &vocab.fingerprint(), &run.config.lstm);
    run.write(paths::LSTM, &file.to_json()?)?;
    run.write_log(paths::LSTM_LOG, &outcome.log_csv())
}

/// Token ids for the LSTM; an empty message is read as a single padding token.
pub fn lstm_ids(msg: &TokenSeq, vocab: &Vocabulary) -> Vec<u32> {
    let ids = vocab.encode(&msg.tokens);
    if ids.is_empty() {
        vec![PAD_ID]
    } else {
        ids
    }
}

pub fn lstm_scores(params: &LstmParams, messages: &[TokenSeq], vocab: &Vocabulary) -> Result<Vec<f64>> {
    messages
        .iter()
        .map(|m| lstm::forward(params, &lstm_ids(m, vocab), &mut ForwardMode::Eval))
        .collect()
}

fn length_mdf_features(msg: &TokenSeq, df: &DfTable) -> FeatureVector {
    FeatureVector::dense(&[msg.len() as f64, (1.0 + df.min_df(msg) as f64).ln()])
}

fn ngram_examples(
    messages: &[(TokenSeq, Option<Vec<String>>)],
    index: &FeatureIndex,
) -> Result<Vec<FeatureVector>> {
    messages
        .iter()
        .map(|(m, tags)| extract_ngram_features(m, tags.as_deref(), index))
        .collect()
}

/// Thresholds and model choices fixed on the tuning set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub tune_size: usize,
    /// Keyed by system name; the SVM classifiers use their sign instead.
    pub thresholds: BTreeMap<String, Threshold>,
    /// Tuned accuracy of the regression baseline for every C, in grid order.
    pub svm_regression_grid: Vec<(f64, f64)>,
    pub svm_ngram_cv: CvResult,
    pub svm_length_mdf_cv: CvResult,
}

struct Loaded {
    vocab: Vocabulary,
    params: LstmParams,
    df: DfTable,
}

fn load_for_scoring(run: &mut StageRun<'_>) -> Result<Loaded> {
    let vocab = load_vocab(run)?;
    let groups = load_groups(run)?;
    let file = LstmModelFile::from_json(&run.artifact(paths::LSTM, Stage::TrainLstm)?)?;
    if file.vocab_hash != vocab.fingerprint() {
        return Err(Error::Input("LSTM model was trained against a different vocabulary; rerun train-lstm".into()));
    }
    Ok(Loaded {
        vocab,
        params: file.params()?,
        df: DfTable::build(groups.iter().map(|g| &g.message)),
    })
}

fn tokenized(labeled: &[LabeledMessage], lowercase: bool) -> Vec<(TokenSeq, Option<Vec<String>>)> {
    labeled
        .iter()
        .map(|m| (tokenize(&m.message, lowercase, None), m.tags.clone()))
        .collect()
}

fn tune(run: &mut StageRun<'_>) -> Result<()> {
    let cfg = run.config;
    let loaded = load_for_scoring(run)?;
    let weak = load_weak(run)?;
    let labeled = labels_file(run, cfg.tune_labels.clone(), paths::SYNTH_TUNE)?;
    let msgs = tokenized(&labeled, cfg.lowercase);
    let seqs: Vec<TokenSeq> = msgs.iter().map(|(m, _)| m.clone()).collect();
    let labels: Vec<Label> = labeled.iter().map(|m| m.label).collect();
    let options = cfg.linear_options();
    let mut thresholds = BTreeMap::new();

    let scores = lstm_scores(&loaded.params, &seqs, &loaded.vocab)?;
    thresholds.insert("lstm".to_owned(), tune_threshold(&scores, &labels, "lstm")?);
    let lengths: Vec<usize> = seqs.iter().map(TokenSeq::len).collect();
    thresholds.insert("length".to_owned(), tune_length_threshold(&lengths, &labels, "length")?);
    let mdf: Vec<f64> = seqs.iter().map(|m| loaded.df.min_df(m) as f64).collect();
    thresholds.insert("mdf".to_owned(), tune_threshold(&mdf, &labels, "mdf")?);

    // Regression on n-grams against the weak labels; C picked by tuned accuracy.
    let weak_msgs: Vec<(TokenSeq, Option<Vec<String>>)> = weak.iter().map(|e| (e.tokens(), None)).collect();
    let index = FeatureIndex::build(weak_msgs.iter().map(|(m, _)| (m, None)));
    let train: Vec<(FeatureVector, f64)> =
        ngram_examples(&weak_msgs, &index)?.into_iter().zip(weak.iter().map(|e| e.y)).collect();
    let tune_x = ngram_examples(&msgs, &index)?;
    let mut grid = cfg.c_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(LinearModel, Threshold)> = None;
    let mut reg_grid = Vec::new();
    for &c in &grid {
        let model = train_linear(&train, index.len(), Mode::Regression, c, &options)?.model;
        let s: Vec<f64> = tune_x.iter().map(|x| decision_value(&model, x)).collect();
        let t = tune_threshold(&s, &labels, "svm_regression")?;
        reg_grid.push((c, t.tuned_accuracy));
        if best.as_ref().is_none_or(|(_, b)| t.tuned_accuracy > b.tuned_accuracy) {
            best = Some((model, t));
        }
    }
    let (mut reg_model, reg_t) = best.ok_or_else(|| Error::validation("C_grid", "empty grid"))?;
    reg_model.feature_index = index;
    thresholds.insert("svm_regression".to_owned(), reg_t);
    run.write(paths::SVM_REGRESSION, &reg_model.to_json()?)?;

    // Classifiers trained on the tuning set itself, C by cross-validation.
    let ngram_index = FeatureIndex::build(msgs.iter().map(|(m, t)| (m, t.as_deref())));
    let ngram_train: Vec<(FeatureVector, f64)> = ngram_examples(&msgs, &ngram_index)?
        .into_iter()
        .zip(labels.iter().map(|l| l.sign()))
        .collect();
    let (ngram_model, ngram_cv) = cv_then_fit(&ngram_train, ngram_index, cfg)?;
    run.write(paths::SVM_NGRAM, &ngram_model.to_json()?)?;

    let lm_train: Vec<(FeatureVector, f64)> = seqs
        .iter()
        .map(|m| length_mdf_features(m, &loaded.df))
        .zip(labels.iter().map(|l| l.sign()))
        .collect();
    let lm_index = FeatureIndex::from_names(vec!["length".into(), "ln_1p_min_df".into()]);
    let (lm_model, lm_cv) = cv_then_fit(&lm_train, lm_index, cfg)?;
    run.write(paths::SVM_LENGTH_MDF, &lm_model.to_json()?)?;

    let eval = EvalConfig {
        tune_size: labeled.len(),
        thresholds,
        svm_regression_grid: reg_grid,
        svm_ngram_cv: ngram_cv,
        svm_length_mdf_cv: lm_cv,
    };
    run.write(paths::EVAL_CONFIG, &serde_json::to_string_pretty(&eval)?)
}

fn cv_then_fit(
    examples: &[(FeatureVector, f64)],
    index: FeatureIndex,
    cfg: &PipelineConfig,
) -> Result<(LinearModel, CvResult)> {
    let options = cfg.linear_options();
    let dim = index.len().max(1);
    let cv = kfold_cv(examples, dim, Mode::Classification, cfg.cv_folds, &cfg.c_grid, &options)?;
    let mut model = train_linear(examples, dim, Mode::Classification, cv.best_c, &options)?.model;
    model.feature_index = index;
    Ok((model, cv))
}

/// Predictions TSV: `message_id`, `prediction` (`1` or `-1`).
pub fn predictions_tsv(preds: &[Label]) -> String {
    let mut out = String::from("message_id\tprediction\n");
    for (i, p) in preds.iter().enumerate() {
        out.push_str(&format!("{i}\t{}\n", i8::from(*p)));
    }
    out
}

pub fn parse_predictions_tsv(text: &str) -> Result<Vec<Label>> {
    let mut rows: Vec<(usize, Label)> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Input(format!("predictions line {}: expected `message_id<TAB>prediction`", lineno + 1));
        let (id, p) = line.split_once('\t').ok_or_else(bad)?;
        let id: usize = id.trim().parse().map_err(|_| bad())?;
        let p: i8 = p.trim().parse().map_err(|_| bad())?;
        rows.push((id, Label::try_from(p).map_err(|_| bad())?));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(Error::Input("prediction message ids must be 0..n without gaps".into()));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

fn predict_stage(run: &mut StageRun<'_>) -> Result<()> {
    let cfg = run.config;
    let loaded = load_for_scoring(run)?;
    let eval: EvalConfig = serde_json::from_str(&run.artifact(paths::EVAL_CONFIG, Stage::TuneThreshold)?)?;
    let reg = LinearModel::from_json(&run.artifact(paths::SVM_REGRESSION, Stage::TuneThreshold)?)?;
    let ngram = LinearModel::from_json(&run.artifact(paths::SVM_NGRAM, Stage::TuneThreshold)?)?;
    let lm = LinearModel::from_json(&run.artifact(paths::SVM_LENGTH_MDF, Stage::TuneThreshold)?)?;
    let labeled = labels_file(run, cfg.test_labels.clone(), paths::SYNTH_TEST)?;
    let msgs = tokenized(&labeled, cfg.lowercase);
    let seqs: Vec<TokenSeq> = msgs.iter().map(|(m, _)| m.clone()).collect();
    let threshold = |name: &str| {
        eval.thresholds
            .get(name)
            .ok_or_else(|| Error::Input(format!("eval config has no `{name}` threshold")))
    };
    let sign = Threshold::fixed(0.0);

    let mut out: Vec<(&str, Vec<Label>)> = Vec::new();
    let t = threshold("lstm")?;
    let scores = lstm_scores(&loaded.params, &seqs, &loaded.vocab)?;
    out.push(("lstm", scores.iter().map(|&s| predict(s, t)).collect()));
    let t = threshold("svm_regression")?;
    let xs = ngram_examples(&msgs, &reg.feature_index)?;
    out.push(("svm_regression", xs.iter().map(|x| predict(decision_value(&reg, x), t)).collect()));
    let xs = ngram_examples(&msgs, &ngram.feature_index)?;
    out.push(("svm_ngram", xs.iter().map(|x| predict(decision_value(&ngram, x), &sign)).collect()));
    out.push((
        "svm_length_mdf",
        seqs.iter()
            .map(|m| predict(decision_value(&lm, &length_mdf_features(m, &loaded.df)), &sign))
            .collect(),
    ));
    let t = threshold("length")?;
    out.push(("length", seqs.iter().map(|m| baseline_length(m, t)).collect()));
    let t = threshold("mdf")?;
    out.push(("mdf", seqs.iter().map(|m| baseline_mdf(m, &loaded.df, t)).collect()));

    for (name, preds) in out {
        run.write(&paths::predictions(name), &predictions_tsv(&preds))?;
    }
    Ok(())
}

fn evaluate(run: &mut StageRun<'_>) -> Result<()> {
    let labeled = labels_file(run, run.config.test_labels.clone(), paths::SYNTH_TEST)?;
    let labels: Vec<Label> = labeled.iter().map(|m| m.label).collect();
    let mut systems = Vec::new();
    for name in SYSTEMS {
        let preds = parse_predictions_tsv(&run.artifact(&paths::predictions(name), Stage::Predict)?)?;
        systems.push((name.to_owned(), preds));
    }
    let dataset = match &run.config.test_labels {
        Some(p) => p.display().to_string(),
        None => paths::SYNTH_TEST.to_owned(),
    };
    let report = build_report(&systems, &labels, &dataset)?;
    run.write(paths::REPORT_JSON, &report.to_json()?)?;
    run.write(paths::REPORT_TEXT, &report.to_text())
}

fn histograms(run: &mut StageRun<'_>) -> Result<()> {
    let groups = load_groups(run)?;
    let table = load_signals(run, groups.len())?;
    let labeled = labels_file(run, run.config.combiner_labels.clone(), paths::SYNTH_COMBINER)?;
    let rows = signal_examples(&labeled, &groups, &table, &run.config.tokenizer());
    let labels: Vec<i8> = rows.iter().map(|(_, y, _)| *y as i8).collect();
    let signal = |gi: usize| table.rows[gi].as_ref().expect("filtered to rows with signals");
    let w = run.config.histogram;
    let columns: [(&str, f64, Box<dyn Fn(usize) -> f64>); 3] = [
        ("entropy", w.entropy, Box::new(|gi| signal(gi).entropy_norm)),
        ("m_p", w.m_p, Box::new(|gi| signal(gi).m_p)),
        ("avg_len", w.avg_len, Box::new(|gi| signal(gi).avg_len_norm)),
    ];
    for (name, width, value) in columns {
        let values: Vec<f64> = rows.iter().map(|(_, _, gi)| value(*gi)).collect();
        run.write(&paths::histogram(name), &histogram_csv(&histogram(&values, &labels, width)?))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("train".parse::<Stage>().is_err());
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = PipelineConfig::from_json(r#"{"lstm": {"dropout_rate": "high"}}"#).unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "lstm.dropout_rate"), "{err}");
        let err = PipelineConfig::from_json(r#"{"lstm": {"learning_rate": 0}}"#).unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "lstm.learning_rate"), "{err}");
        let err = PipelineConfig::from_json(r#"{"synth": {"dependent_fraction": 2}}"#).unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "synth.dependent_fraction"), "{err}");
        let err = PipelineConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(matches!(&err, Error::Validation { .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn effective_config_propagates_seed() {
        let c = PipelineConfig::default().with_seed(9).effective();
        assert_eq!((c.synth.seed, c.lstm.seed), (9, 9));
    }

    #[test]
    fn predictions_round_trip() {
        let preds = vec![Label::Dependent, Label::Independent, Label::Independent];
        assert_eq!(parse_predictions_tsv(&predictions_tsv(&preds)).unwrap(), preds);
        assert!(parse_predictions_tsv("message_id\tprediction\n1\t1\n").is_err());
        assert!(parse_predictions_tsv("message_id\tprediction\n0\t2\n").is_err());
    }

    #[test]
    fn missing_upstream_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_stage(dir.path(), Stage::Signals, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Dependency { stage: "ingest", .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
        assert!(!dir.path().join(paths::LOCK).exists());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let held = WorkspaceLock::acquire(dir.path()).unwrap();
        let err = run_stage(dir.path(), Stage::Synth, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Locked(_)));
        drop(held);
        assert!(WorkspaceLock::acquire(dir.path()).is_ok());
    }
}
