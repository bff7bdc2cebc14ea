//! Seeded synthetic corpus with known labels, for end-to-end runs.
//!
//! Every message is a handful of filler words plus one cue word. Cue words are
//! split into a dependent pool and an independent pool, and the message label
//! follows the pool its cue came from. Dependent messages receive long
//! responses drawn near-uniformly from a large vocabulary; independent messages
//! receive short stock phrases from a small one. Message lengths have the same
//! distribution in both classes and each cue pool is sized in proportion to its
//! class share, so the length and document-frequency baselines get little to
//! work with.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::Label;
use crate::corpus::Triple;
use crate::error::{Error, Result};
use crate::weaklabel::LabeledMessage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_messages: usize,
    pub dependent_fraction: f64,
    pub min_responses: usize,
    pub max_responses: usize,
    /// Words per message excluding the cue.
    pub min_fillers: usize,
    pub max_fillers: usize,
    pub filler_vocab: usize,
    /// Cue words across both classes.
    pub cue_vocab: usize,
    /// Vocabulary of the diverse (dependent) response generator.
    pub diverse_vocab: usize,
    pub diverse_len: (usize, usize),
    /// Vocabulary of the concentrated (independent) response generator.
    pub concentrated_vocab: usize,
    pub phrase_pool: usize,
    pub phrases_per_message: usize,
    /// Probability that a response comes from the other class's generator.
    pub noise: f64,
    /// Corpus messages labeled for training the signal combiner.
    pub n_combiner: usize,
    /// Fresh messages, not in the corpus, for threshold tuning and testing.
    pub n_tune: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_messages: 2000,
            dependent_fraction: 0.3,
            min_responses: 10,
            max_responses: 20,
            min_fillers: 1,
            max_fillers: 5,
            filler_vocab: 150,
            cue_vocab: 40,
            diverse_vocab: 400,
            diverse_len: (4, 10),
            concentrated_vocab: 30,
            phrase_pool: 40,
            phrases_per_message: 2,
            noise: 0.05,
            n_combiner: 200,
            n_tune: 200,
            n_test: 500,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error as E;
        let v = |f: &str, m: &str| Err(E::validation(f, m));
        if !(0.0..=1.0).contains(&self.dependent_fraction) {
            return v("dependent_fraction", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return v("noise", "must lie in [0, 1]");
        }
        if self.min_responses == 0 || self.min_responses > self.max_responses {
            return v("min_responses", "need 1 <= min_responses <= max_responses");
        }
        if self.min_fillers > self.max_fillers {
            return v("min_fillers", "must not exceed max_fillers");
        }
        if self.diverse_len.0 == 0 || self.diverse_len.0 > self.diverse_len.1 {
            return v("diverse_len", "need 1 <= low <= high");
        }
        if self.cue_vocab < 2 || self.filler_vocab == 0 || self.diverse_vocab == 0 || self.concentrated_vocab == 0 {
            return v("cue_vocab", "vocabulary sizes must be positive (cue_vocab >= 2)");
        }
        if self.phrase_pool == 0 || self.phrases_per_message == 0 || self.phrases_per_message > self.phrase_pool {
            return v("phrases_per_message", "need 1 <= phrases_per_message <= phrase_pool");
        }
        if self.n_combiner > self.n_messages {
            return v("n_combiner", "cannot exceed n_messages");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub triples: Vec<Triple>,
    /// Ground truth for every corpus message, in generation order.
    pub truth: Vec<LabeledMessage>,
    pub combiner: Vec<LabeledMessage>,
    pub tune: Vec<LabeledMessage>,
    pub test: Vec<LabeledMessage>,
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
    dep_cues: Vec<String>,
    indep_cues: Vec<String>,
    phrases: Vec<String>,
    seen: HashSet<String>,
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

impl Generator<'_> {
    fn message(&mut self, dependent: bool) -> String {
        let spec = self.spec;
        loop {
            let n = self.rng.random_range(spec.min_fillers..=spec.max_fillers);
            let mut toks: Vec<String> = (0..n)
                .map(|_| format!("m{}", self.rng.random_range(0..spec.filler_vocab)))
                .collect();
            let pool = if dependent { &self.dep_cues } else { &self.indep_cues };
            let cue = pool.choose(&mut self.rng).expect("cue pools are non-empty").clone();
            let at = self.rng.random_range(0..=toks.len());
            toks.insert(at, cue);
            let text = toks.join(" ");
            if self.seen.insert(text.clone()) {
                return text;
            }
        }
    }

    fn diverse_response(&mut self) -> String {
        let (lo, hi) = self.spec.diverse_len;
        let n = self.rng.random_range(lo..=hi);
        (0..n)
            .map(|_| format!("r{}", self.rng.random_range(0..self.spec.diverse_vocab)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn labeled(&mut self, dependents: usize, total: usize) -> Vec<LabeledMessage> {
        let mut flags: Vec<bool> = (0..total).map(|i| i < dependents).collect();
        flags.shuffle(&mut self.rng);
        flags
            .into_iter()
            .map(|d| LabeledMessage {
                message: self.message(d),
                label: Label::from_positive(d),
                tags: None,
            })
            .collect()
    }
}

fn class_count(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction).round() as usize
}

/// Generates the corpus, its ground truth, and the three labeled sets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let n_dep_cues = class_count(spec.cue_vocab, spec.dependent_fraction).clamp(1, spec.cue_vocab - 1);
    let cues = words("q", spec.cue_vocab);
    let concentrated = words("c", spec.concentrated_vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phrases: Vec<String> = (0..spec.phrase_pool)
        .map(|_| {
            let n = rng.random_range(1..=3);
            (0..n)
                .map(|_| concentrated.choose(&mut rng).expect("non-empty").as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let mut g = Generator {
        spec,
        rng,
        dep_cues: cues[..n_dep_cues].to_vec(),
        indep_cues: cues[n_dep_cues..].to_vec(),
        phrases,
        seen: HashSet::new(),
    };

    let truth = g.labeled(class_count(spec.n_messages, spec.dependent_fraction), spec.n_messages);
    let mut triples = Vec::new();
    for m in &truth {
        let dependent = m.label.is_positive();
        let own: Vec<String> = g
            .phrases
            .choose_multiple(&mut g.rng, spec.phrases_per_message)
            .cloned()
            .collect();
        let n = g.rng.random_range(spec.min_responses..=spec.max_responses);
        for _ in 0..n {
            let diverse = dependent != (g.rng.random::<f64>() < spec.noise);
            let response = if diverse {
                g.diverse_response()
            } else if g.rng.random::<f64>() < 0.7 {
                own[0].clone()
            } else {
                own.choose(&mut g.rng).expect("non-empty").clone()
            };
            triples.push(Triple::new("", &m.message, &response));
        }
    }

    let mut picks: Vec<usize> = (0..truth.len()).collect();
    picks.shuffle(&mut g.rng);
    picks.truncate(spec.n_combiner);
    picks.sort_unstable();
    let combiner = picks.into_iter().map(|i| truth[i].clone()).collect();

    let tune = g.labeled(class_count(spec.n_tune, spec.dependent_fraction), spec.n_tune);
    let test = g.labeled(class_count(spec.n_test, spec.dependent_fraction), spec.n_test);
    Ok(SyntheticCorpus {
        triples,
        truth,
        combiner,
        tune,
        test,
    })
}

impl SyntheticCorpus {
    pub fn corpus_jsonl(&self) -> Result<String> {
        crate::weaklabel::to_jsonl(&self.triples)
    }

    pub fn ensure_disjoint(&self) -> Result<()> {
        let corpus: HashSet<&str> = self.truth.iter().map(|m| m.message.as_str()).collect();
        for m in self.tune.iter().chain(&self.test) {
            if corpus.contains(m.message.as_str()) {
                return Err(Error::Input(format!("held-out message `{}` also in corpus", m.message)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{group_by_message, TokenizerConfig};
    use crate::signals::{raw_signals, SignalConfig};

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_messages: 200,
            n_combiner: 20,
            n_tune: 20,
            n_test: 50,
            ..Default::default()
        }
    }

    #[test]
    fn all_independent() {
        let c = generate_synthetic(&SyntheticSpec {
            dependent_fraction: 0.0,
            ..small()
        })
        .unwrap();
        assert!(c.truth.iter().chain(&c.tune).chain(&c.test).all(|m| m.label == Label::Independent));
    }

    #[test]
    fn shape_and_determinism() {
        let spec = small();
        let a = generate_synthetic(&spec).unwrap();
        assert_eq!(a, generate_synthetic(&spec).unwrap());
        assert_ne!(a.triples, generate_synthetic(&SyntheticSpec { seed: 1, ..spec.clone() }).unwrap().triples);
        assert_eq!(a.truth.len(), 200);
        assert_eq!(a.truth.iter().filter(|m| m.label.is_positive()).count(), 60);
        assert_eq!((a.combiner.len(), a.tune.len(), a.test.len()), (20, 20, 50));
        a.ensure_disjoint().unwrap();
        let groups = group_by_message(&a.triples, &TokenizerConfig::default(), 2).0;
        assert_eq!(groups.len(), 200);
        assert!(groups.iter().all(|g| (10..=20).contains(&g.responses.len())));
    }

    #[test]
    fn dependent_messages_have_higher_entropy() {
        let c = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let groups = group_by_message(&c.triples, &TokenizerConfig::default(), 2).0;
        let truth: std::collections::HashMap<&str, bool> =
            c.truth.iter().map(|m| (m.message.as_str(), m.label.is_positive())).collect();
        let (mut dep, mut ind) = (Vec::new(), Vec::new());
        for g in &groups {
            let h = raw_signals(g, &SignalConfig::default()).unwrap().entropy;
            if truth[g.key().as_str()] { dep.push(h) } else { ind.push(h) }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&dep) > mean(&ind), "{} vs {}", mean(&dep), mean(&ind));
    }

    #[test]
    fn invalid_spec() {
        let bad = SyntheticSpec {
            dependent_fraction: 1.5,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&bad), Err(Error::Validation { field, .. }) if field == "dependent_fraction"));
    }
}
