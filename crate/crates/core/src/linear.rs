//! Linear max-margin models trained by stochastic subgradient descent.
//!
//! Two losses share one trainer:
//!
//! * classification: `½‖w‖² + C Σ max(0, 1 − y(w·x + b))`
//! * regression: `½‖w‖² + C Σ max(0, |y − (w·x + b)| − ε)`
//!
//! The bias is appended to `w` as the weight of a constant feature and is
//! regularized with it, as in LIBLINEAR's `-B 1` mode. The step size at update
//! `t` is `1/(λt)` with `λ = 1/(C·n)`, iterates are projected onto the ball
//! that must contain the optimum, and the returned model is the epoch-end
//! iterate with the lowest objective.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;
/// Trade-off grid searched by cross-validation.
pub const C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// Sparse vector with unique, ascending feature ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Sorts by id and sums duplicates.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for (id, v) in pairs {
            *merged.entry(id).or_default() += v;
        }
        FeatureVector {
            entries: merged.into_iter().collect(),
        }
    }

    pub fn dense(values: &[f64]) -> Self {
        FeatureVector {
            entries: values.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        FeatureVector {
            entries: self.entries.iter().map(|&(i, v)| (i, v * alpha)).collect(),
        }
    }

    fn dot(&self, w: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, v)| w.get(i as usize).map_or(0.0, |wi| wi * v))
            .sum()
    }
}

/// Frozen mapping from feature names (`u:tok`, `b:tok tok`, `t:TAG`) to ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureIndex {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Serialize for FeatureIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(FeatureIndex::from_names(Vec::<String>::deserialize(d)?))
    }
}

fn unigrams(tokens: &[String]) -> impl Iterator<Item = String> + '_ {
    tokens.iter().map(|t| format!("u:{t}"))
}

fn bigrams(tokens: &[String]) -> impl Iterator<Item = String> + '_ {
    tokens.windows(2).map(|w| format!("b:{} {}", w[0], w[1]))
}

impl FeatureIndex {
    pub fn from_names(names: Vec<String>) -> Self {
        let ids = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        FeatureIndex { names, ids }
    }

    /// Index over the unigrams, bigrams and tags seen in training messages,
    /// in sorted name order.
    pub fn build<'a>(messages: impl IntoIterator<Item = (&'a TokenSeq, Option<&'a [String]>)>) -> Self {
        let mut names = std::collections::BTreeSet::new();
        for (msg, tags) in messages {
            names.extend(unigrams(&msg.tokens));
            names.extend(bigrams(&msg.tokens));
            if let Some(tags) = tags {
                names.extend(tags.iter().map(|t| format!("t:{t}")));
            }
        }
        Self::from_names(names.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }
}

/// Unigram and bigram occurrence counts plus, when tags are given, the
/// fraction of tokens carrying each tag. N-grams missing from the index are
/// dropped.
pub fn extract_ngram_features(msg: &TokenSeq, tags: Option<&[String]>, index: &FeatureIndex) -> Result<FeatureVector> {
    let mut pairs = Vec::new();
    for name in unigrams(&msg.tokens).chain(bigrams(&msg.tokens)) {
        if let Some(id) = index.get(&name) {
            pairs.push((id, 1.0));
        }
    }
    if let Some(tags) = tags {
        if tags.len() != msg.len() {
            return Err(Error::Alignment {
                tags: tags.len(),
                tokens: msg.len(),
            });
        }
        let share = 1.0 / tags.len().max(1) as f64;
        for t in tags {
            if let Some(id) = index.get(&format!("t:{t}")) {
                pairs.push((id, share));
            }
        }
    }
    Ok(FeatureVector::from_pairs(pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOptions {
    pub epochs: usize,
    /// Width of the insensitive tube; regression only.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions {
            epochs: 100,
            epsilon: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub version: u32,
    pub mode: Mode,
    #[serde(rename = "C")]
    pub c: f64,
    pub epsilon: f64,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub feature_index: FeatureIndex,
}

impl LinearModel {
    /// Untrained model with the given parameters; mostly useful in tests.
    pub fn with_weights(weights: Vec<f64>, bias: f64) -> Self {
        LinearModel {
            version: MODEL_VERSION,
            mode: Mode::Classification,
            c: 1.0,
            epsilon: 0.0,
            bias,
            weights,
            feature_index: FeatureIndex::default(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: LinearModel = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::Input(format!("unsupported linear model version {}", m.version)));
        }
        Ok(m)
    }

    /// Objective value of this model on `examples`, bias included in the
    /// regularizer.
    pub fn objective(&self, examples: &[(FeatureVector, f64)]) -> f64 {
        let reg = 0.5 * (self.weights.iter().map(|w| w * w).sum::<f64>() + self.bias * self.bias);
        let loss: f64 = examples
            .iter()
            .map(|(x, y)| loss(self.mode, self.epsilon, *y, decision_value(self, x)))
            .sum();
        reg + self.c * loss
    }
}

/// `w·x + b`. Features beyond the weight vector contribute nothing.
pub fn decision_value(model: &LinearModel, x: &FeatureVector) -> f64 {
    x.dot(&model.weights) + model.bias
}

fn loss(mode: Mode, epsilon: f64, y: f64, f: f64) -> f64 {
    match mode {
        Mode::Classification => (1.0 - y * f).max(0.0),
        Mode::Regression => ((y - f).abs() - epsilon).max(0.0),
    }
}

/// Result of [`train_linear`]: the selected model and the objective after
/// every epoch.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub model: LinearModel,
    pub objectives: Vec<f64>,
}

pub fn train_linear(
    examples: &[(FeatureVector, f64)],
    dim: usize,
    mode: Mode,
    c: f64,
    options: &LinearOptions,
) -> Result<LinearFit> {
    if dim == 0 {
        return Err(Error::validation("features", "empty feature space"));
    }
    if examples.len() < 2 {
        return Err(Error::Input(format!("need at least 2 examples, got {}", examples.len())));
    }
    if !(c > 0.0) {
        return Err(Error::validation("C", "must be positive"));
    }
    if !(options.epsilon >= 0.0) {
        return Err(Error::validation("epsilon", "must be non-negative"));
    }
    if mode == Mode::Classification && examples.iter().any(|(_, y)| *y != 1.0 && *y != -1.0) {
        return Err(Error::Input("classification targets must be -1 or +1".into()));
    }
    let epsilon = match mode {
        Mode::Classification => 0.0,
        Mode::Regression => options.epsilon,
    };
    let n = examples.len();
    let lambda = 1.0 / (c * n as f64);
    let mean_loss_at_zero = examples.iter().map(|(_, y)| loss(mode, epsilon, *y, 0.0)).sum::<f64>() / n as f64;
    let radius = (2.0 * mean_loss_at_zero / lambda).sqrt();

    let mut model = LinearModel {
        version: MODEL_VERSION,
        mode,
        c,
        epsilon,
        bias: 0.0,
        weights: vec![0.0; dim],
        feature_index: FeatureIndex::default(),
    };
    // (weights, bias) = scale * (v, vb), so shrinking and projecting touch only
    // the scalar and each step costs O(nnz(x)).
    let mut v = vec![0.0; dim];
    let mut vb = 0.0;
    let mut scale = 1.0;
    let mut sq = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut objectives = Vec::with_capacity(options.epochs);
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut t = 0u64;
    for _ in 0..options.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let (x, y) = &examples[i];
            let eta = 1.0 / (lambda * t as f64);
            let f = scale * (x.dot(&v) + vb);
            let direction = match mode {
                Mode::Classification if y * f < 1.0 => *y,
                Mode::Regression if (y - f).abs() > epsilon => (y - f).signum(),
                _ => 0.0,
            };
            scale *= 1.0 - 1.0 / t as f64;
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                vb *= scale;
                scale = 1.0;
                sq = v.iter().map(|w| w * w).sum::<f64>() + vb * vb;
            }
            if direction != 0.0 {
                let step = eta * direction / scale;
                for &(j, val) in x.entries() {
                    if let Some(w) = v.get_mut(j as usize) {
                        let old = *w;
                        *w += step * val;
                        sq += *w * *w - old * old;
                    }
                }
                let old = vb;
                vb += step;
                sq += vb * vb - old * old;
            }
            let norm = scale * sq.max(0.0).sqrt();
            if norm > radius {
                scale *= if radius > 0.0 { radius / norm } else { 0.0 };
            }
        }
        model.weights.iter_mut().zip(&v).for_each(|(w, vi)| *w = scale * vi);
        model.bias = scale * vb;
        sq = v.iter().map(|w| w * w).sum::<f64>() + vb * vb;
        let obj = model.objective(examples);
        objectives.push(obj);
        if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
            best = Some((obj, model.weights.clone(), model.bias));
        }
    }
    if let Some((_, w, b)) = best {
        model.weights = w;
        model.bias = b;
    }
    Ok(LinearFit { model, objectives })
}

/// Fraction of examples whose decision sign (strictly positive means +1)
/// matches the sign of the target.
pub fn sign_accuracy(model: &LinearModel, examples: &[(FeatureVector, f64)]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|(x, y)| (decision_value(model, x) > 0.0) == (*y > 0.0))
        .count();
    hits as f64 / examples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    #[serde(rename = "best_C")]
    pub best_c: f64,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Mean held-out accuracy for every grid value, in grid order.
    pub grid: Vec<(f64, f64)>,
}

/// Shuffled split of `0..n` into `k` folds whose sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::validation("k", format!("{k} folds for {n} examples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// k-fold cross-validation over `grid`, scoring held-out sign accuracy.
/// Ties go to the smaller C.
pub fn kfold_cv(
    examples: &[(FeatureVector, f64)],
    dim: usize,
    mode: Mode,
    k: usize,
    grid: &[f64],
    options: &LinearOptions,
) -> Result<CvResult> {
    let folds = kfold_indices(examples.len(), k, options.seed)?;
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut table = Vec::with_capacity(grid.len());
    for &c in &grid {
        let mut accs = Vec::with_capacity(k);
        for held in &folds {
            let (train, test) = split_examples(examples, held);
            let fit = train_linear(&train, dim, mode, c, options)?;
            accs.push(sign_accuracy(&fit.model, &test));
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        table.push((c, mean));
        if best.as_ref().is_none_or(|(_, _, m)| mean > *m) {
            best = Some((c, accs, mean));
        }
    }
    let (best_c, fold_accuracies, mean_accuracy) =
        best.ok_or_else(|| Error::validation("C_grid", "empty grid"))?;
    Ok(CvResult {
        best_c,
        fold_accuracies,
        mean_accuracy,
        grid: table,
    })
}

pub(crate) fn split_examples<T: Clone>(examples: &[T], held: &[usize]) -> (Vec<T>, Vec<T>) {
    let mut is_held = vec![false; examples.len()];
    for &i in held {
        is_held[i] = true;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        if is_held[i] {
            test.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(words: &[&str]) -> TokenSeq {
        TokenSeq::new(words.iter().map(|w| w.to_string()).collect())
    }

    fn names(index: &FeatureIndex, fv: &FeatureVector) -> Vec<(String, f64)> {
        fv.entries()
            .iter()
            .map(|&(i, v)| (index.name(i).unwrap().to_string(), v))
            .collect()
    }

    #[test]
    fn ngram_examples() {
        let m = seq(&["a", "b"]);
        let index = FeatureIndex::build([(&m, None)]);
        let fv = extract_ngram_features(&m, None, &index).unwrap();
        let mut got = names(&index, &fv);
        got.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(
            got,
            vec![("b:a b".into(), 1.0), ("u:a".into(), 1.0), ("u:b".into(), 1.0)]
        );

        let single = seq(&["a"]);
        let fv = extract_ngram_features(&single, None, &index).unwrap();
        assert_eq!(names(&index, &fv), vec![("u:a".to_string(), 1.0)]);
    }

    #[test]
    fn tag_frequencies() {
        let m = seq(&["x", "y", "z"]);
        let tags: Vec<String> = ["N", "V", "N"].iter().map(|s| s.to_string()).collect();
        let index = FeatureIndex::build([(&m, Some(tags.as_slice()))]);
        let fv = extract_ngram_features(&m, Some(&tags), &index).unwrap();
        let got: BTreeMap<String, f64> = names(&index, &fv).into_iter().collect();
        assert!((got["t:N"] - 2.0 / 3.0).abs() < 1e-15);
        assert!((got["t:V"] - 1.0 / 3.0).abs() < 1e-15);

        let err = extract_ngram_features(&m, Some(&tags[..2]), &index).unwrap_err();
        assert!(matches!(err, Error::Alignment { tags: 2, tokens: 3 }));
    }

    #[test]
    fn unseen_ngrams_dropped_and_counts_repeat() {
        let index = FeatureIndex::build([(&seq(&["a", "a"]), None)]);
        let fv = extract_ngram_features(&seq(&["a", "a", "q"]), None, &index).unwrap();
        let got: BTreeMap<String, f64> = names(&index, &fv).into_iter().collect();
        assert_eq!(got.len(), 2);
        assert_eq!(got["u:a"], 2.0);
        assert_eq!(got["b:a a"], 1.0);
    }

    #[test]
    fn decision_value_examples() {
        let m = LinearModel::with_weights(vec![0.0, 0.0], 0.7);
        assert_eq!(decision_value(&m, &FeatureVector::dense(&[3.0, 4.0])), 0.7);
        let m = LinearModel::with_weights(vec![1.0, 2.0], 0.0);
        assert_eq!(decision_value(&m, &FeatureVector::from_pairs([(0, 1.0), (1, 1.0)])), 3.0);
        let m = LinearModel::with_weights(vec![1.0, 2.0], -0.25);
        assert_eq!(decision_value(&m, &FeatureVector::default()), -0.25);
    }

    fn toy() -> Vec<(FeatureVector, f64)> {
        vec![
            (FeatureVector::dense(&[0.0, 0.0]), -1.0),
            (FeatureVector::dense(&[1.0, 1.0]), 1.0),
        ]
    }

    #[test]
    fn separable_pair_is_fit() {
        let fit = train_linear(&toy(), 2, Mode::Classification, 1.0, &LinearOptions::default()).unwrap();
        assert_eq!(sign_accuracy(&fit.model, &toy()), 1.0);
        assert!(fit.objectives.len() == 100);
        let returned = fit.model.objective(&toy());
        assert!(returned <= fit.objectives[0]);
    }

    #[test]
    fn constant_targets_predict_constant() {
        let ex: Vec<_> = (0..6).map(|i| (FeatureVector::dense(&[i as f64 * 0.1, 1.0]), 1.0)).collect();
        let fit = train_linear(&ex, 2, Mode::Classification, 1.0, &LinearOptions::default()).unwrap();
        assert!(ex.iter().all(|(x, _)| decision_value(&fit.model, x) > 0.0));
    }

    #[test]
    fn wide_tube_regression_stays_at_zero() {
        let ex = vec![
            (FeatureVector::dense(&[1.0, 0.0]), 0.3),
            (FeatureVector::dense(&[0.0, 1.0]), -0.4),
        ];
        let opts = LinearOptions {
            epsilon: 1.0,
            ..Default::default()
        };
        let fit = train_linear(&ex, 2, Mode::Regression, 10.0, &opts).unwrap();
        assert!(fit.model.weights.iter().all(|&w| w == 0.0));
        assert_eq!(fit.model.bias, 0.0);
        assert_eq!(fit.model.objective(&ex), 0.0);
    }

    #[test]
    fn regression_tracks_linear_target() {
        let ex: Vec<_> = (0..40)
            .map(|i| {
                let x = i as f64 / 40.0;
                (FeatureVector::dense(&[x]), 2.0 * x - 0.5)
            })
            .collect();
        let opts = LinearOptions {
            epsilon: 0.05,
            epochs: 300,
            seed: 3,
        };
        let fit = train_linear(&ex, 1, Mode::Regression, 100.0, &opts).unwrap();
        assert!((fit.model.weights[0] - 2.0).abs() < 0.3, "{:?}", fit.model);
        assert!(fit.objectives.last().unwrap() <= &fit.objectives[0]);
    }

    #[test]
    fn training_errors() {
        let ex = toy();
        assert!(matches!(
            train_linear(&ex, 0, Mode::Classification, 1.0, &LinearOptions::default()),
            Err(Error::Validation { .. })
        ));
        assert!(train_linear(&ex[..1], 2, Mode::Classification, 1.0, &LinearOptions::default()).is_err());
        let bad = vec![(FeatureVector::dense(&[0.0]), 0.5), (FeatureVector::dense(&[1.0]), 1.0)];
        assert!(train_linear(&bad, 1, Mode::Classification, 1.0, &LinearOptions::default()).is_err());
    }

    #[test]
    fn training_is_reproducible() {
        let ex: Vec<_> = (0..30)
            .map(|i| (FeatureVector::dense(&[(i % 7) as f64, (i % 5) as f64]), if i % 3 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let a = train_linear(&ex, 2, Mode::Classification, 10.0, &LinearOptions::default()).unwrap();
        let b = train_linear(&ex, 2, Mode::Classification, 10.0, &LinearOptions::default()).unwrap();
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
    }

    #[test]
    fn kfold_partitions() {
        let folds = kfold_indices(10, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let folds = kfold_indices(12, 5, 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, [3, 3, 2, 2, 2]);
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert!(kfold_indices(4, 5, 1).is_err());
    }

    #[test]
    fn cv_on_separable_data() {
        let ex: Vec<_> = (0..20)
            .map(|i| {
                let y = if i % 2 == 0 { 1.0 } else { -1.0 };
                (FeatureVector::dense(&[y * (1.0 + (i as f64) * 0.05), 0.3]), y)
            })
            .collect();
        let cv = kfold_cv(&ex, 2, Mode::Classification, 5, &C_GRID, &LinearOptions::default()).unwrap();
        assert_eq!(cv.mean_accuracy, 1.0);
        // every C separates this data, so the smallest wins the tie
        assert_eq!(cv.best_c, 0.01);
        let mean = cv.fold_accuracies.iter().sum::<f64>() / 5.0;
        assert!((mean - cv.mean_accuracy).abs() < 1e-12);
    }

    #[test]
    fn model_json_round_trip() {
        let mut m = LinearModel::with_weights(vec![1.5, -2.0], 0.25);
        m.feature_index = FeatureIndex::from_names(vec!["x".into(), "y".into()]);
        let back = LinearModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.feature_index.get("y"), Some(1));
    }

    proptest! {
        #[test]
        fn decision_value_is_linear(
            w in prop::collection::vec(-5.0f64..5.0, 4),
            b in -3.0f64..3.0,
            x in prop::collection::vec(-5.0f64..5.0, 4),
            alpha in -4.0f64..4.0,
        ) {
            let m = LinearModel::with_weights(w, b);
            let fx = FeatureVector::dense(&x);
            let lhs = decision_value(&m, &fx.scale(alpha)) - b;
            let rhs = alpha * (decision_value(&m, &fx) - b);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn separable_training_sets_are_fit(
            pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 4..24),
            seed in any::<u64>(),
        ) {
            // separable with margin: label by the side of x0 + x1 = 0, drop points near it
            let ex: Vec<_> = pts.iter()
                .filter(|(a, b)| (a + b).abs() > 0.5)
                .map(|&(a, b)| (FeatureVector::dense(&[a, b]), if a + b > 0.0 { 1.0 } else { -1.0 }))
                .collect();
            prop_assume!(ex.len() >= 2);
            let opts = LinearOptions { seed, epochs: 200, ..Default::default() };
            let fit = train_linear(&ex, 2, Mode::Classification, 100.0, &opts).unwrap();
            prop_assert_eq!(sign_accuracy(&fit.model, &ex), 1.0);
        }

        #[test]
        fn folds_partition(n in 1usize..200, k in 1usize..10, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let folds = kfold_indices(n, k, seed).unwrap();
            let mut seen = vec![0u8; n];
            for f in &folds {
                for &i in f { seen[i] += 1; }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let max = folds.iter().map(Vec::len).max().unwrap();
            let min = folds.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
