//! Accuracy, paired sign test and comparison reports.

use serde::{Deserialize, Serialize};

use crate::classify::Label;
use crate::error::{Error, Result};

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::Input(format!("{a} predictions vs {b} labels")));
    }
    Ok(())
}

pub fn accuracy(preds: &[Label], labels: &[Label]) -> Result<f64> {
    check_aligned(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(preds: &[Label], labels: &[Label]) -> Result<Self> {
        check_aligned(preds.len(), labels.len())?;
        let mut c = Confusion::default();
        for (p, l) in preds.iter().zip(labels) {
            match (p.is_positive(), l.is_positive()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

/// `ln C(n, k)`, computed through the smaller of `k` and `n - k` so that
/// `C(n, k)` and `C(n, n - k)` agree bit for bit.
fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|j| ((n - k + j) as f64 / j as f64).ln()).sum()
}

fn fair_pmf(n: u64, k: u64) -> f64 {
    (ln_choose(n, k) - n as f64 * std::f64::consts::LN_2).exp()
}

/// `P(X <= k)` for `X ~ Binomial(n, 1/2)`, summed from the outer tail inward.
pub fn binomial_lower_tail(n: u64, k: u64) -> f64 {
    (0..=k.min(n)).map(|j| fair_pmf(n, j)).sum::<f64>().min(1.0)
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`, summed from the outer tail inward.
pub fn binomial_upper_tail(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    (k..=n).rev().map(|j| fair_pmf(n, j)).sum::<f64>().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Items where exactly one system is correct.
    pub discordant: u64,
    /// Discordant items won by the first system.
    pub wins_a: u64,
    pub p_value: f64,
    /// No discordant pairs; `p_value` is 1 by convention.
    pub no_evidence: bool,
}

/// Two-sided exact sign test over the discordant pairs.
pub fn sign_test_counts(discordant: u64, wins_a: u64) -> SignTest {
    if discordant == 0 {
        return SignTest {
            discordant,
            wins_a,
            p_value: 1.0,
            no_evidence: true,
        };
    }
    let lower = binomial_lower_tail(discordant, wins_a);
    let upper = binomial_upper_tail(discordant, wins_a);
    SignTest {
        discordant,
        wins_a,
        p_value: (2.0 * lower.min(upper)).min(1.0),
        no_evidence: false,
    }
}

pub fn sign_test(preds_a: &[Label], preds_b: &[Label], labels: &[Label]) -> Result<SignTest> {
    check_aligned(preds_a.len(), labels.len())?;
    check_aligned(preds_b.len(), labels.len())?;
    let (mut n, mut k) = (0u64, 0u64);
    for ((a, b), l) in preds_a.iter().zip(preds_b).zip(labels) {
        let (ca, cb) = (a == l, b == l);
        if ca != cb {
            n += 1;
            if ca {
                k += 1;
            }
        }
    }
    Ok(sign_test_counts(n, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResult {
    pub name: String,
    pub accuracy: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub best: String,
    pub other: String,
    pub test: SignTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub size: usize,
    /// In the order the systems were given.
    pub systems: Vec<SystemResult>,
    pub best: String,
    /// The best system against every other, in system order.
    pub comparisons: Vec<PairwiseTest>,
}

/// Scores every system and sign-tests the most accurate one (first on ties)
/// against each of the others.
pub fn build_report(systems: &[(String, Vec<Label>)], labels: &[Label], dataset: &str) -> Result<EvalReport> {
    if systems.is_empty() {
        return Err(Error::Input("no systems to evaluate".into()));
    }
    let mut results = Vec::with_capacity(systems.len());
    for (name, preds) in systems {
        let confusion = Confusion::from_predictions(preds, labels)?;
        results.push(SystemResult {
            name: name.clone(),
            accuracy: accuracy(preds, labels)?,
            confusion,
        });
    }
    let best_idx = results
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.accuracy > results[b].accuracy { i } else { b });
    let mut comparisons = Vec::new();
    for (i, (name, preds)) in systems.iter().enumerate() {
        if i == best_idx {
            continue;
        }
        comparisons.push(PairwiseTest {
            best: systems[best_idx].0.clone(),
            other: name.clone(),
            test: sign_test(&systems[best_idx].1, preds, labels)?,
        });
    }
    Ok(EvalReport {
        dataset: dataset.to_owned(),
        size: labels.len(),
        best: systems[best_idx].0.clone(),
        systems: results,
        comparisons,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned-column text table.
    pub fn to_text(&self) -> String {
        let width = self.systems.iter().map(|s| s.name.len()).max().unwrap_or(6).max(6);
        let mut out = format!("dataset: {} ({} messages)\n\n", self.dataset, self.size);
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>5}  {:>5}  {:>5}  {:>5}\n",
            "system", "accuracy", "tp", "fp", "tn", "fn"
        ));
        for s in &self.systems {
            let c = s.confusion;
            out.push_str(&format!(
                "{:<width$}  {:>7.1}%  {:>5}  {:>5}  {:>5}  {:>5}\n",
                s.name,
                100.0 * s.accuracy,
                c.tp,
                c.fp,
                c.tn,
                c.fn_
            ));
        }
        if !self.comparisons.is_empty() {
            out.push_str(&format!("\nsign test against {}:\n", self.best));
            for c in &self.comparisons {
                let t = c.test;
                let note = if t.no_evidence { "  (no discordant pairs)" } else { "" };
                out.push_str(&format!(
                    "  vs {:<width$}  n={:<5} wins={:<5} p={:.6e}{note}\n",
                    c.other, t.discordant, t.wins_a, t.p_value
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Dependent as P, Independent as N};

    #[test]
    fn accuracy_examples() {
        let l = [P, N, P, N];
        assert_eq!(accuracy(&l, &l).unwrap(), 1.0);
        assert_eq!(accuracy(&[N, P, N, P], &l).unwrap(), 0.0);
        assert_eq!(accuracy(&[P, N, P, P], &l).unwrap(), 0.75);
        assert!(accuracy(&[P], &l).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn confusion_consistent() {
        let c = Confusion::from_predictions(&[P, P, N, N, P], &[P, N, N, P, P]).unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 1, tn: 1, fn_: 1 });
        assert_eq!(c.total(), 5);
        assert!((c.accuracy() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn sign_test_examples() {
        let t = sign_test_counts(10, 10);
        assert!((t.p_value - 0.001953125).abs() < 1e-12);
        assert_eq!(sign_test_counts(10, 5).p_value, 1.0);
        let t = sign_test_counts(0, 0);
        assert_eq!(t.p_value, 1.0);
        assert!(t.no_evidence);
    }

    #[test]
    fn sign_test_ignores_ties() {
        let labels = [P, P, N, N];
        let a = [P, N, N, P]; // right, wrong, right, wrong
        let b = [P, P, P, P]; // right, right, wrong, wrong
        let t = sign_test(&a, &b, &labels).unwrap();
        assert_eq!((t.discordant, t.wins_a), (2, 1));
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn report_examples() {
        let labels = vec![P, N, P];
        let r = build_report(&[("only".into(), labels.clone())], &labels, "toy").unwrap();
        assert_eq!(r.systems[0].accuracy, 1.0);
        assert!(r.comparisons.is_empty());

        let r = build_report(&[("a".into(), labels.clone()), ("b".into(), labels.clone())], &labels, "toy").unwrap();
        assert_eq!(r.comparisons.len(), 1);
        assert!(r.comparisons[0].test.no_evidence);
        assert!(r.to_text().contains("no discordant pairs"));
    }

    #[test]
    fn three_systems_on_ten_items() {
        // hand-built: labels alternate; A errs on item 0; B errs on 0..4; C errs on 5..9
        let labels: Vec<Label> = (0..10).map(|i| Label::from_positive(i % 2 == 0)).collect();
        let flip = |l: Label| Label::from_positive(!l.is_positive());
        let a: Vec<Label> = labels.iter().enumerate().map(|(i, &l)| if i == 0 { flip(l) } else { l }).collect();
        let b: Vec<Label> = labels.iter().enumerate().map(|(i, &l)| if i < 5 { flip(l) } else { l }).collect();
        let c: Vec<Label> = labels.iter().enumerate().map(|(i, &l)| if i >= 5 { flip(l) } else { l }).collect();
        let r = build_report(&[("A".into(), a), ("B".into(), b), ("C".into(), c)], &labels, "toy").unwrap();
        let accs: Vec<f64> = r.systems.iter().map(|s| s.accuracy).collect();
        assert_eq!(accs, [0.9, 0.5, 0.5]);
        assert_eq!(r.best, "A");
        // A vs B: discordant items 1..4, all won by A -> p = 2 / 16
        let ab = r.comparisons[0].test;
        assert_eq!((ab.discordant, ab.wins_a), (4, 4));
        assert!((ab.p_value - 0.125).abs() < 1e-12);
        // A vs C: discordant 0 (C wins) and 5..9 (A wins): n=6, k=5 -> 2 * 7/64
        let ac = r.comparisons[1].test;
        assert_eq!((ac.discordant, ac.wins_a), (6, 5));
        assert!((ac.p_value - 14.0 / 64.0).abs() < 1e-12);
        let json = r.to_json().unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    }

    proptest! {
        #[test]
        fn sign_test_symmetric(n in 0u64..400, k_frac in 0.0f64..=1.0) {
            let k = ((n as f64) * k_frac).round() as u64;
            let a = sign_test_counts(n, k);
            let b = sign_test_counts(n, n - k);
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert!(a.p_value > 0.0 && a.p_value <= 1.0);
        }
    }
}
