//! Annotation filtering: rule-based cleanup for short-form text and a
//! trainable music-descriptiveness classifier for long-form sentences.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::tokenizer::tokenize;
use crate::text::vocab::Vocabulary;

/// Rule-based filter for short-form annotations.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FilterRuleSet {
    /// Minimum number of whitespace-separated tokens.
    pub min_tokens: usize,
    /// Maximum number of whitespace-separated tokens.
    pub max_tokens: usize,
    /// Annotations containing any of these substrings are dropped.
    pub forbidden_patterns: Vec<String>,
    /// Drop exact duplicates, keeping the first occurrence.
    pub dedup: bool,
}

impl Default for FilterRuleSet {
    fn default() -> Self {
        FilterRuleSet {
            min_tokens: 0,
            max_tokens: usize::MAX,
            forbidden_patterns: Vec::new(),
            dedup: false,
        }
    }
}

impl FilterRuleSet {
    pub fn validate(&self) -> Result<()> {
        if self.min_tokens > self.max_tokens {
            return Err(Error::Config(format!(
                "min_tokens {} > max_tokens {}",
                self.min_tokens, self.max_tokens
            )));
        }
        Ok(())
    }
}

/// Order-preserving subset of annotations that satisfy every rule.
pub fn apply_sf_rules(annotations: &[String], rules: &FilterRuleSet) -> Result<Vec<String>> {
    rules.validate()?;
    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Vec::new();
    for text in annotations {
        let tokens = text.split_whitespace().count();
        if tokens < rules.min_tokens || tokens > rules.max_tokens {
            continue;
        }
        if rules
            .forbidden_patterns
            .iter()
            .any(|p| !p.is_empty() && text.contains(p.as_str()))
        {
            continue;
        }
        if rules.dedup && !seen.insert(text.as_str()) {
            continue;
        }
        out.push(text.clone());
    }
    Ok(out)
}

/// Training knobs for the descriptiveness classifier.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub threshold: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
            threshold: 0.5,
        }
    }
}

/// Logistic regression over wordpiece token counts, usable as a
/// self-contained `string -> bool` predicate.
#[derive(Debug, Clone)]
pub struct DescriptivenessClassifier {
    vocab: Vocabulary,
    weights: Vec<f64>,
    bias: f64,
    threshold: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Token-count feature vector: one count per vocabulary id, `[CLS]` excluded.
fn count_features(text: &str, vocab: &Vocabulary) -> Vec<(usize, f64)> {
    let seq = tokenize(text, vocab, 512).expect("n >= 2");
    let mut counts = std::collections::BTreeMap::new();
    for &id in &seq.real_ids()[1..] {
        *counts.entry(id as usize).or_insert(0.0) += 1.0;
    }
    counts.into_iter().collect()
}

impl DescriptivenessClassifier {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.threshold = threshold;
    }

    /// Predicted probability that the text is music-descriptive.
    pub fn predict_prob(&self, text: &str) -> f64 {
        let mut z = self.bias;
        for (id, c) in count_features(text, &self.vocab) {
            z += self.weights[id] * c;
        }
        sigmoid(z)
    }

    pub fn predict(&self, text: &str) -> bool {
        self.predict_prob(text) >= self.threshold
    }
}

/// Fit the classifier by full-batch gradient descent on the mean regularized
/// logistic loss, for a fixed epoch budget. Returns the classifier and its
/// training accuracy.
pub fn train_descriptiveness_classifier(
    labeled: &[(String, bool)],
    vocab: &Vocabulary,
    cfg: &ClassifierTrainConfig,
) -> Result<(DescriptivenessClassifier, f64)> {
    let n_pos = labeled.iter().filter(|(_, y)| *y).count();
    if n_pos == 0 || n_pos == labeled.len() {
        return Err(Error::Training(
            "descriptiveness training needs both classes".to_string(),
        ));
    }
    let features: Vec<Vec<(usize, f64)>> = labeled
        .iter()
        .map(|(text, _)| count_features(text, vocab))
        .collect();
    let n = labeled.len() as f64;
    let mut weights = vec![0.0; vocab.len()];
    let mut bias = 0.0;

    for _ in 0..cfg.epochs {
        let mut grad_w = vec![0.0; vocab.len()];
        let mut grad_b = 0.0;
        for (feats, (_, y)) in features.iter().zip(labeled) {
            let mut z = bias;
            for &(id, c) in feats {
                z += weights[id] * c;
            }
            let err = sigmoid(z) - if *y { 1.0 } else { 0.0 };
            for &(id, c) in feats {
                grad_w[id] += err * c;
            }
            grad_b += err;
        }
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= cfg.learning_rate * (g / n + 2.0 * cfg.l2 * *w);
        }
        bias -= cfg.learning_rate * grad_b / n;
    }

    let clf = DescriptivenessClassifier {
        vocab: vocab.clone(),
        weights,
        bias,
        threshold: cfg.threshold,
    };
    let correct = labeled
        .iter()
        .filter(|(text, y)| clf.predict(text) == *y)
        .count();
    let accuracy = correct as f64 / n;
    Ok((clf, accuracy))
}

/// Keep the sentences the classifier scores at or above its threshold,
/// preserving order.
pub fn filter_lf(sentences: &[String], clf: &DescriptivenessClassifier) -> Vec<String> {
    sentences
        .iter()
        .filter(|s| clf.predict_prob(s) >= clf.threshold)
        .cloned()
        .collect()
}

/// Load labeled sentences from a TSV file: `text<TAB>0|1` per line.
pub fn load_labeled_tsv(path: &Path) -> Result<Vec<(String, bool)>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (text, label) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected text<TAB>0|1".to_string(),
        })?;
        let y = match label.trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        out.push((text.to_string(), y));
    }
    Ok(out)
}

/// Write labeled sentences as TSV.
pub fn save_labeled_tsv(path: &Path, labeled: &[(String, bool)]) -> Result<()> {
    let mut out = String::new();
    for (text, y) in labeled {
        out.push_str(text);
        out.push('\t');
        out.push(if *y { '1' } else { '0' });
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::with_words([
            "drums", "guitar", "mellow", "warm", "spam", "click", "subscribe", "lofi", "beats",
        ])
        .unwrap()
    }

    fn labeled_disjoint() -> Vec<(String, bool)> {
        vec![
            ("drums guitar mellow".into(), true),
            ("warm mellow guitar".into(), true),
            ("guitar drums".into(), true),
            ("warm drums".into(), true),
            ("spam click".into(), false),
            ("click subscribe spam".into(), false),
            ("subscribe click".into(), false),
            ("spam subscribe".into(), false),
        ]
    }

    #[test]
    fn empty_rule_set_keeps_everything() {
        let input: Vec<String> = vec!["a".into(), "b c".into()];
        let out = apply_sf_rules(&input, &FilterRuleSet::default()).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn rules_example_from_hand_evaluation() {
        let input: Vec<String> = vec!["a".into(), "lofi beats".into(), "lofi beats".into()];
        let rules = FilterRuleSet {
            min_tokens: 2,
            dedup: true,
            ..Default::default()
        };
        let out = apply_sf_rules(&input, &rules).unwrap();
        assert_eq!(out, vec!["lofi beats".to_string()]);
    }

    #[test]
    fn all_forbidden_gives_empty() {
        let input: Vec<String> = vec!["spam a".into(), "b spam".into()];
        let rules = FilterRuleSet {
            forbidden_patterns: vec!["spam".into()],
            ..Default::default()
        };
        assert!(apply_sf_rules(&input, &rules).unwrap().is_empty());
    }

    #[test]
    fn rule_filter_is_idempotent_and_order_preserving() {
        let input: Vec<String> = vec![
            "one".into(),
            "two words".into(),
            "three word tag".into(),
            "two words".into(),
        ];
        let rules = FilterRuleSet {
            min_tokens: 2,
            max_tokens: 3,
            dedup: true,
            ..Default::default()
        };
        let once = apply_sf_rules(&input, &rules).unwrap();
        let twice = apply_sf_rules(&once, &rules).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once, vec!["two words".to_string(), "three word tag".to_string()]);
    }

    #[test]
    fn disjoint_classes_train_to_perfect_accuracy() {
        let (clf, acc) =
            train_descriptiveness_classifier(&labeled_disjoint(), &vocab(), &Default::default())
                .unwrap();
        assert_eq!(acc, 1.0);
        assert!(clf.predict("mellow guitar"));
        assert!(!clf.predict("click spam"));
    }

    #[test]
    fn flipped_labels_negate_the_weights() {
        let data = labeled_disjoint();
        let flipped: Vec<(String, bool)> =
            data.iter().map(|(t, y)| (t.clone(), !y)).collect();
        let cfg = ClassifierTrainConfig::default();
        let (a, _) = train_descriptiveness_classifier(&data, &vocab(), &cfg).unwrap();
        let (b, _) = train_descriptiveness_classifier(&flipped, &vocab(), &cfg).unwrap();
        for (wa, wb) in a.weights().iter().zip(b.weights()) {
            assert!((wa + wb).abs() < 1e-9);
        }
        assert!((a.bias() + b.bias()).abs() < 1e-9);
        assert!(a.predict("mellow guitar") && !b.predict("mellow guitar"));
    }

    #[test]
    fn duplicating_examples_keeps_the_decision_function() {
        let data = labeled_disjoint();
        let mut doubled = data.clone();
        doubled.extend(data.clone());
        let cfg = ClassifierTrainConfig::default();
        let (a, _) = train_descriptiveness_classifier(&data, &vocab(), &cfg).unwrap();
        let (b, _) = train_descriptiveness_classifier(&doubled, &vocab(), &cfg).unwrap();
        for (wa, wb) in a.weights().iter().zip(b.weights()) {
            assert!((wa - wb).abs() < 1e-9);
        }
        assert!((a.bias() - b.bias()).abs() < 1e-9);
    }

    #[test]
    fn single_class_input_is_a_training_error() {
        let data: Vec<(String, bool)> = vec![("drums".into(), true), ("guitar".into(), true)];
        let err = train_descriptiveness_classifier(&data, &vocab(), &Default::default())
            .unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }

    #[test]
    fn threshold_extremes() {
        let (mut clf, _) =
            train_descriptiveness_classifier(&labeled_disjoint(), &vocab(), &Default::default())
                .unwrap();
        let sentences: Vec<String> = vec!["drums guitar".into(), "spam click".into()];
        clf.set_threshold(0.0);
        assert_eq!(filter_lf(&sentences, &clf).len(), 2);
        clf.set_threshold(1.0);
        assert!(filter_lf(&sentences, &clf).is_empty());
    }

    #[test]
    fn filter_recovers_the_positive_class() {
        let data = labeled_disjoint();
        let (clf, _) =
            train_descriptiveness_classifier(&data, &vocab(), &Default::default()).unwrap();
        let sentences: Vec<String> = data.iter().map(|(t, _)| t.clone()).collect();
        let kept = filter_lf(&sentences, &clf);
        let expected: Vec<String> = data
            .iter()
            .filter(|(_, y)| *y)
            .map(|(t, _)| t.clone())
            .collect();
        assert_eq!(kept, expected);
        // idempotent
        assert_eq!(filter_lf(&kept, &clf), kept);
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.tsv");
        let data = labeled_disjoint();
        save_labeled_tsv(&path, &data).unwrap();
        assert_eq!(load_labeled_tsv(&path).unwrap(), data);
    }

    #[test]
    fn malformed_tsv_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "good\t1\nbadline\n").unwrap();
        match load_labeled_tsv(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
