//! Classical comparison models: bag-of-words text mining, imports, function
//! calls and static software metrics, each feeding one logistic-regression
//! classifier.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ComponentRecord, Corpus, Release, Setting, TrainingMaterial};
use crate::cparse::{classify_function, extract_functions, strip_noise, tokenize, IdentRole, TokenKind};
use crate::error::{Error, Result};
use crate::evaluate::{run_protocol, EvaluationReport};

/// Sparse named features of one component.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub path: String,
    pub features: BTreeMap<String, f64>,
}

impl FeatureVector {
    fn new(path: &str) -> Self {
        FeatureVector { path: path.to_string(), features: BTreeMap::new() }
    }
}

/// Raw token frequencies over comment- and whitespace-free tokens.
pub fn token_frequencies(source: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    if let Ok(tokens) = tokenize(source) {
        for tok in strip_noise(&tokens) {
            *counts.entry(tok.text).or_insert(0) += 1;
        }
    }
    counts
}

/// Log-scale bin of a positive frequency: `min(bins − 1, ⌊log₂ freq⌋)`.
pub fn frequency_bin(freq: usize, bins: usize) -> usize {
    debug_assert!(freq > 0 && bins > 0);
    (freq.ilog2() as usize).min(bins.saturating_sub(1))
}

/// `bow:<token>` = bin index of the token's frequency.
pub fn bow_features(component: &ComponentRecord, bins: usize) -> FeatureVector {
    let mut fv = FeatureVector::new(&component.path);
    for (tok, freq) in token_frequencies(&component.source) {
        fv.features.insert(format!("bow:{tok}"), frequency_bin(freq, bins.max(1)) as f64);
    }
    fv
}

/// Targets of `#include` directives.
pub fn include_targets(source: &str) -> BTreeSet<String> {
    source
        .lines()
        .filter_map(|line| {
            let rest = line.trim_start().strip_prefix('#')?.trim_start().strip_prefix("include")?.trim();
            let (open, close) = match rest.chars().next()? {
                '<' => ('<', '>'),
                '"' => ('"', '"'),
                _ => return None,
            };
            let inner = rest.strip_prefix(open)?;
            let end = inner.find(close)?;
            Some(inner[..end].to_string())
        })
        .collect()
}

/// Binary `imp:<header>` features.
pub fn import_features(component: &ComponentRecord) -> FeatureVector {
    let mut fv = FeatureVector::new(&component.path);
    for header in include_targets(&component.source) {
        fv.features.insert(format!("imp:{header}"), 1.0);
    }
    fv
}

/// Names called from function bodies, excluding the component's own functions.
pub fn called_functions(source: &str) -> BTreeSet<String> {
    let Ok(units) = tokenize(source).and_then(|t| extract_functions(&t)) else {
        return BTreeSet::new();
    };
    let own: BTreeSet<&str> = units.iter().map(|u| u.name.as_str()).collect();
    let mut calls = BTreeSet::new();
    for unit in &units {
        let (tokens, roles) = classify_function(unit);
        for (tok, role) in tokens.iter().zip(roles) {
            if role == Some(IdentRole::FunctionName) && !own.contains(tok.text.as_str()) {
                calls.insert(tok.text.clone());
            }
        }
    }
    calls
}

/// Binary `call:<name>` features.
pub fn call_features(component: &ComponentRecord) -> FeatureVector {
    let mut fv = FeatureVector::new(&component.path);
    for name in called_functions(&component.source) {
        fv.features.insert(format!("call:{name}"), 1.0);
    }
    fv
}

/// Static complexity measures of a source file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StaticMetrics {
    pub loc: usize,
    pub cyclomatic: usize,
    pub max_nesting: usize,
    pub n_functions: usize,
}

pub fn static_metrics(source: &str) -> StaticMetrics {
    let loc = source.lines().filter(|l| !l.trim().is_empty()).count();
    let Ok(units) = tokenize(source).and_then(|t| extract_functions(&t)) else {
        return StaticMetrics { loc, ..StaticMetrics::default() };
    };
    let mut cyclomatic = 0;
    let mut max_nesting = 0;
    for unit in &units {
        let mut decisions = 0;
        let mut depth = 0usize;
        for tok in unit.body_tokens.iter().filter(|t| !t.kind.is_noise()) {
            match (tok.kind, tok.text.as_str()) {
                (TokenKind::Keyword, "if" | "while" | "for" | "case") => decisions += 1,
                (TokenKind::Punctuator, "&&" | "||") => decisions += 1,
                (TokenKind::Punctuator, "{") => {
                    depth += 1;
                    max_nesting = max_nesting.max(depth);
                }
                (TokenKind::Punctuator, "}") => depth = depth.saturating_sub(1),
                _ => {}
            }
        }
        cyclomatic += 1 + decisions;
    }
    StaticMetrics { loc, cyclomatic, max_nesting, n_functions: units.len() }
}

/// `met:loc`, `met:cyclomatic`, `met:maxNesting`, `met:nFunctions`.
pub fn static_metric_features(component: &ComponentRecord) -> FeatureVector {
    let m = static_metrics(&component.source);
    let mut fv = FeatureVector::new(&component.path);
    for (name, value) in [
        ("met:loc", m.loc),
        ("met:cyclomatic", m.cyclomatic),
        ("met:maxNesting", m.max_nesting),
        ("met:nFunctions", m.n_functions),
    ] {
        fv.features.insert(name.to_string(), value as f64);
    }
    fv
}

/// Classifier inputs: bag-of-words bins become one-hot `bow:<token>#<bin>`
/// indicators, metrics are `ln(1 + x)`-scaled, binary features pass through.
pub fn model_inputs(fv: &FeatureVector) -> BTreeMap<String, f64> {
    fv.features
        .iter()
        .map(|(name, &value)| {
            if name.starts_with("bow:") {
                (format!("{name}#{value}"), 1.0)
            } else if name.starts_with("met:") {
                (name.clone(), value.ln_1p())
            } else {
                (name.clone(), value)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// L2 penalty `λ/2 ‖w‖²` added to the mean loss.
    pub l2: f64,
    /// L1 penalty `μ ‖w‖₁`, applied by soft-thresholding after each step.
    pub l1: f64,
    /// Weight classes inversely to their frequency.
    pub balance_classes: bool,
    /// Accepted for interface symmetry; full-batch descent from zero weights
    /// consumes no randomness.
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { iterations: 500, learning_rate: 0.5, l2: 1e-3, l1: 1e-2, balance_classes: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: BTreeMap<String, f64>,
    pub bias: f64,
    pub threshold: f64,
}

impl LinearClassifier {
    pub fn probability(&self, fv: &FeatureVector) -> f64 {
        let z = self.bias
            + model_inputs(fv).iter().map(|(k, v)| self.weights.get(k).copied().unwrap_or(0.0) * v).sum::<f64>();
        crate::seq2seq::sigmoid(z)
    }

    pub fn predict(&self, fv: &FeatureVector) -> bool {
        self.probability(fv) >= self.threshold
    }
}

/// Logistic regression by full-batch (proximal) gradient descent with an
/// elastic-net penalty, starting from zero weights and the (weighted) prior
/// log-odds as bias. The L1 term keeps the many weakly correlated
/// bag-of-words indicators at exactly zero.
pub fn train_classifier(examples: &[(FeatureVector, bool)], cfg: &ClassifierConfig) -> Result<LinearClassifier> {
    let n_pos = examples.iter().filter(|(_, y)| *y).count();
    let n_neg = examples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    let rows: Vec<Vec<(usize, f64)>> = examples
        .iter()
        .map(|(fv, _)| {
            model_inputs(fv)
                .into_iter()
                .map(|(k, v)| {
                    let next = names.len();
                    (*names.entry(k).or_insert(next), v)
                })
                .collect()
        })
        .collect();
    let n = examples.len() as f64;
    let (w_pos, w_neg) = if cfg.balance_classes {
        (n / (2.0 * n_pos as f64), n / (2.0 * n_neg as f64))
    } else {
        (1.0, 1.0)
    };
    let weight_of = |y: bool| if y { w_pos } else { w_neg };
    let prior = (w_pos * n_pos as f64) / (w_pos * n_pos as f64 + w_neg * n_neg as f64);
    let mut bias = (prior / (1.0 - prior)).ln();
    let mut w = vec![0.0; names.len()];
    let mut grad = vec![0.0; names.len()];
    for _ in 0..cfg.iterations {
        grad.iter_mut().zip(&w).for_each(|(g, wi)| *g = cfg.l2 * wi);
        let mut grad_b = 0.0;
        for (row, (_, y)) in rows.iter().zip(examples) {
            let z = bias + row.iter().map(|&(j, v)| w[j] * v).sum::<f64>();
            let err = weight_of(*y) * (crate::seq2seq::sigmoid(z) - if *y { 1.0 } else { 0.0 }) / n;
            for &(j, v) in row {
                grad[j] += err * v;
            }
            grad_b += err;
        }
        let shrink = cfg.learning_rate * cfg.l1;
        w.iter_mut().zip(&grad).for_each(|(wi, g)| {
            let v = *wi - cfg.learning_rate * g;
            *wi = v.signum() * (v.abs() - shrink).max(0.0);
        });
        bias -= cfg.learning_rate * grad_b;
    }
    if !bias.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { step: cfg.iterations });
    }
    let weights = names.into_iter().map(|(k, j)| (k, w[j])).collect();
    Ok(LinearClassifier { weights, bias, threshold: 0.5 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    SoftwareMetrics,
    Imports,
    FunctionCalls,
    TextMining,
}

impl Technique {
    pub const ALL: [Technique; 4] =
        [Technique::SoftwareMetrics, Technique::Imports, Technique::FunctionCalls, Technique::TextMining];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::SoftwareMetrics => "metrics",
            Technique::Imports => "imports",
            Technique::FunctionCalls => "calls",
            Technique::TextMining => "textmining",
        }
    }

    pub fn features(self, component: &ComponentRecord, bins: usize) -> FeatureVector {
        match self {
            Technique::SoftwareMetrics => static_metric_features(component),
            Technique::Imports => import_features(component),
            Technique::FunctionCalls => call_features(component),
            Technique::TextMining => bow_features(component, bins),
        }
    }
}

impl std::fmt::Display for Technique {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Technique::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown technique {s:?} (metrics|imports|calls|textmining)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub bins: usize,
    pub classifier: ClassifierConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { bins: 10, classifier: ClassifierConfig::default() }
    }
}

/// Same release-pair protocol and report schema as the main approach.
pub fn run_baseline(
    corpus: &Corpus,
    technique: Technique,
    setting: Setting,
    cfg: &BaselineConfig,
) -> Result<Vec<EvaluationReport>> {
    if cfg.bins == 0 {
        return Err(Error::Config("bins must be positive".into()));
    }
    let predictor = |material: &TrainingMaterial, test: &Release| {
        let examples: Vec<(FeatureVector, bool)> = material
            .components
            .par_iter()
            .map(|c| {
                let record = ComponentRecord::non_vulnerable(c.path.clone(), c.source.clone());
                (technique.features(&record, cfg.bins), c.fixed_source.is_some())
            })
            .collect();
        let classifier = train_classifier(&examples, &cfg.classifier)?;
        let predictions = test
            .components
            .par_iter()
            .map(|c| (c.path.clone(), classifier.predict(&technique.features(c, cfg.bins))))
            .collect();
        Ok((predictions, examples.len()))
    };
    run_protocol(corpus, setting, technique.as_str(), &predictor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(src: &str) -> ComponentRecord {
        ComponentRecord::non_vulnerable("a.c", src)
    }

    #[test]
    fn bag_of_words_counts_and_bins() {
        let freqs = token_frequencies("int x; int y; /* int */");
        assert_eq!(freqs["int"], 2);
        assert_eq!((freqs["x"], freqs["y"], freqs[";"]), (1, 1, 2));
        let fv = bow_features(&comp("int x; int y;"), 10);
        assert_eq!(fv.features["bow:int"], 1.0);
        assert_eq!(fv.features["bow:x"], 0.0);
        let presence = bow_features(&comp("int x; int y; int z; int w;"), 1);
        assert!(presence.features.values().all(|&v| v == 0.0));
        assert_eq!((frequency_bin(1, 10), frequency_bin(3, 10), frequency_bin(4, 10), frequency_bin(5000, 3)), (0, 1, 2, 2));
        assert!(bow_features(&comp(""), 10).features.is_empty());
    }

    #[test]
    fn imports_and_calls() {
        let src = "#include <linux/skbuff.h>\n# include \"local.h\"\nstatic int g(int a) { return h(a) + g(a); }\nint f(void) { return g(k(1)); }\n";
        assert_eq!(include_targets(src).into_iter().collect::<Vec<_>>(), ["linux/skbuff.h", "local.h"]);
        assert_eq!(called_functions(src).into_iter().collect::<Vec<_>>(), ["h", "k"]);
        assert!(import_features(&comp("int f(void) { return 0; }")).features.is_empty());
    }

    #[test]
    fn metrics_hand_count() {
        let m = static_metrics("int f(void){ if(a){ if(b){} } return 0; }");
        assert_eq!((m.cyclomatic, m.max_nesting, m.n_functions, m.loc), (3, 3, 1, 1));
        assert_eq!(static_metrics(""), StaticMetrics::default());
        let m = static_metrics("int f(int a)\n{\n\n  while (a && a > 1 || a < -1) a--;\n  return a;\n}\nint g(void) { return 0; }\n");
        assert_eq!((m.cyclomatic, m.max_nesting, m.n_functions, m.loc), (4 + 1, 1, 2, 6));
    }

    #[test]
    fn separable_toy_set() {
        let fv = |pairs: &[(&str, f64)]| FeatureVector {
            path: "x".into(),
            features: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        let data = vec![
            (fv(&[("call:a", 1.0)]), true),
            (fv(&[("call:a", 1.0), ("call:b", 1.0)]), true),
            (fv(&[("call:b", 1.0)]), false),
            (fv(&[("call:c", 1.0)]), false),
            (fv(&[("call:b", 1.0), ("call:c", 1.0)]), false),
        ];
        let clf = train_classifier(&data, &ClassifierConfig::default()).unwrap();
        assert!(data.iter().all(|(x, y)| clf.predict(x) == *y));

        let zero = train_classifier(&data, &ClassifierConfig { iterations: 0, ..Default::default() }).unwrap();
        assert!(zero.weights.values().all(|&w| w == 0.0));
        assert_eq!(zero.bias, 0.0);
        let unbalanced = ClassifierConfig { iterations: 0, balance_classes: false, ..Default::default() };
        assert!((train_classifier(&data, &unbalanced).unwrap().bias - (2.0f64 / 3.0).ln()).abs() < 1e-12);

        let single: Vec<_> = data.iter().filter(|(_, y)| *y).cloned().collect();
        assert!(matches!(train_classifier(&single, &ClassifierConfig::default()), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn l1_zeroes_irrelevant_features() {
        let fv = |pairs: &[&str]| FeatureVector {
            path: "x".into(),
            features: pairs.iter().map(|k| (k.to_string(), 1.0)).collect(),
        };
        let data = vec![
            (fv(&["call:a", "call:n1"]), true),
            (fv(&["call:a", "call:n2"]), true),
            (fv(&["call:n1"]), false),
            (fv(&["call:n2", "call:b"]), false),
            (fv(&["call:b"]), false),
            (fv(&[]), false),
        ];
        let sparse = train_classifier(&data, &ClassifierConfig { l1: 0.05, ..Default::default() }).unwrap();
        assert!(sparse.weights["call:a"] > 0.0);
        assert_eq!(sparse.weights["call:n1"], 0.0);
        assert_eq!(sparse.weights["call:n2"], 0.0);
        let dense = train_classifier(&data, &ClassifierConfig { l1: 0.0, ..Default::default() }).unwrap();
        assert!(dense.weights["call:n1"] != 0.0);
    }

    #[test]
    fn technique_names_round_trip() {
        for t in Technique::ALL {
            assert_eq!(t.as_str().parse::<Technique>().unwrap(), t);
        }
        assert!("svm".parse::<Technique>().is_err());
    }
}
