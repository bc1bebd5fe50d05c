//! Pairs pre-fix and post-fix functions, labels them, and materializes the
//! three kinds of training pairs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

use crate::abstraction::{abstract_function, to_sequences, AbstractedSequence, SequenceMeta, SequenceRole};
use crate::corpus::{TrainingComponent, TrainingMaterial};
use crate::cparse::{extract_functions, tokenize, FunctionUnit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionPair {
    pub before: FunctionUnit,
    pub after: FunctionUnit,
    pub signature_key: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairingOutcome {
    pub pairs: Vec<FunctionPair>,
    pub discarded_before: Vec<FunctionUnit>,
    pub discarded_after: Vec<FunctionUnit>,
}

/// Matches functions with equal signature keys. When a key occurs several
/// times on one side, occurrences are matched in file order and extras are
/// discarded.
pub fn pair_functions(before: &[FunctionUnit], after: &[FunctionUnit]) -> PairingOutcome {
    let mut by_key: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, f) in after.iter().enumerate() {
        by_key.entry(f.signature_key.as_str()).or_default().push(i);
    }
    let mut cursor: HashMap<&str, usize> = HashMap::new();
    let mut matched_after = vec![false; after.len()];
    let mut out = PairingOutcome::default();
    for f in before {
        let key = f.signature_key.as_str();
        let slot = cursor.entry(key).or_insert(0);
        match by_key.get(key).and_then(|v| v.get(*slot)) {
            Some(&j) => {
                *slot += 1;
                matched_after[j] = true;
                out.pairs.push(FunctionPair {
                    before: f.clone(),
                    after: after[j].clone(),
                    signature_key: f.signature_key.clone(),
                });
            }
            None => out.discarded_before.push(f.clone()),
        }
    }
    out.discarded_after =
        after.iter().zip(&matched_after).filter(|(_, m)| !**m).map(|(f, _)| f.clone()).collect();
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FunctionLabel {
    Vulnerable { before: FunctionUnit, after: FunctionUnit },
    NonVulnerable(FunctionUnit),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledFunction {
    pub label: FunctionLabel,
    pub path: String,
    pub function_name: String,
}

impl LabeledFunction {
    pub fn is_vulnerable(&self) -> bool {
        matches!(self.label, FunctionLabel::Vulnerable { .. })
    }
}

/// A pair whose copies differ after dropping whitespace and comments is
/// vulnerable (pre-fix) / fixed (post-fix); otherwise one copy is kept as
/// non-vulnerable.
pub fn label_pair(pair: &FunctionPair, path: &str) -> LabeledFunction {
    let label = if pair.before.normalized_texts() != pair.after.normalized_texts() {
        FunctionLabel::Vulnerable { before: pair.before.clone(), after: pair.after.clone() }
    } else {
        FunctionLabel::NonVulnerable(pair.before.clone())
    };
    LabeledFunction { label, path: path.to_string(), function_name: pair.before.name.clone() }
}

fn parse_functions(source: &str) -> Result<Vec<FunctionUnit>> {
    extract_functions(&tokenize(source)?)
}

/// Labels every function of one training component. Components without a
/// fix contribute only non-vulnerable functions.
pub fn label_component(component: &TrainingComponent) -> Result<Vec<LabeledFunction>> {
    let before = parse_functions(&component.source)?;
    let Some(fixed) = &component.fixed_source else {
        return Ok(before
            .into_iter()
            .map(|f| LabeledFunction {
                path: component.path.clone(),
                function_name: f.name.clone(),
                label: FunctionLabel::NonVulnerable(f),
            })
            .collect());
    };
    let after = parse_functions(fixed)?;
    Ok(pair_functions(&before, &after)
        .pairs
        .iter()
        .map(|p| label_pair(p, &component.path))
        .collect())
}

/// Labels all components of the training material. Components that fail to
/// tokenize or parse are skipped; their count is returned alongside.
pub fn label_material(material: &TrainingMaterial) -> (Vec<LabeledFunction>, usize) {
    let mut skipped = 0;
    let mut out = Vec::new();
    for c in &material.components {
        match label_component(c) {
            Ok(labeled) => out.extend(labeled),
            Err(_) => skipped += 1,
        }
    }
    (out, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    VulnToFixed,
    FixedToFixed,
    NonVulnToSelf,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::VulnToFixed => "vuln_to_fixed",
            PairKind::FixedToFixed => "fixed_to_fixed",
            PairKind::NonVulnToSelf => "non_vuln_to_self",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub input: AbstractedSequence,
    pub target: AbstractedSequence,
    pub kind: PairKind,
}

impl TrainingPair {
    /// `kind \t input \t target`, without a trailing newline.
    pub fn to_tsv(&self) -> String {
        format!("{}\t{}\t{}", self.kind.as_str(), self.input.tokens.join(" "), self.target.tokens.join(" "))
    }

    fn identity(seq: AbstractedSequence, kind: PairKind) -> Self {
        TrainingPair { input: seq.clone(), target: seq, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingConfig {
    /// Non-vulnerable identity pairs kept per vulnerable→fixed pair.
    pub non_vuln_ratio: f64,
    pub seed: u64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig { non_vuln_ratio: 5.0, seed: 0 }
    }
}

/// Order-independent pseudo-random key for downsampling.
fn sample_key(seed: u64, seq: &AbstractedSequence) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(seq.source_path.as_bytes());
    h.update([0]);
    h.update(seq.function_name.as_bytes());
    h.update([0]);
    h.update((seq.chunk_index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn chunks(tokens: &[String], path: &str, name: &str, role: SequenceRole) -> Vec<AbstractedSequence> {
    let meta = SequenceMeta { source_path: path, function_name: name, role };
    to_sequences(tokens, meta).unwrap_or_default()
}

/// Vulnerable functions contribute index-aligned (pre-fix chunk → post-fix
/// chunk) pairs and an identity pair per post-fix chunk; surplus pre-fix
/// chunks map to an empty target. Non-vulnerable functions contribute
/// identity pairs, downsampled to `non_vuln_ratio` times the number of
/// vulnerable→fixed pairs.
pub fn build_training_pairs(labeled: &[LabeledFunction], cfg: &PairingConfig) -> Result<Vec<TrainingPair>> {
    if !(cfg.non_vuln_ratio > 0.0 && cfg.non_vuln_ratio.is_finite()) {
        return Err(Error::Config(format!("non_vuln_ratio must be positive, got {}", cfg.non_vuln_ratio)));
    }
    let mut vulnerable = Vec::new();
    let mut candidates = Vec::new();
    for lf in labeled {
        match &lf.label {
            FunctionLabel::Vulnerable { before, after } => {
                let (tb, map) = abstract_function(before, None);
                let (ta, _) = abstract_function(after, Some(&map));
                let bs = chunks(&tb, &lf.path, &lf.function_name, SequenceRole::VulnBefore);
                let fs = chunks(&ta, &lf.path, &lf.function_name, SequenceRole::FixedAfter);
                for (k, b) in bs.iter().enumerate() {
                    let target = fs.get(k).cloned().unwrap_or_else(|| {
                        AbstractedSequence::empty(&lf.path, &lf.function_name, k, SequenceRole::FixedAfter)
                    });
                    vulnerable.push(TrainingPair { input: b.clone(), target, kind: PairKind::VulnToFixed });
                }
                vulnerable.extend(fs.into_iter().map(|f| TrainingPair::identity(f, PairKind::FixedToFixed)));
            }
            FunctionLabel::NonVulnerable(unit) => {
                let (t, _) = abstract_function(unit, None);
                candidates.extend(
                    chunks(&t, &lf.path, &lf.function_name, SequenceRole::NonVulnerable)
                        .into_iter()
                        .map(|s| TrainingPair::identity(s, PairKind::NonVulnToSelf)),
                );
            }
        }
    }
    let n_vuln = vulnerable.iter().filter(|p| p.kind == PairKind::VulnToFixed).count();
    let budget = (cfg.non_vuln_ratio * n_vuln as f64).floor() as usize;
    if candidates.len() > budget {
        let mut order: Vec<(u64, usize)> =
            candidates.iter().enumerate().map(|(i, p)| (sample_key(cfg.seed, &p.input), i)).collect();
        order.sort_unstable();
        let mut keep = vec![false; candidates.len()];
        for &(_, i) in &order[..budget] {
            keep[i] = true;
        }
        candidates = candidates.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();
    }
    vulnerable.extend(candidates);
    Ok(vulnerable)
}
