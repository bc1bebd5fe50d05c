//! Applies a trained model to unseen components: a component is predicted
//! vulnerable when the model changes any of its sequences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{abstract_function, to_sequences, SequenceMeta, SequenceRole};
use crate::corpus::{ComponentRecord, Release};
use crate::cparse::{extract_functions, tokenize};
use crate::seq2seq::Seq2SeqModel;

/// A chunk the model rewrote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModifiedSequence {
    pub function: String,
    pub chunk: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentVerdict {
    pub path: String,
    #[serde(rename = "vulnerable")]
    pub predicted_vulnerable: bool,
    #[serde(rename = "modified")]
    pub modified_sequences: Vec<ModifiedSequence>,
    pub total_sequences: usize,
    /// Functions (or whole files) that could not be parsed.
    #[serde(skip)]
    pub skipped_functions: usize,
}

impl ComponentVerdict {
    fn from_parts(path: &str, modified_sequences: Vec<ModifiedSequence>, total: usize, skipped: usize) -> Self {
        ComponentVerdict {
            path: path.to_string(),
            predicted_vulnerable: !modified_sequences.is_empty(),
            modified_sequences,
            total_sequences: total,
            skipped_functions: skipped,
        }
    }

    /// One-line JSON form: `{path, vulnerable, modified:[{function, chunk}], total_sequences}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict serialises")
    }
}

/// Decomposes, abstracts (fresh IDs per function), chunks, translates and
/// compares every sequence in index space. Never fails: unparseable input
/// counts as skipped and yields no sequences.
pub fn predict_component(model: &Seq2SeqModel, component: &ComponentRecord) -> ComponentVerdict {
    let functions = match tokenize(&component.source).and_then(|t| extract_functions(&t)) {
        Ok(functions) => functions,
        Err(_) => return ComponentVerdict::from_parts(&component.path, Vec::new(), 0, 1),
    };
    let mut modified = Vec::new();
    let mut total = 0;
    let mut skipped = 0;
    for unit in &functions {
        let (tokens, _) = abstract_function(unit, None);
        let meta = SequenceMeta {
            source_path: &component.path,
            function_name: &unit.name,
            role: SequenceRole::NonVulnerable,
        };
        let Ok(sequences) = to_sequences(&tokens, meta) else {
            skipped += 1;
            continue;
        };
        for seq in sequences {
            total += 1;
            let input = model.vocabulary.encode(&seq.tokens);
            match model.translate(&input) {
                Ok(output) if output == input => {}
                Ok(_) => modified.push(ModifiedSequence { function: unit.name.clone(), chunk: seq.chunk_index }),
                Err(_) => skipped += 1,
            }
        }
    }
    ComponentVerdict::from_parts(&component.path, modified, total, skipped)
}

/// Verdicts for every component of a release, in component order.
pub fn predict_release(model: &Seq2SeqModel, release: &Release) -> Vec<ComponentVerdict> {
    predict_components(model, &release.components)
}

pub fn predict_components(model: &Seq2SeqModel, components: &[ComponentRecord]) -> Vec<ComponentVerdict> {
    components.par_iter().map(|c| predict_component(model, c)).collect()
}
