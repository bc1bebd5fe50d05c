//! Shared fixtures for the benchmarks.

use vulntrans_core::corpus::generate_synthetic_corpus;
use vulntrans_core::pairing::{build_training_pairs, label_material};
use vulntrans_core::seq2seq::{EncodedPair, ModelConfig, Seq2SeqModel, vocabulary_for_pairs};
use vulntrans_core::{Corpus, PairingConfig, SynthesisSpec, TrainingPair};

/// A small synthetic corpus with a fixed seed.
pub fn corpus(components: usize) -> Corpus {
    let spec = SynthesisSpec { n_releases: 2, components_per_release: components, ..SynthesisSpec::default() };
    generate_synthetic_corpus(17, &spec).expect("fixed spec is valid")
}

/// Training pairs of the first release of [`corpus`].
pub fn training_pairs(components: usize) -> Vec<TrainingPair> {
    let material = corpus(components).clean_training_set(0).expect("two releases");
    let (labeled, _) = label_material(&material);
    build_training_pairs(&labeled, &PairingConfig::default()).expect("default pairing config is valid")
}

/// An untrained model over the vocabulary of `pairs`, plus the encoded pairs.
pub fn model_and_batch(pairs: &[TrainingPair], hidden: usize) -> (Seq2SeqModel, Vec<EncodedPair>) {
    let config = ModelConfig { embedding_dim: hidden, hidden_units: hidden, ..ModelConfig::desk() };
    let vocabulary = vocabulary_for_pairs(pairs, 1).expect("pairs are non-empty");
    let model = Seq2SeqModel::new(config, vocabulary).expect("desk config is valid");
    let batch = pairs.iter().map(|p| model.encode_pair(p)).collect();
    (model, batch)
}
