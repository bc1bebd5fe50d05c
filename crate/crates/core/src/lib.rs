//! Vulnerability prediction by learning to translate vulnerable code into
//! its fix.
//!
//! The pipeline decomposes C components into functions ([`cparse`]), pairs
//! pre-fix and post-fix functions and labels them ([`pairing`]), replaces
//! user-defined names with positional IDs ([`abstraction`]), and trains an
//! LSTM encoder-decoder ([`seq2seq`]) on (vulnerable → fixed) and identity
//! pairs. A component is predicted vulnerable when the trained model changes
//! any of its sequences ([`predict`]). [`evaluate`] runs release-by-release
//! experiments and [`baselines`] provides the classical comparison models.

pub mod abstraction;
pub mod baselines;
pub mod corpus;
pub mod cparse;
pub mod error;
pub mod evaluate;
pub mod pairing;
pub mod predict;
pub mod seq2seq;

pub use abstraction::{AbstractedSequence, IdMap, SequenceRole};
pub use corpus::{
    ComponentRecord, Corpus, Label, Release, Setting, SynthesisSpec, TrainingMaterial,
    VulnerabilityRecord,
};
pub use cparse::{FunctionUnit, IdentRole, Token, TokenKind};
pub use error::{Error, Result};
pub use evaluate::{ConfusionMatrix, EvaluationReport};
pub use pairing::{FunctionPair, LabeledFunction, PairKind, PairingConfig, TrainingPair};
pub use predict::ComponentVerdict;
pub use seq2seq::{ModelConfig, Seq2SeqModel, TrainingState, Vocabulary};
