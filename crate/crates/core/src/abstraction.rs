//! Replaces user-defined function, type and variable names and literals with
//! positional IDs (`F_n`, `T_n`, `V_n`, `L_n`) and cuts the result into
//! sequences of at most [`MAX_SEQUENCE_TOKENS`] tokens.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::cparse::{self, FunctionUnit, IdentRole, TokenKind};
use crate::error::{Error, Result};

pub const MAX_SEQUENCE_TOKENS: usize = 50;

/// The four entity classes that receive IDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityRole {
    Function,
    Type,
    Variable,
    Literal,
}

impl EntityRole {
    pub const ALL: [EntityRole; 4] =
        [EntityRole::Function, EntityRole::Type, EntityRole::Variable, EntityRole::Literal];

    pub fn prefix(self) -> &'static str {
        match self {
            EntityRole::Function => "F",
            EntityRole::Type => "T",
            EntityRole::Variable => "V",
            EntityRole::Literal => "L",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl From<IdentRole> for EntityRole {
    fn from(role: IdentRole) -> Self {
        match role {
            IdentRole::FunctionName => EntityRole::Function,
            IdentRole::TypeName => EntityRole::Type,
            IdentRole::VariableName => EntityRole::Variable,
        }
    }
}

/// Per-role dictionaries from original spelling to ID number, in
/// first-occurrence order. IDs start at 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    maps: [IndexMap<String, usize>; 4],
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the ID string for `spelling`, allocating the next number if
    /// it is new.
    pub fn id_for(&mut self, role: EntityRole, spelling: &str) -> String {
        let map = &mut self.maps[role.index()];
        let next = map.len() + 1;
        let n = *map.entry(spelling.to_string()).or_insert(next);
        format!("{}_{}", role.prefix(), n)
    }

    pub fn get(&self, role: EntityRole, spelling: &str) -> Option<usize> {
        self.maps[role.index()].get(spelling).copied()
    }

    pub fn entries(&self, role: EntityRole) -> impl Iterator<Item = (&str, usize)> {
        self.maps[role.index()].iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self, role: EntityRole) -> usize {
        self.maps[role.index()].len()
    }

    pub fn total(&self) -> usize {
        self.maps.iter().map(IndexMap::len).sum()
    }
}

/// Abstracts one function. With `shared`, entities already in the map keep
/// their IDs and only new entities get fresh numbers; this is how the fixed
/// copy of a vulnerable function is abstracted against its pre-fix copy.
pub fn abstract_function(unit: &FunctionUnit, shared: Option<&IdMap>) -> (Vec<String>, IdMap) {
    let (tokens, roles) = cparse::classify_function(unit);
    let mut map = shared.cloned().unwrap_or_default();
    let out = tokens
        .iter()
        .zip(&roles)
        .map(|(tok, role)| match (tok.kind, role) {
            (TokenKind::Identifier, Some(role)) => map.id_for((*role).into(), &tok.text),
            (TokenKind::StringLiteral | TokenKind::CharLiteral, _) => {
                map.id_for(EntityRole::Literal, &tok.text)
            }
            _ => tok.text.clone(),
        })
        .collect();
    (out, map)
}

/// True for tokens that may appear in an abstracted sequence.
pub fn is_abstract_token(token: &str) -> bool {
    cparse::is_keyword(token)
        || cparse::is_punctuator(token)
        || is_role_id(token)
        || is_number_literal(token)
}

/// Matches `(F|T|V|L)_[0-9]+`.
pub fn is_role_id(token: &str) -> bool {
    let b = token.as_bytes();
    b.len() > 2
        && matches!(b[0], b'F' | b'T' | b'V' | b'L')
        && b[1] == b'_'
        && b[2..].iter().all(u8::is_ascii_digit)
}

fn is_number_literal(token: &str) -> bool {
    let b = token.as_bytes();
    match b.first() {
        Some(d) if d.is_ascii_digit() => true,
        Some(b'.') => b.get(1).is_some_and(u8::is_ascii_digit),
        _ => false,
    }
}

/// What a sequence was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SequenceRole {
    VulnBefore,
    FixedAfter,
    NonVulnerable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractedSequence {
    pub tokens: Vec<String>,
    pub source_path: String,
    pub function_name: String,
    pub chunk_index: usize,
    pub role: SequenceRole,
}

impl AbstractedSequence {
    /// Space-joined, newline-terminated text form.
    pub fn to_line(&self) -> String {
        format_sequence(&self.tokens)
    }

    /// A zero-token sequence; the target of a surplus pre-fix chunk.
    pub fn empty(source_path: &str, function_name: &str, chunk_index: usize, role: SequenceRole) -> Self {
        AbstractedSequence {
            tokens: Vec::new(),
            source_path: source_path.to_string(),
            function_name: function_name.to_string(),
            chunk_index,
            role,
        }
    }
}

pub fn format_sequence(tokens: &[String]) -> String {
    let mut line = tokens.join(" ");
    line.push('\n');
    line
}

/// Where a token stream came from.
#[derive(Debug, Clone, Copy)]
pub struct SequenceMeta<'a> {
    pub source_path: &'a str,
    pub function_name: &'a str,
    pub role: SequenceRole,
}

/// Greedy left-to-right split into chunks of [`MAX_SEQUENCE_TOKENS`].
pub fn to_sequences(tokens: &[String], meta: SequenceMeta<'_>) -> Result<Vec<AbstractedSequence>> {
    if tokens.is_empty() {
        return Err(Error::EmptyFunction);
    }
    Ok(tokens
        .chunks(MAX_SEQUENCE_TOKENS)
        .enumerate()
        .map(|(chunk_index, chunk)| AbstractedSequence {
            tokens: chunk.to_vec(),
            source_path: meta.source_path.to_string(),
            function_name: meta.function_name.to_string(),
            chunk_index,
            role: meta.role,
        })
        .collect())
}
