//! Lossless C tokenizer, top-level function extractor and the heuristic
//! identifier-role classifier used by abstraction.
//!
//! The lexer never expands macros or evaluates preprocessor conditionals;
//! directives are lexed as ordinary tokens. Concatenating the text of every
//! token returned by [`tokenize`] reproduces the input exactly.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// C89/C99 keywords.
pub const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else",
    "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long", "register",
    "restrict", "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef",
    "union", "unsigned", "void", "volatile", "while", "_Bool", "_Complex", "_Imaginary",
];

/// Punctuators, longest first so that a greedy scan finds maximal munch.
pub const PUNCTUATORS: &[&str] = &[
    "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "*=",
    "/=", "%=", "+=", "-=", "&=", "^=", "|=", "##", "[", "]", "(", ")", "{", "}", ".", "&", "*",
    "+", "-", "~", "!", "/", "%", "<", ">", "^", "|", "?", ":", ";", "=", ",", "#", "\\", "@",
    "$", "`",
];

pub fn is_keyword(text: &str) -> bool {
    KEYWORDS.contains(&text)
}

pub fn is_punctuator(text: &str) -> bool {
    PUNCTUATORS.contains(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Keyword,
    Identifier,
    StringLiteral,
    CharLiteral,
    NumberLiteral,
    Punctuator,
    Comment,
    Whitespace,
}

impl TokenKind {
    pub fn is_noise(self) -> bool {
        matches!(self, TokenKind::Comment | TokenKind::Whitespace)
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    /// Byte offset of the token in the tokenized source.
    pub offset: usize,
}

impl Token {
    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    fn punct(&self, text: &str) -> bool {
        self.is(TokenKind::Punctuator, text)
    }
}

/// Splits `source` into tokens. Fails only on unterminated string, char or
/// block-comment literals.
pub fn tokenize(source: &str) -> Result<Vec<Token>> {
    Lexer { src: source, bytes: source.as_bytes(), pos: 0 }.run()
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

impl<'a> Lexer<'a> {
    fn peek(&self, ahead: usize) -> Option<u8> {
        self.bytes.get(self.pos + ahead).copied()
    }

    fn run(mut self) -> Result<Vec<Token>> {
        let mut tokens = Vec::new();
        while self.pos < self.bytes.len() {
            let start = self.pos;
            let kind = self.next_kind()?;
            tokens.push(Token { text: self.src[start..self.pos].to_string(), kind, offset: start });
        }
        Ok(tokens)
    }

    fn next_kind(&mut self) -> Result<TokenKind> {
        let b = self.bytes[self.pos];
        if matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c) {
            while matches!(self.peek(0), Some(b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)) {
                self.pos += 1;
            }
            return Ok(TokenKind::Whitespace);
        }
        if b == b'/' && self.peek(1) == Some(b'/') {
            while !matches!(self.peek(0), None | Some(b'\n')) {
                self.pos += 1;
            }
            return Ok(TokenKind::Comment);
        }
        if b == b'/' && self.peek(1) == Some(b'*') {
            let start = self.pos;
            match self.src[self.pos + 2..].find("*/") {
                Some(end) => {
                    self.pos += 2 + end + 2;
                    return Ok(TokenKind::Comment);
                }
                None => {
                    return Err(Error::Lex {
                        offset: start,
                        message: "unterminated block comment".into(),
                    })
                }
            }
        }
        if let Some(prefix) = self.literal_prefix() {
            let quote = self.bytes[self.pos + prefix];
            self.pos += prefix;
            self.quoted(quote)?;
            return Ok(if quote == b'"' {
                TokenKind::StringLiteral
            } else {
                TokenKind::CharLiteral
            });
        }
        if b.is_ascii_digit() || (b == b'.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) {
            self.number();
            return Ok(TokenKind::NumberLiteral);
        }
        if is_ident_start(b) {
            let start = self.pos;
            while self.peek(0).is_some_and(is_ident_continue) {
                self.pos += 1;
            }
            return Ok(if is_keyword(&self.src[start..self.pos]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            });
        }
        let rest = &self.src[self.pos..];
        if let Some(p) = PUNCTUATORS.iter().find(|p| rest.starts_with(**p)) {
            self.pos += p.len();
        } else {
            // Any other character (including non-ASCII) becomes a one-char token.
            let ch = rest.chars().next().expect("pos is on a char boundary");
            self.pos += ch.len_utf8();
        }
        Ok(TokenKind::Punctuator)
    }

    /// Length of an encoding prefix (`L`, `u`, `U`, `u8`) if a string or char
    /// literal starts here.
    fn literal_prefix(&self) -> Option<usize> {
        let is_quote = |b: Option<u8>| matches!(b, Some(b'"' | b'\''));
        match self.peek(0)? {
            b'"' | b'\'' => Some(0),
            b'L' | b'U' if is_quote(self.peek(1)) => Some(1),
            b'u' if is_quote(self.peek(1)) => Some(1),
            b'u' if self.peek(1) == Some(b'8') && self.peek(2) == Some(b'"') => Some(2),
            _ => None,
        }
    }

    fn quoted(&mut self, quote: u8) -> Result<()> {
        let start = self.pos;
        self.pos += 1;
        loop {
            match self.peek(0) {
                None | Some(b'\n') => {
                    let what = if quote == b'"' { "string" } else { "char" };
                    return Err(Error::Lex {
                        offset: start,
                        message: format!("unterminated {what} literal"),
                    });
                }
                Some(b'\\') => {
                    self.pos += 1;
                    // The escaped character may be multi-byte.
                    if let Some(ch) = self.src[self.pos..].chars().next() {
                        self.pos += ch.len_utf8();
                    }
                }
                Some(b) if b == quote => {
                    self.pos += 1;
                    return Ok(());
                }
                Some(_) => {
                    let ch = self.src[self.pos..].chars().next().expect("char boundary");
                    self.pos += ch.len_utf8();
                }
            }
        }
    }

    /// Preprocessing-number: digits, letters, underscores, dots and signed
    /// exponents.
    fn number(&mut self) {
        self.pos += 1;
        while let Some(b) = self.peek(0) {
            let exponent_sign =
                matches!(b, b'+' | b'-') && matches!(self.bytes[self.pos - 1], b'e' | b'E' | b'p' | b'P');
            if exponent_sign || is_ident_continue(b) || b == b'.' {
                self.pos += 1;
            } else {
                break;
            }
        }
    }
}

/// Removes comments and whitespace, preserving order.
pub fn strip_noise(tokens: &[Token]) -> Vec<Token> {
    tokens.iter().filter(|t| !t.kind.is_noise()).cloned().collect()
}

/// A function definition found at file scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionUnit {
    pub name: String,
    /// Return type, name and parameter types, parameter names removed.
    pub signature_key: String,
    pub header_tokens: Vec<Token>,
    /// From the opening `{` to its matching `}`, comments and whitespace included.
    pub body_tokens: Vec<Token>,
}

impl FunctionUnit {
    /// Header and body with comments and whitespace removed.
    pub fn significant_tokens(&self) -> Vec<Token> {
        let mut out = strip_noise(&self.header_tokens);
        out.extend(strip_noise(&self.body_tokens));
        out
    }

    /// Texts of the significant tokens; equal for two copies of a function
    /// that differ only in layout or comments.
    pub fn normalized_texts(&self) -> Vec<String> {
        self.significant_tokens().into_iter().map(|t| t.text).collect()
    }
}

/// Marks every token that belongs to a preprocessor directive line.
fn directive_mask(tokens: &[Token]) -> Vec<bool> {
    let mut mask = vec![false; tokens.len()];
    let mut line_start = true;
    let mut in_directive = false;
    for (i, tok) in tokens.iter().enumerate() {
        match tok.kind {
            TokenKind::Whitespace => {
                if in_directive {
                    let continued = i > 0 && tokens[i - 1].punct("\\");
                    if tok.text.contains('\n') && !continued {
                        in_directive = false;
                    }
                }
                if tok.text.contains('\n') {
                    line_start = true;
                }
                mask[i] = in_directive;
            }
            TokenKind::Comment => mask[i] = in_directive,
            _ => {
                if line_start && tok.punct("#") {
                    in_directive = true;
                }
                line_start = false;
                mask[i] = in_directive;
            }
        }
    }
    mask
}

/// Finds every top-level `name ( params ) { ... }` definition.
///
/// Declarations, struct bodies, initializers, K&R-style definitions and
/// definitions returning function pointers are skipped. A `}` without a
/// matching `{` at file scope, or a file ending inside a block, is a
/// [`Error::Structure`].
pub fn extract_functions(tokens: &[Token]) -> Result<Vec<FunctionUnit>> {
    let mask = directive_mask(tokens);
    let code: Vec<usize> =
        (0..tokens.len()).filter(|&i| !mask[i] && !tokens[i].kind.is_noise()).collect();

    let mut functions = Vec::new();
    // Position in `code` where the current top-level declaration began.
    let mut decl_start = 0;
    let mut k = 0;
    while k < code.len() {
        let tok = &tokens[code[k]];
        if tok.punct(";") {
            decl_start = k + 1;
        } else if tok.punct("}") {
            return Err(Error::Structure { offset: tok.offset });
        } else if tok.punct("{") {
            let close = matching_brace(tokens, &code, k)?;
            let decl = &code[decl_start..k];
            if let Some(unit) = function_at(tokens, decl, code[k], code[close]) {
                functions.push(unit);
                decl_start = close + 1;
            }
            // Non-function blocks (struct bodies, initializers) continue the
            // declaration until its `;`.
            k = close;
        }
        k += 1;
    }
    Ok(functions)
}

fn matching_brace(tokens: &[Token], code: &[usize], open: usize) -> Result<usize> {
    let mut depth = 0usize;
    for (k, &i) in code.iter().enumerate().skip(open) {
        if tokens[i].punct("{") {
            depth += 1;
        } else if tokens[i].punct("}") {
            depth -= 1;
            if depth == 0 {
                return Ok(k);
            }
        }
    }
    Err(Error::Structure { offset: tokens[code[open]].offset })
}

fn function_at(
    tokens: &[Token],
    decl: &[usize],
    open: usize,
    close: usize,
) -> Option<FunctionUnit> {
    let last = *decl.last()?;
    if !tokens[last].punct(")") {
        return None;
    }
    if decl.iter().any(|&i| tokens[i].punct("=")) {
        return None;
    }
    // Walk back to the `(` matching the final `)`.
    let mut depth = 0usize;
    let mut lparen = None;
    for (pos, &i) in decl.iter().enumerate().rev() {
        if tokens[i].punct(")") {
            depth += 1;
        } else if tokens[i].punct("(") {
            depth -= 1;
            if depth == 0 {
                lparen = Some(pos);
                break;
            }
        }
    }
    let lparen = lparen?;
    if lparen == 0 {
        return None;
    }
    let name_tok = &tokens[decl[lparen - 1]];
    if name_tok.kind != TokenKind::Identifier || name_tok.text == "__attribute__" {
        return None;
    }
    let header_tokens = tokens[decl[0]..=last].to_vec();
    let signature_key = signature_key(
        &decl[..lparen - 1].iter().map(|&i| &tokens[i]).collect::<Vec<_>>(),
        &name_tok.text,
        &decl[lparen + 1..decl.len() - 1].iter().map(|&i| &tokens[i]).collect::<Vec<_>>(),
    );
    Some(FunctionUnit {
        name: name_tok.text.clone(),
        signature_key,
        header_tokens,
        body_tokens: tokens[open..=close].to_vec(),
    })
}

const STORAGE_CLASS: &[&str] = &["static", "extern", "inline", "register", "auto"];

fn signature_key(ret: &[&Token], name: &str, params: &[&Token]) -> String {
    let mut parts: Vec<&str> = ret
        .iter()
        .filter(|t| !(t.kind == TokenKind::Keyword && STORAGE_CLASS.contains(&t.text.as_str())))
        .map(|t| t.text.as_str())
        .collect();
    parts.push(name);
    parts.push("(");
    let mut depth = 0usize;
    let mut current: Vec<&Token> = Vec::new();
    let mut groups: Vec<Vec<&Token>> = Vec::new();
    for &t in params {
        if t.punct("(") || t.punct("[") {
            depth += 1;
        } else if t.punct(")") || t.punct("]") {
            depth = depth.saturating_sub(1);
        }
        if depth == 0 && t.punct(",") {
            groups.push(std::mem::take(&mut current));
        } else {
            current.push(t);
        }
    }
    if !current.is_empty() || !groups.is_empty() {
        groups.push(current);
    }
    for (g, group) in groups.iter().enumerate() {
        if g > 0 {
            parts.push(",");
        }
        let drop = parameter_name_index(group);
        for (j, t) in group.iter().enumerate() {
            if Some(j) != drop {
                parts.push(t.text.as_str());
            }
        }
    }
    parts.push(")");
    parts.join(" ")
}

/// Index of the declarator name inside one parameter declaration, if any.
fn parameter_name_index(group: &[&Token]) -> Option<usize> {
    // Skip trailing array suffixes.
    let mut end = group.len();
    while end > 0 && group[end - 1].punct("]") {
        let mut depth = 0usize;
        let mut j = end;
        while j > 0 {
            j -= 1;
            if group[j].punct("]") {
                depth += 1;
            } else if group[j].punct("[") {
                depth -= 1;
                if depth == 0 {
                    break;
                }
            }
        }
        end = j;
    }
    if end < 2 {
        return None;
    }
    let candidate = end - 1;
    let prev = group[candidate - 1];
    let is_tag = prev.kind == TokenKind::Keyword && matches!(prev.text.as_str(), "struct" | "union" | "enum");
    (group[candidate].kind == TokenKind::Identifier && !is_tag).then_some(candidate)
}

/// Role of a user-defined identifier within a function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IdentRole {
    FunctionName,
    TypeName,
    VariableName,
}

/// Keywords that can start or continue a declaration's type.
const TYPE_KEYWORDS: &[&str] = &[
    "auto", "char", "const", "double", "extern", "float", "inline", "int", "long", "register",
    "restrict", "short", "signed", "static", "unsigned", "void", "volatile", "_Bool", "_Complex",
];

/// Classifies each identifier in `tokens` (assumed noise-free). The result is
/// aligned with `tokens`; non-identifiers map to `None`.
///
/// Per occurrence: followed by `(` is a function name; preceded by
/// `struct`/`union`/`enum`, or in type position of a declaration, is a type
/// name; anything else is a variable. All occurrences of one spelling then
/// share a role: function name if any occurrence was one, otherwise the role
/// of the first occurrence.
pub fn classify_identifier_roles(tokens: &[Token]) -> Vec<Option<IdentRole>> {
    let header_end = tokens.iter().position(|t| t.punct("{")).unwrap_or(tokens.len());
    let local: Vec<Option<IdentRole>> =
        (0..tokens.len()).map(|i| local_role(tokens, i, header_end)).collect();

    let mut unified: HashMap<&str, IdentRole> = HashMap::new();
    for (tok, role) in tokens.iter().zip(&local) {
        if let Some(role) = *role {
            let entry = unified.entry(tok.text.as_str()).or_insert(role);
            if role == IdentRole::FunctionName {
                *entry = IdentRole::FunctionName;
            }
        }
    }
    tokens
        .iter()
        .zip(&local)
        .map(|(tok, role)| role.map(|_| unified[tok.text.as_str()]))
        .collect()
}

/// Convenience wrapper classifying the significant tokens of a function.
pub fn classify_function(unit: &FunctionUnit) -> (Vec<Token>, Vec<Option<IdentRole>>) {
    let tokens = unit.significant_tokens();
    let roles = classify_identifier_roles(&tokens);
    (tokens, roles)
}

fn local_role(tokens: &[Token], i: usize, header_end: usize) -> Option<IdentRole> {
    let tok = &tokens[i];
    if tok.kind != TokenKind::Identifier {
        return None;
    }
    let next = tokens.get(i + 1);
    let prev = i.checked_sub(1).map(|p| &tokens[p]);
    if next.is_some_and(|n| n.punct("(")) {
        return Some(IdentRole::FunctionName);
    }
    if let Some(p) = prev {
        if p.kind == TokenKind::Keyword && matches!(p.text.as_str(), "struct" | "union" | "enum") {
            return Some(IdentRole::TypeName);
        }
        if p.punct(".") || p.punct("->") {
            return Some(IdentRole::VariableName);
        }
    }
    if in_type_position(tokens, i, i < header_end) {
        return Some(IdentRole::TypeName);
    }
    Some(IdentRole::VariableName)
}

fn is_type_keyword(t: &Token) -> bool {
    t.kind == TokenKind::Keyword && TYPE_KEYWORDS.contains(&t.text.as_str())
}

/// `T x`, `const T x`, `T *x` starting a statement or parameter, and
/// `(T *)` casts.
fn in_type_position(tokens: &[Token], i: usize, in_header: bool) -> bool {
    let prev = i.checked_sub(1).map(|p| &tokens[p]);
    let statement_start = prev.is_none_or(|p| {
        p.punct(";") || p.punct("{") || p.punct("}") || is_type_keyword(p)
    });
    let parameter_start = in_header && prev.is_some_and(|p| p.punct("(") || p.punct(","));
    let declaration_context = statement_start || parameter_start;

    match tokens.get(i + 1) {
        Some(n) if n.kind == TokenKind::Identifier => {
            return declaration_context || prev.is_some_and(|p| p.punct("(") || p.punct(","))
        }
        Some(n) if is_type_keyword(n) => return declaration_context,
        _ => {}
    }
    let mut j = i + 1;
    while tokens.get(j).is_some_and(|t| t.punct("*")) {
        j += 1;
    }
    if j == i + 1 {
        return false;
    }
    match tokens.get(j) {
        Some(n) if n.kind == TokenKind::Identifier => declaration_context,
        Some(n) if n.kind == TokenKind::Keyword => {
            declaration_context && (n.text == "const" || n.text == "restrict")
        }
        Some(n) => n.punct(")") && prev.is_some_and(|p| p.punct("(")),
        None => false,
    }
}
