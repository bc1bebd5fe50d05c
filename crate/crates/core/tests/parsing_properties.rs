use std::collections::HashMap;

use proptest::prelude::*;
use vulntrans_core::abstraction::{abstract_function, to_sequences, SequenceMeta, MAX_SEQUENCE_TOKENS};
use vulntrans_core::corpus::{annotated_function_roles, SourceGenerator};
use vulntrans_core::cparse::{classify_function, extract_functions, strip_noise, tokenize};
use vulntrans_core::pairing::{build_training_pairs, label_material};
use vulntrans_core::{Corpus, IdentRole, PairingConfig, SequenceRole, SynthesisSpec, TokenKind};

/// Fragments that concatenate into plausible (and implausible) C text.
fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z_][a-zA-Z0-9_]{0,6}",
        "[0-9]{1,4}[uUlL]?",
        "0x[0-9a-fA-F]{1,4}",
        Just("\"str\\\"ing\"".to_string()),
        Just("'\\n'".to_string()),
        Just("/* block\n comment */".to_string()),
        Just("// line comment\n".to_string()),
        Just("#include <stdio.h>\n".to_string()),
        "[ \t\n]{1,3}",
        prop::sample::select(vec![
            "(", ")", "{", "}", "[", "]", ";", ",", "->", "++", "--", "<<=", ">>", "==", "!=", "&&", "||",
            "+", "-", "*", "/", "%", "&", "|", "^", "!", "~", "?", ":", "=", ".", "...", "<", ">",
        ])
        .prop_map(str::to_string),
    ]
}

fn source() -> impl Strategy<Value = String> {
    prop::collection::vec(fragment(), 0..60).prop_map(|parts| parts.join(""))
}

/// Renames every identifier token whose text is in `names`.
fn rename(source: &str, names: &HashMap<String, String>) -> String {
    tokenize(source)
        .unwrap()
        .into_iter()
        .map(|t| match (t.kind, names.get(&t.text)) {
            (TokenKind::Identifier, Some(new)) => new.clone(),
            _ => t.text,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tokens_reassemble_the_source(src in source()) {
        if let Ok(tokens) = tokenize(&src) {
            let joined: String = tokens.iter().map(|t| t.text.as_str()).collect();
            prop_assert_eq!(&joined, &src);
            let mut offset = 0;
            for t in &tokens {
                prop_assert_eq!(t.offset, offset);
                prop_assert!(!t.text.is_empty());
                offset += t.text.len();
            }
        }
    }

    #[test]
    fn tokenizer_never_panics_on_arbitrary_text(src in "\\PC{0,200}") {
        let _ = tokenize(&src);
    }

    #[test]
    fn stripping_noise_keeps_a_subsequence(src in source()) {
        if let Ok(tokens) = tokenize(&src) {
            let stripped = strip_noise(&tokens);
            prop_assert!(stripped.iter().all(|t| !t.kind.is_noise()));
            let mut it = tokens.iter();
            for s in &stripped {
                prop_assert!(it.any(|t| t == s), "token {:?} out of order", s);
            }
            prop_assert_eq!(stripped.len(), tokens.iter().filter(|t| !t.kind.is_noise()).count());
        }
    }

    #[test]
    fn chunks_concatenate_to_the_stream(n in 1usize..400) {
        let tokens: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let meta = SequenceMeta { source_path: "a.c", function_name: "f", role: SequenceRole::NonVulnerable };
        let seqs = to_sequences(&tokens, meta).unwrap();
        prop_assert_eq!(seqs.len(), n.div_ceil(MAX_SEQUENCE_TOKENS));
        for (k, s) in seqs.iter().enumerate() {
            prop_assert_eq!(s.chunk_index, k);
            prop_assert!(!s.tokens.is_empty() && s.tokens.len() <= MAX_SEQUENCE_TOKENS);
            if k + 1 < seqs.len() {
                prop_assert_eq!(s.tokens.len(), MAX_SEQUENCE_TOKENS);
            }
        }
        let joined: Vec<String> = seqs.into_iter().flat_map(|s| s.tokens).collect();
        prop_assert_eq!(joined, tokens);
    }

    #[test]
    fn abstraction_is_invariant_under_consistent_renaming(seed in any::<u64>(), kind in 0usize..3) {
        let mut gen = SourceGenerator::new(seed, 0.0);
        let f = match kind {
            0 => gen.vulnerable_function(),
            1 => gen.guarded_function(),
            _ => gen.benign_function(),
        };
        let names: HashMap<String, String> =
            f.roles.iter().map(|(name, _)| (name.clone(), format!("{name}_renamed"))).collect();
        let renamed = rename(&f.source, &names);
        prop_assert_ne!(&renamed, &f.source);
        let a = extract_functions(&tokenize(&f.source).unwrap()).unwrap();
        let b = extract_functions(&tokenize(&renamed).unwrap()).unwrap();
        prop_assert_eq!(a.len(), 1);
        prop_assert_eq!(b.len(), 1);
        prop_assert_eq!(abstract_function(&a[0], None).0, abstract_function(&b[0], None).0);
    }
}

#[test]
fn role_classification_agrees_with_generator_annotations() {
    let functions = annotated_function_roles(11, 300);
    let (mut agree, mut total) = (0usize, 0usize);
    for f in &functions {
        let units = extract_functions(&tokenize(&f.source).unwrap()).unwrap();
        assert_eq!(units.len(), 1, "{}", f.source);
        let (tokens, roles) = classify_function(&units[0]);
        let found: HashMap<&str, IdentRole> = tokens
            .iter()
            .zip(&roles)
            .filter_map(|(t, r)| r.map(|r| (t.text.as_str(), r)))
            .collect();
        for (name, expected) in &f.roles {
            total += 1;
            if found.get(name.as_str()) == Some(expected) {
                agree += 1;
            }
        }
    }
    let rate = agree as f64 / total as f64;
    assert!(rate >= 0.95, "role agreement {rate:.3} over {total} identifiers");
}

fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut out = items.to_vec();
    out.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    out
}

fn pair_keys(corpus: &Corpus, seed: u64) -> Vec<String> {
    let material = corpus.clean_training_set(0).unwrap();
    let (labeled, _) = label_material(&material);
    let labeled = if seed == 0 { labeled } else { shuffled(&labeled, seed) };
    let mut keys: Vec<String> = build_training_pairs(&labeled, &PairingConfig::default())
        .unwrap()
        .iter()
        .map(|p| format!("{}#{}#{}#{}", p.input.source_path, p.input.function_name, p.input.chunk_index, p.to_tsv()))
        .collect();
    keys.sort();
    keys
}

#[test]
fn training_pairs_do_not_depend_on_function_order() {
    let spec = SynthesisSpec { n_releases: 2, components_per_release: 80, ..SynthesisSpec::default() };
    let corpus = vulntrans_core::corpus::generate_synthetic_corpus(5, &spec).unwrap();
    let reference = pair_keys(&corpus, 0);
    assert!(!reference.is_empty());
    for seed in 1..4 {
        assert_eq!(pair_keys(&corpus, seed), reference);
    }
}
