use std::collections::BTreeMap;

use vulntrans_core::baselines::{run_baseline, BaselineConfig, Technique};
use vulntrans_core::corpus::{generate_synthetic_corpus, load_corpus, read_corpus, save_corpus, corpus_to_string};
use vulntrans_core::evaluate::{run_experiment, run_protocol, train_on_material, ReportStatus};
use vulntrans_core::predict::predict_release;
use vulntrans_core::{Corpus, Error, ModelConfig, PairingConfig, Release, Setting, SynthesisSpec};

fn corpus(seed: u64, spec: SynthesisSpec) -> Corpus {
    generate_synthetic_corpus(seed, &spec).unwrap()
}

fn quick_model() -> ModelConfig {
    ModelConfig { embedding_dim: 8, hidden_units: 8, max_steps: 30, iteration_steps: 10, ..ModelConfig::desk() }
}

#[test]
fn corpus_survives_save_and_load() {
    let c = corpus(21, SynthesisSpec { planted_signal: Some(vulntrans_core::corpus::PlantedSignal::Call), ..Default::default() });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    save_corpus(&c, &path).unwrap();
    let back = load_corpus(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(corpus_to_string(&back), std::fs::read_to_string(&path).unwrap());
    assert_eq!(read_corpus(corpus_to_string(&c).as_bytes()).unwrap(), c);
}

#[test]
fn equal_seeds_give_equal_corpora() {
    let spec = SynthesisSpec::default();
    assert_eq!(corpus_to_string(&corpus(4, spec.clone())), corpus_to_string(&corpus(4, spec.clone())));
    assert_ne!(corpus_to_string(&corpus(4, spec.clone())), corpus_to_string(&corpus(5, spec)));
}

#[test]
fn realistic_material_is_contained_in_clean_material() {
    let spec = SynthesisSpec { n_releases: 5, detection_lag_days: 100, release_spacing_days: 90, ..Default::default() };
    for seed in 0..5 {
        let c = corpus(seed, spec.clone());
        let mut strict = false;
        for i in 0..c.releases.len() - 1 {
            let clean = c.clean_training_set(i).unwrap().fix_pairs();
            let realistic = c.realistic_training_set(i).unwrap().fix_pairs();
            assert!(realistic.is_subset(&clean), "seed {seed} release {i}");
            strict |= realistic.len() < clean.len();
        }
        assert!(strict, "seed {seed}: late detections should drop some fixes");
    }
}

#[test]
fn zero_lag_makes_the_settings_agree() {
    let spec = SynthesisSpec { detection_lag_days: 0, ..Default::default() };
    let c = corpus(8, spec);
    for i in 0..c.releases.len() - 1 {
        assert_eq!(c.clean_training_set(i).unwrap().fix_pairs(), c.realistic_training_set(i).unwrap().fix_pairs());
    }
}

fn reversed(release: &Release) -> Release {
    let mut r = release.clone();
    r.components.reverse();
    r
}

#[test]
fn verdicts_do_not_depend_on_component_order() {
    let c = corpus(2, SynthesisSpec { n_releases: 2, ..Default::default() });
    let trained = train_on_material(&c.clean_training_set(0).unwrap(), &quick_model(), &PairingConfig::default()).unwrap();
    let forward = predict_release(&trained.model, &c.releases[1]);
    let backward = predict_release(&trained.model, &reversed(&c.releases[1]));
    assert_eq!(forward.len(), c.releases[1].components.len());
    let by_path = |vs: Vec<vulntrans_core::ComponentVerdict>| -> BTreeMap<String, _> {
        vs.into_iter().map(|v| (v.path.clone(), v)).collect()
    };
    assert_eq!(by_path(forward), by_path(backward));
}

#[test]
fn model_vocabulary_is_bounded_by_training_tokens() {
    let c = corpus(3, SynthesisSpec { n_releases: 2, ..Default::default() });
    let material = c.clean_training_set(0).unwrap();
    let trained = train_on_material(&material, &quick_model(), &PairingConfig::default()).unwrap();
    let (labeled, _) = vulntrans_core::pairing::label_material(&material);
    let pairs = vulntrans_core::pairing::build_training_pairs(&labeled, &PairingConfig::default()).unwrap();
    let distinct: std::collections::BTreeSet<&str> = pairs
        .iter()
        .flat_map(|p| p.input.tokens.iter().chain(&p.target.tokens))
        .map(String::as_str)
        .collect();
    let vocab = &trained.model.vocabulary;
    assert!(vocab.entries().len() <= distinct.len());
    assert!(vocab.entries().iter().all(|t| distinct.contains(t.as_str())));
}

#[test]
fn protocol_reports_every_adjacent_release_pair() {
    let c = corpus(6, SynthesisSpec { n_releases: 3, components_per_release: 30, ..Default::default() });
    for setting in [Setting::Clean, Setting::Realistic] {
        let reports = run_experiment(&c, setting, &quick_model(), &PairingConfig::default()).unwrap();
        assert_eq!(reports.len(), 2);
        for (i, r) in reports.iter().enumerate() {
            assert_eq!(r.train_release, c.releases[i].name);
            assert_eq!(r.test_release, c.releases[i + 1].name);
            assert_eq!(r.setting, setting);
            if r.is_ok() {
                assert_eq!(r.matrix.total(), c.releases[i + 1].components.len());
            }
        }
    }
}

#[test]
fn predictor_failures_become_failed_reports() {
    let c = corpus(6, SynthesisSpec { n_releases: 3, components_per_release: 20, ..Default::default() });
    let predictor = |_: &vulntrans_core::TrainingMaterial, test: &Release| {
        if test.name == c.releases[2].name {
            Err(Error::EmptyCorpus)
        } else {
            Ok((test.components.iter().map(|x| (x.path.clone(), true)).collect(), 0))
        }
    };
    let reports = run_protocol(&c, Setting::Clean, "stub", &predictor).unwrap();
    assert_eq!(reports[0].status, ReportStatus::Ok);
    assert_eq!(reports[0].recall, 1.0);
    assert_eq!(reports[1].status, ReportStatus::Failed);
    assert!(reports[1].error.is_some());

    let single = Corpus { releases: c.releases[..1].to_vec(), ..c.clone() };
    assert!(run_protocol(&single, Setting::Clean, "stub", &predictor).is_err());
}

#[test]
fn baselines_report_on_the_standard_corpus() {
    let c = corpus(9, SynthesisSpec::default());
    for technique in [Technique::SoftwareMetrics, Technique::Imports, Technique::FunctionCalls, Technique::TextMining] {
        let reports = run_baseline(&c, technique, Setting::Clean, &BaselineConfig::default()).unwrap();
        assert_eq!(reports.len(), c.releases.len() - 1);
        for r in &reports {
            assert_eq!(r.technique, technique.as_str());
            assert!(r.is_ok(), "{technique}: {:?}", r.error);
            assert!(r.mcc.is_finite() && (-1.0..=1.0).contains(&r.mcc));
        }
    }
}
