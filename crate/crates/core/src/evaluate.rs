//! Confusion-matrix metrics, the release-pair experiment driver and the
//! novel/existing breakdown.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, Release, Setting, TrainingMaterial};
use crate::error::{Error, Result};
use crate::pairing::{build_training_pairs, label_material, PairKind, PairingConfig};
use crate::predict::{predict_release, ComponentVerdict};
use crate::seq2seq::{split_validation, train, ModelConfig, Seq2SeqModel, TrainingState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The matrix obtained by flipping every prediction.
    pub fn inverted(&self) -> Self {
        ConfusionMatrix { tp: self.fn_, fp: self.tn, tn: self.fp, fn_: self.tp }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub mcc: f64,
}

/// Precision, recall, F-measure and Matthews correlation. Zero denominators
/// give 0.0; MCC is 0.0 whenever a row or column marginal is zero.
pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f_measure = ratio(2.0 * precision * recall, precision + recall);
    let marginals = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    let mcc = if marginals.contains(&0.0) {
        0.0
    } else {
        let den = marginals.iter().product::<f64>().sqrt();
        ((tp * tn - fp * fn_) / den).clamp(-1.0, 1.0)
    };
    Metrics { precision, recall, f_measure, mcc }
}

/// Tallies `(path, predicted vulnerable)` pairs against ground truth.
pub fn confusion<'a, I>(predictions: I, truth: &HashMap<String, Label>) -> Result<ConfusionMatrix>
where
    I: IntoIterator<Item = (&'a str, bool)>,
{
    let mut cm = ConfusionMatrix::default();
    for (path, predicted) in predictions {
        let actual = truth.get(path).ok_or_else(|| Error::MissingLabel(path.to_string()))?;
        match (*actual == Label::Vulnerable, predicted) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

pub fn verdict_predictions(verdicts: &[ComponentVerdict]) -> impl Iterator<Item = (&str, bool)> {
    verdicts.iter().map(|v| (v.path.as_str(), v.predicted_vulnerable))
}

/// Detection rate (percent) among test-release vulnerable components that
/// were already vulnerable at the same path in the training release
/// (existing) and among the rest (novel). An empty class yields `None`.
pub fn novel_existing_breakdown<'a, I>(predictions: I, test: &Release, train: &Release) -> (Option<f64>, Option<f64>)
where
    I: IntoIterator<Item = (&'a str, bool)>,
{
    let predicted: HashMap<&str, bool> = predictions.into_iter().collect();
    let previously: HashSet<&str> =
        train.components.iter().filter(|c| c.is_vulnerable()).map(|c| c.path.as_str()).collect();
    let (mut existing, mut novel) = ((0usize, 0usize), (0usize, 0usize));
    for c in test.components.iter().filter(|c| c.is_vulnerable()) {
        let class = if previously.contains(c.path.as_str()) { &mut existing } else { &mut novel };
        class.1 += 1;
        if predicted.get(c.path.as_str()).copied().unwrap_or(false) {
            class.0 += 1;
        }
    }
    let pct = |(hit, total): (usize, usize)| (total > 0).then(|| 100.0 * hit as f64 / total as f64);
    (pct(existing), pct(novel))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Ok,
    Failed,
}

/// One release-pair result; the same schema serves the main approach and
/// every baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub technique: String,
    pub train_release: String,
    pub test_release: String,
    pub setting: Setting,
    pub status: ReportStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Training examples used (sequence pairs or components).
    pub training_examples: usize,
    pub matrix: ConfusionMatrix,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub mcc: f64,
    pub existing_detected_pct: Option<f64>,
    pub novel_detected_pct: Option<f64>,
}

impl EvaluationReport {
    pub fn from_matrix(
        technique: &str,
        train: &Release,
        test: &Release,
        setting: Setting,
        matrix: ConfusionMatrix,
        training_examples: usize,
        breakdown: (Option<f64>, Option<f64>),
    ) -> Self {
        let m = metrics(&matrix);
        EvaluationReport {
            technique: technique.to_string(),
            train_release: train.name.clone(),
            test_release: test.name.clone(),
            setting,
            status: ReportStatus::Ok,
            error: None,
            training_examples,
            matrix,
            precision: m.precision,
            recall: m.recall,
            f_measure: m.f_measure,
            mcc: m.mcc,
            existing_detected_pct: breakdown.0,
            novel_detected_pct: breakdown.1,
        }
    }

    pub fn failed(technique: &str, train: &Release, test: &Release, setting: Setting, error: &Error) -> Self {
        EvaluationReport {
            status: ReportStatus::Failed,
            error: Some(error.to_string()),
            ..Self::from_matrix(technique, train, test, setting, ConfusionMatrix::default(), 0, (None, None))
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ReportStatus::Ok
    }
}

/// Predicted labels for the test release, given the training material.
pub type Predictor<'a> = dyn Fn(&TrainingMaterial, &Release) -> Result<(Vec<(String, bool)>, usize)> + Sync + 'a;

/// The (n−1) release-pair protocol shared by the main approach and the
/// baselines. A failing pair becomes a failed report. Pairs may run in
/// parallel; reports come back in release order.
pub fn run_protocol(corpus: &Corpus, setting: Setting, technique: &str, predictor: &Predictor<'_>) -> Result<Vec<EvaluationReport>> {
    let n = corpus.releases.len();
    if n < 2 {
        return Err(Error::Index { index: 0, releases: n });
    }
    Ok((0..n - 1)
        .into_par_iter()
        .map(|i| {
            let (train_rel, test_rel) = (&corpus.releases[i], &corpus.releases[i + 1]);
            let outcome = corpus.training_set(i, setting).and_then(|material| {
                let (predictions, examples) = predictor(&material, test_rel)?;
                let preds = || predictions.iter().map(|(p, v)| (p.as_str(), *v));
                let matrix = confusion(preds(), &test_rel.labels())?;
                let breakdown = novel_existing_breakdown(preds(), test_rel, train_rel);
                Ok(EvaluationReport::from_matrix(technique, train_rel, test_rel, setting, matrix, examples, breakdown))
            });
            outcome.unwrap_or_else(|e| EvaluationReport::failed(technique, train_rel, test_rel, setting, &e))
        })
        .collect())
}

pub const SEQ2SEQ_TECHNIQUE: &str = "seq2seq";

/// A model trained on one release's material.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Seq2SeqModel,
    pub state: TrainingState,
    /// Training pairs before the validation hold-out.
    pub pairs: usize,
    pub validation_pairs: usize,
}

/// Labels the material, builds training pairs, holds out a validation
/// split and trains. Material without a single vulnerable→fixed pair is
/// rejected with [`Error::EmptyCorpus`].
pub fn train_on_material(
    material: &TrainingMaterial,
    model_config: &ModelConfig,
    pairing_config: &PairingConfig,
) -> Result<TrainedModel> {
    let (labeled, _) = label_material(material);
    let pairs = build_training_pairs(&labeled, pairing_config)?;
    if !pairs.iter().any(|p| p.kind == PairKind::VulnToFixed) {
        return Err(Error::EmptyCorpus);
    }
    let (train_pairs, validation) = split_validation(&pairs, model_config.validation_fraction, model_config.seed);
    let (model, state) = train(&train_pairs, &validation, model_config)?;
    Ok(TrainedModel { model, state, pairs: pairs.len(), validation_pairs: validation.len() })
}

/// Trains a fresh translation model per release pair and predicts the next
/// release.
pub fn run_experiment(
    corpus: &Corpus,
    setting: Setting,
    model_config: &ModelConfig,
    pairing_config: &PairingConfig,
) -> Result<Vec<EvaluationReport>> {
    model_config.validate()?;
    let predictor = |material: &TrainingMaterial, test: &Release| {
        let trained = train_on_material(material, model_config, pairing_config)?;
        let verdicts = predict_release(&trained.model, test);
        let predictions = verdicts.into_iter().map(|v| (v.path, v.predicted_vulnerable)).collect();
        Ok((predictions, trained.pairs))
    };
    run_protocol(corpus, setting, SEQ2SEQ_TECHNIQUE, &predictor)
}

/// Aggregate of the successful reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub releases: usize,
    pub mcc: f64,
    pub f_measure: f64,
    pub precision: f64,
    pub recall: f64,
    pub existing_detected_pct: Option<f64>,
    pub novel_detected_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub average: SummaryRow,
    pub median: SummaryRow,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

/// Average and median over successful reports; undefined novel/existing
/// percentages are left out of their aggregates.
pub fn summarize(reports: &[EvaluationReport]) -> Summary {
    let ok: Vec<&EvaluationReport> = reports.iter().filter(|r| r.is_ok()).collect();
    let column = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
    let cols = [
        column(&|r| Some(r.mcc)),
        column(&|r| Some(r.f_measure)),
        column(&|r| Some(r.precision)),
        column(&|r| Some(r.recall)),
        column(&|r| r.existing_detected_pct),
        column(&|r| r.novel_detected_pct),
    ];
    let row = |agg: fn(&[f64]) -> Option<f64>| SummaryRow {
        releases: ok.len(),
        mcc: agg(&cols[0]).unwrap_or(0.0),
        f_measure: agg(&cols[1]).unwrap_or(0.0),
        precision: agg(&cols[2]).unwrap_or(0.0),
        recall: agg(&cols[3]).unwrap_or(0.0),
        existing_detected_pct: agg(&cols[4]),
        novel_detected_pct: agg(&cols[5]),
    };
    Summary { average: row(mean), median: row(median) }
}

#[derive(Serialize)]
struct TaggedReport<'a> {
    kind: &'static str,
    #[serde(flatten)]
    report: &'a EvaluationReport,
}

#[derive(Serialize)]
struct TaggedSummary<'a> {
    kind: &'static str,
    #[serde(flatten)]
    summary: &'a Summary,
}

/// One JSON object per release pair, then a `"kind":"summary"` line.
pub fn write_reports_json<W: Write>(reports: &[EvaluationReport], mut out: W) -> Result<()> {
    for report in reports {
        serde_json::to_writer(&mut out, &TaggedReport { kind: "release", report }).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    let summary = summarize(reports);
    serde_json::to_writer(&mut out, &TaggedSummary { kind: "summary", summary: &summary }).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Parses the JSON-lines report format back into its release rows and summary.
pub fn read_reports_json(text: &str) -> Result<(Vec<EvaluationReport>, Summary)> {
    #[derive(Deserialize)]
    #[serde(tag = "kind", rename_all = "snake_case")]
    enum Line {
        Release(EvaluationReport),
        Summary(Summary),
    }
    let mut reports = Vec::new();
    let mut summary = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: Line =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        match parsed {
            Line::Release(r) if summary.is_none() => reports.push(r),
            Line::Release(_) => {
                return Err(Error::Parse { line: i + 1, message: "release row after summary".into() })
            }
            Line::Summary(s) => summary = Some(s),
        }
    }
    let summary = summary.ok_or_else(|| Error::Parse { line: text.lines().count(), message: "missing summary".into() })?;
    Ok((reports, summary))
}

/// Table-shaped CSV: `Release,MCC,F-measure,Precision,Recall`, then
/// Average and Median rows. Failed pairs show `NA`.
pub fn write_reports_csv<W: Write>(reports: &[EvaluationReport], mut out: W) -> Result<()> {
    writeln!(out, "Release,MCC,F-measure,Precision,Recall")?;
    for r in reports {
        if r.is_ok() {
            writeln!(out, "{},{:.3},{:.3},{:.3},{:.3}", r.test_release, r.mcc, r.f_measure, r.precision, r.recall)?;
        } else {
            writeln!(out, "{},NA,NA,NA,NA", r.test_release)?;
        }
    }
    let s = summarize(reports);
    for (name, row) in [("Average", s.average), ("Median", s.median)] {
        writeln!(out, "{name},{:.3},{:.3},{:.3},{:.3}", row.mcc, row.f_measure, row.precision, row.recall)?;
    }
    Ok(())
}
