//! Labeled datasets and the binary evaluation protocol: confusion matrix,
//! per-class precision/recall/F1, accuracy and macro-F1.

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::{Label, Prediction};
use crate::syntax::DepTag;

/// Size of the 61-criterion acceptance-criteria evaluation set.
pub const CWA_SIZE: usize = 61;
pub const CWA_CAUSAL: usize = 32;
pub const CWA_NON_CAUSAL: usize = 29;

/// Six labeled acceptance criteria from the CWA data set, used as a fixed
/// oracle for the baseline.
pub const EXAMPLE_CRITERIA: [(&str, Label); 6] = [
    ("The prompt no longer appears after the first time the app is used.", Label::Causal),
    ("The terms of use can be displayed within the app.", Label::NonCausal),
    ("The consent prompt is shown only the first time a user launches the app.", Label::Causal),
    ("An explanation of the app\u{2019}s various functions will be provided.", Label::NonCausal),
    ("There is a \u{201c}Publication information\u{201d} item in the menu.", Label::NonCausal),
    ("The IDs can be sent to the Warn server pseudonymized.", Label::NonCausal),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub label: Label,
    /// Gold DEP tags, one per whitespace-separated token.
    pub tags: Option<Vec<DepTag>>,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: Label) -> Self {
        Self {
            text: text.into(),
            label,
            tags: None,
        }
    }
}

/// Ordered examples; class counts are always derived from the list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledDataset {
    examples: Vec<LabeledExample>,
}

impl LabeledDataset {
    pub fn new(examples: Vec<LabeledExample>) -> Result<Self> {
        if let Some(i) = examples.iter().position(|e| e.text.trim().is_empty()) {
            return Err(Error::InvalidInput(format!("example {i} has empty text")));
        }
        Ok(Self { examples })
    }

    pub fn example_criteria() -> Self {
        Self {
            examples: EXAMPLE_CRITERIA.iter().map(|&(t, l)| LabeledExample::new(t, l)).collect(),
        }
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.examples.iter().filter(|e| e.label == label).count()
    }

    pub fn causal_count(&self) -> usize {
        self.count(Label::Causal)
    }

    pub fn non_causal_count(&self) -> usize {
        self.count(Label::NonCausal)
    }

    /// Errors unless the dataset has exactly the given class split.
    pub fn check_split(&self, causal: usize, non_causal: usize) -> Result<()> {
        let found = (self.causal_count(), self.non_causal_count());
        if found == (causal, non_causal) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "expected {causal} causal / {non_causal} non-causal examples, found {} / {}",
                found.0, found.1
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(DatasetFormat::Jsonl),
            Some("csv") => Ok(DatasetFormat::Csv),
            _ => Err(Error::InvalidInput(format!(
                "cannot infer dataset format of {}; use .jsonl or .csv",
                path.display()
            ))),
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DatasetFormat::Jsonl),
            "csv" => Ok(DatasetFormat::Csv),
            other => Err(Error::InvalidInput(format!("unknown dataset format {other:?}"))),
        }
    }
}

fn parse_label(value: &serde_json::Value, line: usize) -> Result<Label> {
    value
        .as_u64()
        .and_then(Label::from_index)
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("label must be 0 or 1, found {value}"),
        })
}

fn parse_jsonl_record(raw: &str, line: usize) -> Result<LabeledExample> {
    let parse_err = |message: String| Error::Parse { line, message };
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| parse_err("record is not an object".into()))?;
    let text = object
        .get("text")
        .and_then(|t| t.as_str())
        .ok_or_else(|| parse_err("missing string field \"text\"".into()))?;
    if text.trim().is_empty() {
        return Err(parse_err("text is empty".into()));
    }
    let label = parse_label(
        object.get("label").ok_or_else(|| parse_err("missing field \"label\"".into()))?,
        line,
    )?;
    let tags = match object.get("tags") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::Array(items)) => {
            let tags = items
                .iter()
                .map(|item| {
                    let name = item.as_str().ok_or_else(|| parse_err("tags must be strings".into()))?;
                    let tag: DepTag = name.parse().map_err(|e: Error| parse_err(e.to_string()))?;
                    if tag == DepTag::None {
                        return Err(parse_err("NONE is not a word tag".into()));
                    }
                    Ok(tag)
                })
                .collect::<Result<Vec<_>>>()?;
            if tags.len() != text.split_whitespace().count() {
                return Err(parse_err(format!(
                    "{} tags for {} whitespace tokens",
                    tags.len(),
                    text.split_whitespace().count()
                )));
            }
            Some(tags)
        }
        Some(_) => return Err(parse_err("tags must be an array".into())),
    };
    Ok(LabeledExample {
        text: text.to_owned(),
        label,
        tags,
    })
}

/// Parses line-delimited JSON records. Blank lines are skipped.
pub fn parse_jsonl(contents: &str) -> Result<LabeledDataset> {
    let mut examples = Vec::new();
    for (i, raw) in contents.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        examples.push(parse_jsonl_record(raw, i + 1)?);
    }
    if examples.is_empty() {
        return Err(Error::InvalidInput("dataset contains no records".into()));
    }
    LabeledDataset::new(examples)
}

#[derive(Deserialize)]
struct CsvRecord {
    text: String,
    label: String,
}

/// Parses CSV with a `text,label` header. Line numbers count the header as
/// line 1.
pub fn parse_csv(contents: &str) -> Result<LabeledDataset> {
    let mut reader = csv::Reader::from_reader(contents.as_bytes());
    let mut examples = Vec::new();
    for record in reader.deserialize::<CsvRecord>() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = examples.len() + 2;
        let label = match record.label.trim() {
            "0" => Label::NonCausal,
            "1" => Label::Causal,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("label must be 0 or 1, found {other:?}"),
                })
            }
        };
        if record.text.trim().is_empty() {
            return Err(Error::Parse {
                line,
                message: "text is empty".into(),
            });
        }
        examples.push(LabeledExample::new(record.text, label));
    }
    if examples.is_empty() {
        return Err(Error::InvalidInput("dataset contains no records".into()));
    }
    LabeledDataset::new(examples)
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        DatasetFormat::Jsonl => parse_jsonl(&contents),
        DatasetFormat::Csv => parse_csv(&contents),
    }
}

/// Writes a dataset as JSONL.
pub fn to_jsonl(dataset: &LabeledDataset) -> String {
    let mut out = String::new();
    for ex in dataset.examples() {
        let mut record = serde_json::json!({ "text": ex.text, "label": ex.label.index() });
        if let Some(tags) = &ex.tags {
            record["tags"] = tags.iter().map(|t| t.name()).collect();
        }
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

/// Binary confusion matrix with causal as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "tn")]
    pub true_neg: usize,
}

impl ConfusionMatrix {
    pub fn new(true_pos: usize, false_neg: usize, false_pos: usize, true_neg: usize) -> Self {
        Self {
            true_pos,
            false_neg,
            false_pos,
            true_neg,
        }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Causal, Label::Causal) => self.true_pos += 1,
            (Label::Causal, Label::NonCausal) => self.false_neg += 1,
            (Label::NonCausal, Label::Causal) => self.false_pos += 1,
            (Label::NonCausal, Label::NonCausal) => self.true_neg += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_neg + self.false_pos + self.true_neg
    }

    pub fn causal_support(&self) -> usize {
        self.true_pos + self.false_neg
    }

    pub fn non_causal_support(&self) -> usize {
        self.false_pos + self.true_neg
    }

    /// The same counts with non-causal taken as the positive class.
    pub fn swapped(&self) -> Self {
        Self::new(self.true_neg, self.false_pos, self.false_neg, self.true_pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub causal: ClassMetrics,
    pub non_causal: ClassMetrics,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(tp: usize, fn_: usize, fp: usize) -> ClassMetrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

/// Per-class metrics, accuracy and macro-F1. Any 0/0 ratio is 0.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<EvaluationReport> {
    if cm.total() == 0 {
        return Err(Error::InvalidInput("confusion matrix is empty".into()));
    }
    let causal = class_metrics(cm.true_pos, cm.false_neg, cm.false_pos);
    let non_causal = class_metrics(cm.true_neg, cm.false_pos, cm.false_neg);
    Ok(EvaluationReport {
        causal,
        non_causal,
        accuracy: ratio(cm.true_pos + cm.true_neg, cm.total()),
        macro_f1: (causal.f1 + non_causal.f1) / 2.0,
        confusion: *cm,
    })
}

/// Classifies every example in order and scores the predictions.
pub fn evaluate<F>(mut classifier: F, dataset: &LabeledDataset) -> Result<EvaluationReport>
where
    F: FnMut(&str) -> Result<Prediction>,
{
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (index, ex) in dataset.examples().iter().enumerate() {
        let prediction = classifier(&ex.text).map_err(|e| Error::Evaluation {
            index,
            text: ex.text.clone(),
            source: Box::new(e),
        })?;
        cm.record(ex.label, prediction.label);
    }
    compute_metrics(&cm)
}

/// Like [`evaluate`], classifying examples in parallel. Tallies and error
/// reporting follow dataset order.
pub fn evaluate_parallel<F>(classifier: F, dataset: &LabeledDataset) -> Result<EvaluationReport>
where
    F: Fn(&str) -> Result<Prediction> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let predictions: Vec<Result<Prediction>> = dataset
        .examples()
        .par_iter()
        .map(|ex| classifier(&ex.text))
        .collect();
    let mut cm = ConfusionMatrix::default();
    for (index, (ex, prediction)) in dataset.examples().iter().zip(predictions).enumerate() {
        let prediction = prediction.map_err(|e| Error::Evaluation {
            index,
            text: ex.text.clone(),
            source: Box::new(e),
        })?;
        cm.record(ex.label, prediction.label);
    }
    compute_metrics(&cm)
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1", "support")?;
        for (name, m) in [("causal", &self.causal), ("non-causal", &self.non_causal)] {
            writeln!(
                f,
                "{:<12} {:>9.3} {:>9.3} {:>9.3} {:>9}",
                name, m.precision, m.recall, m.f1, m.support
            )?;
        }
        writeln!(f, "{:<12} {:>29.3} {:>9}", "accuracy", self.accuracy, self.confusion.total())?;
        writeln!(f, "{:<12} {:>29.3}", "macro-f1", self.macro_f1)?;
        let cm = &self.confusion;
        write!(
            f,
            "confusion    tp={} fn={} fp={} tn={}",
            cm.true_pos, cm.false_neg, cm.false_pos, cm.true_neg
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 5e-4
    }

    #[test]
    fn reference_confusion_matrix_metrics() {
        let r = compute_metrics(&ConfusionMatrix::new(24, 8, 2, 27)).unwrap();
        assert!(close(r.causal.precision, 0.923));
        assert!(close(r.causal.recall, 0.750));
        assert!(close(r.causal.f1, 0.828));
        assert!(close(r.non_causal.precision, 0.771));
        assert!(close(r.non_causal.recall, 0.931));
        assert!(close(r.non_causal.f1, 0.844));
        assert!(close(r.accuracy, 0.836));
        assert!(close(r.macro_f1, 0.836));
        assert_eq!(r.causal.support, 32);
        assert_eq!(r.non_causal.support, 29);
    }

    #[test]
    fn perfect_and_degenerate_matrices() {
        let r = compute_metrics(&ConfusionMatrix::new(1, 0, 0, 1)).unwrap();
        for v in [r.causal.precision, r.causal.recall, r.causal.f1, r.non_causal.f1, r.accuracy, r.macro_f1] {
            assert_eq!(v, 1.0);
        }
        let r = compute_metrics(&ConfusionMatrix::new(0, 32, 0, 29)).unwrap();
        assert_eq!(r.causal.precision, 0.0);
        assert_eq!(r.causal.recall, 0.0);
        assert_eq!(r.causal.f1, 0.0);
        assert!((r.accuracy - 29.0 / 61.0).abs() < 1e-15);
        assert!(matches!(compute_metrics(&ConfusionMatrix::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn swapping_positive_class() {
        let cm = ConfusionMatrix::new(24, 8, 2, 27);
        let a = compute_metrics(&cm).unwrap();
        let b = compute_metrics(&cm.swapped()).unwrap();
        assert_eq!(a.causal, b.non_causal);
        assert_eq!(a.non_causal, b.causal);
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.macro_f1, b.macro_f1);
    }

    #[test]
    fn constant_classifier_on_fixture() {
        let data = LabeledDataset::example_criteria();
        let r = evaluate(|_| Ok(Prediction::from_probabilities([0.5, 0.5])), &data).unwrap();
        assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.causal.recall, 0.0);
    }

    #[test]
    fn classifier_failure_carries_index() {
        let data = LabeledDataset::example_criteria();
        let mut calls = 0;
        let err = evaluate(
            |_| {
                calls += 1;
                if calls == 3 {
                    Err(Error::Numeric("boom".into()))
                } else {
                    Ok(Prediction::from_probabilities([0.5, 0.5]))
                }
            },
            &data,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Evaluation { index: 2, .. }));
    }

    #[test]
    fn jsonl_parsing() {
        let data = parse_jsonl(&to_jsonl(&LabeledDataset::example_criteria())).unwrap();
        assert_eq!(data, LabeledDataset::example_criteria());
        assert_eq!(data.causal_count(), 2);
        let err = parse_jsonl("{\"text\":\"a\",\"label\":0}\n{\"text\":\"b\",\"label\":2}\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(matches!(parse_jsonl(""), Err(Error::InvalidInput(_))));
        assert!(matches!(parse_jsonl("not json"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_jsonl("{\"text\":\"a\",\"label\":\"1\"}"), Err(Error::Parse { .. })));
    }

    #[test]
    fn jsonl_tags_validated() {
        let ok = parse_jsonl("{\"text\":\"If A, then B\",\"label\":1,\"tags\":[\"mark\",\"nsubj\",\"advmod\",\"root\"]}").unwrap();
        assert_eq!(ok.examples()[0].tags.as_ref().unwrap()[0], DepTag::Mark);
        assert!(parse_jsonl("{\"text\":\"a b\",\"label\":1,\"tags\":[\"mark\"]}").is_err());
        assert!(parse_jsonl("{\"text\":\"a\",\"label\":1,\"tags\":[\"verb\"]}").is_err());
        assert!(parse_jsonl("{\"text\":\"a\",\"label\":1,\"tags\":[\"NONE\"]}").is_err());
    }

    #[test]
    fn csv_parsing() {
        let data = parse_csv("text,label\n\"If A, then B\",1\nThe app is used.,0\n").unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.examples()[0].text, "If A, then B");
        assert_eq!(data.causal_count(), 1);
        let err = parse_csv("text,label\na,0\nb,7\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(matches!(parse_csv("text,label\n"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn split_check() {
        let data = LabeledDataset::example_criteria();
        data.check_split(2, 4).unwrap();
        assert!(data.check_split(32, 29).is_err());
    }

    #[test]
    fn report_renders_raw_counts() {
        let r = compute_metrics(&ConfusionMatrix::new(24, 8, 2, 27)).unwrap();
        let table = r.to_string();
        assert!(table.contains("0.923") && table.contains("tp=24 fn=8 fp=2 tn=27"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["confusion"]["fn"], 8);
    }
}
