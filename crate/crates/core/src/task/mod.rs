//! Unified task abstraction: data references, prompt, metric and metadata.

mod manifest;
mod prompt;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest;
use crate::eval::{Direction, MetricSpec};

pub use manifest::{load_suite, serialize_suite, SuiteError};
pub use prompt::{
    PromptError, PromptTemplate, TemplateRegistry, ANALYSIS_SYSTEM, ANALYSIS_USER, PLACEHOLDERS,
    PREDICTION_SYSTEM, PREDICTION_USER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    Analysis,
    Prediction,
}

impl TaskCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskCategory::Analysis => "analysis",
            TaskCategory::Prediction => "prediction",
        }
    }
}

/// Task data is only ever mounted read-only; the enum exists so manifests
/// state it explicitly and anything else fails to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MountMode {
    #[default]
    ReadOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    /// File name the data appears under inside the worker's data mount.
    pub logical_name: String,
    /// Path relative to the suite root.
    pub relative_path: PathBuf,
    pub byte_size: u64,
    /// `sha256:<hex>` content hash.
    pub checksum: String,
    #[serde(default)]
    pub mount_mode: MountMode,
}

impl DataRef {
    /// Builds a reference for an existing file, hashing its current content.
    pub fn from_file(
        root: &Path,
        logical_name: impl Into<String>,
        relative_path: impl Into<PathBuf>,
    ) -> std::io::Result<Self> {
        let relative_path = relative_path.into();
        let full = root.join(&relative_path);
        let byte_size = std::fs::metadata(&full)?.len();
        Ok(Self {
            logical_name: logical_name.into(),
            relative_path,
            byte_size,
            checksum: digest::sha256_file(&full)?,
            mount_mode: MountMode::ReadOnly,
        })
    }

    pub fn host_path(&self, root: &Path) -> PathBuf {
        root.join(&self.relative_path)
    }

    pub fn container_path(&self, mount_root: &str) -> String {
        format!("{}/{}", mount_root.trim_end_matches('/'), self.logical_name)
    }

    /// Re-hashes the file under `root` and compares against the stored checksum.
    pub fn verify(&self, root: &Path) -> Result<(), DataIssue> {
        let path = self.host_path(root);
        let meta = std::fs::metadata(&path).map_err(|_| DataIssue::Missing)?;
        if meta.len() != self.byte_size {
            return Err(DataIssue::SizeMismatch {
                expected: self.byte_size,
                found: meta.len(),
            });
        }
        let found = digest::sha256_file(&path).map_err(|_| DataIssue::Missing)?;
        if found != self.checksum {
            return Err(DataIssue::ChecksumMismatch);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataIssue {
    Missing,
    SizeMismatch { expected: u64, found: u64 },
    ChecksumMismatch,
}

/// Query prompt content. Optional fields bind the matching template
/// placeholders; an absent field leaves its placeholder unbound.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptSpec {
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_info: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions: Option<String>,
    /// Multiple-choice options, when the question has them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    /// Template overrides; the category default is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub domain: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetric {
    pub id: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTaskSpec {
    #[serde(default)]
    pub train_refs: Vec<DataRef>,
    #[serde(default)]
    pub test_refs: Vec<DataRef>,
    pub target_metric: TargetMetric,
    pub sample_submission_ref: DataRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaderboard_ref: Option<DataRef>,
    /// Held-out labels used for scoring. Never mounted into a worker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_ref: Option<DataRef>,
    /// Submission file path relative to the worker workspace.
    #[serde(default = "default_submission_path")]
    pub submission_path: String,
}

fn default_submission_path() -> String {
    "submission.csv".to_string()
}

/// Reference answer that never leaves the host. `Debug` does not print it.
#[derive(Clone, PartialEq, Eq)]
pub struct SealedText(String);

impl SealedText {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn reveal(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for SealedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SealedText(<sealed>)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub id: String,
    pub category: TaskCategory,
    pub data_refs: Vec<DataRef>,
    pub prompt: PromptSpec,
    pub metric: MetricSpec,
    pub metadata: Metadata,
    pub answer_guideline: Option<String>,
    pub gold_answer: Option<SealedText>,
    pub prediction: Option<PredictionTaskSpec>,
    pub container_profile: String,
    /// Directory that `DataRef::relative_path` values resolve against.
    pub data_root: PathBuf,
}

impl TaskInstance {
    /// Every reference that is mounted into a worker, deduplicated by logical
    /// name. Labels and leaderboards are host-only and never appear here.
    pub fn mounted_refs(&self) -> Vec<&DataRef> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let pred = self.prediction.iter().flat_map(|p| {
            p.train_refs
                .iter()
                .chain(p.test_refs.iter())
                .chain(std::iter::once(&p.sample_submission_ref))
        });
        for r in self.data_refs.iter().chain(pred) {
            if seen.insert(r.logical_name.as_str()) {
                out.push(r);
            }
        }
        out
    }

    /// All references whose files must exist, including host-only ones.
    pub fn all_refs(&self) -> Vec<&DataRef> {
        let mut out = self.mounted_refs();
        if let Some(p) = &self.prediction {
            out.extend(p.leaderboard_ref.iter());
            out.extend(p.labels_ref.iter());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSuite {
    pub name: String,
    pub version: String,
    pub tasks: Vec<TaskInstance>,
    pub eval_protocol: String,
    pub default_profile: String,
    /// Extra domain labels accepted on top of the built-in vocabulary.
    pub extra_domains: Vec<String>,
    pub root: PathBuf,
}

impl DatasetSuite {
    pub fn task(&self, id: &str) -> Option<&TaskInstance> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn vocabulary(&self) -> DomainVocabulary {
        let mut v = DomainVocabulary::default();
        v.extend(self.extra_domains.iter().cloned());
        v
    }
}

/// Registered domain labels for task metadata.
#[derive(Debug, Clone)]
pub struct DomainVocabulary {
    labels: BTreeSet<String>,
}

const DEFAULT_DOMAINS: &[&str] = &[
    "general",
    "statistics",
    "causal_inference",
    "finance",
    "business",
    "machine_learning",
    "time_series",
    "computer_vision",
    "nlp",
    "audio_speech",
    "chemistry",
    "biology",
    "bioinformatics",
    "genomics",
    "transcriptomics",
    "spatial_transcriptomics",
    "proteomics",
    "single_cell",
    "geology",
    "sensor_signal",
    "sports",
    "recommender_system",
    "social_science",
];

impl Default for DomainVocabulary {
    fn default() -> Self {
        Self {
            labels: DEFAULT_DOMAINS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl DomainVocabulary {
    pub fn contains(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    pub fn extend(&mut self, labels: impl IntoIterator<Item = String>) {
        self.labels.extend(labels);
    }
}

/// A broken task invariant. `rule_id` is stable across releases.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    EmptyId,
    MissingGoldAnswer,
    MissingPredictionSpec,
    DataMissing { name: String },
    DataSizeMismatch { name: String },
    ChecksumMismatch { name: String },
    DuplicateDataName { name: String },
    BadSampleSubmission { reason: String },
    UnknownDomain { domain: String },
    NegativeTolerance,
}

impl Violation {
    pub fn rule_id(&self) -> &'static str {
        match self {
            Violation::EmptyId => "EmptyId",
            Violation::MissingGoldAnswer => "MissingGoldAnswer",
            Violation::MissingPredictionSpec => "MissingPredictionSpec",
            Violation::DataMissing { .. } => "DataMissing",
            Violation::DataSizeMismatch { .. } => "DataSizeMismatch",
            Violation::ChecksumMismatch { .. } => "ChecksumMismatch",
            Violation::DuplicateDataName { .. } => "DuplicateDataName",
            Violation::BadSampleSubmission { .. } => "BadSampleSubmission",
            Violation::UnknownDomain { .. } => "UnknownDomain",
            Violation::NegativeTolerance => "NegativeTolerance",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DataMissing { name }
            | Violation::DataSizeMismatch { name }
            | Violation::ChecksumMismatch { name }
            | Violation::DuplicateDataName { name } => write!(f, "{} ({name})", self.rule_id()),
            Violation::BadSampleSubmission { reason } => write!(f, "{} ({reason})", self.rule_id()),
            Violation::UnknownDomain { domain } => write!(f, "{} ({domain})", self.rule_id()),
            _ => f.write_str(self.rule_id()),
        }
    }
}

/// Checks every task invariant. Returns violations sorted, so the same task
/// always yields the same list.
pub fn validate_task(task: &TaskInstance, vocab: &DomainVocabulary) -> Vec<Violation> {
    let mut out = Vec::new();
    if task.id.trim().is_empty() {
        out.push(Violation::EmptyId);
    }
    match task.category {
        TaskCategory::Analysis => {
            if task.gold_answer.is_none() {
                out.push(Violation::MissingGoldAnswer);
            }
        }
        TaskCategory::Prediction => {
            if task.prediction.is_none() {
                out.push(Violation::MissingPredictionSpec);
            }
        }
    }
    if !vocab.contains(&task.metadata.domain) {
        out.push(Violation::UnknownDomain {
            domain: task.metadata.domain.clone(),
        });
    }
    if task.metric.abs_tol < 0.0 || task.metric.rel_tol < 0.0 {
        out.push(Violation::NegativeTolerance);
    }

    let mut names = BTreeSet::new();
    for r in task.data_refs.iter() {
        if !names.insert(r.logical_name.as_str()) {
            out.push(Violation::DuplicateDataName {
                name: r.logical_name.clone(),
            });
        }
    }
    for r in task.all_refs() {
        match r.verify(&task.data_root) {
            Ok(()) => {}
            Err(DataIssue::Missing) => out.push(Violation::DataMissing {
                name: r.logical_name.clone(),
            }),
            Err(DataIssue::SizeMismatch { .. }) => out.push(Violation::DataSizeMismatch {
                name: r.logical_name.clone(),
            }),
            Err(DataIssue::ChecksumMismatch) => out.push(Violation::ChecksumMismatch {
                name: r.logical_name.clone(),
            }),
        }
    }

    if let Some(pred) = &task.prediction {
        let path = pred.sample_submission_ref.host_path(&task.data_root);
        if let Ok(bytes) = std::fs::read(&path) {
            if let Err(reason) = crate::eval::parse_table_header(&bytes) {
                out.push(Violation::BadSampleSubmission { reason });
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Writes `files` under `root` and returns matching data references.
    pub fn write_refs(root: &Path, files: &[(&str, &str)]) -> Vec<DataRef> {
        files
            .iter()
            .map(|(name, content)| {
                let rel = PathBuf::from("data").join(name);
                std::fs::create_dir_all(root.join("data")).unwrap();
                std::fs::write(root.join(&rel), content).unwrap();
                DataRef::from_file(root, *name, rel).unwrap()
            })
            .collect()
    }

    pub fn analysis_task(root: &Path, id: &str) -> TaskInstance {
        TaskInstance {
            id: id.to_string(),
            category: TaskCategory::Analysis,
            data_refs: write_refs(root, &[("people.csv", "name,age\nann,30\nbob,40\n")]),
            prompt: PromptSpec {
                description: "Answer a question about the people table.".into(),
                question: Some("What is the mean age?".into()),
                dataset_info: Some("people.csv: one row per person".into()),
                ..Default::default()
            },
            metric: MetricSpec::default(),
            metadata: Metadata {
                domain: "statistics".into(),
                tags: vec!["descriptive".into()],
                source: "fixture".into(),
                split: None,
            },
            answer_guideline: Some("Answer with a number.".into()),
            gold_answer: Some(SealedText::new("35")),
            prediction: None,
            container_profile: "analysis".into(),
            data_root: root.to_path_buf(),
        }
    }

    pub fn prediction_task(root: &Path, id: &str, sample: &str) -> TaskInstance {
        let refs = write_refs(
            root,
            &[
                ("train.csv", "id,x,y\n1,1,2\n2,2,4\n"),
                ("test.csv", "id,x\n3,3\n4,4\n"),
                ("sample_submission.csv", sample),
            ],
        );
        let labels = write_refs(root, &[("labels.csv", "id,y\n3,6\n4,8\n")]).remove(0);
        let board = write_refs(
            root,
            &[(
                "leaderboard.txt",
                "# competition: toy\n# direction: lower-better\n0.5\n1.0\n2.0\n",
            )],
        )
        .remove(0);
        TaskInstance {
            id: id.to_string(),
            category: TaskCategory::Prediction,
            data_refs: vec![],
            prompt: PromptSpec {
                description: "Predict y from x.".into(),
                ..Default::default()
            },
            metric: MetricSpec {
                id: "rmse".into(),
                direction: Direction::LowerBetter,
                ..MetricSpec::default()
            },
            metadata: Metadata {
                domain: "machine_learning".into(),
                ..Default::default()
            },
            answer_guideline: None,
            gold_answer: None,
            prediction: Some(PredictionTaskSpec {
                train_refs: vec![refs[0].clone()],
                test_refs: vec![refs[1].clone()],
                target_metric: TargetMetric {
                    id: "rmse".into(),
                    direction: Direction::LowerBetter,
                },
                sample_submission_ref: refs[2].clone(),
                leaderboard_ref: Some(board),
                labels_ref: Some(labels),
                submission_path: default_submission_path(),
            }),
            container_profile: "prediction".into(),
            data_root: root.to_path_buf(),
        }
    }
}
