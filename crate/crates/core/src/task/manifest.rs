//! Suite and task manifest files.
//!
//! A suite is a directory holding `suite.toml`, one TOML manifest per task,
//! the task data, and the sealed gold answers. Paths inside manifests are
//! relative to the suite directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    validate_task, DataRef, DatasetSuite, Metadata, PredictionTaskSpec, PromptSpec, SealedText,
    TaskCategory, TaskInstance, Violation,
};
use crate::eval::MetricSpec;
use crate::schema;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse manifest {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("checksum mismatch for data ref `{data_ref}` of task `{task}`")]
    ChecksumMismatch { task: String, data_ref: String },
    #[error("duplicate task id `{0}`")]
    DuplicateTaskId(String),
    #[error("task `{task}` is invalid: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))]
    InvalidTask {
        task: String,
        violations: Vec<Violation>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct SuiteManifest {
    schema: String,
    name: String,
    version: String,
    eval_protocol: String,
    default_profile: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extra_domains: Vec<String>,
    tasks: Vec<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskManifest {
    schema: String,
    id: String,
    category: TaskCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    container_profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer_guideline: Option<String>,
    /// Sealed gold answer, stored apart from the manifest and never mounted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_answer_file: Option<PathBuf>,
    prompt: PromptSpec,
    #[serde(default)]
    metric: MetricSpec,
    metadata: Metadata,
    #[serde(default, rename = "data", skip_serializing_if = "Vec::is_empty")]
    data_refs: Vec<DataRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prediction: Option<PredictionTaskSpec>,
}

fn read(path: &Path) -> Result<String, SuiteError> {
    fs::read_to_string(path).map_err(|source| SuiteError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, message: impl ToString) -> SuiteError {
    SuiteError::ManifestParse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Loads a suite manifest, every task manifest it lists, and verifies all
/// data checksums. `manifest_path` may name the `suite.toml` file or the
/// directory containing it.
pub fn load_suite(manifest_path: &Path) -> Result<DatasetSuite, SuiteError> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join("suite.toml")
    } else {
        manifest_path.to_path_buf()
    };
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let suite: SuiteManifest =
        toml::from_str(&read(&manifest_path)?).map_err(|e| parse_err(&manifest_path, e))?;
    if suite.schema != schema::SUITE {
        return Err(parse_err(
            &manifest_path,
            format!("unsupported schema `{}`", suite.schema),
        ));
    }
    if suite.tasks.is_empty() {
        return Err(parse_err(&manifest_path, "suite lists no tasks"));
    }

    let mut vocab = super::DomainVocabulary::default();
    vocab.extend(suite.extra_domains.iter().cloned());
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::with_capacity(suite.tasks.len());
    for rel in &suite.tasks {
        let path = root.join(rel);
        let m: TaskManifest = toml::from_str(&read(&path)?).map_err(|e| parse_err(&path, e))?;
        if m.schema != schema::TASK {
            return Err(parse_err(
                &path,
                format!("unsupported schema `{}`", m.schema),
            ));
        }
        if !seen.insert(m.id.clone()) {
            return Err(SuiteError::DuplicateTaskId(m.id));
        }
        let gold_answer = match &m.gold_answer_file {
            Some(p) => Some(SealedText::new(read(&root.join(p))?)),
            None => None,
        };
        let task = TaskInstance {
            id: m.id,
            category: m.category,
            data_refs: m.data_refs,
            prompt: m.prompt,
            metric: m.metric,
            metadata: m.metadata,
            answer_guideline: m.answer_guideline,
            gold_answer,
            prediction: m.prediction,
            container_profile: m
                .container_profile
                .unwrap_or_else(|| suite.default_profile.clone()),
            data_root: root.clone(),
        };
        let violations = validate_task(&task, &vocab);
        if let Some(Violation::ChecksumMismatch { name }) = violations
            .iter()
            .find(|v| matches!(v, Violation::ChecksumMismatch { .. }))
        {
            return Err(SuiteError::ChecksumMismatch {
                task: task.id,
                data_ref: name.clone(),
            });
        }
        if !violations.is_empty() {
            return Err(SuiteError::InvalidTask {
                task: task.id,
                violations,
            });
        }
        tasks.push(task);
    }

    Ok(DatasetSuite {
        name: suite.name,
        version: suite.version,
        tasks,
        eval_protocol: suite.eval_protocol,
        default_profile: suite.default_profile,
        extra_domains: suite.extra_domains,
        root,
    })
}

/// Writes `suite` as a manifest tree under `out_dir`, copying data files when
/// `out_dir` differs from the suite root. Returns the path of `suite.toml`.
pub fn serialize_suite(suite: &DatasetSuite, out_dir: &Path) -> Result<PathBuf, SuiteError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SuiteError::Io { path, source }
    };
    fs::create_dir_all(out_dir.join("tasks")).map_err(io(out_dir))?;
    let same_root = fs::canonicalize(out_dir).ok() == fs::canonicalize(&suite.root).ok();

    let mut task_paths = Vec::with_capacity(suite.tasks.len());
    for task in &suite.tasks {
        if !same_root {
            for r in task.all_refs() {
                let dst = r.host_path(out_dir);
                if let Some(parent) = dst.parent() {
                    fs::create_dir_all(parent).map_err(io(parent))?;
                }
                fs::copy(r.host_path(&task.data_root), &dst).map_err(io(&dst))?;
            }
        }
        let gold_answer_file = match &task.gold_answer {
            Some(gold) => {
                let rel = PathBuf::from("gold").join(format!("{}.txt", task.id));
                let dst = out_dir.join(&rel);
                fs::create_dir_all(out_dir.join("gold")).map_err(io(out_dir))?;
                fs::write(&dst, gold.reveal()).map_err(io(&dst))?;
                Some(rel)
            }
            None => None,
        };
        let manifest = TaskManifest {
            schema: schema::TASK.to_string(),
            id: task.id.clone(),
            category: task.category,
            container_profile: Some(task.container_profile.clone()),
            answer_guideline: task.answer_guideline.clone(),
            gold_answer_file,
            prompt: task.prompt.clone(),
            metric: task.metric.clone(),
            metadata: task.metadata.clone(),
            data_refs: task.data_refs.clone(),
            prediction: task.prediction.clone(),
        };
        let rel = PathBuf::from("tasks").join(format!("{}.toml", task.id));
        let text = toml::to_string_pretty(&manifest).map_err(|e| parse_err(&rel, e))?;
        fs::write(out_dir.join(&rel), text).map_err(io(&rel))?;
        task_paths.push(rel);
    }

    let manifest = SuiteManifest {
        schema: schema::SUITE.to_string(),
        name: suite.name.clone(),
        version: suite.version.clone(),
        eval_protocol: suite.eval_protocol.clone(),
        default_profile: suite.default_profile.clone(),
        extra_domains: suite.extra_domains.clone(),
        tasks: task_paths,
    };
    let path = out_dir.join("suite.toml");
    let text = toml::to_string_pretty(&manifest).map_err(|e| parse_err(&path, e))?;
    fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}
