//! Prompt templates with named `{{placeholder}}` slots.
//!
//! A slot written `{{name?}}` is optional and renders empty when the task has
//! no value for it; a plain `{{name}}` slot must be bound.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{TaskCategory, TaskInstance};

/// Placeholder names a template may use.
pub const PLACEHOLDERS: &[&str] = &[
    "task_description",
    "dataset_information",
    "dataset_locations",
    "instructions",
    "question",
    "answer_guideline",
];

pub const ANALYSIS_SYSTEM: &str = "analysis-system";
pub const ANALYSIS_USER: &str = "analysis-user";
pub const PREDICTION_SYSTEM: &str = "prediction-system";
pub const PREDICTION_USER: &str = "prediction-user";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template uses unsupported placeholder `{0}`")]
    UnsupportedPlaceholder(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
    #[error("placeholder `{0}` has no value for this task")]
    UnboundPlaceholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot { name: String, optional: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut pieces = Vec::new();
        let mut rest = text;
        let mut offset = 0;
        while let Some(start) = rest.find("{{") {
            if start > 0 {
                pieces.push(Piece::Text(rest[..start].to_string()));
            }
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or(PromptError::Unterminated(offset + start))?;
            let raw = after[..end].trim();
            let (name, optional) = match raw.strip_suffix('?') {
                Some(n) => (n, true),
                None => (raw, false),
            };
            if !PLACEHOLDERS.contains(&name) {
                return Err(PromptError::UnsupportedPlaceholder(name.to_string()));
            }
            pieces.push(Piece::Slot {
                name: name.to_string(),
                optional,
            });
            let consumed = start + 2 + end + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(Self { pieces })
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot { name, .. } => Some(name.as_str()),
            Piece::Text(_) => None,
        })
    }

    fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot { name, optional } => match bindings.get(name.as_str()) {
                    Some(v) => out.push_str(v),
                    None if *optional => {}
                    None => return Err(PromptError::UnboundPlaceholder(name.clone())),
                },
            }
        }
        // Optional slots leave trailing blanks behind; strip them per line.
        let mut lines: Vec<&str> = out.lines().map(str::trim_end).collect();
        while lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        let mut text = lines.join("\n");
        text.push('\n');
        Ok(text)
    }
}

const ANALYSIS_SYSTEM_TEXT: &str = "\
You are a data scientist working inside a Python session with access to the data files named in the task.
Work in small steps. In every reply, first explain your next step inside <reasoning></reasoning>, then give exactly one block of runnable Python inside <python></python>.
The session keeps variables between steps, so there is no need to reload data you already loaded.
Execution output is returned to you inside <information></information>; never write that block yourself.
Plotting is not available; summarise with text and statistics.
When you are confident, reply with <reasoning></reasoning> followed by <answer></answer> containing only the final answer in the requested format.
";

const PREDICTION_SYSTEM_TEXT: &str = "\
You are a machine learning engineer working inside a Python session with access to the competition files named in the task.
Work in small steps. In every reply, first explain your next step inside <reasoning></reasoning>, then give exactly one block of runnable Python inside <python></python>.
The session keeps variables between steps, so there is no need to reload data you already loaded.
Execution output is returned to you inside <information></information>; never write that block yourself.
Plotting is not available; summarise with text and statistics.
Validate your model before predicting, write the submission file in the format of the sample submission, check it, and finish with a short summary inside <answer></answer>.
";

const ANALYSIS_USER_TEXT: &str = "\
TASK: {{task_description}}

QUESTION: {{question}} {{answer_guideline?}}

DATASET INFORMATION:
{{dataset_information?}}

DATASET LOCATIONS (this is the path of the directory):
{{dataset_locations}}

INSTRUCTIONS:
1. Load and inspect the datasets listed above with Python.
2. Pick statistical or analytical methods that fit the question.
3. Reply with only the final value inside the answer tags, for example <answer>0.23</answer>.
{{instructions?}}
";

const PREDICTION_USER_TEXT: &str = "\
TASK: {{task_description}}

DATASET INFORMATION:
{{dataset_information?}}

DATASET LOCATIONS (this is the path of the directory):
{{dataset_locations}}

INSTRUCTIONS:
1. Explore the training and test files before modelling.
2. Train on the training data, validate on a held-out split, then predict the test data.
3. Save predictions in the sample submission format at the submission path given below, then check the file.
4. Finish with a concise summary of your approach inside <answer></answer>.
{{instructions?}}
";

/// Named prompt templates. Ships the four built-in templates; more can be
/// registered from files.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let mut r = Self {
            templates: BTreeMap::new(),
        };
        for (id, text) in [
            (ANALYSIS_SYSTEM, ANALYSIS_SYSTEM_TEXT),
            (PREDICTION_SYSTEM, PREDICTION_SYSTEM_TEXT),
            (ANALYSIS_USER, ANALYSIS_USER_TEXT),
            (PREDICTION_USER, PREDICTION_USER_TEXT),
        ] {
            r.register(id, text).expect("built-in template parses");
        }
        r
    }
}

impl TemplateRegistry {
    pub fn register(&mut self, id: impl Into<String>, text: &str) -> Result<(), PromptError> {
        self.templates
            .insert(id.into(), PromptTemplate::parse(text)?);
        Ok(())
    }

    /// Registers every `*.txt` file in `dir` under its file stem.
    pub fn register_dir(&mut self, dir: &std::path::Path) -> std::io::Result<Vec<String>> {
        let mut added = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path)?;
            self.register(stem, &text)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            added.push(stem.to_string());
        }
        Ok(added)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(id)
            .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }

    pub fn user_template_for(task: &TaskInstance) -> &str {
        task.prompt
            .user_template
            .as_deref()
            .unwrap_or(match task.category {
                TaskCategory::Analysis => ANALYSIS_USER,
                TaskCategory::Prediction => PREDICTION_USER,
            })
    }

    pub fn system_template_for(task: &TaskInstance) -> &str {
        task.prompt
            .system_template
            .as_deref()
            .unwrap_or(match task.category {
                TaskCategory::Analysis => ANALYSIS_SYSTEM,
                TaskCategory::Prediction => PREDICTION_SYSTEM,
            })
    }

    /// Renders `template_id` for `task`, pointing dataset locations at the
    /// in-container `mount_root`.
    pub fn render_prompt(
        &self,
        task: &TaskInstance,
        template_id: &str,
        mount_root: &str,
    ) -> Result<String, PromptError> {
        let template = self.get(template_id)?;
        template.render(&bindings(task, mount_root))
    }
}

fn bindings<'a>(task: &TaskInstance, mount_root: &str) -> BTreeMap<&'a str, String> {
    let mut b = BTreeMap::new();
    b.insert("task_description", task.prompt.description.clone());
    let mut locations = vec![mount_root.trim_end_matches('/').to_string()];
    for r in task.mounted_refs() {
        locations.push(format!("- {}", r.container_path(mount_root)));
    }
    b.insert("dataset_locations", locations.join("\n"));
    if let Some(q) = &task.prompt.question {
        let mut q = q.clone();
        for (i, choice) in task.prompt.choices.iter().enumerate() {
            let label = (b'A' + (i as u8 % 26)) as char;
            q.push_str(&format!("\n{label}. {choice}"));
        }
        b.insert("question", q);
    }
    if let Some(v) = &task.prompt.dataset_info {
        b.insert("dataset_information", v.clone());
    }
    let mut instructions = task.prompt.instructions.clone();
    if let Some(p) = &task.prediction {
        let line = format!("Submission path: {}", p.submission_path);
        instructions = Some(match instructions {
            Some(i) => format!("{i}\n{line}"),
            None => line,
        });
    }
    if let Some(v) = instructions {
        b.insert("instructions", v);
    }
    if let Some(v) = &task.answer_guideline {
        b.insert("answer_guideline", v.clone());
    }
    b
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn analysis_prompt_sections_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t1");
        let text = TemplateRegistry::default()
            .render_prompt(&task, ANALYSIS_USER, "/data")
            .unwrap();
        let pos = |needle: &str| {
            text.find(needle)
                .unwrap_or_else(|| panic!("{needle} missing"))
        };
        assert!(pos("TASK:") < pos("DATASET INFORMATION:"));
        assert!(pos("DATASET INFORMATION:") < pos("DATASET LOCATIONS"));
        assert!(pos("DATASET LOCATIONS") < pos("INSTRUCTIONS:"));
        assert!(text.contains("- /data/people.csv"));
        assert!(
            !text.contains(dir.path().to_str().unwrap()),
            "host path leaked"
        );
        assert!(!text.contains("{{"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t1");
        let reg = TemplateRegistry::default();
        assert_eq!(
            reg.render_prompt(&task, ANALYSIS_USER, "/data").unwrap(),
            reg.render_prompt(&task, ANALYSIS_USER, "/data").unwrap()
        );
    }

    #[test]
    fn unbound_placeholder() {
        let dir = tempfile::tempdir().unwrap();
        let mut task = analysis_task(dir.path(), "t1");
        task.prompt.instructions = None;
        let mut reg = TemplateRegistry::default();
        reg.register("strict", "Do: {{instructions}}").unwrap();
        assert_eq!(
            reg.render_prompt(&task, "strict", "/data"),
            Err(PromptError::UnboundPlaceholder("instructions".into()))
        );
    }

    #[test]
    fn unknown_template_and_placeholder() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t1");
        let mut reg = TemplateRegistry::default();
        assert_eq!(
            reg.render_prompt(&task, "nope", "/data"),
            Err(PromptError::UnknownTemplate("nope".into()))
        );
        assert_eq!(
            reg.register("bad", "{{gold_answer}}"),
            Err(PromptError::UnsupportedPlaceholder("gold_answer".into()))
        );
    }

    #[test]
    fn prediction_prompt_names_submission_path() {
        let dir = tempfile::tempdir().unwrap();
        let task = prediction_task(dir.path(), "p1", "id,y\n");
        let text = TemplateRegistry::default()
            .render_prompt(&task, PREDICTION_USER, "/data/")
            .unwrap();
        assert!(text.contains("Submission path: submission.csv"));
        assert!(text.contains("- /data/train.csv"));
        assert!(!text.contains("labels.csv"));
    }

    #[test]
    fn choices_are_lettered() {
        let dir = tempfile::tempdir().unwrap();
        let mut task = analysis_task(dir.path(), "t1");
        task.prompt.choices = vec!["yes".into(), "no".into()];
        let text = TemplateRegistry::default()
            .render_prompt(&task, ANALYSIS_USER, "/data")
            .unwrap();
        assert!(text.contains("A. yes\nB. no"));
    }
}
