use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::eval::parse_structured_answer;
use crate::task::{TaskCategory, TaskInstance};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum QualityViolation {
    MissingGold,
    /// The guideline asks for `field` but the gold answer has no value for it.
    GoldIncomplete {
        field: String,
    },
    /// Two options read the same; labels are letters A, B, ...
    DuplicateChoices {
        first: char,
        second: char,
    },
    UnparseableGuideline {
        reason: String,
    },
}

impl QualityViolation {
    pub fn id(&self) -> &'static str {
        match self {
            QualityViolation::MissingGold => "MissingGold",
            QualityViolation::GoldIncomplete { .. } => "GoldIncomplete",
            QualityViolation::DuplicateChoices { .. } => "DuplicateChoices",
            QualityViolation::UnparseableGuideline { .. } => "UnparseableGuideline",
        }
    }
}

fn key_regex() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"@([A-Za-z_][A-Za-z0-9_]*)\[").expect("valid regex"))
}

fn pair_list_regex() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| {
        Regex::new(r#"\[\s*['"]([^'"]+)['"]\s*,\s*['"]?([^'"\]]*)['"]?\s*\]"#).expect("valid regex")
    })
}

fn choice_line_regex() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?m)^\s*([A-Z])[.)]\s+(.+?)\s*$").expect("valid regex"))
}

/// Keys a guideline asks for, in `@key[...]` form.
fn required_keys(guideline: &str) -> Result<Vec<String>, String> {
    let mut depth = 0i32;
    for c in guideline.chars() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return Err("unbalanced brackets".into());
        }
    }
    if depth != 0 {
        return Err("unbalanced brackets".into());
    }
    let keys: Vec<String> = key_regex()
        .captures_iter(guideline)
        .map(|c| c[1].to_string())
        .collect();
    if keys.is_empty() && guideline.contains('@') {
        return Err("`@` present but no @key[...] field".into());
    }
    Ok(keys)
}

/// Keys with non-empty values in a gold answer, read either as
/// `@key[value]` pairs or as a list of `['key', 'value']` pairs.
fn gold_keys(gold: &str) -> BTreeSet<String> {
    if let Ok(map) = parse_structured_answer(gold) {
        return map
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, _)| k)
            .collect();
    }
    pair_list_regex()
        .captures_iter(gold)
        .filter(|c| !c[2].trim().is_empty())
        .map(|c| c[1].to_string())
        .collect()
}

fn choices(task: &TaskInstance) -> Vec<(char, String)> {
    if !task.prompt.choices.is_empty() {
        return task
            .prompt
            .choices
            .iter()
            .enumerate()
            .map(|(i, c)| ((b'A' + (i as u8 % 26)) as char, c.trim().to_string()))
            .collect();
    }
    let text = task
        .prompt
        .question
        .as_deref()
        .unwrap_or(&task.prompt.description);
    choice_line_regex()
        .captures_iter(text)
        .map(|c| (c[1].chars().next().unwrap_or('?'), c[2].to_string()))
        .collect()
}

/// Checks one task for problems that make it unscorable or ill-defined.
/// Result is sorted.
pub fn quality_flags(task: &TaskInstance) -> Vec<QualityViolation> {
    let mut out = Vec::new();
    let gold = task.gold_answer.as_ref().map(|g| g.reveal().to_string());
    if task.category == TaskCategory::Analysis
        && gold.as_deref().is_none_or(|g| g.trim().is_empty())
    {
        out.push(QualityViolation::MissingGold);
    }

    let mut required: Vec<String> = task.metric.structured_keys.clone();
    if let Some(g) = &task.answer_guideline {
        match required_keys(g) {
            Ok(keys) => required.extend(keys),
            Err(reason) => out.push(QualityViolation::UnparseableGuideline { reason }),
        }
    }
    required.sort();
    required.dedup();
    if let (Some(g), false) = (&gold, required.is_empty()) {
        let have = gold_keys(g);
        for field in required.into_iter().filter(|k| !have.contains(k)) {
            out.push(QualityViolation::GoldIncomplete { field });
        }
    }

    let opts = choices(task);
    for (i, (la, a)) in opts.iter().enumerate() {
        if let Some((lb, _)) = opts[i + 1..].iter().find(|(_, b)| b == a) {
            out.push(QualityViolation::DuplicateChoices {
                first: *la,
                second: *lb,
            });
            break;
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::fixtures::analysis_task;
    use crate::task::SealedText;

    #[test]
    fn clean_task() {
        let dir = tempfile::tempdir().unwrap();
        assert!(quality_flags(&analysis_task(dir.path(), "t")).is_empty());
    }

    #[test]
    fn identical_choices() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = analysis_task(dir.path(), "t");
        t.prompt.question = Some(
            "Which cause-and-effect relationship is more likely?\nA. L tibia pain causes L tibia pain\nB. L tibia pain causes L tibia pain\nC. No causal relationship exists".into(),
        );
        t.gold_answer = Some(SealedText::new("C"));
        assert_eq!(
            quality_flags(&t),
            vec![QualityViolation::DuplicateChoices {
                first: 'A',
                second: 'B'
            }]
        );
        t.prompt.question = Some("Pick one".into());
        t.prompt.choices = vec!["x".into(), "y".into(), "y".into()];
        assert_eq!(
            quality_flags(&t),
            vec![QualityViolation::DuplicateChoices {
                first: 'B',
                second: 'C'
            }]
        );
    }

    #[test]
    fn gold_missing_required_field() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = analysis_task(dir.path(), "t");
        t.answer_guideline =
            Some("@significance_of_difference[significance]\n@p_value[p_value]".into());
        t.gold_answer = Some(SealedText::new("[['significance_of_difference', 'no']]"));
        assert_eq!(
            quality_flags(&t),
            vec![QualityViolation::GoldIncomplete {
                field: "p_value".into()
            }]
        );
        t.gold_answer = Some(SealedText::new(
            "@significance_of_difference[no] @p_value[0.3]",
        ));
        assert!(quality_flags(&t).is_empty());
    }

    #[test]
    fn missing_gold_and_bad_guideline() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = analysis_task(dir.path(), "t");
        t.gold_answer = None;
        t.answer_guideline = Some("@mean[".into());
        let f = quality_flags(&t);
        assert_eq!(f.len(), 2);
        assert_eq!(f[0], QualityViolation::MissingGold);
        assert_eq!(f[1].id(), "UnparseableGuideline");
    }
}
