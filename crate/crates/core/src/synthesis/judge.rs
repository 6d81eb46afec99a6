use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{SynthQuery, SynthesisError};
use crate::client::{ClientBackendRegistry, Message, ModelConfig, Role};
use crate::eval::{match_analysis_answer, MetricSpec};
use crate::harness::{Terminal, Trajectory};

const DEFAULT_TEMPLATE: &str = include_str!("../../assets/judge_prompt.txt");

pub const CRITERIA: [&str; 6] = [
    "query_clarity",
    "educational_value",
    "exploratory_competence",
    "execution_robustness",
    "task_alignment",
    "answer_plausibility",
];

pub const SCALE_MIN: u8 = 1;
pub const SCALE_MAX: u8 = 5;
pub const DEFAULT_FLOOR: u8 = 4;

const REASK: &str = "Your reply could not be read. Reply with exactly the seven lines requested, one `name: score` per criterion, then `rationale: ...`.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criteria {
    pub query_clarity: u8,
    pub educational_value: u8,
    pub exploratory_competence: u8,
    pub execution_robustness: u8,
    pub task_alignment: u8,
    pub answer_plausibility: u8,
}

impl Criteria {
    pub fn all(&self) -> [u8; 6] {
        [
            self.query_clarity,
            self.educational_value,
            self.exploratory_competence,
            self.execution_robustness,
            self.task_alignment,
            self.answer_plausibility,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    /// Absent when the judge's reply never parsed.
    pub scores: Option<Criteria>,
    pub accept: bool,
    pub rationale: String,
    /// Whether the final answer matched the reference mechanically.
    pub answer_matches: bool,
}

/// Judge prompt with `{{query}}`, `{{guideline}}`, `{{reference}}` and
/// `{{trajectory}}` slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeTemplate(String);

impl Default for JudgeTemplate {
    fn default() -> Self {
        Self(DEFAULT_TEMPLATE.to_string())
    }
}

impl JudgeTemplate {
    pub fn parse(text: &str) -> Result<Self, SynthesisError> {
        for slot in ["{{query}}", "{{reference}}", "{{trajectory}}"] {
            if !text.contains(slot) {
                return Err(SynthesisError::Config(format!(
                    "judge template lacks {slot}"
                )));
            }
        }
        Ok(Self(text.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SynthesisError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn render(&self, query: &SynthQuery, trajectory: &Trajectory) -> String {
        self.0
            .replace("{{query}}", &query.question)
            .replace("{{guideline}}", &query.guideline)
            .replace("{{reference}}", &query.reference)
            .replace("{{trajectory}}", &transcript(trajectory))
    }
}

/// Full trajectory as the judge reads it.
pub fn transcript(t: &Trajectory) -> String {
    let mut out = String::new();
    for turn in &t.turns {
        out.push_str(&format!(
            "--- turn {} ---\n[agent]\n{}\n",
            turn.index + 1,
            turn.completion.trim_end()
        ));
        if let Some(obs) = turn.observation() {
            out.push_str(&format!("[environment]\n{obs}\n"));
        }
    }
    out.push_str(&format!(
        "--- end: {}; final answer: {} ---",
        t.terminal.as_str(),
        t.answer.as_deref().unwrap_or("(none)")
    ));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub model: ModelConfig,
    pub floor: u8,
    #[serde(default)]
    pub template: JudgeTemplate,
}

impl JudgeConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            floor: DEFAULT_FLOOR,
            template: JudgeTemplate::default(),
        }
    }
}

/// Reads six `name: score` lines and an optional rationale.
pub fn parse_judge_output(text: &str) -> Result<(Criteria, String), String> {
    let mut scores = [0u8; 6];
    for (i, name) in CRITERIA.iter().enumerate() {
        let re =
            Regex::new(&format!(r"(?im)^\s*[-*]?\s*{name}\s*[:=]\s*(\d+)\b")).expect("valid regex");
        let caps = re
            .captures(text)
            .ok_or_else(|| format!("missing `{name}`"))?;
        let v: u8 = caps[1]
            .parse()
            .map_err(|_| format!("bad score for `{name}`"))?;
        if !(SCALE_MIN..=SCALE_MAX).contains(&v) {
            return Err(format!("`{name}` = {v} outside {SCALE_MIN}..={SCALE_MAX}"));
        }
        scores[i] = v;
    }
    let rationale = Regex::new(r"(?im)^\s*rationale\s*[:=]\s*(.*)$")
        .expect("valid regex")
        .captures(text)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();
    let [a, b, c, d, e, f] = scores;
    Ok((
        Criteria {
            query_clarity: a,
            educational_value: b,
            exploratory_competence: c,
            execution_robustness: d,
            task_alignment: e,
            answer_plausibility: f,
        },
        rationale,
    ))
}

/// Scores a finished trajectory for `query`. Answer plausibility is capped
/// at the scale minimum when the answer does not match the reference.
/// `key` names the judge conversation for clients that care.
pub fn judge(
    query: &SynthQuery,
    trajectory: &Trajectory,
    metric: &MetricSpec,
    cfg: &JudgeConfig,
    clients: &ClientBackendRegistry,
    key: &str,
) -> JudgeVerdict {
    let answer_matches = trajectory.terminal == Terminal::Answered
        && trajectory
            .answer
            .as_deref()
            .is_some_and(|a| match_analysis_answer(a, &query.reference, metric));
    let reject = |rationale: String| JudgeVerdict {
        scores: None,
        accept: false,
        rationale,
        answer_matches,
    };
    if trajectory.terminal != Terminal::Answered {
        return reject(format!("trajectory ended {}", trajectory.terminal.as_str()));
    }
    let mut client = match clients.client(&cfg.model, key) {
        Ok(c) => c,
        Err(e) => return reject(format!("judge unavailable: {e}")),
    };
    let mut messages = vec![Message::new(
        Role::User,
        cfg.template.render(query, trajectory),
    )];
    let mut last_err = String::new();
    for attempt in 0..2 {
        if attempt == 1 {
            messages.push(Message::new(Role::User, REASK));
        }
        let reply = match client.complete(&messages) {
            Ok(c) => c.text,
            Err(e) => return reject(format!("judge unavailable: {e}")),
        };
        match parse_judge_output(&reply) {
            Ok((mut scores, rationale)) => {
                if !answer_matches {
                    scores.answer_plausibility = SCALE_MIN;
                }
                let accept = scores.all().iter().all(|s| *s >= cfg.floor);
                return JudgeVerdict {
                    scores: Some(scores),
                    accept,
                    rationale,
                    answer_matches,
                };
            }
            Err(e) => {
                last_err = e;
                messages.push(Message::new(Role::Assistant, reply));
            }
        }
    }
    reject(format!("JudgeParseError: {last_err}"))
}

#[cfg(test)]
mod tests {
    use super::super::testkit::*;
    use super::*;
    use crate::client::{Script, Usage};
    use crate::harness::{Block, Timing, Turn};

    const GOOD: &str = "query_clarity: 5\neducational_value: 4\nexploratory_competence: 5\nexecution_robustness: 4\ntask_alignment: 5\nanswer_plausibility: 5\nrationale: fine";

    fn traj(answer: &str) -> Trajectory {
        let mut t = Trajectory::new("q1", "m", String::new());
        t.turns.push(Turn {
            index: 0,
            completion: "<python>print(35)</python>".into(),
            blocks: vec![
                Block::Code("print(35)".into()),
                Block::Information("<information>\n[stdout]\n35\n</information>".into()),
            ],
            usage: Usage::default(),
            timing: Timing::default(),
        });
        t.answer = Some(answer.into());
        t.terminal = Terminal::Answered;
        t
    }

    fn judge_with(replies: &[&str], answer: &str) -> JudgeVerdict {
        let dir = tempfile::tempdir().unwrap();
        let model = scripted(
            dir.path(),
            "judge",
            &Script {
                default: replies.iter().map(|s| s.to_string()).collect(),
                ..Default::default()
            },
        );
        let q = query("q1", "s", "What is the mean age?");
        judge(
            &q,
            &traj(answer),
            &MetricSpec::default(),
            &JudgeConfig::new(model),
            &Kit::new().clients,
            "q1/judge",
        )
    }

    #[test]
    fn accepts_clean_correct_run() {
        let v = judge_with(&[GOOD], "35");
        assert!(v.accept, "{v:?}");
        assert_eq!(v.rationale, "fine");
    }

    #[test]
    fn wrong_answer_rejected_whatever_the_judge_says() {
        let v = judge_with(&[GOOD], "36");
        assert!(!v.accept);
        assert_eq!(v.scores.unwrap().answer_plausibility, SCALE_MIN);
    }

    #[test]
    fn one_reask_then_reject() {
        let v = judge_with(&["looks good to me", GOOD], "35");
        assert!(v.accept);
        let v = judge_with(&["nope", "still nope"], "35");
        assert!(!v.accept);
        assert!(
            v.rationale.starts_with("JudgeParseError"),
            "{}",
            v.rationale
        );
        assert!(v.scores.is_none());
    }

    #[test]
    fn prompt_contains_query_reference_and_trajectory() {
        let q = query("q1", "s", "What is the mean age?");
        let text = JudgeTemplate::default().render(&q, &traj("35"));
        assert!(text.contains("What is the mean age?"));
        assert!(text.contains("REFERENCE ANSWER:\n35"));
        assert!(text.contains("[stdout]\n35"));
        assert!(!text.contains("{{"));
    }

    #[test]
    fn unfinished_trajectory_rejected_without_asking() {
        let mut t = traj("35");
        t.terminal = Terminal::BudgetExhausted;
        let model = ModelConfig::scripted("j", "/nonexistent");
        let q = query("q1", "s", "q");
        let v = judge(
            &q,
            &t,
            &MetricSpec::default(),
            &JudgeConfig::new(model),
            &Kit::new().clients,
            "k",
        );
        assert!(!v.accept);
        assert!(v.rationale.contains("budget"), "{}", v.rationale);
    }

    #[test]
    fn out_of_scale_is_unparseable() {
        assert!(
            parse_judge_output(&GOOD.replace("task_alignment: 5", "task_alignment: 7")).is_err()
        );
        assert!(JudgeTemplate::parse("no slots").is_err());
    }
}
