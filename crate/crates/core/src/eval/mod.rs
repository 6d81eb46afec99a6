//! Scoring: analysis answer matching, submission validation, task metrics and
//! leaderboard statistics.

mod answer;
mod isolation;
mod leaderboard;
mod metrics;
mod submission;

use serde::{Deserialize, Serialize};

use crate::harness::{Terminal, Trajectory};
use crate::task::{TaskCategory, TaskInstance};

pub use answer::{match_analysis_answer, parse_number, parse_structured_answer, NoPairsFound};
pub use isolation::{InProcessScorer, ScoreJob, ScoreReply, ScoringIsolation, SubprocessScorer};
pub use leaderboard::{
    leaderboard_position, medal, Leaderboard, LeaderboardError, Medal, Position,
};
pub use metrics::{Metric, MetricError, MetricRegistry, Table};
pub use submission::{parse_table_header, validate_submission, SubmissionCheck, SubmissionIssue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::HigherBetter => a > b,
            Direction::LowerBetter => a < b,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::HigherBetter => "higher-better",
            Direction::LowerBetter => "lower-better",
        }
    }
}

pub const DEFAULT_ABS_TOL: f64 = 1e-6;
pub const DEFAULT_REL_TOL: f64 = 1e-2;

fn default_metric_id() -> String {
    "exact_match".to_string()
}
fn default_abs_tol() -> f64 {
    DEFAULT_ABS_TOL
}
fn default_rel_tol() -> f64 {
    DEFAULT_REL_TOL
}

/// Metric id plus the configuration that decides correctness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    #[serde(default = "default_metric_id")]
    pub id: String,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub case_sensitive: bool,
    /// Decimal places the prediction is rounded to before comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounding: Option<u32>,
    /// Keys a structured `@key[value]` answer is expected to carry.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub structured_keys: Vec<String>,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            id: default_metric_id(),
            direction: Direction::HigherBetter,
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: DEFAULT_REL_TOL,
            case_sensitive: false,
            rounding: None,
            structured_keys: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub valid: bool,
    pub score: Option<f64>,
    pub rank: Option<u32>,
    pub teams: Option<u32>,
    pub percentile: Option<f64>,
    pub above_median: bool,
    pub medal: Option<Medal>,
}

impl PredictionOutcome {
    pub fn invalid() -> Self {
        Self {
            valid: false,
            score: None,
            rank: None,
            teams: None,
            percentile: None,
            above_median: false,
            medal: None,
        }
    }

    pub fn scored(score: f64) -> Self {
        Self {
            valid: true,
            score: Some(score),
            ..Self::invalid()
        }
    }

    pub fn with_position(mut self, board: &Leaderboard) -> Self {
        let Some(score) = self.score else {
            return self;
        };
        let Ok(pos) = leaderboard_position(score, board) else {
            return self;
        };
        let teams = board.team_count();
        self.rank = Some(pos.rank);
        self.teams = Some(teams);
        self.percentile = Some(pos.percentile);
        self.above_median = pos.above_median;
        // An entrant worse than every team sits at teams + 1: no medal band.
        self.medal = Some(medal(pos.rank, teams).unwrap_or(Medal::None));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub task_id: String,
    pub category: TaskCategory,
    /// Analysis tasks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    /// Prediction tasks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

/// A file copied out of a worker workspace, path relative to the workspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

/// Scores one finished trajectory. Metric code runs through `scorer`, which
/// only ever sees copies of the submission and label bytes.
pub struct Evaluator<'a> {
    pub scorer: &'a dyn ScoringIsolation,
}

impl Evaluator<'_> {
    pub fn evaluate(
        &self,
        task: &TaskInstance,
        trajectory: &Trajectory,
        artifacts: &[Artifact],
    ) -> EvalOutcome {
        let mut outcome = EvalOutcome {
            task_id: task.id.clone(),
            category: task.category,
            correct: None,
            prediction: None,
            reasons: Vec::new(),
        };
        match task.category {
            TaskCategory::Analysis => {
                let correct = match (&trajectory.answer, &task.gold_answer) {
                    (Some(pred), Some(gold)) if trajectory.terminal == Terminal::Answered => {
                        match_analysis_answer(pred, gold.reveal(), &task.metric)
                    }
                    (None, _) => {
                        outcome.reasons.push("no answer".into());
                        false
                    }
                    _ => false,
                };
                outcome.correct = Some(correct);
            }
            TaskCategory::Prediction => {
                outcome.prediction =
                    Some(self.score_prediction(task, artifacts, &mut outcome.reasons));
            }
        }
        outcome
    }

    fn score_prediction(
        &self,
        task: &TaskInstance,
        artifacts: &[Artifact],
        reasons: &mut Vec<String>,
    ) -> PredictionOutcome {
        let Some(spec) = &task.prediction else {
            reasons.push("task has no prediction spec".into());
            return PredictionOutcome::invalid();
        };
        let wanted = spec.submission_path.trim_start_matches("./");
        let file = artifacts
            .iter()
            .find(|a| a.path == wanted)
            .map(|a| a.bytes.as_slice());
        let sample = match std::fs::read(spec.sample_submission_ref.host_path(&task.data_root)) {
            Ok(b) => b,
            Err(e) => {
                reasons.push(format!("sample submission unreadable: {e}"));
                return PredictionOutcome::invalid();
            }
        };
        let check = validate_submission(file, &sample);
        if !check.valid {
            reasons.extend(check.reasons.iter().map(|r| r.to_string()));
            return PredictionOutcome::invalid();
        }
        let Some(labels_ref) = &spec.labels_ref else {
            reasons.push("MetricComputationError: no held-out labels".into());
            return PredictionOutcome::invalid();
        };
        let labels = match std::fs::read(labels_ref.host_path(&task.data_root)) {
            Ok(b) => b,
            Err(e) => {
                reasons.push(format!("MetricComputationError: labels unreadable: {e}"));
                return PredictionOutcome::invalid();
            }
        };
        let job = ScoreJob {
            metric_id: spec.target_metric.id.clone(),
            submission: String::from_utf8_lossy(file.unwrap_or_default()).into_owned(),
            labels: String::from_utf8_lossy(&labels).into_owned(),
        };
        let score = match self.scorer.score(&job) {
            Ok(s) => s,
            Err(e) => {
                reasons.push(format!("MetricComputationError: {e}"));
                return PredictionOutcome::invalid();
            }
        };
        let mut outcome = PredictionOutcome::scored(score);
        if let Some(board_ref) = &spec.leaderboard_ref {
            match std::fs::read_to_string(board_ref.host_path(&task.data_root))
                .map_err(|e| e.to_string())
                .and_then(|t| Leaderboard::parse(&t).map_err(|e| e.to_string()))
            {
                Ok(mut board) => {
                    board.set_direction(spec.target_metric.direction);
                    outcome = outcome.with_position(&board);
                }
                Err(e) => reasons.push(format!("leaderboard unavailable: {e}")),
            }
        }
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Terminal, Trajectory};
    use crate::task::fixtures::{analysis_task, prediction_task};

    fn traj(task: &str, answer: Option<&str>) -> Trajectory {
        let mut t = Trajectory::new(task, "m", Default::default());
        if let Some(a) = answer {
            t.answer = Some(a.to_string());
            t.terminal = Terminal::Answered;
        }
        t
    }

    fn evaluator() -> Evaluator<'static> {
        static SCORER: std::sync::OnceLock<InProcessScorer> = std::sync::OnceLock::new();
        Evaluator {
            scorer: SCORER.get_or_init(InProcessScorer::default),
        }
    }

    #[test]
    fn analysis_answer_matches_gold() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "a");
        let out = evaluator().evaluate(&task, &traj("a", Some("35.0")), &[]);
        assert_eq!(out.correct, Some(true));
        let out = evaluator().evaluate(&task, &traj("a", None), &[]);
        assert_eq!(out.correct, Some(false));
    }

    #[test]
    fn missing_submission_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let task = prediction_task(dir.path(), "p", "id,y\n3,0\n4,0\n");
        let out = evaluator().evaluate(&task, &traj("p", Some("done")), &[]);
        let p = out.prediction.unwrap();
        assert!(!p.valid);
        assert_eq!(p.score, None);
        assert_eq!(p.medal, None);
        assert!(out.reasons.iter().any(|r| r.contains("Missing")));
    }

    #[test]
    fn valid_submission_gets_leaderboard_stats() {
        let dir = tempfile::tempdir().unwrap();
        // Board (lower-better): 0.5, 1.0, 2.0. Predictions 3->6, 4->9: rmse = sqrt(0.5) ~ 0.707.
        let task = prediction_task(dir.path(), "p", "id,y\n3,0\n4,0\n");
        let art = Artifact {
            path: "submission.csv".into(),
            bytes: b"id,y\n3,6\n4,9\n".to_vec(),
        };
        let out = evaluator().evaluate(&task, &traj("p", Some("done")), &[art]);
        let p = out.prediction.unwrap();
        assert!(p.valid);
        assert!((p.score.unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(p.rank, Some(2));
        assert_eq!(p.teams, Some(3));
        // 100 * (3 - 2) / 3
        assert!((p.percentile.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        // Median 1.0; 0.707 is strictly better.
        assert!(p.above_median);
        // teams < 100: gold ceil(0.3)=1, silver ceil(0.6)=1, bronze ceil(1.2)=2.
        assert_eq!(p.medal, Some(Medal::Bronze));
    }

    #[test]
    fn score_exactly_at_median_is_not_above() {
        let dir = tempfile::tempdir().unwrap();
        let task = prediction_task(dir.path(), "p", "id,y\n3,0\n4,0\n");
        // rmse = 1.0 (errors 1 and 1), equal to the board median.
        let art = Artifact {
            path: "submission.csv".into(),
            bytes: b"id,y\n3,7\n4,9\n".to_vec(),
        };
        let out = evaluator().evaluate(&task, &traj("p", Some("done")), &[art]);
        let p = out.prediction.unwrap();
        assert_eq!(p.score, Some(1.0));
        assert!(!p.above_median);
        assert_eq!(p.rank, Some(2));
    }

    #[test]
    fn scoring_twice_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let task = prediction_task(dir.path(), "p", "id,y\n3,0\n4,0\n");
        let art = Artifact {
            path: "submission.csv".into(),
            bytes: b"id,y\n3,6\n4,9\n".to_vec(),
        };
        let t = traj("p", Some("done"));
        assert_eq!(
            evaluator().evaluate(&task, &t, std::slice::from_ref(&art)),
            evaluator().evaluate(&task, &t, &[art])
        );
    }
}
