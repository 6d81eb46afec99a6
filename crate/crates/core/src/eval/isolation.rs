//! Where metric code runs. Jobs carry copies of the submission and labels
//! only, so the scorer never touches worker state.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{MetricError, MetricRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreJob {
    pub metric_id: String,
    pub submission: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScoreReply {
    pub fn from_result(r: Result<f64, MetricError>) -> Self {
        match r {
            Ok(s) => Self {
                score: Some(s),
                error: None,
            },
            Err(e) => Self {
                score: None,
                error: Some(e.to_string()),
            },
        }
    }
}

pub trait ScoringIsolation: Send + Sync {
    fn score(&self, job: &ScoreJob) -> Result<f64, String>;
}

/// Scores on the calling thread. Used by tests and the fake backend.
#[derive(Default, Clone)]
pub struct InProcessScorer {
    pub registry: MetricRegistry,
}

impl ScoringIsolation for InProcessScorer {
    fn score(&self, job: &ScoreJob) -> Result<f64, String> {
        self.registry
            .score(&job.metric_id, &job.submission, &job.labels)
            .map_err(|e| e.to_string())
    }
}

/// Scores in a fresh child process that reads one JSON [`ScoreJob`] on stdin
/// and writes one JSON [`ScoreReply`] on stdout.
#[derive(Debug, Clone)]
pub struct SubprocessScorer {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl SubprocessScorer {
    /// Reads a job from `input`, scores it with `registry`, writes the reply.
    /// This is the child side of the protocol.
    pub fn serve(
        registry: &MetricRegistry,
        mut input: impl Read,
        mut output: impl Write,
    ) -> std::io::Result<()> {
        let mut buf = String::new();
        input.read_to_string(&mut buf)?;
        let reply = match serde_json::from_str::<ScoreJob>(&buf) {
            Ok(job) => ScoreReply::from_result(registry.score(
                &job.metric_id,
                &job.submission,
                &job.labels,
            )),
            Err(e) => ScoreReply {
                score: None,
                error: Some(format!("bad job: {e}")),
            },
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.flush()
    }
}

impl ScoringIsolation for SubprocessScorer {
    fn score(&self, job: &ScoreJob) -> Result<f64, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env_clear()
            .env("PATH", "/usr/bin:/bin")
            .spawn()
            .map_err(|e| format!("cannot spawn scorer: {e}"))?;
        let payload = serde_json::to_vec(job).map_err(|e| e.to_string())?;
        if let Some(mut stdin) = child.stdin.take() {
            stdin.write_all(&payload).map_err(|e| e.to_string())?;
        }
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "scorer exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        let reply: ScoreReply =
            serde_json::from_slice(&out.stdout).map_err(|e| format!("bad scorer reply: {e}"))?;
        match (reply.score, reply.error) {
            (Some(s), None) => Ok(s),
            (_, Some(e)) => Err(e),
            (None, None) => Err("scorer returned neither score nor error".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job() -> ScoreJob {
        ScoreJob {
            metric_id: "mae".into(),
            submission: "id,y\n1,2\n".into(),
            labels: "id,y\n1,1\n".into(),
        }
    }

    #[test]
    fn serve_round_trip() {
        let input = serde_json::to_vec(&job()).unwrap();
        let mut out = Vec::new();
        SubprocessScorer::serve(&MetricRegistry::default(), input.as_slice(), &mut out).unwrap();
        let reply: ScoreReply = serde_json::from_slice(&out).unwrap();
        assert_eq!(reply.score, Some(1.0));
    }

    #[test]
    fn subprocess_reply_is_parsed() {
        let s = SubprocessScorer {
            program: "/bin/sh".into(),
            args: vec![
                "-c".into(),
                "cat >/dev/null; printf '{\"score\":0.25}'".into(),
            ],
        };
        assert_eq!(s.score(&job()), Ok(0.25));
        let failing = SubprocessScorer {
            program: "/bin/sh".into(),
            args: vec![
                "-c".into(),
                "cat >/dev/null; printf '{\"error\":\"boom\"}'".into(),
            ],
        };
        assert_eq!(failing.score(&job()), Err("boom".into()));
    }

    #[test]
    fn in_process_matches_registry() {
        assert_eq!(InProcessScorer::default().score(&job()), Ok(1.0));
    }
}
