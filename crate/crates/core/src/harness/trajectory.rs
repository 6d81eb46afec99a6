use std::fs::{File, OpenOptions};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::Block;
use crate::client::Usage;
use crate::schema;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Answered,
    BudgetExhausted,
    #[default]
    FatalError,
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::Answered => "answered",
            Terminal::BudgetExhausted => "budget_exhausted",
            Terminal::FatalError => "fatal_error",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds spent waiting for the model.
    pub model: f64,
    /// Seconds the executed code ran, as reported by the worker.
    pub exec: f64,
}

/// One agent step: the completion, its blocks, and the environment's
/// observation appended as a trailing `Information` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: u32,
    pub completion: String,
    pub blocks: Vec<Block>,
    /// Cumulative over the episode up to and including this turn.
    pub usage: Usage,
    pub timing: Timing,
}

impl Turn {
    pub fn observation(&self) -> Option<&str> {
        match self.blocks.last() {
            Some(Block::Information(t)) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub model_id: String,
    pub config_hash: String,
    pub turns: Vec<Turn>,
    pub terminal: Terminal,
    pub answer: Option<String>,
    pub usage: Usage,
    /// Why a fatal episode stopped.
    pub error: Option<String>,
}

impl Trajectory {
    pub fn new(
        task_id: impl Into<String>,
        model_id: impl Into<String>,
        config_hash: String,
    ) -> Self {
        Self {
            task_id: task_id.into(),
            model_id: model_id.into(),
            config_hash,
            turns: Vec::new(),
            terminal: Terminal::FatalError,
            answer: None,
            usage: Usage::default(),
            error: None,
        }
    }

    /// Seconds accounted to the episode: model latency plus execution time.
    pub fn elapsed(&self) -> f64 {
        self.turns
            .iter()
            .map(|t| t.timing.model + t.timing.exec)
            .sum()
    }
}

#[derive(Debug, Error)]
pub enum SerializationError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("trajectory log ended early: {0}")]
    Truncated(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header {
        schema: String,
        task_id: String,
        model_id: String,
        config_hash: String,
    },
    Turn(Turn),
    End {
        terminal: Terminal,
        answer: Option<String>,
        usage: Usage,
        error: Option<String>,
    },
}

/// Serializes `t` as header, one line per turn, and an end line.
pub fn to_jsonl(t: &Trajectory) -> String {
    let mut out = String::new();
    let mut line = |r: &Record| {
        out.push_str(&serde_json::to_string(r).expect("trajectory serializes"));
        out.push('\n');
    };
    line(&Record::Header {
        schema: schema::TRAJECTORY.into(),
        task_id: t.task_id.clone(),
        model_id: t.model_id.clone(),
        config_hash: t.config_hash.clone(),
    });
    for turn in &t.turns {
        line(&Record::Turn(turn.clone()));
    }
    line(&Record::End {
        terminal: t.terminal,
        answer: t.answer.clone(),
        usage: t.usage,
        error: t.error.clone(),
    });
    out
}

pub fn record<W: Write>(t: &Trajectory, sink: &mut W) -> std::io::Result<()> {
    sink.write_all(to_jsonl(t).as_bytes())
}

/// Reads every trajectory in a log, in order.
pub fn replay_all<R: BufRead>(source: R) -> Result<Vec<Trajectory>, SerializationError> {
    let mut done = Vec::new();
    let mut open: Option<Trajectory> = None;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| SerializationError::Line { line: n, msg };
        let rec: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        match (rec, open.as_mut()) {
            (
                Record::Header {
                    schema: s,
                    task_id,
                    model_id,
                    config_hash,
                },
                None,
            ) => {
                if s != schema::TRAJECTORY {
                    return Err(bad(format!("unsupported schema `{s}`")));
                }
                open = Some(Trajectory::new(task_id, model_id, config_hash));
            }
            (Record::Turn(turn), Some(t)) => {
                if t.turns.last().is_some_and(|p| p.index >= turn.index) {
                    return Err(bad("turn indices must increase".into()));
                }
                t.turns.push(turn);
            }
            (
                Record::End {
                    terminal,
                    answer,
                    usage,
                    error,
                },
                Some(_),
            ) => {
                let mut t = open.take().expect("open trajectory");
                t.terminal = terminal;
                t.answer = answer;
                t.usage = usage;
                t.error = error;
                done.push(t);
            }
            (Record::Header { .. }, Some(_)) => {
                return Err(bad("header inside an open trajectory".into()))
            }
            (_, None) => return Err(bad("record outside a trajectory".into())),
        }
    }
    if let Some(t) = open {
        return Err(SerializationError::Truncated(t.task_id));
    }
    Ok(done)
}

/// Reads a log holding exactly one trajectory.
pub fn replay<R: BufRead>(source: R) -> Result<Trajectory, SerializationError> {
    let mut all = replay_all(source)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        n => Err(SerializationError::Truncated(format!(
            "expected one trajectory, found {n}"
        ))),
    }
}

/// Append-only trajectory log shared between episode threads. Each
/// trajectory is written whole under the lock.
pub struct TrajectorySink {
    file: Mutex<File>,
}

impl TrajectorySink {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, t: &Trajectory) -> std::io::Result<()> {
        let text = to_jsonl(t);
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(text.as_bytes())?;
        f.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Trajectory {
        let mut t = Trajectory::new("t1", "m", "sha256:00".into());
        t.turns.push(Turn {
            index: 0,
            completion: "<python>print(1)</python>".into(),
            blocks: vec![
                Block::Code("print(1)".into()),
                Block::Information("[stdout]\n1\n".into()),
            ],
            usage: Usage {
                input_tokens: 10,
                output_tokens: 2,
            },
            timing: Timing {
                model: 0.25,
                exec: 1e-6,
            },
        });
        t.terminal = Terminal::BudgetExhausted;
        t.usage = t.turns[0].usage;
        t
    }

    #[test]
    fn round_trip() {
        let t = sample();
        assert_eq!(replay(to_jsonl(&t).as_bytes()).unwrap(), t);
        let empty = Trajectory::new("t0", "m", String::new());
        assert_eq!(replay(to_jsonl(&empty).as_bytes()).unwrap(), empty);
    }

    #[test]
    fn corrupt_line_named() {
        let mut text = to_jsonl(&sample());
        text = text.replacen("\"record\":\"turn\"", "\"record\":\"turn\",", 1);
        match replay(text.as_bytes()) {
            Err(SerializationError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_log() {
        let text = to_jsonl(&sample());
        let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            replay(cut.as_bytes()),
            Err(SerializationError::Truncated(_))
        ));
    }

    #[test]
    fn sink_appends_whole_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let sink = TrajectorySink::open(&path).unwrap();
        std::thread::scope(|s| {
            for i in 0..8 {
                let sink = &sink;
                s.spawn(move || {
                    let mut t = sample();
                    t.task_id = format!("t{i}");
                    sink.append(&t).unwrap();
                });
            }
        });
        let all = replay_all(std::io::BufReader::new(File::open(&path).unwrap())).unwrap();
        assert_eq!(all.len(), 8);
    }

    fn arb_text() -> impl Strategy<Value = String> {
        proptest::string::string_regex("(?s).{0,40}").unwrap()
    }

    fn arb_block() -> impl Strategy<Value = Block> {
        prop_oneof![
            arb_text().prop_map(Block::Reasoning),
            arb_text().prop_map(Block::Code),
            arb_text().prop_map(Block::Answer),
            arb_text().prop_map(Block::Information),
            arb_text().prop_map(Block::Untagged),
        ]
    }

    prop_compose! {
        fn arb_trajectory()(
            task in "[a-z0-9_-]{1,12}",
            model in "[a-z0-9.-]{1,12}",
            raw in proptest::collection::vec((arb_text(), proptest::collection::vec(arb_block(), 0..4), 0u64..500, 0u64..500, 0.0f64..100.0, 0.0f64..100.0), 0..6),
            terminal in prop_oneof![Just(Terminal::Answered), Just(Terminal::BudgetExhausted), Just(Terminal::FatalError)],
            answer in arb_text(),
            error in proptest::option::of(arb_text()),
        ) -> Trajectory {
            let mut t = Trajectory::new(task, model, "sha256:ab".into());
            let mut usage = Usage::default();
            for (i, (completion, blocks, a, b, m, e)) in raw.into_iter().enumerate() {
                usage.input_tokens += a;
                usage.output_tokens += b;
                t.turns.push(Turn { index: i as u32, completion, blocks, usage, timing: Timing { model: m, exec: e } });
            }
            t.usage = usage;
            t.terminal = terminal;
            t.answer = (terminal == Terminal::Answered).then_some(answer);
            t.error = error;
            t
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn replay_inverts_record(t in arb_trajectory()) {
            let mut buf = Vec::new();
            record(&t, &mut buf).unwrap();
            prop_assert_eq!(replay(buf.as_slice()).unwrap(), t);
        }
    }
}
