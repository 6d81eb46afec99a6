//! The multi-turn tagged loop between a model and a worker session.

mod parse;
mod trajectory;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_agent_output, Block, MalformedTags, ParseConfig};
pub use trajectory::{
    record, replay, replay_all, to_jsonl, SerializationError, Terminal, Timing, Trajectory,
    TrajectorySink, Turn,
};

use crate::client::{ClientError, Message, ModelClient, Role, Usage};
use crate::sandbox::{ExecutionResult, SessionState, WorkerSession};
use crate::task::TaskInstance;
use crate::task::{PromptError, TemplateRegistry};

pub const MALFORMED_NOTICE: &str =
    "Your last message had an unclosed tag, so nothing was executed. Close every tag you open.";
pub const NO_ACTION_NOTICE: &str =
    "No code or answer found. Put code in <python></python> tags or give your final answer in <answer></answer> tags.";
pub const EXTRA_CODE_NOTICE: &str =
    "Only the first code block was executed. Run one step at a time.";
pub const CANCELLED: &str = "cancelled";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBudget {
    pub max_turns: u32,
    pub max_total_tokens: u64,
    /// Seconds of model latency plus execution time.
    pub episode_wall_clock: f64,
}

impl EpisodeBudget {
    pub fn new(
        max_turns: u32,
        max_total_tokens: u64,
        episode_wall_clock: f64,
    ) -> Result<Self, EpisodeError> {
        let b = Self {
            max_turns,
            max_total_tokens,
            episode_wall_clock,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.max_turns == 0
            || self.max_total_tokens == 0
            || self.episode_wall_clock.is_nan()
            || self.episode_wall_clock <= 0.0
        {
            return Err(EpisodeError::Budget(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("invalid budget, all limits must be positive: {0}")]
    Budget(String),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("session is not ready")]
    SessionNotReady,
    /// The client failed; the partial trajectory is kept with
    /// `terminal = fatal_error`.
    #[error("model client: {error}")]
    Client {
        error: ClientError,
        partial: Box<Trajectory>,
    },
}

/// Wraps an execution result verbatim: stdout, stderr, value, each labeled,
/// empty sections left out.
pub fn format_observation(r: &ExecutionResult) -> String {
    let mut body = String::new();
    for (label, text) in [
        ("stdout", r.stdout.as_str()),
        ("stderr", r.stderr.as_str()),
        ("value", r.value_repr.as_deref().unwrap_or("")),
    ] {
        if text.is_empty() {
            continue;
        }
        body.push_str(&format!("[{label}]\n{text}"));
        if !text.ends_with('\n') {
            body.push('\n');
        }
    }
    if body.is_empty() {
        body.push_str("(no output)\n");
    }
    wrap_information(&body)
}

fn wrap_information(body: &str) -> String {
    format!("<information>\n{}</information>", body)
}

/// Loop settings shared by every episode of a run.
#[derive(Clone, Default)]
pub struct Harness {
    pub parse: ParseConfig,
    pub templates: TemplateRegistry,
    pub config_hash: String,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Harness {
    fn cancelled(&self) -> bool {
        self.cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::Relaxed))
    }

    /// Initial system and user messages for `task` inside `session`.
    pub fn opening_messages(
        &self,
        task: &TaskInstance,
        mount_root: &str,
    ) -> Result<Vec<Message>, PromptError> {
        let system = self.templates.render_prompt(
            task,
            TemplateRegistry::system_template_for(task),
            mount_root,
        )?;
        let user = self.templates.render_prompt(
            task,
            TemplateRegistry::user_template_for(task),
            mount_root,
        )?;
        Ok(vec![
            Message::new(Role::System, system),
            Message::new(Role::User, user),
        ])
    }

    pub fn run_episode(
        &self,
        task: &TaskInstance,
        client: &mut dyn ModelClient,
        session: &mut WorkerSession,
        budget: &EpisodeBudget,
    ) -> Result<Trajectory, EpisodeError> {
        budget.validate()?;
        if session.state() != SessionState::Ready {
            return Err(EpisodeError::SessionNotReady);
        }
        let mut messages = self.opening_messages(task, &session.profile().data_mount_root)?;
        let exec_timeout = session.profile().exec_timeout;
        let mut t = Trajectory::new(&task.id, client.model_id(), self.config_hash.clone());
        let mut usage = Usage::default();
        t.terminal = Terminal::BudgetExhausted;

        for index in 0..budget.max_turns {
            let remaining = budget.episode_wall_clock - t.elapsed();
            if remaining <= 0.0
                || usage.input_tokens + usage.output_tokens >= budget.max_total_tokens
            {
                break;
            }
            if self.cancelled() {
                t.terminal = Terminal::FatalError;
                t.error = Some(CANCELLED.into());
                break;
            }
            let completion = match client.complete(&messages) {
                Ok(c) => c,
                Err(error) => {
                    t.terminal = Terminal::FatalError;
                    t.error = Some(error.to_string());
                    return Err(EpisodeError::Client {
                        error,
                        partial: Box::new(t),
                    });
                }
            };
            usage.input_tokens += completion.usage.input_tokens;
            usage.output_tokens += completion.usage.output_tokens;
            t.usage = usage;
            messages.push(Message::new(Role::Assistant, completion.text.clone()));
            let mut turn = Turn {
                index,
                completion: completion.text,
                blocks: Vec::new(),
                usage,
                timing: Timing {
                    model: completion.latency,
                    exec: 0.0,
                },
            };

            let blocks = match parse_agent_output(&turn.completion, &self.parse) {
                Ok(b) => b,
                Err(e) => {
                    turn.blocks = e.partial;
                    let info = wrap_information(&format!("{MALFORMED_NOTICE}\n"));
                    turn.blocks.push(Block::Information(info.clone()));
                    messages.push(Message::new(Role::User, info));
                    t.turns.push(turn);
                    continue;
                }
            };
            turn.blocks = blocks;

            if let Some(answer) = turn.blocks.iter().find_map(|b| match b {
                Block::Answer(a) => Some(a.clone()),
                _ => None,
            }) {
                t.answer = Some(answer);
                t.terminal = Terminal::Answered;
                t.turns.push(turn);
                return Ok(t);
            }

            let codes: Vec<String> = turn
                .blocks
                .iter()
                .filter_map(|b| match b {
                    Block::Code(c) => Some(c.clone()),
                    _ => None,
                })
                .collect();
            let Some(code) = codes.first() else {
                let info = wrap_information(&format!("{NO_ACTION_NOTICE}\n"));
                turn.blocks.push(Block::Information(info.clone()));
                messages.push(Message::new(Role::User, info));
                t.turns.push(turn);
                continue;
            };

            let timeout =
                exec_timeout.min(budget.episode_wall_clock - t.elapsed() - turn.timing.model);
            let result = if timeout <= 0.0 {
                None
            } else {
                match session.execute(code, timeout) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        t.terminal = Terminal::FatalError;
                        t.error = Some(e.to_string());
                        t.turns.push(turn);
                        return Ok(t);
                    }
                }
            };
            let Some(result) = result else {
                t.turns.push(turn);
                break;
            };
            turn.timing.exec = result.duration;
            let mut info = format_observation(&result);
            if codes.len() > 1 {
                info = info.replacen(
                    "</information>",
                    &format!("{EXTRA_CODE_NOTICE}\n</information>"),
                    1,
                );
            }
            turn.blocks.push(Block::Information(info.clone()));
            messages.push(Message::new(Role::User, info));
            t.turns.push(turn);
            if session.state() == SessionState::Dead {
                t.terminal = Terminal::FatalError;
                t.error = Some("worker session died".into());
                return Ok(t);
            }
        }
        Ok(t)
    }
}

/// Runs one episode with default harness settings.
pub fn run_episode(
    task: &TaskInstance,
    client: &mut dyn ModelClient,
    session: &mut WorkerSession,
    budget: &EpisodeBudget,
) -> Result<Trajectory, EpisodeError> {
    Harness::default().run_episode(task, client, session, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ScriptedClient;
    use crate::sandbox::fake::FakeBackend;
    use crate::sandbox::{ContainerProfile, ManagerConfig, SandboxManager};
    use crate::task::fixtures::analysis_task;

    fn setup(dir: &std::path::Path) -> (SandboxManager, ContainerProfile, TaskInstance) {
        let task = analysis_task(dir, "t1");
        let mgr = SandboxManager::new(Arc::new(FakeBackend::default()), ManagerConfig::default());
        (mgr, ContainerProfile::new("default", "img"), task)
    }

    fn budget(turns: u32) -> EpisodeBudget {
        EpisodeBudget::new(turns, 1_000_000, 3600.0).unwrap()
    }

    #[test]
    fn code_then_answer() {
        let dir = tempfile::tempdir().unwrap();
        let (mgr, profile, task) = setup(dir.path());
        let mut s = mgr.acquire_worker(&profile, &task).unwrap();
        let mut c = ScriptedClient::new(
            "m",
            [
                "<reasoning>look</reasoning><python>x = 6 * 7\nprint(x)</python>",
                "<answer>42</answer>",
            ],
        );
        let t = run_episode(&task, &mut c, &mut s, &budget(5)).unwrap();
        assert_eq!(t.terminal, Terminal::Answered);
        assert_eq!(t.turns.len(), 2);
        assert_eq!(t.answer.as_deref(), Some("42"));
        assert_eq!(
            t.turns[0].observation(),
            Some("<information>\n[stdout]\n42\n</information>")
        );
    }

    #[test]
    fn budget_exhausted() {
        let dir = tempfile::tempdir().unwrap();
        let (mgr, profile, task) = setup(dir.path());
        let mut s = mgr.acquire_worker(&profile, &task).unwrap();
        let mut c = ScriptedClient::new("m", Vec::<String>::new());
        let t = run_episode(&task, &mut c, &mut s, &budget(3)).unwrap();
        assert_eq!(t.terminal, Terminal::BudgetExhausted);
        assert_eq!(t.turns.len(), 3);
        assert!(t.answer.is_none());
    }

    #[test]
    fn exit_kills_session() {
        let dir = tempfile::tempdir().unwrap();
        let (mgr, profile, task) = setup(dir.path());
        let mut s = mgr.acquire_worker(&profile, &task).unwrap();
        let mut c = ScriptedClient::new(
            "m",
            [
                "<python>import os\nos._exit(1)</python>",
                "<answer>1</answer>",
            ],
        );
        let t = run_episode(&task, &mut c, &mut s, &budget(5)).unwrap();
        assert_eq!(t.terminal, Terminal::FatalError);
        assert_eq!(t.turns.len(), 1);
    }

    #[test]
    fn malformed_costs_a_turn_and_extra_code_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let (mgr, profile, task) = setup(dir.path());
        let mut s = mgr.acquire_worker(&profile, &task).unwrap();
        let mut c = ScriptedClient::new(
            "m",
            [
                "<python>print(",
                "<python>print(1)</python><python>print(2)</python>",
                "<answer>x</answer>",
            ],
        );
        let t = run_episode(&task, &mut c, &mut s, &budget(5)).unwrap();
        assert_eq!(t.turns.len(), 3);
        assert!(t.turns[0].observation().unwrap().contains(MALFORMED_NOTICE));
        let obs = t.turns[1].observation().unwrap();
        assert!(obs.contains("[stdout]\n1\n") && !obs.contains('2'), "{obs}");
        assert!(obs.contains(EXTRA_CODE_NOTICE));
    }

    #[test]
    fn client_error_keeps_partial() {
        struct Broken;
        impl ModelClient for Broken {
            fn model_id(&self) -> &str {
                "broken"
            }
            fn complete(
                &mut self,
                _: &[Message],
            ) -> Result<crate::client::Completion, ClientError> {
                Err(ClientError::TransportError("down".into()))
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let (mgr, profile, task) = setup(dir.path());
        let mut s = mgr.acquire_worker(&profile, &task).unwrap();
        match run_episode(&task, &mut Broken, &mut s, &budget(5)) {
            Err(EpisodeError::Client { partial, .. }) => {
                assert_eq!(partial.terminal, Terminal::FatalError);
                assert!(partial.turns.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cancellation_stops_before_next_turn() {
        let dir = tempfile::tempdir().unwrap();
        let (mgr, profile, task) = setup(dir.path());
        let mut s = mgr.acquire_worker(&profile, &task).unwrap();
        let flag = Arc::new(AtomicBool::new(true));
        let h = Harness {
            cancel: Some(flag),
            ..Default::default()
        };
        let mut c = ScriptedClient::new("m", ["<answer>1</answer>"]);
        let t = h.run_episode(&task, &mut c, &mut s, &budget(5)).unwrap();
        assert_eq!(t.terminal, Terminal::FatalError);
        assert_eq!(t.error.as_deref(), Some(CANCELLED));
    }

    #[test]
    fn deterministic_with_scripted_client() {
        let dir = tempfile::tempdir().unwrap();
        let (mgr, profile, task) = setup(dir.path());
        let run = || {
            let mut s = mgr.acquire_worker(&profile, &task).unwrap();
            let mut c = ScriptedClient::new(
                "m",
                [
                    "<python>import time\ntime.sleep(0.5)\nprint(len('abc'))</python>",
                    "<answer>3</answer>",
                ],
            );
            to_jsonl(&run_episode(&task, &mut c, &mut s, &budget(5)).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(EpisodeBudget::new(0, 1, 1.0).is_err());
        assert!(EpisodeBudget::new(1, 1, 0.0).is_err());
    }
}
