use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{SynthPair, SynthesisError};
use crate::client::Role;
use crate::harness::Terminal;

pub const SFT_SCHEMA: &str = "dseval.sft/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SftRole {
    System,
    User,
    Assistant,
    /// Execution feedback returned to the agent.
    Environment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: SftRole,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub messages: Vec<SftMessage>,
}

/// Flattens a pair into the opening prompt followed by alternating agent
/// completions and execution observations.
pub fn conversation_of(pair: &SynthPair) -> Result<Conversation, SynthesisError> {
    if pair.trajectory.terminal != Terminal::Answered {
        return Err(SynthesisError::Serialization(format!(
            "`{}` ended {}, only answered trajectories export",
            pair.query.id,
            pair.trajectory.terminal.as_str()
        )));
    }
    let mut messages: Vec<SftMessage> = pair
        .prompt
        .iter()
        .map(|m| SftMessage {
            role: match m.role {
                Role::System => SftRole::System,
                Role::User => SftRole::User,
                Role::Assistant => SftRole::Assistant,
            },
            content: m.content.clone(),
        })
        .collect();
    for turn in &pair.trajectory.turns {
        messages.push(SftMessage {
            role: SftRole::Assistant,
            content: turn.completion.clone(),
        });
        if let Some(obs) = turn.observation() {
            messages.push(SftMessage {
                role: SftRole::Environment,
                content: obs.to_string(),
            });
        }
    }
    Ok(Conversation {
        id: pair.query.id.clone(),
        messages,
    })
}

pub trait SftFormat: Send + Sync {
    fn id(&self) -> &str;
    fn extension(&self) -> &str;
    fn render(&self, conversations: &[Conversation]) -> Result<String, SynthesisError>;
    fn parse(&self, text: &str) -> Result<Vec<Conversation>, SynthesisError>;
}

fn ser(e: impl std::fmt::Display) -> SynthesisError {
    SynthesisError::Serialization(e.to_string())
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
}

fn check_schema(v: &Value, line: usize) -> Result<(), SynthesisError> {
    match v.get("schema").and_then(Value::as_str) {
        Some(SFT_SCHEMA) => Ok(()),
        other => Err(ser(format!("line {}: schema {other:?}", line + 1))),
    }
}

/// One JSON object per line with OpenAI-style `messages`; environment
/// feedback goes out as user turns and keeps its role under `source`.
#[derive(Debug, Default, Clone, Copy)]
pub struct ChatMlJsonl;

impl SftFormat for ChatMlJsonl {
    fn id(&self) -> &str {
        "chatml-jsonl"
    }

    fn extension(&self) -> &str {
        "jsonl"
    }

    fn render(&self, conversations: &[Conversation]) -> Result<String, SynthesisError> {
        let mut out = String::new();
        for c in conversations {
            let messages: Vec<Value> = c
                .messages
                .iter()
                .map(|m| match m.role {
                    SftRole::Environment => {
                        json!({"role": "user", "source": "environment", "content": m.content})
                    }
                    r => json!({"role": r, "content": m.content}),
                })
                .collect();
            let rec = json!({"schema": SFT_SCHEMA, "id": c.id, "messages": messages});
            out.push_str(&serde_json::to_string(&rec).map_err(ser)?);
            out.push('\n');
        }
        Ok(out)
    }

    fn parse(&self, text: &str) -> Result<Vec<Conversation>, SynthesisError> {
        lines(text)
            .map(|(n, line)| {
                let v: Value =
                    serde_json::from_str(line).map_err(|e| ser(format!("line {}: {e}", n + 1)))?;
                check_schema(&v, n)?;
                let id = v["id"]
                    .as_str()
                    .ok_or_else(|| ser(format!("line {}: no id", n + 1)))?;
                let messages = v["messages"]
                    .as_array()
                    .ok_or_else(|| ser(format!("line {}: no messages", n + 1)))?
                    .iter()
                    .map(|m| {
                        let role = if m.get("source").and_then(Value::as_str) == Some("environment")
                        {
                            SftRole::Environment
                        } else {
                            serde_json::from_value(m["role"].clone()).map_err(ser)?
                        };
                        let content = m["content"]
                            .as_str()
                            .ok_or_else(|| ser("message without content"))?;
                        Ok(SftMessage {
                            role,
                            content: content.to_string(),
                        })
                    })
                    .collect::<Result<_, SynthesisError>>()?;
                Ok(Conversation {
                    id: id.to_string(),
                    messages,
                })
            })
            .collect()
    }
}

/// ShareGPT records (`from`/`value`), one per line.
#[derive(Debug, Default, Clone, Copy)]
pub struct ShareGpt;

fn sharegpt_from(r: SftRole) -> &'static str {
    match r {
        SftRole::System => "system",
        SftRole::User => "human",
        SftRole::Assistant => "gpt",
        SftRole::Environment => "observation",
    }
}

impl SftFormat for ShareGpt {
    fn id(&self) -> &str {
        "sharegpt"
    }

    fn extension(&self) -> &str {
        "jsonl"
    }

    fn render(&self, conversations: &[Conversation]) -> Result<String, SynthesisError> {
        let mut out = String::new();
        for c in conversations {
            let turns: Vec<Value> = c
                .messages
                .iter()
                .map(|m| json!({"from": sharegpt_from(m.role), "value": m.content}))
                .collect();
            let rec = json!({"schema": SFT_SCHEMA, "id": c.id, "conversations": turns});
            out.push_str(&serde_json::to_string(&rec).map_err(ser)?);
            out.push('\n');
        }
        Ok(out)
    }

    fn parse(&self, text: &str) -> Result<Vec<Conversation>, SynthesisError> {
        lines(text)
            .map(|(n, line)| {
                let v: Value =
                    serde_json::from_str(line).map_err(|e| ser(format!("line {}: {e}", n + 1)))?;
                check_schema(&v, n)?;
                let id = v["id"]
                    .as_str()
                    .ok_or_else(|| ser(format!("line {}: no id", n + 1)))?;
                let messages = v["conversations"]
                    .as_array()
                    .ok_or_else(|| ser(format!("line {}: no conversations", n + 1)))?
                    .iter()
                    .map(|m| {
                        let role = match m["from"].as_str() {
                            Some("system") => SftRole::System,
                            Some("human") => SftRole::User,
                            Some("gpt") => SftRole::Assistant,
                            Some("observation") => SftRole::Environment,
                            other => return Err(ser(format!("unknown speaker {other:?}"))),
                        };
                        let content = m["value"]
                            .as_str()
                            .ok_or_else(|| ser("turn without value"))?;
                        Ok(SftMessage {
                            role,
                            content: content.to_string(),
                        })
                    })
                    .collect::<Result<_, SynthesisError>>()?;
                Ok(Conversation {
                    id: id.to_string(),
                    messages,
                })
            })
            .collect()
    }
}

#[derive(Clone)]
pub struct ExportRegistry {
    formats: BTreeMap<String, Arc<dyn SftFormat>>,
}

impl Default for ExportRegistry {
    fn default() -> Self {
        let mut r = Self {
            formats: BTreeMap::new(),
        };
        r.register(Arc::new(ChatMlJsonl));
        r.register(Arc::new(ShareGpt));
        r
    }
}

impl ExportRegistry {
    pub fn register(&mut self, format: Arc<dyn SftFormat>) {
        self.formats.insert(format.id().to_string(), format);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn SftFormat>, SynthesisError> {
        self.formats
            .get(id)
            .cloned()
            .ok_or_else(|| SynthesisError::UnknownFormat(id.to_string()))
    }

    pub fn ids(&self) -> Vec<&str> {
        self.formats.keys().map(String::as_str).collect()
    }
}

/// Writes accepted pairs to `path` in `format_id`; returns the record count.
pub fn export_sft(
    pairs: &[SynthPair],
    format_id: &str,
    registry: &ExportRegistry,
    path: &Path,
) -> Result<usize, SynthesisError> {
    let format = registry.get(format_id)?;
    let conversations = pairs
        .iter()
        .map(conversation_of)
        .collect::<Result<Vec<_>, _>>()?;
    let text = format.render(&conversations)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    Ok(conversations.len())
}
