use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    require_messages, rough_tokens, ClientBackend, ClientError, Completion, Message, ModelClient,
    ModelConfig, Usage,
};

/// Returned once a script runs out of completions.
pub const EXHAUSTED: &str = "<reasoning>script exhausted</reasoning>";

/// Canned completions, optionally keyed by conversation (task id).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub default: Vec<String>,
    #[serde(default)]
    pub by_key: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exhausted: Option<String>,
}

impl Script {
    /// Accepts either the full object form or a bare list of completions.
    pub fn from_json(text: &str) -> Result<Self, ClientError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Form {
            List(Vec<String>),
            Full(Script),
        }
        match serde_json::from_str::<Form>(text) {
            Ok(Form::List(default)) => Ok(Script {
                default,
                ..Default::default()
            }),
            Ok(Form::Full(s)) => Ok(s),
            Err(e) => Err(ClientError::Config(format!("bad script: {e}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ClientError::Config(format!("cannot read script {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn for_key(&self, key: &str) -> Vec<String> {
        self.by_key.get(key).unwrap_or(&self.default).clone()
    }
}

pub struct ScriptedClient {
    model_id: String,
    completions: Vec<String>,
    cursor: usize,
    exhausted: String,
}

impl ScriptedClient {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(
        model_id: impl Into<String>,
        completions: I,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            completions: completions.into_iter().map(Into::into).collect(),
            cursor: 0,
            exhausted: EXHAUSTED.to_string(),
        }
    }

    pub fn from_script(model_id: impl Into<String>, script: &Script, key: &str) -> Self {
        let mut c = Self::new(model_id, script.for_key(key));
        if let Some(e) = &script.exhausted {
            c.exhausted = e.clone();
        }
        c
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }
}

impl ModelClient for ScriptedClient {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&mut self, messages: &[Message]) -> Result<Completion, ClientError> {
        require_messages(messages)?;
        let text = match self.completions.get(self.cursor) {
            Some(t) => {
                self.cursor += 1;
                t.clone()
            }
            None => self.exhausted.clone(),
        };
        let input_tokens = messages.iter().map(|m| rough_tokens(&m.content)).sum();
        Ok(Completion {
            usage: Usage {
                input_tokens,
                output_tokens: rough_tokens(&text),
            },
            text,
            latency: 0.0,
        })
    }
}

/// Reads the script named by `endpoint` and serves the part for `key`.
#[derive(Debug, Default)]
pub struct ScriptedBackend;

impl ClientBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn client(&self, config: &ModelConfig, key: &str) -> Result<Box<dyn ModelClient>, ClientError> {
        let script = Script::load(Path::new(&config.endpoint))?;
        Ok(Box::new(ScriptedClient::from_script(
            &config.model_id,
            &script,
            key,
        )))
    }
}
