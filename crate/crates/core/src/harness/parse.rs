use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One tagged span of a turn. `Information` is only ever appended by the
/// environment; the parser never produces it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum Block {
    Reasoning(String),
    Code(String),
    Answer(String),
    Information(String),
    /// Text outside any recognised tag, kept for the record.
    Untagged(String),
}

impl Block {
    pub fn text(&self) -> &str {
        match self {
            Block::Reasoning(t)
            | Block::Code(t)
            | Block::Answer(t)
            | Block::Information(t)
            | Block::Untagged(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unclosed <{tag}> tag at byte {offset}")]
pub struct MalformedTags {
    pub tag: String,
    pub offset: usize,
    /// Blocks parsed before the bad tag, then the rest as untagged text.
    pub partial: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseConfig {
    pub code_tags: Vec<String>,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            code_tags: vec!["code".into(), "python".into()],
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Reasoning,
    Code,
    Answer,
}

impl ParseConfig {
    fn kind_of(&self, name: &str) -> Option<Kind> {
        match name {
            "reasoning" => Some(Kind::Reasoning),
            "answer" => Some(Kind::Answer),
            n if self.code_tags.iter().any(|t| t == n) => Some(Kind::Code),
            _ => None,
        }
    }
}

fn push_untagged(blocks: &mut Vec<Block>, text: &str) {
    let t = text.trim();
    if !t.is_empty() {
        blocks.push(Block::Untagged(t.to_string()));
    }
}

fn code_body(s: &str) -> String {
    s.trim_start_matches(['\n', '\r']).trim_end().to_string()
}

/// Splits agent text into blocks in order of appearance. Tag contents are
/// literal up to the matching closing tag.
pub fn parse_agent_output(text: &str, cfg: &ParseConfig) -> Result<Vec<Block>, MalformedTags> {
    let mut blocks = Vec::new();
    let mut pos = 0;
    let mut plain_from = 0;
    while let Some(rel) = text[pos..].find('<') {
        let lt = pos + rel;
        let open = text[lt + 1..].find('>').map(|e| &text[lt + 1..lt + 1 + e]);
        let Some((name, kind)) = open.and_then(|n| cfg.kind_of(n).map(|k| (n, k))) else {
            pos = lt + 1;
            continue;
        };
        push_untagged(&mut blocks, &text[plain_from..lt]);
        let body_start = lt + name.len() + 2;
        let close = format!("</{name}>");
        let Some(end) = text[body_start..].find(&close) else {
            push_untagged(&mut blocks, &text[lt..]);
            return Err(MalformedTags {
                tag: name.to_string(),
                offset: lt,
                partial: blocks,
            });
        };
        let body = &text[body_start..body_start + end];
        blocks.push(match kind {
            Kind::Reasoning => Block::Reasoning(body.trim().to_string()),
            Kind::Answer => Block::Answer(body.trim().to_string()),
            Kind::Code => Block::Code(code_body(body)),
        });
        pos = body_start + end + close.len();
        plain_from = pos;
    }
    push_untagged(&mut blocks, &text[plain_from..]);
    Ok(blocks)
}
