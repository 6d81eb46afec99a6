//! Execution-grounded training data: explore-and-validate query generation,
//! K-sample trajectory collection, six-criteria judging, diversity
//! filtering and SFT export.

mod diversity;
mod export;
mod generate;
mod judge;
mod pipeline;
mod sample;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diversity::{
    diversity_filter, ScorerRegistry, SimilarityScorer, TokenSetRatio, DEFAULT_THRESHOLD,
};
pub use export::{
    conversation_of, export_sft, ChatMlJsonl, Conversation, ExportRegistry, SftFormat, SftMessage,
    SftRole, ShareGpt, SFT_SCHEMA,
};
pub use generate::{
    generate_queries, parse_proposal, register_templates, Generated, GeneratorConfig, Proposal,
    PROPOSE_TEMPLATE,
};
pub use judge::{
    judge, parse_judge_output, transcript, Criteria, JudgeConfig, JudgeTemplate, JudgeVerdict,
    CRITERIA,
};
pub use pipeline::{run_pipeline, PipelineOutcome, SynthConfig, SynthesisReport, REPORT_SCHEMA};
pub use sample::{sample_trajectories, SampleFailure, SampleSet, SamplingConfig};

use crate::client::{ClientBackendRegistry, Message};
use crate::harness::{Harness, Trajectory};
use crate::sandbox::{ContainerProfile, SandboxManager};
use crate::task::{SealedText, TaskInstance};

/// A generated question that the generator solved itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthQuery {
    pub id: String,
    pub seed_task_id: String,
    pub seed_question: String,
    pub question: String,
    pub reference: String,
    pub guideline: String,
    /// Id of the self-solve trajectory that validated the reference.
    pub solve_trajectory_id: String,
}

impl SynthQuery {
    /// The seed task with this query's question, guideline and reference.
    pub fn as_task(&self, seed: &TaskInstance) -> TaskInstance {
        let mut t = seed.clone();
        t.id = self.id.clone();
        t.prompt.question = Some(self.question.clone());
        t.prompt.choices.clear();
        t.prompt.user_template = None;
        t.answer_guideline = Some(self.guideline.clone());
        t.gold_answer = Some(SealedText::new(self.reference.clone()));
        t
    }
}

/// One accepted (query, trajectory) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPair {
    pub query: SynthQuery,
    /// The system and user messages the trajectory started from.
    pub prompt: Vec<Message>,
    pub trajectory: Trajectory,
    pub verdict: JudgeVerdict,
    pub seed_similarity: f64,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("generator produced {got} of {wanted} validated queries")]
    GeneratorExhausted {
        wanted: usize,
        got: usize,
        partial: Box<Generated>,
    },
    #[error("similarity scorer `{0}` is not registered")]
    ScorerUnavailable(String),
    #[error("unknown export format `{0}`")]
    UnknownFormat(String),
    #[error("serialization: {0}")]
    Serialization(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sandbox: {0}")]
    Sandbox(#[from] crate::sandbox::SandboxError),
    #[error("prompt: {0}")]
    Prompt(#[from] crate::task::PromptError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Shared services for synthesis runs.
#[derive(Clone, Copy)]
pub struct SynthEnv<'a> {
    pub manager: &'a SandboxManager,
    pub profile: &'a ContainerProfile,
    pub clients: &'a ClientBackendRegistry,
    pub harness: &'a Harness,
}

#[cfg(test)]
pub(crate) mod testkit {
    use std::path::Path;
    use std::sync::Arc;

    use super::*;
    use crate::client::{ModelConfig, Script};
    use crate::sandbox::fake::FakeBackend;
    use crate::sandbox::ManagerConfig;

    pub struct Kit {
        pub manager: SandboxManager,
        pub profile: ContainerProfile,
        pub clients: ClientBackendRegistry,
        pub harness: Harness,
    }

    impl Kit {
        pub fn new() -> Self {
            let mut harness = Harness::default();
            generate::register_templates(&mut harness.templates);
            Self {
                manager: SandboxManager::new(
                    Arc::new(FakeBackend::default()),
                    ManagerConfig::default(),
                ),
                profile: ContainerProfile::new("p", "img"),
                clients: ClientBackendRegistry::default(),
                harness,
            }
        }

        pub fn env(&self) -> SynthEnv<'_> {
            SynthEnv {
                manager: &self.manager,
                profile: &self.profile,
                clients: &self.clients,
                harness: &self.harness,
            }
        }
    }

    pub fn scripted(dir: &Path, name: &str, script: &Script) -> ModelConfig {
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, serde_json::to_string(script).unwrap()).unwrap();
        ModelConfig::scripted(name, path.display().to_string())
    }

    pub fn query(id: &str, seed_q: &str, q: &str) -> SynthQuery {
        SynthQuery {
            id: id.into(),
            seed_task_id: "seed".into(),
            seed_question: seed_q.into(),
            question: q.into(),
            reference: "35".into(),
            guideline: "Answer with a number.".into(),
            solve_trajectory_id: format!("{id}/solve"),
        }
    }
}
