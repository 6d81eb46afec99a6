//! Sandboxed orchestration for evaluating and training data-science agents.
//!
//! The crate is organised around a handful of pluggable registries: execution
//! backends ([`sandbox::BackendRegistry`]), model backends
//! ([`client::ClientBackendRegistry`]), metrics ([`eval::MetricRegistry`]),
//! competition intake rules ([`curation::RuleSet`]), similarity scorers
//! ([`synthesis::ScorerRegistry`]) and SFT export formats
//! ([`synthesis::ExportRegistry`]). Each registry maps a stable name to a trait
//! object so run configuration can pick implementations at runtime.

pub mod client;
pub mod curation;
pub mod digest;
pub mod eval;
pub mod harness;
pub mod sandbox;
pub mod synthesis;
pub mod task;

/// Schema identifiers written into every persisted artifact.
pub mod schema {
    pub const SUITE: &str = "dseval.suite/v1";
    pub const TASK: &str = "dseval.task/v1";
    pub const PROFILE: &str = "dseval.profile/v1";
    pub const TRAJECTORY: &str = "dseval.trajectory/v1";
    pub const MODEL_REGISTRY: &str = "dseval.models/v1";
    pub const COMPETITION: &str = "dseval.competition/v1";
    pub const REPORT: &str = "dseval.report/v1";
    pub const SFT: &str = "dseval.sft/v1";
}
