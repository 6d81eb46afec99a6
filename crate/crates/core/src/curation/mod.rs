//! Benchmark refinement: task quality flags, file-less shortcut detection
//! and rule-based competition intake.

mod competition;
mod quality;
mod shortcut;

use thiserror::Error;

pub use competition::{
    curated_competitions, filter_competition, is_easy, load_records, parse_exclusions, parse_size,
    run_funnel, shipped_exclusions, split_difficulty, CompetitionRecord, CompetitionRule,
    CuratedCompetition, Description, DifficultySplit, FilterVerdict, FunnelReport, Leaderboard,
    Overlap, Recency, RuleCount, RuleSet, SizeLimit, SubmissionFormat, ValidChallenge,
    EASY_INTRODUCTORY, EASY_PREFIX, MIN_CLOSE_YEAR_EXCLUSIVE, SIZE_LIMIT_BYTES,
};
pub use quality::{quality_flags, QualityViolation};
pub use shortcut::{
    classify, shortcut_filter, shortcut_solvable, EpisodeVoteRunner, ShortcutConfig,
    ShortcutReport, ShortcutVerdict, TaskVotes, Vote, VoteRunner,
};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("record `{slug}` is missing `{field}`")]
    IncompleteRecord { slug: String, field: &'static str },
    #[error("duplicate competition slug `{0}`")]
    DuplicateSlug(String),
    #[error("{path}: {msg}")]
    Records { path: String, msg: String },
    #[error("invalid shortcut configuration: {0}")]
    Config(String),
}
