use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dseval_core::client::ClientBackendRegistry;
use dseval_core::curation::{
    load_records, parse_exclusions, quality_flags, run_funnel, shipped_exclusions, shortcut_filter,
    EpisodeVoteRunner, FunnelReport, QualityViolation, RuleSet, ShortcutConfig, ShortcutReport,
};
use dseval_core::digest::config_hash;
use dseval_core::eval::{MetricRegistry, SubprocessScorer};
use dseval_core::harness::{to_jsonl, EpisodeBudget, Harness};
use dseval_core::sandbox::{ManagerConfig, SandboxManager};
use dseval_core::synthesis::{
    export_sft, register_templates, run_pipeline, ExportRegistry, GeneratorConfig, JudgeConfig,
    JudgeTemplate, SamplingConfig, ScorerRegistry, SynthConfig, SynthEnv, SynthesisReport,
    DEFAULT_THRESHOLD,
};
use dseval_core::task::load_suite;

use crate::error::{CliError, CliResult, Context, ErrorKind};
use crate::eval::{plan, print_plan, write_run_header};
use crate::manifest::{Resolved, RunOpts};
use crate::report::{pct, write_json, write_jsonl, Table};
use crate::Env;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFlags {
    pub task_id: String,
    pub flags: Vec<QualityViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub schema: String,
    pub suite: String,
    pub version: String,
    pub tasks: usize,
    pub flagged: Vec<TaskFlags>,
}

/// Loads a suite (schema, checksums, per-task rules) and runs the quality
/// checks. Flags are findings, not failures, unless `strict`.
pub fn cmd_validate(suite: &Path, out: Option<&Path>, strict: bool) -> CliResult<ValidateReport> {
    let s = load_suite(suite).with(ErrorKind::Suite, suite.display())?;
    let flagged: Vec<TaskFlags> = s
        .tasks
        .iter()
        .map(|t| TaskFlags {
            task_id: t.id.clone(),
            flags: quality_flags(t),
        })
        .filter(|f| !f.flags.is_empty())
        .collect();
    let report = ValidateReport {
        schema: "dseval.validate/v1".into(),
        suite: s.name.clone(),
        version: s.version.clone(),
        tasks: s.tasks.len(),
        flagged,
    };
    println!(
        "suite {} v{}: {} tasks, {} flagged",
        report.suite,
        report.version,
        report.tasks,
        report.flagged.len()
    );
    for f in &report.flagged {
        let ids: Vec<&str> = f.flags.iter().map(|v| v.id()).collect();
        println!("  {}: {}", f.task_id, ids.join(", "));
    }
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_json(&out.join("validate.json"), &report)?;
    }
    if strict && !report.flagged.is_empty() {
        return Err(CliError::new(
            ErrorKind::Input,
            format!("{} task(s) failed quality checks", report.flagged.len()),
        ));
    }
    Ok(report)
}

pub fn render_shortcut(r: &ShortcutReport) -> String {
    let mut t = Table::new(&["task", "correct", "verdict"]);
    for row in &r.matrix {
        let correct = row
            .votes
            .iter()
            .filter(|(_, v)| *v == dseval_core::curation::Vote::Correct)
            .count();
        t.row(vec![
            row.task_id.clone(),
            format!("{correct}/{}", row.votes.len()),
            serde_json::to_value(row.verdict)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        ]);
    }
    format!(
        "k = {} of {} judges: {} shortcut-solvable, {} retained, {} undetermined\n{}",
        r.k,
        r.judges.len(),
        r.shortcut_solvable.len(),
        r.retained.len(),
        r.undetermined.len(),
        t.render()
    )
}

/// Asks each judge model every task with no data mounted; tasks at least
/// `k` judges answer correctly are shortcut-solvable.
pub fn cmd_shortcut(opts: &RunOpts, k: usize, env: &Env) -> CliResult<ShortcutReport> {
    let resolved = Resolved::load(opts.manifest()?)?;
    let hash = config_hash(&(resolved.hashed(), k));
    if opts.dry_run {
        print_plan(&plan(&resolved));
        return Ok(empty_shortcut(k, &resolved));
    }
    let first = resolved
        .suite
        .tasks
        .first()
        .ok_or_else(|| CliError::new(ErrorKind::Suite, "suite has no tasks"))?;
    let cfg = ShortcutConfig {
        judges: resolved.models.clone(),
        k,
        budget: resolved.budget_for(first)?,
    };
    cfg.validate().kind(ErrorKind::Config)?;
    let out = resolved.manifest.out.clone();
    write_run_header(&out, &resolved.manifest, &hash, "shortcut")?;
    let manager = SandboxManager::new(
        resolved.backend.clone(),
        ManagerConfig {
            max_parallel: resolved.manifest.parallel,
            ..ManagerConfig::default()
        },
    );
    let clients = ClientBackendRegistry::default();
    let harness = Harness {
        config_hash: hash,
        cancel: Some(env.cancel.clone()),
        ..Harness::default()
    };
    let runner = EpisodeVoteRunner {
        manager: &manager,
        profile: resolved.profile_for(first),
        clients: &clients,
        harness: &harness,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.manifest.parallel)
        .build()
        .kind(ErrorKind::Io)?;
    let report = pool
        .install(|| shortcut_filter(&resolved.suite.tasks, &cfg, &runner))
        .kind(ErrorKind::Config)?;
    if env.cancelled() {
        return Err(CliError::new(ErrorKind::Cancelled, "interrupted"));
    }
    write_json(&out.join("shortcut.json"), &report)?;
    let text = render_shortcut(&report);
    fs::write(out.join("shortcut.txt"), &text)?;
    print!("{text}");
    Ok(report)
}

fn empty_shortcut(k: usize, r: &Resolved) -> ShortcutReport {
    ShortcutReport {
        k,
        judges: r.models.iter().map(|m| m.model_id.clone()).collect(),
        retained: Vec::new(),
        shortcut_solvable: Vec::new(),
        undetermined: Vec::new(),
        matrix: Vec::new(),
    }
}

pub fn render_funnel(r: &FunnelReport) -> String {
    let mut t = Table::new(&["rule", "fired", "remaining"]);
    for row in &r.rules {
        t.row(vec![
            row.rule.clone(),
            row.fired.to_string(),
            row.remaining.to_string(),
        ]);
    }
    format!(
        "{} records ({} incomplete), {} passed: {} easy, {} hard\n{}",
        r.total,
        r.incomplete.len(),
        r.passed.len(),
        r.split.easy.len(),
        r.split.hard.len(),
        t.render()
    )
}

/// Applies the competition intake rules to crawled records.
pub fn cmd_curate(
    records: &Path,
    exclusions: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<FunnelReport> {
    let recs = load_records(records).kind(ErrorKind::Input)?;
    let excluded = match exclusions {
        Some(p) => parse_exclusions(&fs::read_to_string(p).with(ErrorKind::Input, p.display())?),
        None => shipped_exclusions(),
    };
    let report = run_funnel(&recs, &RuleSet::standard(excluded));
    let text = render_funnel(&report);
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_json(&out.join("funnel.json"), &report)?;
        fs::write(out.join("funnel.txt"), &text)?;
    }
    print!("{text}");
    Ok(report)
}

pub const SYNTH_SCHEMA: &str = "dseval.synth-config/v1";

/// Synthesis settings. Models are ids resolved through the model registry;
/// turn and token budgets come from the run flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    #[serde(default = "synth_schema")]
    pub schema: String,
    pub generator: String,
    pub sampler: String,
    pub judge: String,
    pub queries_per_seed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_floor")]
    pub floor: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_template: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub diversity_threshold: f64,
    #[serde(default = "default_scorer")]
    pub scorer: String,
    #[serde(default = "default_format")]
    pub format: String,
}

fn synth_schema() -> String {
    SYNTH_SCHEMA.into()
}
fn default_k() -> usize {
    4
}
fn default_temperature() -> f64 {
    0.8
}
fn default_floor() -> u8 {
    4
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_scorer() -> String {
    "token-set".into()
}
fn default_format() -> String {
    "chatml-jsonl".into()
}

impl SynthFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).with(ErrorKind::Config, path.display())?;
        let mut f: SynthFile = toml::from_str(&text).with(ErrorKind::Config, path.display())?;
        if f.schema != SYNTH_SCHEMA {
            return Err(CliError::new(
                ErrorKind::Config,
                format!("{}: unsupported schema `{}`", path.display(), f.schema),
            ));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        f.judge_template = f
            .judge_template
            .map(|p| if p.is_absolute() { p } else { base.join(p) });
        Ok(f)
    }
}

fn safe(id: &str) -> String {
    id.replace('/', "__")
}

/// Runs the synthesis pipeline over the seed suite and exports accepted pairs.
pub fn cmd_synth(opts: &RunOpts, config: &Path, env: &Env) -> CliResult<SynthesisReport> {
    let file = SynthFile::load(config)?;
    let mut opts = opts.clone();
    if opts.models.is_empty() {
        for id in [&file.generator, &file.sampler, &file.judge] {
            if !opts.models.contains(id) {
                opts.models.push(id.clone());
            }
        }
    }
    let resolved = Resolved::load(opts.manifest()?)?;
    let model = |id: &str| {
        resolved
            .models
            .iter()
            .find(|m| m.model_id == id)
            .cloned()
            .ok_or_else(|| CliError::new(ErrorKind::Model, format!("`{id}` is not among --models")))
    };
    let first = resolved
        .suite
        .tasks
        .first()
        .ok_or_else(|| CliError::new(ErrorKind::Suite, "suite has no tasks"))?;
    let budget: EpisodeBudget = resolved.budget_for(first)?;
    let template = match &file.judge_template {
        Some(p) => JudgeTemplate::load(p).kind(ErrorKind::Config)?,
        None => JudgeTemplate::default(),
    };
    let cfg = SynthConfig {
        generator: GeneratorConfig {
            model: model(&file.generator)?,
            n: file.queries_per_seed,
            max_attempts: file.max_attempts,
            budget,
        },
        sampler: model(&file.sampler)?,
        sampling: SamplingConfig {
            k: file.k,
            temperature: file.temperature,
            budget,
        },
        judge: JudgeConfig {
            model: model(&file.judge)?,
            floor: file.floor,
            template,
        },
        diversity_threshold: file.diversity_threshold,
        scorer: file.scorer.clone(),
    };
    cfg.sampling.validate().kind(ErrorKind::Config)?;
    let formats = ExportRegistry::default();
    let format = formats.get(&file.format).kind(ErrorKind::Config)?;
    let scorers = ScorerRegistry::default();
    scorers.get(&cfg.scorer).kind(ErrorKind::Config)?;
    let hash = config_hash(&(&resolved.hashed(), &cfg));
    if opts.dry_run {
        let seeds = resolved.suite.tasks.len();
        let attempts = file.max_attempts.unwrap_or(3 * file.queries_per_seed);
        println!(
            "dry run: {seeds} seeds, up to {} proposal episodes and {} sampled episodes",
            2 * seeds * attempts,
            seeds * file.queries_per_seed * file.k
        );
        return Ok(SynthesisReport::default());
    }

    let out = resolved.manifest.out.clone();
    write_run_header(&out, &resolved.manifest, &hash, "synth")?;
    fs::write(
        out.join("synth.toml"),
        toml::to_string_pretty(&file).kind(ErrorKind::Io)?,
    )?;
    let manager = SandboxManager::new(
        resolved.backend.clone(),
        ManagerConfig {
            max_parallel: resolved.manifest.parallel,
            ..ManagerConfig::default()
        },
    );
    let clients = ClientBackendRegistry::default();
    let mut harness = Harness {
        config_hash: hash,
        cancel: Some(env.cancel.clone()),
        ..Harness::default()
    };
    register_templates(&mut harness.templates);
    let synth_env = SynthEnv {
        manager: &manager,
        profile: resolved.profile_for(first),
        clients: &clients,
        harness: &harness,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.manifest.parallel)
        .build()
        .kind(ErrorKind::Io)?;
    let outcome = pool
        .install(|| run_pipeline(&resolved.suite.tasks, &cfg, &synth_env, &scorers))
        .kind(ErrorKind::Sandbox)?;
    if env.cancelled() {
        return Err(CliError::new(ErrorKind::Cancelled, "interrupted"));
    }

    let tdir = out.join("trajectories");
    fs::create_dir_all(&tdir)?;
    for (id, t) in &outcome.trajectories {
        fs::write(tdir.join(format!("{}.jsonl", safe(id))), to_jsonl(t))?;
    }
    write_jsonl(&out.join("pairs.jsonl"), &outcome.pairs)?;
    let sft = out.join(format!("sft.{}", format.extension()));
    export_sft(&outcome.pairs, &file.format, &formats, &sft).kind(ErrorKind::Io)?;
    write_json(&out.join("synth_report.json"), &outcome.report)?;
    let r = &outcome.report;
    let text = format!(
        "{} seeds: {} proposed, {} validated, {} sampled, {} judged, {} accepted, {} diverse ({} of {} sampled trajectories judged)\n",
        r.seeds,
        r.proposed,
        r.validated,
        r.sampled,
        r.judged,
        r.accepted,
        r.diverse,
        r.trajectories_judged,
        r.trajectories_sampled
    );
    fs::write(out.join("synth_report.txt"), &text)?;
    print!("{text}");
    if r.validated > 0 {
        println!(
            "acceptance rate {}",
            pct(r.diverse as f64 / r.validated as f64)
        );
    }
    Ok(outcome.report)
}

/// Child side of subprocess scoring: one job on stdin, one reply on stdout.
pub fn cmd_score_job() -> CliResult<()> {
    SubprocessScorer::serve(
        &MetricRegistry::default(),
        std::io::stdin().lock(),
        std::io::stdout().lock(),
    )
    .kind(ErrorKind::Io)
}
