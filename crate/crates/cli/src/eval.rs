use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dseval_core::client::{ClientBackendRegistry, ClientError, ModelConfig};
use dseval_core::digest::config_hash;
use dseval_core::eval::{EvalOutcome, Evaluator, Medal, ScoringIsolation};
use dseval_core::harness::{EpisodeError, Harness, Terminal, Trajectory, CANCELLED};
use dseval_core::sandbox::{ManagerConfig, SandboxManager};
use dseval_core::schema;
use dseval_core::task::{TaskCategory, TaskInstance};

use crate::error::{CliError, CliResult, Context, ErrorKind};
use crate::manifest::{Resolved, RunOpts};
use crate::report::{pct, write_json, Table};
use crate::Env;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub tasks: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Prediction columns: valid submission, above median, any medal, mean
/// percentile. Invalid submissions count as percentile 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub tasks: usize,
    pub valid: f64,
    pub above_median: f64,
    pub medal: f64,
    pub percentile: f64,
    pub gold: usize,
    pub silver: usize,
    pub bronze: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub episodes: usize,
    pub answered: usize,
    pub budget_exhausted: usize,
    pub fatal: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionSummary>,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub model_id: String,
    pub task_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub suite: String,
    pub suite_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub models: Vec<ModelSummary>,
    pub failures: Vec<TaskFailure>,
}

#[derive(Debug, Serialize)]
pub struct Plan {
    pub suite: String,
    pub tasks: usize,
    pub models: Vec<String>,
    pub episodes: usize,
    pub max_turns: u32,
    pub max_total_tokens: u64,
    /// Upper bound: every episode spending its whole token budget.
    pub token_ceiling: u64,
    /// Model calls that reach a remote endpoint, at most.
    pub remote_calls_ceiling: u64,
    pub config_hash: String,
}

pub fn plan(r: &Resolved) -> Plan {
    let episodes = r.suite.tasks.len() * r.models.len();
    let remote = r.models.iter().filter(|m| m.backend != "scripted").count() * r.suite.tasks.len();
    Plan {
        suite: r.suite.name.clone(),
        tasks: r.suite.tasks.len(),
        models: r.models.iter().map(|m| m.model_id.clone()).collect(),
        episodes,
        max_turns: r.manifest.max_turns,
        max_total_tokens: r.manifest.max_total_tokens,
        token_ceiling: episodes as u64 * r.manifest.max_total_tokens,
        remote_calls_ceiling: remote as u64 * r.manifest.max_turns as u64,
        config_hash: config_hash(&r.hashed()),
    }
}

pub(crate) fn print_plan(p: &Plan) {
    println!(
        "dry run: {} tasks x {} models = {} episodes; at most {} turns and {} tokens each",
        p.tasks,
        p.models.len(),
        p.episodes,
        p.max_turns,
        p.max_total_tokens
    );
    println!(
        "ceilings: {} tokens, {} remote model calls; config {}",
        p.token_ceiling, p.remote_calls_ceiling, p.config_hash
    );
}

struct Job<'a> {
    task: &'a TaskInstance,
    model: &'a ModelConfig,
}

struct JobResult {
    model_id: String,
    task_id: String,
    trajectory: Option<Trajectory>,
    outcome: EvalOutcome,
    failure: Option<String>,
    fatal: Option<CliError>,
}

fn empty_outcome(task: &TaskInstance) -> EvalOutcome {
    EvalOutcome {
        task_id: task.id.clone(),
        category: task.category,
        correct: None,
        prediction: None,
        reasons: Vec::new(),
    }
}

struct Runner<'a> {
    resolved: &'a Resolved,
    manager: SandboxManager,
    clients: ClientBackendRegistry,
    harness: Harness,
    scorer: Arc<dyn ScoringIsolation>,
}

impl Runner<'_> {
    fn run(&self, job: &Job<'_>) -> JobResult {
        let mut res = JobResult {
            model_id: job.model.model_id.clone(),
            task_id: job.task.id.clone(),
            trajectory: None,
            outcome: empty_outcome(job.task),
            failure: None,
            fatal: None,
        };
        if let Err(e) = self.episode(job, &mut res) {
            res.failure = Some(e.message.clone());
            res.outcome.reasons.push(e.message.clone());
            res.fatal = Some(e);
        }
        res
    }

    fn episode(&self, job: &Job<'_>, res: &mut JobResult) -> CliResult<()> {
        let task = job.task;
        let profile = self.resolved.profile_for(task);
        let budget = self.resolved.budget_for(task)?;
        let mut session = self
            .manager
            .acquire_worker(profile, task)
            .with(ErrorKind::Sandbox, format!("{} on {}", task.id, profile.id))?;
        let mut client = self
            .clients
            .client(job.model, &task.id)
            .kind(ErrorKind::Client)?;
        let trajectory =
            match self
                .harness
                .run_episode(task, client.as_mut(), &mut session, &budget)
            {
                Ok(t) => t,
                Err(EpisodeError::Client { error, partial }) => {
                    res.trajectory = Some(*partial);
                    match error {
                        ClientError::AuthError(_) | ClientError::Config(_) => {
                            return Err(CliError::new(
                                ErrorKind::Client,
                                format!("{}: {error}", job.model.model_id),
                            ))
                        }
                        other => {
                            res.failure = Some(other.to_string());
                            res.outcome.reasons.push(other.to_string());
                            return Ok(());
                        }
                    }
                }
                Err(e) => {
                    return Err(CliError::new(
                        ErrorKind::Config,
                        format!("{}: {e}", task.id),
                    ))
                }
            };
        if trajectory.terminal == Terminal::FatalError {
            let why = trajectory
                .error
                .clone()
                .unwrap_or_else(|| "fatal episode".into());
            if why == CANCELLED {
                res.trajectory = Some(trajectory);
                return Err(CliError::new(ErrorKind::Cancelled, "interrupted"));
            }
            res.failure = Some(why);
        }
        let artifacts = match (&task.category, &task.prediction) {
            (TaskCategory::Prediction, Some(spec)) => {
                match session.collect_artifacts(&spec.submission_path) {
                    Ok(a) => a,
                    Err(e) => {
                        res.outcome
                            .reasons
                            .push(format!("artifact collection failed: {e}"));
                        Vec::new()
                    }
                }
            }
            _ => Vec::new(),
        };
        let evaluator = Evaluator {
            scorer: self.scorer.as_ref(),
        };
        let mut outcome = evaluator.evaluate(task, &trajectory, &artifacts);
        outcome.reasons.splice(0..0, res.outcome.reasons.drain(..));
        res.outcome = outcome;
        res.trajectory = Some(trajectory);
        Ok(())
    }
}

fn summarize(model: &ModelConfig, results: &[&JobResult]) -> ModelSummary {
    let mut s = ModelSummary {
        model_id: model.model_id.clone(),
        episodes: results.len(),
        ..Default::default()
    };
    let mut analysis = AnalysisSummary::default();
    let mut pred = PredictionSummary::default();
    let (mut valid, mut above, mut medal, mut pctl) = (0usize, 0usize, 0usize, 0.0f64);
    for r in results {
        match r.trajectory.as_ref().map(|t| t.terminal) {
            Some(Terminal::Answered) => s.answered += 1,
            Some(Terminal::BudgetExhausted) => s.budget_exhausted += 1,
            _ => s.fatal += 1,
        }
        if let Some(t) = &r.trajectory {
            s.input_tokens += t.usage.input_tokens;
            s.output_tokens += t.usage.output_tokens;
        }
        match r.outcome.category {
            TaskCategory::Analysis => {
                analysis.tasks += 1;
                analysis.correct += usize::from(r.outcome.correct == Some(true));
            }
            TaskCategory::Prediction => {
                pred.tasks += 1;
                if let Some(p) = &r.outcome.prediction {
                    valid += usize::from(p.valid);
                    above += usize::from(p.above_median);
                    pctl += p.percentile.unwrap_or(0.0);
                    match p.medal {
                        Some(Medal::Gold) => pred.gold += 1,
                        Some(Medal::Silver) => pred.silver += 1,
                        Some(Medal::Bronze) => pred.bronze += 1,
                        _ => {}
                    }
                    medal += usize::from(p.medal.is_some_and(|m| m != Medal::None));
                }
            }
        }
    }
    if analysis.tasks > 0 {
        analysis.accuracy = analysis.correct as f64 / analysis.tasks as f64;
        s.analysis = Some(analysis);
    }
    if pred.tasks > 0 {
        let n = pred.tasks as f64;
        pred.valid = valid as f64 / n;
        pred.above_median = above as f64 / n;
        pred.medal = medal as f64 / n;
        pred.percentile = pctl / n;
        s.prediction = Some(pred);
    }
    s
}

pub fn render_report(r: &EvalReport) -> String {
    let mut t = Table::new(&[
        "model",
        "episodes",
        "answered",
        "budget",
        "fatal",
        "accuracy",
        "valid",
        "median",
        "medal",
        "percentile",
    ]);
    for m in &r.models {
        let dash = || "-".to_string();
        t.row(vec![
            m.model_id.clone(),
            m.episodes.to_string(),
            m.answered.to_string(),
            m.budget_exhausted.to_string(),
            m.fatal.to_string(),
            m.analysis
                .as_ref()
                .map(|a| format!("{}/{} ({})", a.correct, a.tasks, pct(a.accuracy)))
                .unwrap_or_else(dash),
            m.prediction
                .as_ref()
                .map(|p| pct(p.valid))
                .unwrap_or_else(dash),
            m.prediction
                .as_ref()
                .map(|p| pct(p.above_median))
                .unwrap_or_else(dash),
            m.prediction
                .as_ref()
                .map(|p| pct(p.medal))
                .unwrap_or_else(dash),
            m.prediction
                .as_ref()
                .map(|p| format!("{:.1}", p.percentile))
                .unwrap_or_else(dash),
        ]);
    }
    let mut out = format!(
        "suite {} v{} (config {})\n",
        r.suite, r.suite_version, r.config_hash
    );
    out.push_str(&t.render());
    for f in &r.failures {
        out.push_str(&format!(
            "failure: {} / {}: {}\n",
            f.model_id, f.task_id, f.reason
        ));
    }
    out
}

fn safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub(crate) fn write_run_header(
    out: &Path,
    manifest: &impl Serialize,
    hash: &str,
    command: &str,
) -> CliResult<()> {
    fs::create_dir_all(out).with(ErrorKind::Io, out.display())?;
    let mut table = toml::Table::try_from(manifest).kind(ErrorKind::Io)?;
    table.remove("out");
    let text = toml::to_string_pretty(&table).kind(ErrorKind::Io)?;
    fs::write(out.join("manifest.toml"), text)?;
    write_json(
        &out.join("run.json"),
        &serde_json::json!({
            "schema": crate::manifest::RUN_SCHEMA,
            "command": command,
            "config_hash": hash,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "schemas": {
                "suite": schema::SUITE,
                "task": schema::TASK,
                "profile": schema::PROFILE,
                "trajectory": schema::TRAJECTORY,
                "models": schema::MODEL_REGISTRY,
                "report": schema::REPORT,
            },
        }),
    )
}

/// Runs every (task, model) episode and writes the run directory. Returns
/// the report even when some episode hit an infrastructure fatal; the error
/// is returned alongside so the caller can set the exit code.
pub fn cmd_eval(opts: &RunOpts, env: &Env) -> CliResult<(EvalReport, Option<CliError>)> {
    let resolved = Resolved::load(opts.manifest()?)?;
    let hash = config_hash(&resolved.hashed());
    if opts.dry_run {
        let p = plan(&resolved);
        print_plan(&p);
        return Ok((
            EvalReport {
                schema: schema::REPORT.into(),
                suite: resolved.suite.name.clone(),
                suite_version: resolved.suite.version.clone(),
                config_hash: hash,
                seed: resolved.manifest.seed,
                models: Vec::new(),
                failures: Vec::new(),
            },
            None,
        ));
    }
    let out = resolved.manifest.out.clone();
    write_run_header(&out, &resolved.manifest, &hash, "eval")?;

    let runner = Runner {
        resolved: &resolved,
        manager: SandboxManager::new(
            resolved.backend.clone(),
            ManagerConfig {
                max_parallel: resolved.manifest.parallel,
                ..ManagerConfig::default()
            },
        ),
        clients: ClientBackendRegistry::default(),
        harness: Harness {
            config_hash: hash.clone(),
            cancel: Some(env.cancel.clone()),
            ..Harness::default()
        },
        scorer: env.scorer(),
    };
    let jobs: Vec<Job<'_>> = resolved
        .models
        .iter()
        .flat_map(|model| {
            resolved
                .suite
                .tasks
                .iter()
                .map(move |task| Job { task, model })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.manifest.parallel)
        .build()
        .kind(ErrorKind::Io)?;
    let results: Vec<JobResult> = pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                if env.cancelled() {
                    let mut r = JobResult {
                        model_id: j.model.model_id.clone(),
                        task_id: j.task.id.clone(),
                        trajectory: None,
                        outcome: empty_outcome(j.task),
                        failure: Some("not started: interrupted".into()),
                        fatal: Some(CliError::new(ErrorKind::Cancelled, "interrupted")),
                    };
                    r.outcome.reasons.push("not started: interrupted".into());
                    return r;
                }
                let r = runner.run(j);
                tracing::info!(model = %r.model_id, task = %r.task_id, "episode finished");
                r
            })
            .collect()
    });

    let mut outcomes = String::new();
    for r in &results {
        if let Some(t) = &r.trajectory {
            let dir = out.join("trajectories").join(safe(&r.model_id));
            fs::create_dir_all(&dir)?;
            fs::write(
                dir.join(format!("{}.jsonl", safe(&r.task_id))),
                dseval_core::harness::to_jsonl(t),
            )?;
        }
        let line = serde_json::json!({"model_id": r.model_id, "outcome": r.outcome});
        outcomes.push_str(&serde_json::to_string(&line).kind(ErrorKind::Io)?);
        outcomes.push('\n');
    }
    fs::write(out.join("outcomes.jsonl"), outcomes)?;

    let mut by_model: BTreeMap<&str, Vec<&JobResult>> = BTreeMap::new();
    for r in &results {
        by_model.entry(&r.model_id).or_default().push(r);
    }
    let report = EvalReport {
        schema: schema::REPORT.into(),
        suite: resolved.suite.name.clone(),
        suite_version: resolved.suite.version.clone(),
        config_hash: hash,
        seed: resolved.manifest.seed,
        models: resolved
            .models
            .iter()
            .map(|m| {
                summarize(
                    m,
                    by_model
                        .get(m.model_id.as_str())
                        .map(Vec::as_slice)
                        .unwrap_or_default(),
                )
            })
            .collect(),
        failures: results
            .iter()
            .filter_map(|r| {
                r.failure.as_ref().map(|f| TaskFailure {
                    model_id: r.model_id.clone(),
                    task_id: r.task_id.clone(),
                    reason: f.clone(),
                })
            })
            .collect(),
    };
    write_json(&out.join("report.json"), &report)?;
    let text = render_report(&report);
    fs::write(out.join("report.txt"), &text)?;
    if !env.quiet {
        print!("{text}");
    }
    let fatal = results.into_iter().find_map(|r| r.fatal);
    Ok((report, fatal))
}
