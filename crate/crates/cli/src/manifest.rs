use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use serde::{Deserialize, Serialize};

use dseval_core::client::{ModelConfig, ModelRegistry};
use dseval_core::harness::EpisodeBudget;
use dseval_core::sandbox::{BackendRegistry, ContainerProfile, ExecutionBackend};
use dseval_core::task::{load_suite, DatasetSuite, TaskInstance};

use crate::error::{CliError, CliResult, Context, ErrorKind};

pub const RUN_SCHEMA: &str = "dseval.run/v1";
pub const DEFAULT_MAX_TOKENS: u64 = 1_000_000;
pub const DEFAULT_PARALLEL: usize = 4;
pub const DEFAULT_IMAGE: &str = "dseval-worker:latest";

/// What to run and where to put it. Paths inside a manifest file are
/// relative to that file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default = "run_schema")]
    pub schema: String,
    pub suite: PathBuf,
    pub models: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_registry: Option<PathBuf>,
    pub max_turns: u32,
    #[serde(default = "default_max_tokens")]
    pub max_total_tokens: u64,
    /// Overrides the profile's episode wall clock when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_wall_clock: Option<f64>,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    /// Profile files, or directories of them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<PathBuf>,
    #[serde(default = "default_backend")]
    pub backend: String,
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn run_schema() -> String {
    RUN_SCHEMA.into()
}
fn default_max_tokens() -> u64 {
    DEFAULT_MAX_TOKENS
}
fn default_parallel() -> usize {
    DEFAULT_PARALLEL
}
fn default_backend() -> String {
    "docker".into()
}

/// Flags shared by every command that runs episodes. Each one overrides the
/// matching manifest field.
#[derive(Debug, Clone, Default, Args)]
pub struct RunOpts {
    /// Run manifest (TOML).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Suite directory or suite.toml.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Comma-separated model ids.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Extra model registry merged over the built-in one.
    #[arg(long)]
    pub model_registry: Option<PathBuf>,
    #[arg(long)]
    pub max_turns: Option<u32>,
    #[arg(long)]
    pub max_total_tokens: Option<u64>,
    /// Concurrent episodes.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Container profile file or directory; repeatable.
    #[arg(long)]
    pub profile: Vec<PathBuf>,
    /// Execution backend: docker or fake.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resolve and price the run without executing it.
    #[arg(long)]
    pub dry_run: bool,
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunOpts {
    /// Merges flags over the manifest file, if any.
    pub fn manifest(&self) -> CliResult<RunManifest> {
        let file: Option<RunManifest> = match &self.manifest {
            Some(path) => {
                let text = std::fs::read_to_string(path).with(ErrorKind::Config, path.display())?;
                let mut m: RunManifest =
                    toml::from_str(&text).with(ErrorKind::Config, path.display())?;
                if m.schema != RUN_SCHEMA {
                    return Err(CliError::new(
                        ErrorKind::Config,
                        format!("{}: unsupported schema `{}`", path.display(), m.schema),
                    ));
                }
                let base = path.parent().unwrap_or(Path::new(""));
                m.suite = rebase(base, &m.suite);
                m.out = rebase(base, &m.out);
                m.model_registry = m.model_registry.map(|p| rebase(base, &p));
                m.profiles = m.profiles.iter().map(|p| rebase(base, p)).collect();
                Some(m)
            }
            None => None,
        };
        let missing = |what: &str| {
            CliError::new(
                ErrorKind::Config,
                format!("--{what} is required without a manifest that sets it"),
            )
        };
        let suite = self
            .suite
            .clone()
            .or_else(|| file.as_ref().map(|m| m.suite.clone()))
            .ok_or_else(|| missing("suite"))?;
        let models = if self.models.is_empty() {
            file.as_ref().map(|m| m.models.clone()).unwrap_or_default()
        } else {
            self.models.clone()
        };
        if models.is_empty() {
            return Err(missing("models"));
        }
        let max_turns = self
            .max_turns
            .or(file.as_ref().map(|m| m.max_turns))
            .ok_or_else(|| missing("max-turns"))?;
        let out = self
            .out
            .clone()
            .or_else(|| file.as_ref().map(|m| m.out.clone()))
            .ok_or_else(|| missing("out"))?;
        let profiles = if self.profile.is_empty() {
            file.as_ref()
                .map(|m| m.profiles.clone())
                .unwrap_or_default()
        } else {
            self.profile.clone()
        };
        let parallel = self
            .parallel
            .or(file.as_ref().map(|m| m.parallel))
            .unwrap_or(DEFAULT_PARALLEL);
        if parallel == 0 {
            return Err(CliError::new(
                ErrorKind::Config,
                "--parallel must be at least 1",
            ));
        }
        Ok(RunManifest {
            schema: RUN_SCHEMA.into(),
            suite,
            models,
            model_registry: self
                .model_registry
                .clone()
                .or_else(|| file.as_ref().and_then(|m| m.model_registry.clone())),
            max_turns,
            max_total_tokens: self
                .max_total_tokens
                .or(file.as_ref().map(|m| m.max_total_tokens))
                .unwrap_or(DEFAULT_MAX_TOKENS),
            episode_wall_clock: file.as_ref().and_then(|m| m.episode_wall_clock),
            parallel,
            profiles,
            backend: self
                .backend
                .clone()
                .or_else(|| file.as_ref().map(|m| m.backend.clone()))
                .unwrap_or_else(default_backend),
            out,
            seed: self.seed.or(file.as_ref().map(|m| m.seed)).unwrap_or(0),
        })
    }
}

/// A manifest with every reference looked up.
pub struct Resolved {
    pub manifest: RunManifest,
    pub suite: DatasetSuite,
    pub models: Vec<ModelConfig>,
    pub profiles: BTreeMap<String, ContainerProfile>,
    pub backend: Arc<dyn ExecutionBackend>,
}

/// Settings that determine run results, hashed into every artifact. Output
/// location is left out so identical runs hash identically.
#[derive(Serialize)]
pub struct HashedConfig<'a> {
    pub suite: &'a str,
    pub suite_version: &'a str,
    pub models: &'a [ModelConfig],
    pub profiles: &'a BTreeMap<String, ContainerProfile>,
    pub max_turns: u32,
    pub max_total_tokens: u64,
    pub episode_wall_clock: Option<f64>,
    pub backend: &'a str,
    pub seed: u64,
}

pub fn load_models(extra: Option<&Path>) -> CliResult<ModelRegistry> {
    let mut registry = ModelRegistry::builtin();
    if let Some(path) = extra {
        registry.overlay(ModelRegistry::load(path).with(ErrorKind::Model, path.display())?);
    }
    Ok(registry)
}

pub fn resolve_models(
    registry: &ModelRegistry,
    ids: &[String],
    seed: u64,
) -> CliResult<Vec<ModelConfig>> {
    ids.iter()
        .map(|id| {
            let mut m = registry.get(id).kind(ErrorKind::Model)?.clone();
            m.seed = Some(seed);
            Ok(m)
        })
        .collect()
}

pub fn load_profiles(paths: &[PathBuf]) -> CliResult<BTreeMap<String, ContainerProfile>> {
    let mut out = BTreeMap::new();
    for path in paths {
        let files: Vec<PathBuf> = if path.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(path)
                .with(ErrorKind::Profile, path.display())?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "toml"))
                .collect();
            v.sort();
            v
        } else {
            vec![path.clone()]
        };
        for f in files {
            let p = ContainerProfile::load(&f).with(ErrorKind::Profile, f.display())?;
            if out.insert(p.id.clone(), p).is_some() {
                return Err(CliError::new(
                    ErrorKind::Profile,
                    format!("{}: profile id defined twice", f.display()),
                ));
            }
        }
    }
    Ok(out)
}

impl Resolved {
    pub fn load(manifest: RunManifest) -> CliResult<Self> {
        let suite = load_suite(&manifest.suite).with(ErrorKind::Suite, manifest.suite.display())?;
        let registry = load_models(manifest.model_registry.as_deref())?;
        let models = resolve_models(&registry, &manifest.models, manifest.seed)?;
        let mut profiles = load_profiles(&manifest.profiles)?;
        for t in &suite.tasks {
            if !profiles.contains_key(&t.container_profile) && profiles.len() != 1 {
                profiles.insert(
                    t.container_profile.clone(),
                    ContainerProfile::new(t.container_profile.clone(), DEFAULT_IMAGE),
                );
            }
        }
        let backend = BackendRegistry::default()
            .get(&manifest.backend)
            .kind(ErrorKind::Config)?;
        Ok(Self {
            manifest,
            suite,
            models,
            profiles,
            backend,
        })
    }

    /// The profile a task runs under. A single loaded profile serves every task.
    pub fn profile_for(&self, task: &TaskInstance) -> &ContainerProfile {
        self.profiles
            .get(&task.container_profile)
            .or_else(|| self.profiles.values().next())
            .expect("profiles resolved for every task")
    }

    pub fn budget_for(&self, task: &TaskInstance) -> CliResult<EpisodeBudget> {
        let wall = self
            .manifest
            .episode_wall_clock
            .unwrap_or(self.profile_for(task).episode_wall_clock);
        EpisodeBudget::new(
            self.manifest.max_turns,
            self.manifest.max_total_tokens,
            wall,
        )
        .kind(ErrorKind::Config)
    }

    pub fn hashed(&self) -> HashedConfig<'_> {
        HashedConfig {
            suite: &self.suite.name,
            suite_version: &self.suite.version,
            models: &self.models,
            profiles: &self.profiles,
            max_turns: self.manifest.max_turns,
            max_total_tokens: self.manifest.max_total_tokens,
            episode_wall_clock: self.manifest.episode_wall_clock,
            backend: &self.manifest.backend,
            seed: self.manifest.seed,
        }
    }
}
