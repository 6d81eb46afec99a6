//! Worker lifecycle: profiles, acquisition with verified read-only mounts,
//! stateful execution, artifact collection and cycling.

pub mod backend;
pub mod docker;
pub mod fake;
pub mod wire;

use std::cell::Cell;
use std::marker::PhantomData;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{BackendRegistry, ExecutionBackend, Mount, Worker, WorkerFault, WorkerSpec};
pub use wire::{ExecReply, ExecRequest, ExecStatus};

use crate::eval::Artifact;
use crate::task::{DataIssue, DataRef, TaskInstance};

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("container runtime unavailable: {0}")]
    RuntimeUnavailable(String),
    #[error("image `{0}` is not available")]
    ImageMissing(String),
    #[error("worker at {0} never reported ready")]
    HealthCheckTimeout(String),
    #[error("session is dead")]
    SessionDead,
    #[error("pattern `{0}` escapes the workspace")]
    PatternOutOfScope(String),
    #[error("tool `{0}` is already registered")]
    DuplicateToolName(String),
    #[error("invalid tool: {0}")]
    InvalidTool(String),
    #[error("tool `{name}` failed to load: {detail}")]
    ToolInjection { name: String, detail: String },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("data `{name}` failed verification at mount time: {issue:?}")]
    DataCheck { name: String, issue: DataIssue },
    #[error("unknown execution backend `{0}`")]
    UnknownBackend(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    /// Self-contained source that defines a callable named `name`.
    pub source: String,
}

impl ToolSpec {
    /// A canned web-search stand-in that never touches the network.
    pub fn web_search_stub() -> Self {
        Self {
            name: "web_search".into(),
            source: "def web_search(query):\n    return \"stub result for \" + query\n".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraMount {
    pub data: DataRef,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerProfile {
    pub id: String,
    pub image: String,
    pub cpu_limit: f64,
    pub mem_limit: u64,
    pub exec_timeout: f64,
    pub episode_wall_clock: f64,
    #[serde(default)]
    pub extra_mounts: Vec<ExtraMount>,
    #[serde(default)]
    pub tools: Vec<ToolSpec>,
    #[serde(default)]
    pub network: bool,
    #[serde(default = "default_data_root")]
    pub data_mount_root: String,
    #[serde(default = "default_workspace")]
    pub workspace_path: String,
    /// Directory that relative extra-mount paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_data_root() -> String {
    "/data".into()
}

fn default_workspace() -> String {
    "/workspace".into()
}

#[derive(Deserialize, Serialize)]
struct ProfileFile {
    schema: String,
    #[serde(flatten)]
    profile: ContainerProfile,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl ContainerProfile {
    pub fn new(id: impl Into<String>, image: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image: image.into(),
            cpu_limit: 2.0,
            mem_limit: 8 << 30,
            exec_timeout: 600.0,
            episode_wall_clock: 3600.0,
            extra_mounts: Vec::new(),
            tools: Vec::new(),
            network: false,
            data_mount_root: default_data_root(),
            workspace_path: default_workspace(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        let bad = |m: String| Err(SandboxError::InvalidProfile(format!("{}: {m}", self.id)));
        if self.cpu_limit <= 0.0 || !self.cpu_limit.is_finite() {
            return bad("cpu_limit must be positive".into());
        }
        if self.mem_limit == 0 {
            return bad("mem_limit must be positive".into());
        }
        if self.exec_timeout <= 0.0 || self.episode_wall_clock <= 0.0 {
            return bad("timeouts must be positive".into());
        }
        if self.exec_timeout > self.episode_wall_clock {
            return bad("exec_timeout exceeds episode_wall_clock".into());
        }
        if !self.workspace_path.starts_with('/') || !self.data_mount_root.starts_with('/') {
            return bad("container paths must be absolute".into());
        }
        let ws = Path::new(&self.workspace_path);
        let data = Path::new(&self.data_mount_root);
        if ws.starts_with(data) || data.starts_with(ws) {
            return bad("workspace overlaps the data mount root".into());
        }
        for m in &self.extra_mounts {
            let p = Path::new(&m.path);
            if !m.path.starts_with('/') || p.starts_with(ws) || ws.starts_with(p) {
                return bad(format!(
                    "extra mount `{}` must be absolute and outside the workspace",
                    m.path
                ));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, SandboxError> {
        let file: ProfileFile =
            toml::from_str(text).map_err(|e| SandboxError::InvalidProfile(e.to_string()))?;
        if file.schema != crate::schema::PROFILE {
            return Err(SandboxError::InvalidProfile(format!(
                "unsupported schema `{}`",
                file.schema
            )));
        }
        let mut p = file.profile;
        p.base_dir = base_dir.to_path_buf();
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, SandboxError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ProfileFile {
            schema: crate::schema::PROFILE.into(),
            profile: self.clone(),
        })
        .unwrap_or_default()
    }

    /// Returns a copy that injects `tool` into every new session.
    pub fn register_tool(&self, tool: ToolSpec) -> Result<Self, SandboxError> {
        if !is_identifier(&tool.name) {
            return Err(SandboxError::InvalidTool(format!(
                "`{}` is not an identifier",
                tool.name
            )));
        }
        if tool.source.trim().is_empty() {
            return Err(SandboxError::InvalidTool(format!(
                "`{}` has no source",
                tool.name
            )));
        }
        if self.tools.iter().any(|t| t.name == tool.name) {
            return Err(SandboxError::DuplicateToolName(tool.name));
        }
        let mut p = self.clone();
        p.tools.push(tool);
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub value_repr: Option<String>,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Starting,
    Ready,
    Busy,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MountedData {
    pub data: DataRef,
    pub path: String,
    pub read_only: bool,
}

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    /// Per-stream byte cap on stdout and stderr.
    pub output_cap: usize,
    pub grace: f64,
    pub max_parallel: usize,
    pub health_timeout: f64,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            output_cap: 64 * 1024,
            grace: 5.0,
            max_parallel: 8,
            health_timeout: 60.0,
        }
    }
}

#[derive(Default)]
struct Pool {
    in_use: Mutex<usize>,
    freed: Condvar,
}

struct Permit {
    pool: Arc<Pool>,
}

impl Drop for Permit {
    fn drop(&mut self) {
        let mut n = self.pool.in_use.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.pool.freed.notify_one();
    }
}

/// Allocates workers from one backend with a bound on live sessions.
pub struct SandboxManager {
    backend: Arc<dyn ExecutionBackend>,
    config: ManagerConfig,
    pool: Arc<Pool>,
    next_id: AtomicU64,
}

pub fn truncate_output(text: String, cap: usize) -> String {
    if text.len() <= cap {
        return text;
    }
    let mut cut = cap;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    let omitted = text.len() - cut;
    format!(
        "{}\n[output truncated: {omitted} bytes omitted]\n",
        &text[..cut]
    )
}

struct Layout {
    mounts: Vec<Mount>,
    table: Vec<MountedData>,
}

impl SandboxManager {
    pub fn new(backend: Arc<dyn ExecutionBackend>, config: ManagerConfig) -> Self {
        Self {
            backend,
            config,
            pool: Arc::default(),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    fn permit(&self) -> Permit {
        let mut n = self.pool.in_use.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.config.max_parallel.max(1) {
            n = self.pool.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit {
            pool: self.pool.clone(),
        }
    }

    fn layout(
        profile: &ContainerProfile,
        task: Option<&TaskInstance>,
    ) -> Result<Layout, SandboxError> {
        let mut mounts = Vec::new();
        let mut table = Vec::new();
        let mut add = |data: &DataRef, root: &Path, path: String| -> Result<(), SandboxError> {
            data.verify(root).map_err(|issue| SandboxError::DataCheck {
                name: data.logical_name.clone(),
                issue,
            })?;
            mounts.push(Mount {
                host: data.host_path(root),
                container: path.clone(),
                read_only: true,
            });
            table.push(MountedData {
                data: data.clone(),
                path,
                read_only: true,
            });
            Ok(())
        };
        if let Some(task) = task {
            for r in task.mounted_refs() {
                add(
                    r,
                    &task.data_root,
                    r.container_path(&profile.data_mount_root),
                )?;
            }
            for m in &profile.extra_mounts {
                add(&m.data, &profile.base_dir, m.path.clone())?;
            }
        }
        Ok(Layout { mounts, table })
    }

    /// Starts a session with the task's data mounted read-only under the
    /// profile's data root. Checksums are re-verified first.
    pub fn acquire_worker(
        &self,
        profile: &ContainerProfile,
        task: &TaskInstance,
    ) -> Result<WorkerSession, SandboxError> {
        profile.validate()?;
        let layout = Self::layout(profile, Some(task))?;
        self.start(profile, layout, self.permit())
    }

    /// Starts a session with no data mounted at all.
    pub fn acquire_unmounted(
        &self,
        profile: &ContainerProfile,
    ) -> Result<WorkerSession, SandboxError> {
        profile.validate()?;
        let layout = Self::layout(profile, None)?;
        self.start(profile, layout, self.permit())
    }

    fn start(
        &self,
        profile: &ContainerProfile,
        layout: Layout,
        permit: Permit,
    ) -> Result<WorkerSession, SandboxError> {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let workspace = tempfile::Builder::new().prefix("dseval-ws-").tempdir()?;
        let control = tempfile::Builder::new().prefix("dseval-ctl-").tempdir()?;
        let spec = WorkerSpec {
            session_id: id.clone(),
            image: profile.image.clone(),
            cpu_limit: profile.cpu_limit,
            mem_limit: profile.mem_limit,
            network: profile.network,
            mounts: layout.mounts.clone(),
            workspace_host: workspace.path().to_path_buf(),
            workspace_path: profile.workspace_path.clone(),
            control_host: control.path().to_path_buf(),
            grace: self.config.grace,
            health_timeout: self.config.health_timeout,
        };
        let worker = self.backend.launch(&spec)?;
        let mut session = WorkerSession {
            id,
            state: SessionState::Starting,
            profile: profile.clone(),
            layout,
            workspace,
            _control: control,
            worker,
            config: self.config.clone(),
            seq: 0,
            permit: Some(permit),
            _not_sync: PhantomData,
        };
        for tool in &profile.tools {
            session.state = SessionState::Ready;
            let r = session.execute(&tool.source, profile.exec_timeout)?;
            if r.status != ExecStatus::Ok {
                return Err(SandboxError::ToolInjection {
                    name: tool.name.clone(),
                    detail: r.stderr,
                });
            }
        }
        session.state = SessionState::Ready;
        Ok(session)
    }

    /// Destroys the session's worker and starts a fresh one with the same
    /// profile and mounts.
    pub fn cycle_worker(&self, mut session: WorkerSession) -> Result<WorkerSession, SandboxError> {
        session.worker.shutdown();
        session.state = SessionState::Dead;
        let permit = session.permit.take().unwrap_or_else(|| self.permit());
        let profile = session.profile.clone();
        let layout = Layout {
            mounts: session.layout.mounts.clone(),
            table: session.layout.table.clone(),
        };
        drop(session);
        self.start(&profile, layout, permit)
    }
}

/// A live worker. Owned by one caller at a time: it can move between
/// threads but cannot be shared, so concurrent use of one session does
/// not type-check.
pub struct WorkerSession {
    id: String,
    state: SessionState,
    profile: ContainerProfile,
    layout: Layout,
    workspace: tempfile::TempDir,
    _control: tempfile::TempDir,
    worker: Box<dyn Worker>,
    config: ManagerConfig,
    seq: u64,
    permit: Option<Permit>,
    _not_sync: PhantomData<Cell<()>>,
}

impl std::fmt::Debug for WorkerSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerSession")
            .field("id", &self.id)
            .field("state", &self.state)
            .field("endpoint", &self.worker.endpoint())
            .finish()
    }
}

fn pattern_in_scope(pattern: &str) -> bool {
    let p = Path::new(pattern);
    !pattern.is_empty()
        && !pattern.starts_with('/')
        && !pattern.starts_with('\\')
        && p.components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

impl WorkerSession {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn endpoint(&self) -> String {
        self.worker.endpoint()
    }

    pub fn profile(&self) -> &ContainerProfile {
        &self.profile
    }

    pub fn mounts(&self) -> &[MountedData] {
        &self.layout.table
    }

    /// Host directory backing the workspace.
    pub fn workspace_host(&self) -> &Path {
        self.workspace.path()
    }

    pub fn workspace_path(&self) -> &str {
        &self.profile.workspace_path
    }

    /// Runs `code` in the persistent interpreter. A worker fault marks the
    /// session dead and is reported as an error (or timeout) result; later
    /// calls fail with `SessionDead`.
    pub fn execute(&mut self, code: &str, timeout: f64) -> Result<ExecutionResult, SandboxError> {
        if self.state == SessionState::Dead {
            return Err(SandboxError::SessionDead);
        }
        self.seq += 1;
        let req = ExecRequest {
            request_id: format!("{}-{}", self.id, self.seq),
            code: code.to_string(),
            timeout,
        };
        self.state = SessionState::Busy;
        let cap = self.config.output_cap;
        match self.worker.execute(&req) {
            Ok(reply) if reply.request_id == req.request_id => {
                self.state = SessionState::Ready;
                let mut stderr = truncate_output(reply.stderr, cap);
                if reply.status == ExecStatus::Error
                    && stderr.is_empty()
                    && reply.value_repr.is_none()
                {
                    stderr = "error: worker reported a failure without output\n".into();
                }
                let duration = if reply.status == ExecStatus::Timeout {
                    reply.duration.max(timeout)
                } else {
                    reply.duration
                };
                Ok(ExecutionResult {
                    status: reply.status,
                    stdout: truncate_output(reply.stdout, cap),
                    stderr,
                    value_repr: reply.value_repr.map(|v| truncate_output(v, cap)),
                    duration,
                })
            }
            Ok(reply) => {
                self.state = SessionState::Dead;
                Err(SandboxError::Protocol(format!(
                    "reply for `{}` while waiting for `{}`",
                    reply.request_id, req.request_id
                )))
            }
            Err(WorkerFault::Died(msg)) => {
                self.state = SessionState::Dead;
                Ok(ExecutionResult {
                    status: ExecStatus::Error,
                    stdout: String::new(),
                    stderr: format!("worker died: {msg}\n"),
                    value_repr: None,
                    duration: 0.0,
                })
            }
            Err(WorkerFault::Unresponsive) => {
                self.state = SessionState::Dead;
                Ok(ExecutionResult {
                    status: ExecStatus::Timeout,
                    stdout: String::new(),
                    stderr: "worker unresponsive after the grace window; session terminated\n"
                        .into(),
                    value_repr: None,
                    duration: timeout + self.config.grace,
                })
            }
        }
    }

    /// Clears interpreter state; the workspace is left untouched.
    pub fn reset(&mut self) -> Result<(), SandboxError> {
        if self.state == SessionState::Dead {
            return Err(SandboxError::SessionDead);
        }
        self.worker.reset().map_err(|_| {
            self.state = SessionState::Dead;
            SandboxError::SessionDead
        })
    }

    /// Copies workspace files matching `pattern` (relative glob). Data
    /// mounts are never searched and symlinks are skipped.
    pub fn collect_artifacts(&self, pattern: &str) -> Result<Vec<Artifact>, SandboxError> {
        if self.state == SessionState::Dead {
            return Err(SandboxError::SessionDead);
        }
        if !pattern_in_scope(pattern) {
            return Err(SandboxError::PatternOutOfScope(pattern.to_string()));
        }
        let glob = glob::Pattern::new(pattern.trim_start_matches("./"))
            .map_err(|_| SandboxError::PatternOutOfScope(pattern.to_string()))?;
        let opts = glob::MatchOptions {
            require_literal_separator: true,
            ..Default::default()
        };
        let root = self.workspace.path();
        let mut out = Vec::new();
        for entry in walkdir::WalkDir::new(root).follow_links(false) {
            let entry = entry.map_err(|e| SandboxError::Io(e.into()))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
            let rel = rel.to_string_lossy().replace('\\', "/");
            if glob.matches_with(&rel, opts) {
                out.push(Artifact {
                    path: rel,
                    bytes: std::fs::read(entry.path())?,
                });
            }
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }
}

impl Drop for WorkerSession {
    fn drop(&mut self) {
        self.worker.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::fixtures::analysis_task;

    fn manager() -> SandboxManager {
        SandboxManager::new(
            Arc::new(fake::FakeBackend::default()),
            ManagerConfig::default(),
        )
    }

    fn profile() -> ContainerProfile {
        ContainerProfile::new("analysis", "dseval/worker:latest")
    }

    #[test]
    fn state_persists_and_cycling_clears_it() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        let m = manager();
        let mut s = m.acquire_worker(&profile(), &task).unwrap();
        assert_eq!(s.state(), SessionState::Ready);
        assert_eq!(s.mounts().len(), 1);
        assert!(s.mounts().iter().all(|m| m.read_only));
        assert_eq!(s.execute("x=1", 5.0).unwrap().status, ExecStatus::Ok);
        assert_eq!(s.execute("print(x)", 5.0).unwrap().stdout, "1\n");
        s.execute("open('keep.txt', 'w').write('k')", 5.0).unwrap();
        let old_id = s.id().to_string();
        let mut s = m.cycle_worker(s).unwrap();
        assert_ne!(s.id(), old_id);
        let r = s.execute("print(x)", 5.0).unwrap();
        assert_eq!(r.status, ExecStatus::Error);
        assert!(r.stderr.contains("NameError"));
        assert!(s.collect_artifacts("*.txt").unwrap().is_empty());
        assert_eq!(s.mounts().len(), 1);
    }

    #[test]
    fn read_only_mounts_refuse_writes() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        let mut s = manager().acquire_worker(&profile(), &task).unwrap();
        let path = &s.mounts()[0].path.clone();
        let r = s
            .execute(&format!("open('{path}', 'w').write('oops')"), 5.0)
            .unwrap();
        assert_eq!(r.status, ExecStatus::Error);
        assert!(r.stderr.contains("PermissionError"));
        assert!(task.data_refs[0].verify(&task.data_root).is_ok());
    }

    #[test]
    fn timeout_reports_at_least_the_limit() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        let mut s = manager().acquire_worker(&profile(), &task).unwrap();
        let r = s.execute("import time\ntime.sleep(30)", 2.0).unwrap();
        assert_eq!(r.status, ExecStatus::Timeout);
        assert!(r.duration >= 2.0);
        assert_eq!(s.state(), SessionState::Ready);
    }

    #[test]
    fn dead_session() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        let m = manager();
        let mut s = m.acquire_worker(&profile(), &task).unwrap();
        let r = s.execute("import os\nos._exit(1)", 5.0).unwrap();
        assert_eq!(r.status, ExecStatus::Error);
        assert_eq!(s.state(), SessionState::Dead);
        assert!(matches!(
            s.execute("1", 5.0),
            Err(SandboxError::SessionDead)
        ));
        assert!(matches!(
            s.collect_artifacts("*"),
            Err(SandboxError::SessionDead)
        ));
        let mut s = m.cycle_worker(s).unwrap();
        assert_eq!(
            s.execute("1+1", 5.0).unwrap().value_repr.as_deref(),
            Some("2")
        );
    }

    #[test]
    fn distinct_sessions_are_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        let m = manager();
        let mut a = m.acquire_worker(&profile(), &task).unwrap();
        let mut b = m.acquire_worker(&profile(), &task).unwrap();
        assert_ne!(a.id(), b.id());
        assert_ne!(a.workspace_host(), b.workspace_host());
        a.execute("secret = 1\nopen('a.txt', 'w').write('a')", 5.0)
            .unwrap();
        assert!(b.collect_artifacts("a.txt").unwrap().is_empty());
        assert_eq!(b.execute("secret", 5.0).unwrap().status, ExecStatus::Error);
    }

    #[test]
    fn artifacts_come_from_workspace_only() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        let mut s = manager().acquire_worker(&profile(), &task).unwrap();
        s.execute("open('submission.csv', 'w').write('id,y\\n1,2\\n')", 5.0)
            .unwrap();
        let arts = s.collect_artifacts("submission.csv").unwrap();
        assert_eq!(arts.len(), 1);
        assert_eq!(arts[0].bytes, b"id,y\n1,2\n");
        assert!(s.collect_artifacts("*.parquet").unwrap().is_empty());
        for bad in ["../x", "/data/*", "a/../../b", ""] {
            assert!(
                matches!(
                    s.collect_artifacts(bad),
                    Err(SandboxError::PatternOutOfScope(_))
                ),
                "{bad}"
            );
        }
        #[cfg(unix)]
        {
            std::os::unix::fs::symlink(
                task.data_refs[0].host_path(&task.data_root),
                s.workspace_host().join("link.csv"),
            )
            .unwrap();
            assert!(s.collect_artifacts("link.csv").unwrap().is_empty());
        }
    }

    #[test]
    fn tools_are_injected() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        let p = profile()
            .register_tool(ToolSpec::web_search_stub())
            .unwrap();
        assert!(matches!(
            p.register_tool(ToolSpec::web_search_stub()),
            Err(SandboxError::DuplicateToolName(_))
        ));
        let mut s = manager().acquire_worker(&p, &task).unwrap();
        let r = s.execute("print(web_search('median age'))", 5.0).unwrap();
        assert_eq!(r.stdout, "stub result for median age\n");
        let mut plain = manager().acquire_worker(&profile(), &task).unwrap();
        assert_eq!(
            plain.execute("web_search('x')", 5.0).unwrap().status,
            ExecStatus::Error
        );
    }

    #[test]
    fn unmounted_sessions_have_no_data() {
        let s = manager().acquire_unmounted(&profile()).unwrap();
        assert!(s.mounts().is_empty());
    }

    #[test]
    fn checksum_verified_at_mount_time() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        std::fs::write(task.data_refs[0].host_path(&task.data_root), "tampered").unwrap();
        assert!(matches!(
            manager().acquire_worker(&profile(), &task),
            Err(SandboxError::DataCheck { .. })
        ));
    }

    #[test]
    fn missing_image() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        let m = SandboxManager::new(
            Arc::new(fake::FakeBackend::with_images(["dseval/worker:latest"])),
            ManagerConfig::default(),
        );
        let p = ContainerProfile::new("x", "never-built:1");
        assert!(matches!(
            m.acquire_worker(&p, &task),
            Err(SandboxError::ImageMissing(_))
        ));
    }

    #[test]
    fn output_is_capped_with_marker() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t");
        let m = SandboxManager::new(
            Arc::new(fake::FakeBackend::default()),
            ManagerConfig {
                output_cap: 10,
                ..Default::default()
            },
        );
        let mut s = m.acquire_worker(&profile(), &task).unwrap();
        let r = s.execute("print('x' * 100)", 5.0).unwrap();
        assert!(r
            .stdout
            .starts_with("xxxxxxxxxx\n[output truncated: 91 bytes omitted]"));
    }

    #[test]
    fn profile_validation_and_toml() {
        let mut p = profile();
        p.exec_timeout = 7200.0;
        assert!(p.validate().is_err());
        let p = profile()
            .register_tool(ToolSpec::web_search_stub())
            .unwrap();
        let text = p.to_toml_string();
        let back = ContainerProfile::from_toml_str(&text, Path::new("")).unwrap();
        assert_eq!(back, p);
        assert!(profile()
            .register_tool(ToolSpec {
                name: "1bad".into(),
                source: "x".into()
            })
            .is_err());
    }

    #[test]
    fn pool_bounds_live_sessions() {
        let m = Arc::new(SandboxManager::new(
            Arc::new(fake::FakeBackend::default()),
            ManagerConfig {
                max_parallel: 1,
                ..Default::default()
            },
        ));
        let first = m.acquire_unmounted(&profile()).unwrap();
        let m2 = m.clone();
        let waiter =
            std::thread::spawn(move || m2.acquire_unmounted(&profile()).unwrap().id().to_string());
        std::thread::sleep(std::time::Duration::from_millis(50));
        assert!(!waiter.is_finished());
        drop(first);
        assert_eq!(waiter.join().unwrap(), "s2");
    }
}
