use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use super::wire::{ExecReply, ExecRequest};
use super::SandboxError;

/// One bind mount as the backend sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mount {
    pub host: PathBuf,
    pub container: String,
    pub read_only: bool,
}

/// Everything a backend needs to start one worker.
#[derive(Debug, Clone)]
pub struct WorkerSpec {
    pub session_id: String,
    pub image: String,
    pub cpu_limit: f64,
    pub mem_limit: u64,
    pub network: bool,
    pub mounts: Vec<Mount>,
    pub workspace_host: PathBuf,
    pub workspace_path: String,
    /// Host directory shared with the worker for its control socket.
    pub control_host: PathBuf,
    pub grace: f64,
    pub health_timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerFault {
    /// The interpreter or container is gone.
    Died(String),
    /// No reply within timeout + grace.
    Unresponsive,
}

/// A running worker. Owned by exactly one session.
pub trait Worker: Send {
    fn endpoint(&self) -> String;
    fn execute(&mut self, req: &ExecRequest) -> Result<ExecReply, WorkerFault>;
    fn reset(&mut self) -> Result<(), WorkerFault>;
    fn shutdown(&mut self);
}

pub trait ExecutionBackend: Send + Sync {
    fn name(&self) -> &str;
    fn launch(&self, spec: &WorkerSpec) -> Result<Box<dyn Worker>, SandboxError>;
}

/// Execution backends by name.
#[derive(Clone)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn ExecutionBackend>>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = Self {
            backends: BTreeMap::new(),
        };
        r.register(Arc::new(super::fake::FakeBackend::default()));
        r.register(Arc::new(super::docker::DockerBackend::default()));
        r
    }
}

impl BackendRegistry {
    pub fn register(&mut self, backend: Arc<dyn ExecutionBackend>) {
        self.backends.insert(backend.name().to_string(), backend);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ExecutionBackend>, SandboxError> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| SandboxError::UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}
