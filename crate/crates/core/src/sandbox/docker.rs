//! Container backend driving the `docker` command-line client. Each worker
//! is one detached container whose shim listens on a Unix socket inside a
//! bind-mounted control directory, so containers can run with networking off.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use super::backend::{ExecutionBackend, Worker, WorkerFault, WorkerSpec};
use super::wire::{ExecReply, ExecRequest, Health, ShimConnection, WireError};
use super::SandboxError;

pub const CONTROL_DIR: &str = "/run/dseval";
pub const SOCKET_NAME: &str = "shim.sock";

#[derive(Debug, Clone)]
pub struct DockerBackend {
    pub binary: PathBuf,
}

impl Default for DockerBackend {
    fn default() -> Self {
        Self {
            binary: "docker".into(),
        }
    }
}

impl DockerBackend {
    fn run(&self, args: &[String]) -> Result<Output, SandboxError> {
        Command::new(&self.binary).args(args).output().map_err(|e| {
            SandboxError::RuntimeUnavailable(format!("{}: {e}", self.binary.display()))
        })
    }

    fn checked(&self, args: &[String]) -> Result<String, SandboxError> {
        let out = self.run(args)?;
        if !out.status.success() {
            return Err(SandboxError::RuntimeUnavailable(format!(
                "`{} {}` failed: {}",
                self.binary.display(),
                args.first().map(String::as_str).unwrap_or_default(),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }

    /// Arguments for `docker run`, exposed for inspection.
    pub fn run_args(spec: &WorkerSpec) -> Vec<String> {
        let mut a: Vec<String> = vec![
            "run".into(),
            "-d".into(),
            "--name".into(),
            format!("dseval-{}", spec.session_id),
            "--cpus".into(),
            format!("{}", spec.cpu_limit),
            "--memory".into(),
            format!("{}b", spec.mem_limit),
        ];
        if !spec.network {
            a.extend(["--network".into(), "none".into()]);
        }
        for m in &spec.mounts {
            let mode = if m.read_only { ":ro" } else { "" };
            a.push("-v".into());
            a.push(format!("{}:{}{mode}", m.host.display(), m.container));
        }
        a.push("-v".into());
        a.push(format!(
            "{}:{}",
            spec.workspace_host.display(),
            spec.workspace_path
        ));
        a.push("-v".into());
        a.push(format!("{}:{CONTROL_DIR}", spec.control_host.display()));
        a.extend([
            "-e".into(),
            format!("DSEVAL_SHIM_SOCKET={CONTROL_DIR}/{SOCKET_NAME}"),
        ]);
        a.extend(["-w".into(), spec.workspace_path.clone()]);
        a.push(spec.image.clone());
        a
    }
}

impl ExecutionBackend for DockerBackend {
    fn name(&self) -> &str {
        "docker"
    }

    fn launch(&self, spec: &WorkerSpec) -> Result<Box<dyn Worker>, SandboxError> {
        let inspect = self.run(&["image".into(), "inspect".into(), spec.image.clone()])?;
        if !inspect.status.success() {
            return Err(SandboxError::ImageMissing(spec.image.clone()));
        }
        let id = self.checked(&Self::run_args(spec))?;
        let id = id.lines().last().unwrap_or_default().to_string();
        let destroy = |b: &Self| {
            let _ = b.run(&["rm".into(), "-f".into(), id.clone()]);
        };
        let endpoint = format!("unix://{}", spec.control_host.join(SOCKET_NAME).display());
        let deadline = Instant::now() + Duration::from_secs_f64(spec.health_timeout);
        loop {
            let probe =
                ShimConnection::connect(&endpoint, Duration::from_millis(500)).and_then(|mut c| {
                    let h = c.health(Duration::from_millis(500))?;
                    Ok((c, h))
                });
            if let Ok((conn, Health::Ready)) = probe {
                return Ok(Box::new(DockerWorker {
                    backend: self.clone(),
                    container: id,
                    endpoint,
                    conn,
                    grace: Duration::from_secs_f64(spec.grace),
                }));
            }
            if Instant::now() >= deadline {
                destroy(self);
                return Err(SandboxError::HealthCheckTimeout(endpoint));
            }
            std::thread::sleep(Duration::from_millis(100));
        }
    }
}

pub struct DockerWorker {
    backend: DockerBackend,
    container: String,
    endpoint: String,
    conn: ShimConnection,
    grace: Duration,
}

fn fault(e: WireError) -> WorkerFault {
    if e.is_timeout() {
        WorkerFault::Unresponsive
    } else {
        WorkerFault::Died(e.to_string())
    }
}

impl Worker for DockerWorker {
    fn endpoint(&self) -> String {
        self.endpoint.clone()
    }

    fn execute(&mut self, req: &ExecRequest) -> Result<ExecReply, WorkerFault> {
        self.conn.execute(req, self.grace).map_err(fault)
    }

    fn reset(&mut self) -> Result<(), WorkerFault> {
        self.conn.reset(self.grace).map_err(fault)
    }

    fn shutdown(&mut self) {
        let _ = self
            .backend
            .run(&["rm".into(), "-f".into(), self.container.clone()]);
    }
}

impl Drop for DockerWorker {
    fn drop(&mut self) {
        self.shutdown();
    }
}
