//! In-process execution backend. Each worker runs a small Python-subset
//! interpreter over the real host files backing its mounts and workspace,
//! with read-only mounts enforced on every write.

mod interp;
mod lexer;
mod parser;

use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};

pub use interp::{float_repr, HostError, Interp, RunOutcome, RunStatus};

use super::backend::{ExecutionBackend, Mount, Worker, WorkerFault, WorkerSpec};
use super::wire::{
    ExecReply, ExecRequest, ExecStatus, Health, HealthReply, Reply, Request, ResetReply,
};
use super::SandboxError;

#[derive(Debug, Clone, Default)]
pub struct FakeBackend {
    /// When set, launching any other image fails with `ImageMissing`.
    pub known_images: Option<BTreeSet<String>>,
}

impl FakeBackend {
    pub fn with_images<I: IntoIterator<Item = S>, S: Into<String>>(images: I) -> Self {
        Self {
            known_images: Some(images.into_iter().map(Into::into).collect()),
        }
    }
}

impl ExecutionBackend for FakeBackend {
    fn name(&self) -> &str {
        "fake"
    }

    fn launch(&self, spec: &WorkerSpec) -> Result<Box<dyn Worker>, SandboxError> {
        Ok(Box::new(FakeWorker::launch(self, spec)?))
    }
}

pub struct FakeWorker {
    session_id: String,
    interp: Interp,
    fs: FsHost,
    dead: bool,
}

impl FakeWorker {
    pub fn launch(backend: &FakeBackend, spec: &WorkerSpec) -> Result<Self, SandboxError> {
        if let Some(known) = &backend.known_images {
            if !known.contains(&spec.image) {
                return Err(SandboxError::ImageMissing(spec.image.clone()));
            }
        }
        Ok(Self {
            session_id: spec.session_id.clone(),
            interp: Interp::new(),
            fs: FsHost {
                mounts: spec.mounts.clone(),
                workspace_host: spec.workspace_host.clone(),
                workspace_path: spec.workspace_path.trim_end_matches('/').to_string(),
            },
            dead: false,
        })
    }

    /// Answers one wire request, as a shim would.
    pub fn handle(&mut self, req: Request) -> Reply {
        match req {
            Request::Health => Reply::Health(HealthReply {
                status: Health::Ready,
            }),
            Request::Reset => {
                let _ = self.reset();
                Reply::Reset(ResetReply { ack: true })
            }
            Request::Execute(e) => Reply::Exec(self.execute(&e).unwrap_or_else(|f| ExecReply {
                request_id: e.request_id,
                status: ExecStatus::Error,
                stdout: String::new(),
                stderr: format!("{f:?}"),
                value_repr: None,
                duration: 0.0,
            })),
        }
    }
}

impl Worker for FakeWorker {
    fn endpoint(&self) -> String {
        format!("inproc://{}", self.session_id)
    }

    fn execute(&mut self, req: &ExecRequest) -> Result<ExecReply, WorkerFault> {
        if self.dead {
            return Err(WorkerFault::Died("interpreter exited".into()));
        }
        let out = self.interp.run(&req.code, req.timeout, &mut self.fs);
        let status = match out.status {
            RunStatus::Ok => ExecStatus::Ok,
            RunStatus::Error => ExecStatus::Error,
            RunStatus::Timeout => ExecStatus::Timeout,
            RunStatus::Exited => {
                self.dead = true;
                return Err(WorkerFault::Died("interpreter exited".into()));
            }
        };
        Ok(ExecReply {
            request_id: req.request_id.clone(),
            status,
            stdout: out.stdout,
            stderr: out.stderr,
            value_repr: out.value_repr,
            duration: out.elapsed,
        })
    }

    fn reset(&mut self) -> Result<(), WorkerFault> {
        if self.dead {
            return Err(WorkerFault::Died("interpreter exited".into()));
        }
        self.interp.clear();
        Ok(())
    }

    fn shutdown(&mut self) {
        self.dead = true;
    }
}

struct FsHost {
    mounts: Vec<Mount>,
    workspace_host: PathBuf,
    workspace_path: String,
}

enum Resolved {
    Host {
        path: PathBuf,
        writable: bool,
    },
    /// A directory that exists only as the parent of mount points.
    Virtual(Vec<String>),
    Outside,
}

fn normalize(path: &str, cwd: &str) -> String {
    let joined = if path.starts_with('/') {
        PathBuf::from(path)
    } else {
        Path::new(cwd).join(path)
    };
    let mut parts: Vec<String> = Vec::new();
    for c in joined.components() {
        match c {
            Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
            Component::ParentDir => {
                parts.pop();
            }
            _ => {}
        }
    }
    format!("/{}", parts.join("/"))
}

fn under<'a>(path: &'a str, root: &str) -> Option<&'a str> {
    let root = root.trim_end_matches('/');
    if path == root {
        Some("")
    } else {
        path.strip_prefix(root).and_then(|r| r.strip_prefix('/'))
    }
}

impl FsHost {
    fn resolve(&self, path: &str) -> (String, Resolved) {
        let p = normalize(path, &self.workspace_path);
        if let Some(rest) = under(&p, &self.workspace_path) {
            let host = self.workspace_host.join(rest);
            return (
                p,
                Resolved::Host {
                    path: host,
                    writable: true,
                },
            );
        }
        for m in &self.mounts {
            if let Some(rest) = under(&p, &m.container) {
                let host = if rest.is_empty() {
                    m.host.clone()
                } else {
                    m.host.join(rest)
                };
                return (
                    p,
                    Resolved::Host {
                        path: host,
                        writable: !m.read_only,
                    },
                );
            }
        }
        let mut children: Vec<String> = self
            .mounts
            .iter()
            .map(|m| m.container.as_str())
            .chain(std::iter::once(self.workspace_path.as_str()))
            .filter_map(|c| under(c, &p).filter(|r| !r.is_empty()))
            .map(|r| r.split('/').next().unwrap_or_default().to_string())
            .collect();
        children.sort();
        children.dedup();
        if children.is_empty() {
            (p, Resolved::Outside)
        } else {
            (p, Resolved::Virtual(children))
        }
    }
}

fn not_found(p: &str) -> HostError {
    HostError {
        kind: "FileNotFoundError",
        msg: format!("[Errno 2] No such file or directory: '{p}'"),
    }
}

fn denied(p: &str) -> HostError {
    HostError {
        kind: "PermissionError",
        msg: format!("[Errno 13] Permission denied: '{p}'"),
    }
}

fn is_link(p: &Path) -> bool {
    std::fs::symlink_metadata(p).is_ok_and(|m| m.file_type().is_symlink())
}

impl interp::Host for FsHost {
    fn read(&mut self, path: &str) -> Result<Vec<u8>, HostError> {
        match self.resolve(path) {
            (p, Resolved::Host { path, .. }) => {
                if path.is_dir() {
                    return Err(HostError {
                        kind: "IsADirectoryError",
                        msg: format!("[Errno 21] Is a directory: '{p}'"),
                    });
                }
                std::fs::read(&path).map_err(|_| not_found(&p))
            }
            (p, Resolved::Virtual(_)) => Err(HostError {
                kind: "IsADirectoryError",
                msg: format!("[Errno 21] Is a directory: '{p}'"),
            }),
            (p, Resolved::Outside) => Err(not_found(&p)),
        }
    }

    fn write(&mut self, path: &str, data: &[u8], append: bool) -> Result<(), HostError> {
        let (p, resolved) = self.resolve(path);
        let Resolved::Host {
            path,
            writable: true,
        } = resolved
        else {
            return Err(denied(&p));
        };
        if is_link(&path) {
            return Err(denied(&p));
        }
        let parent_ok = path.parent().is_some_and(Path::is_dir);
        if !parent_ok {
            return Err(not_found(&p));
        }
        let mut opts = std::fs::OpenOptions::new();
        opts.create(true);
        if append {
            opts.append(true);
        } else {
            opts.write(true).truncate(true);
        }
        use std::io::Write;
        opts.open(&path)
            .and_then(|mut f| f.write_all(data))
            .map_err(|_| denied(&p))
    }

    fn list_dir(&mut self, path: &str) -> Result<Vec<String>, HostError> {
        match self.resolve(path) {
            (_, Resolved::Virtual(children)) => Ok(children),
            (p, Resolved::Host { path, .. }) => {
                let entries = std::fs::read_dir(&path).map_err(|_| not_found(&p))?;
                Ok(entries
                    .filter_map(Result::ok)
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .collect())
            }
            (p, Resolved::Outside) => Err(not_found(&p)),
        }
    }

    fn exists(&mut self, path: &str) -> bool {
        match self.resolve(path) {
            (_, Resolved::Host { path, .. }) => path.exists(),
            (_, Resolved::Virtual(_)) => true,
            (_, Resolved::Outside) => false,
        }
    }

    fn cwd(&self) -> String {
        self.workspace_path.clone()
    }
}
