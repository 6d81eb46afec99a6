//! Manager <-> shim protocol. Every message is a 4-byte big-endian length
//! followed by that many bytes of compact JSON (which never contains a raw
//! newline). Requests carry an `op` tag; replies are plain objects.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
#[cfg(unix)]
use std::os::unix::net::UnixStream;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub request_id: String,
    pub code: String,
    pub timeout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecReply {
    pub request_id: String,
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub value_repr: Option<String>,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Execute(ExecRequest),
    Health,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Health {
    Ready,
    Booting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReply {
    pub status: Health,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetReply {
    pub ack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Exec(ExecReply),
    Health(HealthReply),
    Reset(ResetReply),
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl WireError {
    /// True when the peer did not answer before the read deadline.
    pub fn is_timeout(&self) -> bool {
        matches!(self, WireError::Io(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
    }
}

pub fn write_frame<T: Serialize>(w: &mut impl Write, msg: &T) -> Result<(), WireError> {
    let body = serde_json::to_vec(msg)?;
    if body.len() > MAX_FRAME {
        return Err(WireError::FrameTooLarge(body.len()));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` on a clean EOF before the length prefix.
pub fn read_frame<T: DeserializeOwned>(r: &mut impl Read) -> Result<Option<T>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(serde_json::from_slice(&body)?))
}

enum Stream {
    Tcp(TcpStream),
    #[cfg(unix)]
    Unix(UnixStream),
}

impl Stream {
    fn set_read_timeout(&self, d: Duration) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.set_read_timeout(Some(d)),
            #[cfg(unix)]
            Stream::Unix(s) => s.set_read_timeout(Some(d)),
        }
    }
}

impl Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.read(buf),
            #[cfg(unix)]
            Stream::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.write(buf),
            #[cfg(unix)]
            Stream::Unix(s) => s.write(buf),
        }
    }
    fn flush(&mut self) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.flush(),
            #[cfg(unix)]
            Stream::Unix(s) => s.flush(),
        }
    }
}

/// Client side of one shim connection.
pub struct ShimConnection {
    stream: Stream,
    endpoint: String,
}

impl ShimConnection {
    /// Connects to `unix://<path>` or `tcp://<host:port>` (bare `host:port`
    /// is read as tcp).
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, WireError> {
        let stream = if let Some(path) = endpoint.strip_prefix("unix://") {
            #[cfg(unix)]
            {
                Stream::Unix(UnixStream::connect(path)?)
            }
            #[cfg(not(unix))]
            {
                let _ = path;
                return Err(WireError::Protocol(
                    "unix sockets unsupported on this platform".into(),
                ));
            }
        } else {
            let addr = endpoint.strip_prefix("tcp://").unwrap_or(endpoint);
            let addr = addr
                .to_socket_addrs()?
                .next()
                .ok_or_else(|| WireError::Protocol(format!("`{addr}` resolved to nothing")))?;
            let s = TcpStream::connect_timeout(&addr, timeout)?;
            s.set_nodelay(true)?;
            Stream::Tcp(s)
        };
        Ok(Self {
            stream,
            endpoint: endpoint.to_string(),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn round_trip(&mut self, req: &Request, wait: Duration) -> Result<Reply, WireError> {
        self.stream
            .set_read_timeout(wait.max(Duration::from_millis(1)))?;
        write_frame(&mut self.stream, req)?;
        read_frame(&mut self.stream)?.ok_or_else(|| {
            WireError::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "shim closed the connection",
            ))
        })
    }

    pub fn health(&mut self, wait: Duration) -> Result<Health, WireError> {
        match self.round_trip(&Request::Health, wait)? {
            Reply::Health(h) => Ok(h.status),
            other => Err(WireError::Protocol(format!(
                "expected health reply, got {other:?}"
            ))),
        }
    }

    pub fn reset(&mut self, wait: Duration) -> Result<(), WireError> {
        match self.round_trip(&Request::Reset, wait)? {
            Reply::Reset(ResetReply { ack: true }) => Ok(()),
            other => Err(WireError::Protocol(format!(
                "expected reset ack, got {other:?}"
            ))),
        }
    }

    /// Sends an execute request and waits at most `timeout + grace`.
    pub fn execute(&mut self, req: &ExecRequest, grace: Duration) -> Result<ExecReply, WireError> {
        let wait = Duration::from_secs_f64(req.timeout.max(0.0)) + grace;
        match self.round_trip(&Request::Execute(req.clone()), wait)? {
            Reply::Exec(r) if r.request_id == req.request_id => Ok(r),
            Reply::Exec(r) => Err(WireError::Protocol(format!(
                "reply for `{}` while waiting for `{}`",
                r.request_id, req.request_id
            ))),
            other => Err(WireError::Protocol(format!(
                "expected exec reply, got {other:?}"
            ))),
        }
    }
}

/// Server side: answers requests on `stream` until the peer hangs up.
pub fn serve_connection<S: Read + Write>(
    mut stream: S,
    mut handler: impl FnMut(Request) -> Reply,
) -> Result<(), WireError> {
    while let Some(req) = read_frame::<Request>(&mut stream)? {
        write_frame(&mut stream, &handler(req))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::{SocketAddr, TcpListener};

    #[test]
    fn request_encoding_is_tagged_and_newline_free() {
        let req = Request::Execute(ExecRequest {
            request_id: "s1-1".into(),
            code: "x = 1\nprint(x)".into(),
            timeout: 5.0,
        });
        let json = serde_json::to_string(&req).unwrap();
        assert!(
            json.starts_with(r#"{"op":"execute","request_id":"s1-1""#),
            "{json}"
        );
        assert!(!json.contains('\n'));
        assert_eq!(
            serde_json::to_string(&Request::Health).unwrap(),
            r#"{"op":"health"}"#
        );
        assert_eq!(
            serde_json::to_string(&Request::Reset).unwrap(),
            r#"{"op":"reset"}"#
        );
    }

    #[test]
    fn reply_variants_decode() {
        let r: Reply = serde_json::from_str(r#"{"status":"ready"}"#).unwrap();
        assert_eq!(
            r,
            Reply::Health(HealthReply {
                status: Health::Ready
            })
        );
        let r: Reply = serde_json::from_str(r#"{"ack":true}"#).unwrap();
        assert_eq!(r, Reply::Reset(ResetReply { ack: true }));
        let r: Reply = serde_json::from_str(
            r#"{"request_id":"a","status":"timeout","stdout":"","stderr":"","value_repr":null,"duration":3.0}"#,
        )
        .unwrap();
        assert!(matches!(
            r,
            Reply::Exec(ExecReply {
                status: ExecStatus::Timeout,
                ..
            })
        ));
    }

    #[test]
    fn frames_round_trip_and_reject_oversize() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Request::Health).unwrap();
        assert_eq!(&buf[..4], &(15u32).to_be_bytes());
        let back: Request = read_frame(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, Request::Health);
        assert!(read_frame::<Request>(&mut [].as_slice()).unwrap().is_none());
        let huge = ((MAX_FRAME + 1) as u32).to_be_bytes();
        assert!(matches!(
            read_frame::<Request>(&mut huge.as_slice()),
            Err(WireError::FrameTooLarge(_))
        ));
    }

    fn spawn_server(handler: impl FnMut(Request) -> Reply + Send + 'static) -> SocketAddr {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let _ = serve_connection(stream, handler);
        });
        addr
    }

    #[test]
    fn client_against_server() {
        let addr = spawn_server(|req| match req {
            Request::Health => Reply::Health(HealthReply {
                status: Health::Ready,
            }),
            Request::Reset => Reply::Reset(ResetReply { ack: true }),
            Request::Execute(e) => Reply::Exec(ExecReply {
                request_id: e.request_id,
                status: ExecStatus::Ok,
                stdout: e.code,
                stderr: String::new(),
                value_repr: None,
                duration: 0.1,
            }),
        });
        let mut c =
            ShimConnection::connect(&format!("tcp://{addr}"), Duration::from_secs(2)).unwrap();
        assert_eq!(c.health(Duration::from_secs(2)).unwrap(), Health::Ready);
        c.reset(Duration::from_secs(2)).unwrap();
        let req = ExecRequest {
            request_id: "r1".into(),
            code: "echo".into(),
            timeout: 1.0,
        };
        assert_eq!(
            c.execute(&req, Duration::from_secs(1)).unwrap().stdout,
            "echo"
        );
    }

    #[test]
    fn mismatched_request_id_is_protocol_error() {
        let addr = spawn_server(|req| match req {
            Request::Execute(_) => Reply::Exec(ExecReply {
                request_id: "other".into(),
                status: ExecStatus::Ok,
                stdout: String::new(),
                stderr: String::new(),
                value_repr: None,
                duration: 0.0,
            }),
            _ => Reply::Reset(ResetReply { ack: true }),
        });
        let mut c = ShimConnection::connect(&addr.to_string(), Duration::from_secs(2)).unwrap();
        let req = ExecRequest {
            request_id: "mine".into(),
            code: String::new(),
            timeout: 1.0,
        };
        assert!(matches!(
            c.execute(&req, Duration::from_secs(1)),
            Err(WireError::Protocol(_))
        ));
    }

    #[cfg(unix)]
    #[test]
    fn unix_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shim.sock");
        let listener = std::os::unix::net::UnixListener::bind(&path).unwrap();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let _ = serve_connection(stream, |_| {
                Reply::Health(HealthReply {
                    status: Health::Booting,
                })
            });
        });
        let mut c = ShimConnection::connect(
            &format!("unix://{}", path.display()),
            Duration::from_secs(1),
        )
        .unwrap();
        assert_eq!(c.health(Duration::from_secs(1)).unwrap(), Health::Booting);
    }

    #[test]
    fn silent_shim_times_out_within_grace() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let _ = read_frame::<Request>(&mut stream);
            std::thread::sleep(Duration::from_secs(3));
        });
        let mut c = ShimConnection::connect(&addr.to_string(), Duration::from_secs(2)).unwrap();
        let req = ExecRequest {
            request_id: "r".into(),
            code: "while True: pass".into(),
            timeout: 0.2,
        };
        let start = std::time::Instant::now();
        let e = c.execute(&req, Duration::from_millis(200)).unwrap_err();
        assert!(e.is_timeout(), "{e}");
        assert!(start.elapsed() < Duration::from_secs(2));
    }
}
