use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use super::{
    require_messages, rough_tokens, ClientBackend, ClientError, Completion, Message, ModelClient,
    ModelConfig, Usage,
};

/// Classic token bucket; `capacity` requests burst, refilled continuously.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn per_minute(rpm: u32) -> Self {
        let rpm = rpm.max(1) as f64;
        Self {
            capacity: rpm.clamp(1.0, 10.0),
            per_sec: rpm / 60.0,
            state: Mutex::new((rpm.clamp(1.0, 10.0), Instant::now())),
        }
    }

    /// Takes a token at `now`, or returns how long to wait before retrying.
    pub fn try_take(&self, now: Instant) -> Result<(), Duration> {
        let mut s = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let elapsed = now.saturating_duration_since(s.1).as_secs_f64();
        s.0 = (s.0 + elapsed * self.per_sec).min(self.capacity);
        s.1 = now.max(s.1);
        if s.0 >= 1.0 {
            s.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - s.0) / self.per_sec))
        }
    }

    pub fn take(&self) {
        while let Err(wait) = self.try_take(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
}

fn bucket_for(endpoint: &str, rpm: u32) -> Arc<TokenBucket> {
    static BUCKETS: OnceLock<Mutex<HashMap<String, Arc<TokenBucket>>>> = OnceLock::new();
    let mut map = BUCKETS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|p| p.into_inner());
    map.entry(endpoint.to_string())
        .or_insert_with(|| Arc::new(TokenBucket::per_minute(rpm)))
        .clone()
}

/// Client for `/chat/completions` style HTTP endpoints.
pub struct RemoteClient {
    config: ModelConfig,
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    bucket: Arc<TokenBucket>,
}

enum Attempt {
    Done(Completion),
    Retry(ClientError),
    Fatal(ClientError),
}

impl RemoteClient {
    pub fn new(config: &ModelConfig) -> Result<Self, ClientError> {
        let token = match &config.credential_env {
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Some(v),
                _ => {
                    return Err(ClientError::AuthError(format!(
                        "environment variable {var} is not set"
                    )))
                }
            },
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(600)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/chat/completions", config.endpoint.trim_end_matches('/'));
        Ok(Self {
            bucket: bucket_for(&config.endpoint, config.requests_per_minute),
            config: config.clone(),
            agent,
            url,
            token,
        })
    }

    pub fn request_body(config: &ModelConfig, messages: &[Message]) -> Value {
        let msgs: Vec<Value> = messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": config.model_name.as_deref().unwrap_or(&config.model_id),
            "messages": msgs,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        });
        if let (Some(effort), true) = (config.reasoning_effort, config.accepts_reasoning_effort) {
            body["reasoning_effort"] = json!(effort.as_str());
        }
        if let Some(seed) = config.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        self.bucket.take();
        let started = Instant::now();
        let mut req = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(ClientError::TransportError(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => {}
            401 | 403 => {
                return Attempt::Fatal(ClientError::AuthError(format!("HTTP {status}: {text}")))
            }
            429 => return Attempt::Retry(ClientError::RateLimited(0)),
            500..=599 => {
                return Attempt::Retry(ClientError::TransportError(format!("HTTP {status}")))
            }
            _ => {
                return Attempt::Fatal(ClientError::TransportError(format!(
                    "HTTP {status}: {text}"
                )))
            }
        }
        let v: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => {
                return Attempt::Retry(ClientError::TransportError(format!(
                    "bad response body: {e}"
                )))
            }
        };
        let Some(content) = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
        else {
            return Attempt::Retry(ClientError::TransportError(
                "response has no message content".into(),
            ));
        };
        let input = v.pointer("/usage/prompt_tokens").and_then(Value::as_u64);
        let output = v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64);
        Attempt::Done(Completion {
            usage: Usage {
                input_tokens: input
                    .unwrap_or_else(|| body["messages"].to_string().len() as u64 / 4),
                output_tokens: output.unwrap_or_else(|| rough_tokens(content)),
            },
            text: content.to_string(),
            latency: started.elapsed().as_secs_f64(),
        })
    }
}

impl ModelClient for RemoteClient {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn complete(&mut self, messages: &[Message]) -> Result<Completion, ClientError> {
        require_messages(messages)?;
        let body = Self::request_body(&self.config, messages);
        let retries = self.config.retry.max_retries;
        let mut rng = rand::thread_rng();
        let mut attempt = 0;
        loop {
            let err = match self.attempt(&body) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => e,
            };
            if attempt >= retries {
                return Err(match err {
                    ClientError::RateLimited(_) => ClientError::RateLimited(retries),
                    e => e,
                });
            }
            let delay =
                self.config.retry.base_delay * 2f64.powi(attempt as i32) * rng.gen_range(0.5..1.5);
            tracing::warn!(model = %self.config.model_id, attempt, error = %err, "retrying completion");
            std::thread::sleep(Duration::from_secs_f64(delay));
            attempt += 1;
        }
    }
}

#[derive(Debug, Default)]
pub struct OpenAiCompatible;

impl ClientBackend for OpenAiCompatible {
    fn name(&self) -> &str {
        "openai-compatible"
    }

    fn client(
        &self,
        config: &ModelConfig,
        _key: &str,
    ) -> Result<Box<dyn ModelClient>, ClientError> {
        Ok(Box::new(RemoteClient::new(config)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{ReasoningEffort, RetryPolicy, Role};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) pairs in order and records request bodies.
    fn stub(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let h = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut r = BufReader::new(stream);
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    r.read_line(&mut line).unwrap();
                    let l = line.trim_end().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if l.starts_with("authorization:") {
                        auth = line.trim_end().to_string();
                    }
                }
                let mut buf = vec![0; len];
                r.read_exact(&mut buf).unwrap();
                seen.push(format!("{auth}\n{}", String::from_utf8(buf).unwrap()));
                let mut s = r.into_inner();
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (format!("http://{addr}/v1"), h)
    }

    fn cfg(endpoint: &str) -> ModelConfig {
        ModelConfig {
            backend: "openai-compatible".into(),
            endpoint: endpoint.into(),
            requests_per_minute: 6000,
            retry: RetryPolicy {
                max_retries: 2,
                base_delay: 0.001,
            },
            ..ModelConfig::scripted("gpt-test", "")
        }
    }

    fn ok_body(text: &str) -> String {
        json!({"choices":[{"message":{"role":"assistant","content":text}}],"usage":{"prompt_tokens":7,"completion_tokens":3}})
            .to_string()
    }

    fn msgs() -> Vec<Message> {
        vec![
            Message::new(Role::System, "sys"),
            Message::new(Role::User, "hi"),
        ]
    }

    #[test]
    fn completes_and_passes_reasoning_effort() {
        let (url, h) = stub(vec![(200, ok_body("<answer>1</answer>"))]);
        let mut c = cfg(&url);
        c.reasoning_effort = Some(ReasoningEffort::High);
        c.accepts_reasoning_effort = true;
        let out = RemoteClient::new(&c).unwrap().complete(&msgs()).unwrap();
        assert_eq!(out.text, "<answer>1</answer>");
        assert_eq!(
            out.usage,
            Usage {
                input_tokens: 7,
                output_tokens: 3
            }
        );
        let seen = h.join().unwrap();
        let body: Value = serde_json::from_str(seen[0].split_once('\n').unwrap().1).unwrap();
        assert_eq!(body["reasoning_effort"], "high");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["model"], "gpt-test");
    }

    #[test]
    fn effort_dropped_when_unsupported() {
        let mut c = cfg("http://x");
        c.reasoning_effort = Some(ReasoningEffort::Medium);
        assert!(RemoteClient::request_body(&c, &msgs())
            .get("reasoning_effort")
            .is_none());
        assert!(RemoteClient::request_body(&c, &msgs())
            .get("seed")
            .is_none());
        c.seed = Some(7);
        assert_eq!(RemoteClient::request_body(&c, &msgs())["seed"], 7);
    }

    #[test]
    fn retries_server_errors() {
        let (url, h) = stub(vec![
            (503, "{}".into()),
            (500, "{}".into()),
            (200, ok_body("fine")),
        ]);
        let out = RemoteClient::new(&cfg(&url))
            .unwrap()
            .complete(&msgs())
            .unwrap();
        assert_eq!(out.text, "fine");
        assert_eq!(h.join().unwrap().len(), 3);
    }

    #[test]
    fn rate_limited_after_cap() {
        let (url, h) = stub(vec![(429, "{}".into()); 3]);
        let e = RemoteClient::new(&cfg(&url))
            .unwrap()
            .complete(&msgs())
            .unwrap_err();
        assert_eq!(e, ClientError::RateLimited(2));
        h.join().unwrap();
    }

    #[test]
    fn auth_rejection_is_not_retried() {
        let (url, h) = stub(vec![(401, "{}".into())]);
        let e = RemoteClient::new(&cfg(&url))
            .unwrap()
            .complete(&msgs())
            .unwrap_err();
        assert!(matches!(e, ClientError::AuthError(_)));
        assert_eq!(h.join().unwrap().len(), 1);
    }

    #[test]
    fn missing_credential_env() {
        let mut c = cfg("http://127.0.0.1:9");
        c.credential_env = Some("DSEVAL_TEST_SURELY_UNSET_KEY".into());
        assert!(matches!(
            RemoteClient::new(&c),
            Err(ClientError::AuthError(_))
        ));
    }

    #[test]
    fn bearer_token_sent() {
        let (url, h) = stub(vec![(200, ok_body("x"))]);
        std::env::set_var("DSEVAL_TEST_BEARER", "sekrit");
        let mut c = cfg(&url);
        c.credential_env = Some("DSEVAL_TEST_BEARER".into());
        RemoteClient::new(&c).unwrap().complete(&msgs()).unwrap();
        assert!(h.join().unwrap()[0].contains("Bearer sekrit"));
    }

    #[test]
    fn transport_error_when_nothing_listens() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", l.local_addr().unwrap());
        drop(l);
        let e = RemoteClient::new(&cfg(&url))
            .unwrap()
            .complete(&msgs())
            .unwrap_err();
        assert!(matches!(e, ClientError::TransportError(_)));
    }

    #[test]
    fn bucket_limits_burst() {
        let b = TokenBucket::per_minute(60);
        let t0 = Instant::now();
        for _ in 0..10 {
            assert!(b.try_take(t0).is_ok());
        }
        let wait = b.try_take(t0).unwrap_err();
        assert!((wait.as_secs_f64() - 1.0).abs() < 1e-6);
        assert!(b.try_take(t0 + Duration::from_secs(1)).is_ok());
    }
}
