use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::ACCEPT;
use reqwest::StatusCode;

use super::{excerpt, parse_results_json, Backend, ExecStatus, ExecutionOutcome, DEFAULT_REMOTE_TIMEOUT};

const RESULTS_JSON: &str = "application/sparql-results+json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HttpMethod {
    /// `query` as a URL parameter.
    Get,
    /// `query` as an urlencoded form body.
    Post,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InflightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

struct InflightGuard<'a>(&'a InflightLimit);

impl InflightLimit {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InflightGuard<'_> {
        let mut n = self.current.lock().expect("inflight lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("inflight lock");
        }
        *n += 1;
        InflightGuard(self)
    }
}

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.current.lock().expect("inflight lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// SPARQL Protocol client.
#[derive(Debug)]
pub struct RemoteBackend {
    url: String,
    method: HttpMethod,
    basic_auth: Option<(String, String)>,
    timeout: Duration,
    client: Client,
    inflight: InflightLimit,
    executions: AtomicU64,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            method: HttpMethod::Post,
            basic_auth: None,
            timeout: DEFAULT_REMOTE_TIMEOUT,
            client: Client::builder()
                .user_agent(concat!("kgqa-rl/", env!("CARGO_PKG_VERSION")))
                .build()
                .expect("HTTP client"),
            inflight: InflightLimit::new(8),
            executions: AtomicU64::new(0),
        }
    }

    pub fn with_method(mut self, method: HttpMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_basic_auth(mut self, user: impl Into<String>, password: impl Into<String>) -> Self {
        self.basic_auth = Some((user.into(), password.into()));
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_max_inflight(mut self, n: usize) -> Self {
        self.inflight = InflightLimit::new(n);
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn classify_http_failure(status: StatusCode, body: &str) -> ExecutionOutcome {
        let snippet = excerpt(body);
        let lower = body.to_ascii_lowercase();
        let message = format!("HTTP {status}: {snippet}");
        if status == StatusCode::BAD_REQUEST {
            // Virtuoso reports SPARQL compiler errors as 400
            ExecutionOutcome::failure(ExecStatus::ParseOrSyntaxError, message)
        } else if status == StatusCode::GATEWAY_TIMEOUT
            || status == StatusCode::REQUEST_TIMEOUT
            || lower.contains("s1t00")
            || lower.contains("timed out")
        {
            ExecutionOutcome::failure(ExecStatus::Timeout, message)
        } else {
            ExecutionOutcome::failure(ExecStatus::EndpointError, message)
        }
    }
}

impl Backend for RemoteBackend {
    fn execute(&self, query: &str, timeout: Option<Duration>) -> ExecutionOutcome {
        let _slot = self.inflight.acquire();
        self.executions.fetch_add(1, Ordering::Relaxed);
        let request = match self.method {
            HttpMethod::Get => self.client.get(&self.url).query(&[("query", query)]),
            HttpMethod::Post => self.client.post(&self.url).form(&[("query", query)]),
        };
        let mut request = request
            .header(ACCEPT, RESULTS_JSON)
            .timeout(timeout.unwrap_or(self.timeout));
        if let Some((user, password)) = &self.basic_auth {
            request = request.basic_auth(user, Some(password));
        }
        let response = match request.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return ExecutionOutcome::failure(ExecStatus::Timeout, format!("request timed out: {e}"))
            }
            Err(e) => {
                return ExecutionOutcome::failure(ExecStatus::EndpointError, format!("transport error: {e}"))
            }
        };
        let status = response.status();
        let body = match response.bytes() {
            Ok(b) => b,
            Err(e) if e.is_timeout() => {
                return ExecutionOutcome::failure(ExecStatus::Timeout, format!("body timed out: {e}"))
            }
            Err(e) => {
                return ExecutionOutcome::failure(ExecStatus::EndpointError, format!("reading body: {e}"))
            }
        };
        if !status.is_success() {
            return Self::classify_http_failure(status, &String::from_utf8_lossy(&body));
        }
        match parse_results_json(&body) {
            Ok(answers) => ExecutionOutcome::ok(answers),
            Err(e) => ExecutionOutcome::failure(
                ExecStatus::EndpointError,
                format!("{e}; body: {}", excerpt(&String::from_utf8_lossy(&body))),
            ),
        }
    }

    fn check_reachable(&self) -> Result<(), String> {
        let probe = self.execute("ASK { }", Some(self.timeout.min(Duration::from_secs(10))));
        if probe.is_ok() {
            Ok(())
        } else {
            Err(format!("{} unreachable: {}", self.url, probe.message))
        }
    }

    fn executions(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    fn describe(&self) -> String {
        format!("remote endpoint {}", self.url)
    }

    fn default_timeout(&self) -> Option<Duration> {
        Some(self.timeout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::AnswerSet;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Serve `responses` in order, one per connection, then stop.
    fn serve(responses: Vec<(u16, &'static str, u64)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (code, body, delay_ms) in responses {
                let Ok((mut sock, _)) = listener.accept() else { return };
                let mut buf = [0u8; 8192];
                let _ = sock.read(&mut buf);
                std::thread::sleep(Duration::from_millis(delay_ms));
                let reply = format!(
                    "HTTP/1.1 {code} X\r\nContent-Type: application/sparql-results+json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = sock.write_all(reply.as_bytes());
            }
        });
        format!("http://{addr}/sparql")
    }

    #[test]
    fn ok_response_is_parsed() {
        let url = serve(vec![(200, r#"{"head":{},"boolean":true}"#, 0)]);
        let out = RemoteBackend::new(url).execute("ASK { }", None);
        assert_eq!(out, ExecutionOutcome::ok(AnswerSet::Boolean(true)));
    }

    #[test]
    fn server_error_carries_body_excerpt() {
        let url = serve(vec![(500, "Virtuoso 42000 Error internal", 0)]);
        let out = RemoteBackend::new(url).execute("ASK { }", None);
        assert_eq!(out.status, ExecStatus::EndpointError);
        assert!(out.message.contains("Virtuoso 42000 Error internal"), "{}", out.message);
    }

    #[test]
    fn bad_request_is_syntax_error() {
        let url = serve(vec![(400, "Virtuoso 37000 Error SP030: SPARQL compiler", 0)]);
        let out = RemoteBackend::new(url).with_method(HttpMethod::Get).execute("SELEC", None);
        assert_eq!(out.status, ExecStatus::ParseOrSyntaxError);
    }

    #[test]
    fn slow_response_times_out() {
        let url = serve(vec![(200, r#"{"boolean":true}"#, 1500)]);
        let out = RemoteBackend::new(url).execute("ASK { }", Some(Duration::from_millis(200)));
        assert_eq!(out.status, ExecStatus::Timeout);
    }

    #[test]
    fn connection_refused_is_endpoint_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let backend = RemoteBackend::new(format!("http://{addr}/sparql"));
        let out = backend.execute("ASK { }", Some(Duration::from_secs(2)));
        assert_eq!(out.status, ExecStatus::EndpointError);
        assert!(backend.check_reachable().is_err());
    }

    #[test]
    fn malformed_body_is_endpoint_error() {
        let url = serve(vec![(200, "<html>oops</html>", 0)]);
        let out = RemoteBackend::new(url).execute("ASK { }", None);
        assert_eq!(out.status, ExecStatus::EndpointError);
    }
}
