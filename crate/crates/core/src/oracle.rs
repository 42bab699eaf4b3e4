//! Field-likelihood oracles: given a cluster's phrase texts, return the subset
//! judged to be fields (keys) rather than values.

use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Prompt sent with every remote request; member texts follow, one per line.
pub const FIELD_PROMPT: &str =
    "Given the set of phrases with the type as key or value, return the phrases that are more likely to be keys";

#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct OracleError(pub String);

pub trait FieldOracle: Send + Sync {
    fn flag_fields(&self, phrases: &[String]) -> Result<Vec<String>, OracleError>;
}

impl<T: FieldOracle + ?Sized> FieldOracle for &T {
    fn flag_fields(&self, phrases: &[String]) -> Result<Vec<String>, OracleError> {
        (**self).flag_fields(phrases)
    }
}

impl<T: FieldOracle + ?Sized> FieldOracle for Box<T> {
    fn flag_fields(&self, phrases: &[String]) -> Result<Vec<String>, OracleError> {
        (**self).flag_fields(phrases)
    }
}

/// Offline rule: a field has at least one letter, no digits, and at most 40 characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicOracle;

impl HeuristicOracle {
    pub fn looks_like_field(text: &str) -> bool {
        text.chars().any(char::is_alphabetic)
            && !text.chars().any(|c| c.is_ascii_digit())
            && text.chars().count() <= 40
    }
}

impl FieldOracle for HeuristicOracle {
    fn flag_fields(&self, phrases: &[String]) -> Result<Vec<String>, OracleError> {
        Ok(phrases
            .iter()
            .filter(|p| Self::looks_like_field(p))
            .cloned()
            .collect())
    }
}

#[derive(Debug, Serialize)]
struct OracleRequest<'a> {
    prompt: String,
    phrases: &'a [String],
}

#[derive(Debug, Deserialize)]
struct OracleResponse {
    fields: Vec<String>,
}

/// HTTP oracle: POSTs `{prompt, phrases}` and expects `{fields}` back.
/// Returned texts are matched exactly against the request; anything else is dropped.
pub struct RemoteOracle {
    endpoint: String,
    api_key: Option<String>,
    batch_size: usize,
    retries: u32,
    client: reqwest::blocking::Client,
}

impl RemoteOracle {
    pub fn new(
        endpoint: impl Into<String>,
        timeout: Duration,
        api_key: Option<String>,
    ) -> Result<Self, OracleError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| OracleError(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            api_key,
            batch_size: 64,
            retries: 1,
            client,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    fn call(&self, batch: &[String]) -> Result<Vec<String>, OracleError> {
        let mut prompt = String::from(FIELD_PROMPT);
        for p in batch {
            prompt.push('\n');
            prompt.push_str(p);
        }
        let body = OracleRequest {
            prompt,
            phrases: batch,
        };
        let mut last_err = OracleError("no attempt made".into());
        for attempt in 0..=self.retries {
            let mut req = self.client.post(&self.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send().and_then(|r| r.error_for_status()) {
                Ok(resp) => {
                    let parsed: OracleResponse =
                        resp.json().map_err(|e| OracleError(e.to_string()))?;
                    return Ok(parsed
                        .fields
                        .into_iter()
                        .filter(|f| batch.contains(f))
                        .collect());
                }
                Err(e) => {
                    log::warn!("oracle request attempt {} failed: {e}", attempt + 1);
                    last_err = OracleError(e.to_string());
                }
            }
        }
        Err(last_err)
    }
}

impl FieldOracle for RemoteOracle {
    fn flag_fields(&self, phrases: &[String]) -> Result<Vec<String>, OracleError> {
        let mut out = Vec::new();
        for batch in phrases.chunks(self.batch_size) {
            out.extend(self.call(batch)?);
        }
        Ok(out)
    }
}

/// Wraps an oracle and counts calls; used to check that extraction with a
/// stored template never consults the oracle.
#[derive(Debug, Default)]
pub struct CountingOracle<O> {
    inner: O,
    calls: std::sync::atomic::AtomicUsize,
}

impl<O> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl<O: FieldOracle> FieldOracle for CountingOracle<O> {
    fn flag_fields(&self, phrases: &[String]) -> Result<Vec<String>, OracleError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.flag_fields(phrases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn heuristic_rule() {
        assert!(HeuristicOracle::looks_like_field("Start Date"));
        assert!(!HeuristicOracle::looks_like_field("05-01"));
        assert!(!HeuristicOracle::looks_like_field("Page 2"));
        assert!(!HeuristicOracle::looks_like_field("---"));
        assert!(!HeuristicOracle::looks_like_field(&"a".repeat(41)));
    }

    /// Serves one HTTP request and replies with `body`; returns the raw request.
    fn one_shot_server(body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(pos) = text.find("\r\n\r\n") {
                    let len = text[..pos]
                        .lines()
                        .find_map(|l| {
                            l.to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(|v| v.trim().parse::<usize>().unwrap())
                        })
                        .unwrap_or(0);
                    if buf.len() >= pos + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let resp = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(resp.as_bytes()).unwrap();
            String::from_utf8_lossy(&buf).into_owned()
        });
        (format!("http://{addr}/fields"), handle)
    }

    #[test]
    fn remote_oracle_posts_prompt_and_filters_response() {
        let (url, handle) = one_shot_server(r#"{"fields":["Date","Bogus"]}"#);
        let oracle =
            RemoteOracle::new(url, Duration::from_secs(5), Some("k3y".into())).unwrap();
        let got = oracle
            .flag_fields(&["Date".into(), "05-01".into()])
            .unwrap();
        assert_eq!(got, vec!["Date".to_string()]);
        let request = handle.join().unwrap();
        assert!(request.starts_with("POST /fields"));
        assert!(request.to_ascii_lowercase().contains("authorization: bearer k3y"));
        let body = &request[request.find("\r\n\r\n").unwrap() + 4..];
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["phrases"], serde_json::json!(["Date", "05-01"]));
        assert_eq!(
            v["prompt"].as_str().unwrap(),
            format!("{FIELD_PROMPT}\nDate\n05-01")
        );
    }

    #[test]
    fn remote_oracle_unreachable_is_an_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let oracle = RemoteOracle::new(url, Duration::from_millis(500), None)
            .unwrap()
            .with_retries(0);
        assert!(oracle.flag_fields(&["Date".into()]).is_err());
    }
}
