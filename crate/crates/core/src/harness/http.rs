use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Result};
use crate::lm::{logsumexp, LanguageModel, LogProbs};
use crate::vocab::{TokenId, Vocabulary};

/// Responses whose logsumexp is further than this from zero are rejected;
/// anything closer is renormalized.
pub const HTTP_NORMALIZATION_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HttpOptions {
    pub timeout_ms: u64,
    /// Extra attempts after the first, for timeouts, connection failures
    /// and 5xx responses.
    pub retries: u32,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            timeout_ms: 10_000,
            retries: 2,
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    context_ids: &'a [TokenId],
}

#[derive(Deserialize)]
struct Response {
    logprobs: Vec<f64>,
}

/// A language model served over HTTP.
///
/// Each query POSTs `{"context_ids": [...]}` and expects
/// `{"logprobs": [...]}` with one entry per vocabulary token. Responses are
/// cached by context until [`LanguageModel::clear_cache`], which every
/// decoder calls once at the start of a decode.
pub struct HttpBackend {
    endpoint: String,
    vocab_size: usize,
    options: HttpOptions,
    agent: ureq::Agent,
    cache: Mutex<HashMap<Vec<TokenId>, LogProbs>>,
    requests: AtomicUsize,
}

impl HttpBackend {
    /// Connects and runs a health check: one query with an empty context
    /// must return a valid distribution.
    pub fn connect(endpoint: &str, vocab: &Vocabulary, options: HttpOptions) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(options.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let backend = HttpBackend {
            endpoint: endpoint.to_string(),
            vocab_size: vocab.len(),
            options,
            agent,
            cache: Mutex::new(HashMap::new()),
            requests: AtomicUsize::new(0),
        };
        backend.fetch(&[])?;
        backend.requests.store(0, Ordering::Relaxed);
        Ok(backend)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Network requests issued since the health check.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn fetch(&self, context: &[TokenId]) -> Result<LogProbs, BackendError> {
        let mut attempt = 0;
        loop {
            match self.fetch_once(context) {
                Err(e) if attempt < self.options.retries && retryable(&e) => {
                    attempt += 1;
                    log::warn!("{e}; retry {attempt}/{}", self.options.retries);
                    thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
                }
                other => return other,
            }
        }
    }

    fn fetch_once(&self, context: &[TokenId]) -> Result<LogProbs, BackendError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let endpoint = || self.endpoint.clone();
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(Request { context_ids: context })
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => BackendError::Timeout { endpoint: endpoint() },
                other => BackendError::Unreachable {
                    endpoint: endpoint(),
                    message: other.to_string(),
                },
            })?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(BackendError::Status {
                endpoint: endpoint(),
                status,
            });
        }
        let body: Response = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout { endpoint: endpoint() },
            other => BackendError::MalformedPayload {
                endpoint: endpoint(),
                message: other.to_string(),
            },
        })?;
        self.validate(body.logprobs)
    }

    fn validate(&self, mut lp: Vec<f64>) -> Result<LogProbs, BackendError> {
        if lp.len() != self.vocab_size {
            return Err(BackendError::LengthMismatch {
                expected: self.vocab_size,
                actual: lp.len(),
            });
        }
        if lp.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(BackendError::MalformedPayload {
                endpoint: self.endpoint.clone(),
                message: "logprobs contain NaN or +inf".into(),
            });
        }
        let z = logsumexp(&lp);
        if !(z.abs() <= HTTP_NORMALIZATION_TOL) {
            return Err(BackendError::NotNormalized { logsumexp: z });
        }
        lp.iter_mut().for_each(|x| *x -= z);
        Ok(LogProbs::from_raw_unchecked(lp))
    }
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Timeout { .. } | BackendError::Unreachable { .. } => true,
        BackendError::Status { status, .. } => *status >= 500,
        _ => false,
    }
}

impl LanguageModel for HttpBackend {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(context) {
            return Ok(hit.clone());
        }
        let d = self.fetch(context)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(context.to_vec(), d.clone());
        Ok(d)
    }

    fn clear_cache(&self) {
        self.cache.lock().expect("cache lock").clear();
    }
}


#[cfg(test)]
mod tests {
    use super::mock::serve;
    use super::*;
    use crate::decode::{beam_search, DecodeParams};
    use crate::error::Error;
    use crate::lm::UniformModel;
    use std::sync::atomic::Ordering;

    fn vocab(n: usize) -> Vocabulary {
        let text: Vec<String> = (0..n - 1).map(|i| format!("w{i}")).collect();
        Vocabulary::build([text.join(" ").as_str()])
    }

    fn uniform_body(n: usize) -> String {
        serde_json::json!({ "logprobs": vec![-(n as f64).ln(); n] }).to_string()
    }

    fn quick() -> HttpOptions {
        HttpOptions {
            timeout_ms: 2_000,
            retries: 0,
        }
    }

    #[test]
    fn uniform_server_matches_local_uniform() {
        let v = vocab(6);
        let server = serve(|_| (200, uniform_body(6)));
        let remote = HttpBackend::connect(&server.url, &v, quick()).unwrap();
        let local = UniformModel::new(&v).unwrap();
        let params = DecodeParams {
            max_new_tokens: 4,
            beam_width: 3,
            ..Default::default()
        };
        let a = beam_search(&remote, &[1, 2], &params).unwrap();
        let b = beam_search(&local, &[1, 2], &params).unwrap();
        assert_eq!(a.continuation, b.continuation);
        assert_eq!(
            remote.next_logprobs(&[0]).unwrap().as_slice(),
            local.next_logprobs(&[0]).unwrap().as_slice()
        );
    }

    #[test]
    fn repeated_context_hits_cache() {
        let v = vocab(4);
        let server = serve(|_| (200, uniform_body(4)));
        let remote = HttpBackend::connect(&server.url, &v, quick()).unwrap();
        let before = server.hits.load(Ordering::SeqCst);
        remote.clear_cache();
        remote.next_logprobs(&[1, 2]).unwrap();
        remote.next_logprobs(&[1, 2]).unwrap();
        assert_eq!(server.hits.load(Ordering::SeqCst) - before, 1);
        assert_eq!(remote.requests(), 1);
        remote.clear_cache();
        remote.next_logprobs(&[1, 2]).unwrap();
        assert_eq!(remote.requests(), 2);
    }

    #[test]
    fn wrong_length_aborts_decode() {
        let v = vocab(5);
        let server = serve(|ctx| if ctx.is_empty() { (200, uniform_body(5)) } else { (200, uniform_body(3)) });
        let remote = HttpBackend::connect(&server.url, &v, quick()).unwrap();
        let err = beam_search(&remote, &[1], &DecodeParams::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::Backend(BackendError::LengthMismatch { expected: 5, actual: 3 })
        ));
    }

    #[test]
    fn normalization_checked_and_repaired() {
        let v = vocab(2);
        let server = serve(|ctx| {
            let lp: Vec<f64> = match ctx.first() {
                Some(0) => vec![0.5f64.ln() + 5e-4, 0.5f64.ln()],
                Some(_) => vec![-0.1, -0.1],
                None => vec![-(2f64.ln()); 2],
            };
            (200, serde_json::json!({ "logprobs": lp }).to_string())
        });
        let remote = HttpBackend::connect(&server.url, &v, quick()).unwrap();
        let d = remote.next_logprobs(&[0]).unwrap();
        assert!(logsumexp(d.as_slice()).abs() < 1e-12);
        assert!(matches!(
            remote.next_logprobs(&[1]),
            Err(Error::Backend(BackendError::NotNormalized { .. }))
        ));
    }

    #[test]
    fn distinct_error_kinds() {
        let v = vocab(3);
        let server = serve(|ctx| match ctx.first() {
            None => (200, uniform_body(3)),
            Some(0) => (200, "{\"probs\": []}".into()),
            Some(1) => (503, "{}".into()),
            _ => (200, "not json".into()),
        });
        let remote = HttpBackend::connect(&server.url, &v, quick()).unwrap();
        assert!(matches!(
            remote.next_logprobs(&[0]),
            Err(Error::Backend(BackendError::MalformedPayload { .. }))
        ));
        assert!(matches!(
            remote.next_logprobs(&[1]),
            Err(Error::Backend(BackendError::Status { status: 503, .. }))
        ));
        assert!(matches!(
            remote.next_logprobs(&[2]),
            Err(Error::Backend(BackendError::MalformedPayload { .. }))
        ));
    }

    #[test]
    fn server_errors_are_retried() {
        let v = vocab(3);
        let calls = std::sync::Arc::new(AtomicUsize::new(0));
        let seen = calls.clone();
        let server = serve(move |ctx| {
            if !ctx.is_empty() && seen.fetch_add(1, Ordering::SeqCst) < 2 {
                (500, "{}".into())
            } else {
                (200, uniform_body(3))
            }
        });
        let opts = HttpOptions {
            timeout_ms: 2_000,
            retries: 2,
        };
        let remote = HttpBackend::connect(&server.url, &v, opts).unwrap();
        remote.next_logprobs(&[1]).unwrap();
        assert_eq!(remote.requests(), 3);
    }

    #[test]
    fn timeout_and_unreachable() {
        let v = vocab(3);
        let server = serve(|ctx| {
            if !ctx.is_empty() {
                std::thread::sleep(Duration::from_millis(600));
            }
            (200, uniform_body(3))
        });
        let opts = HttpOptions {
            timeout_ms: 200,
            retries: 0,
        };
        let remote = HttpBackend::connect(&server.url, &v, opts).unwrap();
        assert!(matches!(
            remote.next_logprobs(&[1]),
            Err(Error::Backend(BackendError::Timeout { .. }))
        ));

        let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", dead.local_addr().unwrap());
        drop(dead);
        assert!(matches!(
            HttpBackend::connect(&url, &v, quick()),
            Err(Error::Backend(BackendError::Unreachable { .. }))
        ));
    }
}
