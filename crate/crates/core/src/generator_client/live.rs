use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    CostLedger, GeneratedCandidate, GenerationRequest, Generator, GeneratorError, IdentityHook,
    PreSubmitHook, Provenance,
};
use crate::patterns::Dataset;

pub const ENV_GENERATOR_URL: &str = "COVREPAIR_GENERATOR_URL";
pub const ENV_EMBEDDER_URL: &str = "COVREPAIR_EMBEDDER_URL";
pub const ENV_API_KEY: &str = "COVREPAIR_GENERATOR_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 250,
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with up to 50% random jitter.
    fn delay(&self, attempt: u32) -> Duration {
        let base = self.base_delay_ms.saturating_mul(1 << attempt.min(16));
        let jitter = if base > 0 {
            rand::rng().random_range(0..=base / 2)
        } else {
            0
        };
        Duration::from_millis(base + jitter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveConfig {
    pub generator_url: String,
    pub embedder_url: String,
    pub api_key: Option<String>,
    pub generator_retry: RetryPolicy,
    pub embedder_retry: RetryPolicy,
    pub timeout: Duration,
    /// Where generated payloads are written.
    pub payload_dir: PathBuf,
}

impl LiveConfig {
    pub fn from_env(payload_dir: &Path) -> Result<Self, GeneratorError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        Ok(Self {
            generator_url: var(ENV_GENERATOR_URL)
                .ok_or_else(|| GeneratorError::NotConfigured(ENV_GENERATOR_URL.into()))?,
            embedder_url: var(ENV_EMBEDDER_URL)
                .ok_or_else(|| GeneratorError::NotConfigured(ENV_EMBEDDER_URL.into()))?,
            api_key: var(ENV_API_KEY),
            generator_retry: RetryPolicy::default(),
            embedder_retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
            payload_dir: payload_dir.to_path_buf(),
        })
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    request_id: &'a str,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
}

#[derive(Deserialize)]
struct GenerateReply {
    image: String,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    request_id: &'a str,
    image: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

enum CallError {
    /// No HTTP response was ever received.
    Unreachable(String),
    Status(u16, String),
    Body(String),
}

/// Client for an external image-edit service and an external embedding service.
///
/// Generation request: `POST generator_url` with `{request_id, prompt, image?, mask?}`
/// (base64 image bytes and a base64 binary-graymap mask); reply `{image}`.
/// Embedding request: `POST embedder_url` with `{request_id, image}`; reply `{embedding}`.
pub struct LiveGenerator {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    dim: usize,
    payloads: HashMap<String, PathBuf>,
    hook: Box<dyn PreSubmitHook>,
}

impl LiveGenerator {
    /// `base_dir` resolves relative payload paths of the dataset's tuples.
    pub fn new(
        config: LiveConfig,
        dataset: &Dataset,
        base_dir: Option<&Path>,
    ) -> Result<Self, GeneratorError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GeneratorError::NotConfigured(e.to_string()))?;
        let payloads = dataset
            .tuples
            .iter()
            .filter_map(|t| {
                let p = t.payload_path.as_ref()?;
                Some((
                    t.id.clone(),
                    base_dir.map_or_else(|| PathBuf::from(p), |d| d.join(p)),
                ))
            })
            .collect();
        Ok(Self {
            config,
            client,
            dim: dataset.embedding_dim().unwrap_or(0),
            payloads,
            hook: Box::new(IdentityHook),
        })
    }

    pub fn with_hook(mut self, hook: Box<dyn PreSubmitHook>) -> Self {
        self.hook = hook;
        self
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        url: &str,
        body: &B,
        retry: RetryPolicy,
    ) -> (Result<R, CallError>, bool) {
        let mut reached = false;
        let mut last = CallError::Unreachable("no attempt made".into());
        for attempt in 0..retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(retry.delay(attempt - 1));
            }
            let mut req = self.client.post(url).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Err(e) => last = CallError::Unreachable(e.to_string()),
                Ok(resp) => {
                    reached = true;
                    let status = resp.status();
                    if status.is_success() {
                        return (
                            resp.json::<R>().map_err(|e| CallError::Body(e.to_string())),
                            reached,
                        );
                    }
                    let text = resp.text().unwrap_or_default();
                    last = CallError::Status(status.as_u16(), text);
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        break;
                    }
                }
            }
        }
        (Err(last), reached)
    }

    fn guide_image(&self, request: &GenerationRequest) -> Result<Option<String>, GeneratorError> {
        let Some(id) = &request.guide.tuple_id else {
            return Ok(None);
        };
        let path = self.payloads.get(id).ok_or_else(|| {
            GeneratorError::NotConfigured(format!("guide tuple `{id}` has no payload"))
        })?;
        let bytes = std::fs::read(path).map_err(|e| {
            GeneratorError::NotConfigured(format!("guide payload {}: {e}", path.display()))
        })?;
        Ok(Some(B64.encode(self.hook.prepare(bytes))))
    }
}

impl Generator for LiveGenerator {
    fn provenance(&self) -> Provenance {
        Provenance::Live
    }

    fn generate(
        &mut self,
        request: &GenerationRequest,
        ledger: &mut CostLedger,
    ) -> Result<GeneratedCandidate, GeneratorError> {
        if request.prompt.trim().is_empty() {
            return Err(GeneratorError::EmptyPrompt);
        }
        let image = self.guide_image(request)?;
        let mask = request.guide.mask.as_ref().map(|m| B64.encode(m.to_pgm()));
        let body = GenerateBody {
            request_id: &request.request_id,
            prompt: &request.prompt,
            image,
            mask,
        };
        let started = Instant::now();
        let (result, reached) = self.post::<_, GenerateReply>(
            &self.config.generator_url,
            &body,
            self.config.generator_retry,
        );
        if reached {
            ledger.charge();
        }
        let reply = match result {
            Ok(r) => r,
            Err(CallError::Unreachable(message)) => {
                return Err(GeneratorError::BackendUnavailable {
                    message,
                    reached: false,
                })
            }
            Err(CallError::Status(401 | 403, _)) => return Err(GeneratorError::AuthFailure),
            Err(CallError::Status(code, text)) if (400..500).contains(&code) && code != 429 => {
                return Err(GeneratorError::ContentRejected(format!("{code}: {text}")))
            }
            Err(CallError::Status(code, text)) => {
                return Err(GeneratorError::BackendUnavailable {
                    message: format!("{code}: {text}"),
                    reached: true,
                })
            }
            Err(CallError::Body(e)) => {
                return Err(GeneratorError::ContentRejected(format!(
                    "malformed reply: {e}"
                )))
            }
        };
        let bytes = B64
            .decode(reply.image.as_bytes())
            .map_err(|e| GeneratorError::ContentRejected(format!("payload is not base64: {e}")))?;
        std::fs::create_dir_all(&self.config.payload_dir)
            .map_err(|e| GeneratorError::EmbeddingUnavailable(format!("payload dir: {e}")))?;
        let payload_path = self
            .config
            .payload_dir
            .join(format!("{}.img", request.request_id));
        std::fs::write(&payload_path, &bytes)
            .map_err(|e| GeneratorError::EmbeddingUnavailable(format!("store payload: {e}")))?;

        let embed = EmbedBody {
            request_id: &request.request_id,
            image: &reply.image,
        };
        let (result, _) = self.post::<_, EmbedReply>(
            &self.config.embedder_url,
            &embed,
            self.config.embedder_retry,
        );
        let embedding = match result {
            Ok(r) => r.embedding,
            Err(CallError::Unreachable(m)) | Err(CallError::Body(m)) => {
                return Err(GeneratorError::EmbeddingUnavailable(m))
            }
            Err(CallError::Status(code, text)) => {
                return Err(GeneratorError::EmbeddingUnavailable(format!(
                    "{code}: {text}"
                )))
            }
        };
        if embedding.len() != self.dim || embedding.iter().any(|x| !x.is_finite()) {
            return Err(GeneratorError::EmbeddingUnavailable(format!(
                "embedding has dimension {}, dataset has {}",
                embedding.len(),
                self.dim
            )));
        }
        Ok(GeneratedCandidate {
            request_id: request.request_id.clone(),
            embedding,
            payload_path: Some(payload_path.to_string_lossy().into_owned()),
            provenance: Provenance::Live,
            latency_ms: started.elapsed().as_millis() as u64,
            simulated_realism: None,
        })
    }
}
