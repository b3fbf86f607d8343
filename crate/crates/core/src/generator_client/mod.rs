//! Prompt construction, the generator interface with its mock and live
//! backends, and the per-query cost ledger.

mod live;
mod mock;
mod money;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guide_selection::Guide;
use crate::patterns::{AttributeSchema, Combination};

pub use live::{
    LiveConfig, LiveGenerator, RetryPolicy, ENV_API_KEY, ENV_EMBEDDER_URL, ENV_GENERATOR_URL,
};
pub use mock::{MaskTable, MockGenerator, MockScenario};
pub use money::{ledger_total, CostLedger, Money, ParseMoneyError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeneratorError {
    #[error("template placeholder `{0}` has no value")]
    MissingPlaceholderValue(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("generation backend unavailable: {message}")]
    BackendUnavailable { message: String, reached: bool },
    #[error("authentication rejected by the generation backend")]
    AuthFailure,
    #[error("content rejected: {0}")]
    ContentRejected(String),
    #[error("embedding unavailable: {0}")]
    EmbeddingUnavailable(String),
    #[error("live backend not configured: {0}")]
    NotConfigured(String),
}

impl GeneratorError {
    /// Whether the call reached the backend and is therefore billed.
    pub fn reached_backend(&self) -> bool {
        match self {
            GeneratorError::BackendUnavailable { reached, .. } => *reached,
            GeneratorError::AuthFailure
            | GeneratorError::ContentRejected(_)
            | GeneratorError::EmbeddingUnavailable(_) => true,
            GeneratorError::MissingPlaceholderValue(_)
            | GeneratorError::EmptyPrompt
            | GeneratorError::NotConfigured(_) => false,
        }
    }

    /// Errors after which the run should stop and wait to be resumed.
    pub fn suspends_run(&self) -> bool {
        matches!(
            self,
            GeneratorError::BackendUnavailable { .. }
                | GeneratorError::AuthFailure
                | GeneratorError::NotConfigured(_)
        )
    }
}

/// Substitute each `{attribute}` placeholder with the value label of `c`.
pub fn build_prompt(c: &Combination, schema: &AttributeSchema) -> Result<String, GeneratorError> {
    let template = &schema.prompt_template;
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template.as_str();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            rest = "";
            break;
        };
        let name = &after[..close];
        let value = schema
            .attribute_index(name)
            .and_then(|i| c.get(i).and_then(|v| schema.attributes[i].domain.get(v)))
            .ok_or_else(|| GeneratorError::MissingPlaceholderValue(name.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    if out.trim().is_empty() {
        return Err(GeneratorError::EmptyPrompt);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub request_id: String,
    /// Global attempt number within the run; seeds the mock's per-request randomness.
    pub sequence: u64,
    pub prompt: String,
    pub guide: Guide,
    pub target: Combination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCandidate {
    pub request_id: String,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_path: Option<String>,
    pub provenance: Provenance,
    pub latency_ms: u64,
    /// Probability that a simulated evaluator labels the candidate realistic (mock only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulated_realism: Option<f64>,
}

/// A text-and-guide to candidate backend.
///
/// Implementations charge the ledger exactly once per call that reaches the
/// backend, whether it succeeds or fails, and never on local precondition failures.
pub trait Generator: Send {
    fn provenance(&self) -> Provenance;

    fn generate(
        &mut self,
        request: &GenerationRequest,
        ledger: &mut CostLedger,
    ) -> Result<GeneratedCandidate, GeneratorError>;
}

/// Hook applied to a guide image before it is submitted to a live backend,
/// for example to pad or crop it to the square size an image service expects.
pub trait PreSubmitHook: Send + Sync {
    fn prepare(&self, image: Vec<u8>) -> Vec<u8>;
}

/// Leaves the image unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityHook;

impl PreSubmitHook for IdentityHook {
    fn prepare(&self, image: Vec<u8>) -> Vec<u8> {
        image
    }
}
