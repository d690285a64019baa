//! Generic JSON-over-HTTP adapter.
//!
//! `POST {endpoint}` with a [`WireRequest`] body; the server answers with a
//! [`WireResponse`]. Images travel as base64-encoded PNG.

use std::io::ErrorKind;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{
    with_retries, BackendConfig, ConnectionErrorClass, DiffusionBackend, DiffusionError,
    GenerationRequest, HealthReport,
};
use crate::label::RasterImage;

const EXCERPT_LEN: usize = 200;
const MAX_BODY_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub negative_prompt: Option<String>,
    pub init_image: String,
    pub constraint_type: String,
    pub constraint_image: Option<String>,
    pub strength: f64,
    pub steps: u32,
    pub guidance: f64,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

impl WireRequest {
    pub fn from_request(request: &GenerationRequest) -> Self {
        WireRequest {
            prompt: request.prompt.clone(),
            negative_prompt: request.negative_prompt.clone(),
            init_image: BASE64.encode(request.source_image.to_png_bytes()),
            constraint_type: request.constraint.kind().as_str().to_string(),
            constraint_image: request.constraint.payload().map(|p| BASE64.encode(p.to_png_bytes())),
            strength: request.strength,
            steps: request.steps,
            guidance: request.guidance,
            seed: request.seed,
            width: request.output_size.0,
            height: request.output_size.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub image: String,
}

impl WireResponse {
    pub fn from_image(image: &RasterImage) -> Self {
        WireResponse { image: BASE64.encode(image.to_png_bytes()) }
    }

    pub fn decode(body: &str) -> Result<RasterImage, DiffusionError> {
        let protocol = |message: String| DiffusionError::Protocol { message, excerpt: excerpt(body) };
        let parsed: WireResponse =
            serde_json::from_str(body).map_err(|e| protocol(format!("invalid json: {e}")))?;
        let bytes = BASE64
            .decode(parsed.image.as_bytes())
            .map_err(|e| protocol(format!("invalid base64: {e}")))?;
        RasterImage::from_png_bytes(&bytes).map_err(|e| protocol(format!("invalid png: {e}")))
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_LEN).collect()
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
    max_retries: u32,
    retry_base: Duration,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, DiffusionError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            agent,
            endpoint: config.endpoint.clone(),
            token: config.token.clone(),
            max_retries: config.max_retries,
            retry_base: Duration::from_secs_f64(config.retry_base_secs),
        })
    }

    fn post_once(&self, body: &[u8]) -> Result<RasterImage, DiffusionError> {
        let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(map_transport_error)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(map_transport_error)?;
        if !(200..300).contains(&status) {
            return Err(DiffusionError::Rejected { status, message: backend_message(&text) });
        }
        WireResponse::decode(&text)
    }
}

/// Pulls `error`/`detail`/`message` out of a JSON error body, else an excerpt.
fn backend_message(body: &str) -> String {
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(body) {
        for key in ["error", "detail", "message"] {
            if let Some(v) = map.get(key) {
                return match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
            }
        }
    }
    excerpt(body)
}

fn map_transport_error(e: ureq::Error) -> DiffusionError {
    match e {
        ureq::Error::Timeout(_) => DiffusionError::Timeout { attempts: 1 },
        ureq::Error::Io(io) if matches!(io.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
            DiffusionError::Timeout { attempts: 1 }
        }
        ureq::Error::Io(io) => DiffusionError::Connection(io.to_string()),
        ureq::Error::HostNotFound => DiffusionError::Connection("host not found".into()),
        ureq::Error::ConnectionFailed => DiffusionError::Connection("connection failed".into()),
        other => DiffusionError::Protocol { message: other.to_string(), excerpt: String::new() },
    }
}

fn classify(e: &ureq::Error) -> ConnectionErrorClass {
    match e {
        ureq::Error::Timeout(_) => ConnectionErrorClass::Timeout,
        ureq::Error::Io(io) if io.kind() == ErrorKind::ConnectionRefused => ConnectionErrorClass::Refused,
        ureq::Error::Io(io) if matches!(io.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
            ConnectionErrorClass::Timeout
        }
        ureq::Error::HostNotFound => ConnectionErrorClass::HostNotFound,
        _ => ConnectionErrorClass::Other,
    }
}

impl DiffusionBackend for HttpBackend {
    fn id(&self) -> String {
        format!("generic:{}", self.endpoint)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RasterImage, DiffusionError> {
        let body = serde_json::to_vec(&WireRequest::from_request(request))
            .expect("wire request serializes");
        with_retries(self.max_retries, self.retry_base, || self.post_once(&body))
    }

    /// Any HTTP answer to a `GET` of the endpoint counts as reachable.
    fn health_check(&self) -> HealthReport {
        let start = Instant::now();
        let result = self.agent.get(&self.endpoint).call();
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        match result {
            Ok(_) => HealthReport {
                backend: self.id(),
                reachable: true,
                latency_ms,
                error_class: None,
                detail: None,
            },
            Err(e) => HealthReport {
                backend: self.id(),
                reachable: false,
                latency_ms,
                error_class: Some(classify(&e)),
                detail: Some(e.to_string()),
            },
        }
    }
}
