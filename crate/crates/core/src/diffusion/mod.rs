//! Image-to-image diffusion backends.
//!
//! The diffusion model is an external service. [`Client`] validates requests,
//! bounds the number of in-flight calls and hands them to a backend adapter:
//! [`HttpBackend`] speaks a small JSON protocol, [`MockBackend`] is a pure
//! deterministic stand-in used in tests and dry runs.

mod constraint;
mod edge;
mod http;
mod mock;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::RasterImage;

pub use constraint::{
    build_segmentation_constraint, cityscapes_palette, load_depth_constraint, Constraint,
    ConstraintType, Palette,
};
pub use edge::{build_edge_constraint, canny};
pub use http::{HttpBackend, WireRequest, WireResponse};
pub use mock::MockBackend;

pub const ENV_BACKEND_URL: &str = "DIDEX_BACKEND_URL";
pub const ENV_BACKEND_TOKEN: &str = "DIDEX_BACKEND_TOKEN";

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("cannot connect to backend: {0}")]
    Connection(String),
    #[error("malformed backend response ({message}): {excerpt}")]
    Protocol { message: String, excerpt: String },
    #[error("backend rejected the request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("constraint image: {0}")]
    Constraint(String),
}

impl DiffusionError {
    /// Network and backend failures, as opposed to bad input.
    pub fn is_environment(&self) -> bool {
        match self {
            DiffusionError::Timeout { .. }
            | DiffusionError::Connection(_)
            | DiffusionError::Protocol { .. } => true,
            DiffusionError::Rejected { status, .. } => *status >= 500,
            _ => false,
        }
    }

    fn is_retryable(&self) -> bool {
        matches!(self, DiffusionError::Timeout { .. })
            || matches!(self, DiffusionError::Rejected { status, .. } if *status >= 500)
    }
}

/// Everything the diffusion model receives for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub source_image: RasterImage,
    pub prompt: String,
    pub negative_prompt: Option<String>,
    pub constraint: Constraint,
    pub strength: f64,
    pub steps: u32,
    pub guidance: f64,
    pub seed: u64,
    pub output_size: (u32, u32),
}

impl GenerationRequest {
    /// Request with default sampling parameters and output at source resolution.
    pub fn new(source_image: RasterImage, prompt: impl Into<String>, seed: u64) -> Self {
        let params = GenerationParams::default();
        let output_size = source_image.dimensions();
        GenerationRequest {
            source_image,
            prompt: prompt.into(),
            negative_prompt: params.negative_prompt,
            constraint: Constraint::None,
            strength: params.strength,
            steps: params.steps,
            guidance: params.guidance,
            seed,
            output_size,
        }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: String| Err(DiffusionError::InvalidRequest(m));
        if !(self.strength > 0.0 && self.strength <= 1.0) {
            return bad(format!("strength {} outside (0, 1]", self.strength));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.guidance > 0.0 && self.guidance.is_finite()) {
            return bad(format!("guidance {} must be positive", self.guidance));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return bad(format!("output size {:?} must be positive", self.output_size));
        }
        if let Some(payload) = self.constraint.payload() {
            if payload.dimensions() != self.source_image.dimensions() {
                return bad(format!(
                    "{:?} constraint is {:?} but the source image is {:?}",
                    self.constraint.kind(),
                    payload.dimensions(),
                    self.source_image.dimensions()
                ));
            }
        }
        Ok(())
    }
}

/// Sampling parameters shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub strength: f64,
    pub steps: u32,
    pub guidance: f64,
    pub negative_prompt: Option<String>,
    /// `None` keeps the source resolution.
    pub output_size: Option<(u32, u32)>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            strength: 0.75,
            steps: 50,
            guidance: 7.5,
            negative_prompt: None,
            output_size: None,
        }
    }
}

impl GenerationParams {
    pub fn request(
        &self,
        source_image: RasterImage,
        prompt: String,
        constraint: Constraint,
        seed: u64,
    ) -> GenerationRequest {
        let output_size = self.output_size.unwrap_or(source_image.dimensions());
        GenerationRequest {
            source_image,
            prompt,
            negative_prompt: self.negative_prompt.clone(),
            constraint,
            strength: self.strength,
            steps: self.steps,
            guidance: self.guidance,
            seed,
            output_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adapter {
    #[default]
    Generic,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    pub adapter: Adapter,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrent: usize,
    /// Sent as a bearer token when present.
    pub token: Option<String>,
    /// First retry delay; later delays double.
    pub retry_base_secs: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:7860/generate".to_string(),
            adapter: Adapter::Generic,
            timeout_secs: 120.0,
            max_retries: 3,
            max_concurrent: 4,
            token: None,
            retry_base_secs: 1.0,
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        BackendConfig { adapter: Adapter::Mock, endpoint: "mock://".to_string(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(DiffusionError::InvalidConfig("timeout must be positive".into()));
        }
        if self.max_concurrent == 0 {
            return Err(DiffusionError::InvalidConfig("max_concurrent must be at least 1".into()));
        }
        if self.retry_base_secs < 0.0 || !self.retry_base_secs.is_finite() {
            return Err(DiffusionError::InvalidConfig("retry_base_secs must be non-negative".into()));
        }
        if self.adapter == Adapter::Generic && !self.endpoint.starts_with("http") {
            return Err(DiffusionError::InvalidConfig(format!(
                "endpoint `{}` is not an http(s) URL",
                self.endpoint
            )));
        }
        Ok(())
    }

    /// Applies `DIDEX_BACKEND_URL` and `DIDEX_BACKEND_TOKEN` when set.
    pub fn with_env_overrides(mut self) -> Self {
        self.apply_overrides(
            std::env::var(ENV_BACKEND_URL).ok(),
            std::env::var(ENV_BACKEND_TOKEN).ok(),
        );
        self
    }

    fn apply_overrides(&mut self, url: Option<String>, token: Option<String>) {
        if let Some(url) = url.filter(|u| !u.is_empty()) {
            self.endpoint = url;
        }
        if let Some(token) = token.filter(|t| !t.is_empty()) {
            self.token = Some(token);
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionErrorClass {
    Refused,
    Timeout,
    HostNotFound,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub backend: String,
    pub reachable: bool,
    pub latency_ms: f64,
    pub error_class: Option<ConnectionErrorClass>,
    pub detail: Option<String>,
}

/// One adapter to a diffusion service.
pub trait DiffusionBackend: Send + Sync {
    fn id(&self) -> String;

    /// Generates one image; adapters own their retry policy.
    fn generate(&self, request: &GenerationRequest) -> Result<RasterImage, DiffusionError>;

    fn health_check(&self) -> HealthReport;
}

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Limiter { available: Mutex::new(permits), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("limiter poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Thread-safe entry point for generation.
pub struct Client {
    backend: Box<dyn DiffusionBackend>,
    limiter: Limiter,
    max_concurrent: usize,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("backend", &self.backend.id()).finish()
    }
}

impl Client {
    pub fn new(config: &BackendConfig) -> Result<Self, DiffusionError> {
        config.validate()?;
        let backend: Box<dyn DiffusionBackend> = match config.adapter {
            Adapter::Mock => Box::new(MockBackend),
            Adapter::Generic => Box::new(HttpBackend::new(config)?),
        };
        Ok(Self::with_backend(backend, config.max_concurrent))
    }

    pub fn with_backend(backend: Box<dyn DiffusionBackend>, max_concurrent: usize) -> Self {
        let max_concurrent = max_concurrent.max(1);
        Client { backend, limiter: Limiter::new(max_concurrent), max_concurrent }
    }

    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<RasterImage, DiffusionError> {
        request.validate()?;
        let _permit = self.limiter.acquire();
        let image = self.backend.generate(request)?;
        if image.dimensions() != request.output_size {
            return Err(DiffusionError::Protocol {
                message: format!(
                    "expected a {:?} image, backend returned {:?}",
                    request.output_size,
                    image.dimensions()
                ),
                excerpt: String::new(),
            });
        }
        Ok(image)
    }

    pub fn health_check(&self) -> HealthReport {
        self.backend.health_check()
    }
}

/// One-shot generation against the configured backend.
pub fn generate(request: &GenerationRequest, config: &BackendConfig) -> Result<RasterImage, DiffusionError> {
    Client::new(config)?.generate(request)
}

pub fn health_check(config: &BackendConfig) -> Result<HealthReport, DiffusionError> {
    Ok(Client::new(config)?.health_check())
}

/// Runs `attempt` until it succeeds, fails with a non-retryable error, or
/// `max_retries` retries are spent. Delays grow as `base * 2^k`.
pub(crate) fn with_retries<T>(
    max_retries: u32,
    base: Duration,
    mut attempt: impl FnMut() -> Result<T, DiffusionError>,
) -> Result<T, DiffusionError> {
    let mut tries = 0;
    loop {
        tries += 1;
        match attempt() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && tries <= max_retries => {
                let delay = base.mul_f64(f64::from(2u32.saturating_pow(tries - 1)));
                log::warn!("backend attempt {tries} failed ({e}); retrying in {delay:?}");
                std::thread::sleep(delay);
            }
            Err(DiffusionError::Timeout { .. }) => return Err(DiffusionError::Timeout { attempts: tries }),
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn request_validation() {
        let img = RasterImage::filled(4, 4, [1, 2, 3]);
        let ok = GenerationRequest::new(img.clone(), "p", 1);
        assert!(ok.validate().is_ok());
        assert_eq!((ok.strength, ok.steps, ok.guidance), (0.75, 50, 7.5));
        for bad in [
            GenerationRequest { strength: 0.0, ..ok.clone() },
            GenerationRequest { strength: 1.5, ..ok.clone() },
            GenerationRequest { steps: 0, ..ok.clone() },
            GenerationRequest { guidance: 0.0, ..ok.clone() },
            GenerationRequest { output_size: (0, 4), ..ok.clone() },
            GenerationRequest { constraint: Constraint::Depth(RasterImage::filled(2, 2, [0; 3])), ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(DiffusionError::InvalidRequest(_))), "{bad:?}");
        }
        assert!(GenerationRequest { strength: 1.0, ..ok }.validate().is_ok());
    }

    #[test]
    fn config_validation_and_env_overrides() {
        assert!(BackendConfig::default().validate().is_ok());
        assert!(BackendConfig { max_concurrent: 0, ..BackendConfig::mock() }.validate().is_err());
        assert!(BackendConfig { timeout_secs: 0.0, ..BackendConfig::mock() }.validate().is_err());
        assert!(BackendConfig { endpoint: "ftp://x".into(), ..BackendConfig::default() }.validate().is_err());

        let mut c = BackendConfig::default();
        c.apply_overrides(Some("http://example.test:1/gen".into()), Some("secret".into()));
        assert_eq!(c.endpoint, "http://example.test:1/gen");
        assert_eq!(c.token.as_deref(), Some("secret"));
        c.apply_overrides(Some(String::new()), None);
        assert_eq!(c.endpoint, "http://example.test:1/gen");
    }

    #[test]
    fn retries_only_timeouts_and_server_errors() {
        let calls = AtomicU32::new(0);
        let r: Result<(), _> = with_retries(3, Duration::ZERO, || {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(DiffusionError::Rejected { status: 400, message: "bad".into() })
        });
        assert!(matches!(r, Err(DiffusionError::Rejected { status: 400, .. })));
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        calls.store(0, Ordering::SeqCst);
        let r: Result<(), _> = with_retries(2, Duration::ZERO, || {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(DiffusionError::Timeout { attempts: 1 })
        });
        assert!(matches!(r, Err(DiffusionError::Timeout { attempts: 3 })));
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        calls.store(0, Ordering::SeqCst);
        let r = with_retries(3, Duration::ZERO, || {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(DiffusionError::Rejected { status: 503, message: "busy".into() })
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);
    }

    #[test]
    fn retry_delays_double() {
        let start = std::time::Instant::now();
        let _: Result<(), _> = with_retries(2, Duration::from_millis(20), || Err(DiffusionError::Timeout { attempts: 1 }));
        // 20ms + 40ms
        assert!(start.elapsed() >= Duration::from_millis(60));
    }

    struct Slow {
        in_flight: Arc<AtomicUsize>,
        peak: Arc<AtomicUsize>,
    }

    impl DiffusionBackend for Slow {
        fn id(&self) -> String {
            "slow".into()
        }
        fn generate(&self, request: &GenerationRequest) -> Result<RasterImage, DiffusionError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(15));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(request.source_image.clone())
        }
        fn health_check(&self) -> HealthReport {
            unreachable!()
        }
    }

    #[test]
    fn client_bounds_concurrency() {
        let peak = Arc::new(AtomicUsize::new(0));
        let client = Client::with_backend(
            Box::new(Slow { in_flight: Arc::new(AtomicUsize::new(0)), peak: peak.clone() }),
            2,
        );
        let req = GenerationRequest::new(RasterImage::filled(2, 2, [0; 3]), "p", 0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| client.generate(&req).unwrap());
            }
        });
        assert_eq!(peak.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn mock_health() {
        let report = health_check(&BackendConfig::mock()).unwrap();
        assert!(report.reachable);
        assert!(report.latency_ms < 1.0);
    }
}
