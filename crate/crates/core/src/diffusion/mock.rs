use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{DiffusionBackend, DiffusionError, GenerationRequest, HealthReport};
use crate::label::RasterImage;

/// Deterministic stand-in for a diffusion service.
///
/// Output is the source image with seeded per-pixel jitter, blended by
/// `strength` with a color field derived from a hash of every request field.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

const JITTER: i32 = 12;

impl MockBackend {
    fn digest(request: &GenerationRequest) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"didex-mock/1");
        let field = |h: &mut Sha256, bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        let (sw, sh) = request.source_image.dimensions();
        h.update(sw.to_le_bytes());
        h.update(sh.to_le_bytes());
        field(&mut h, request.source_image.data());
        field(&mut h, request.prompt.as_bytes());
        match &request.negative_prompt {
            Some(n) => field(&mut h, n.as_bytes()),
            None => h.update([0xff]),
        }
        field(&mut h, request.constraint.kind().as_str().as_bytes());
        if let Some(p) = request.constraint.payload() {
            field(&mut h, p.data());
        }
        h.update(request.strength.to_le_bytes());
        h.update(request.steps.to_le_bytes());
        h.update(request.guidance.to_le_bytes());
        h.update(request.seed.to_le_bytes());
        h.update(request.output_size.0.to_le_bytes());
        h.update(request.output_size.1.to_le_bytes());
        h.finalize().into()
    }

    pub fn render(request: &GenerationRequest) -> RasterImage {
        let digest = Self::digest(request);
        let mut rng = ChaCha8Rng::from_seed(digest);
        let from = [digest[0], digest[1], digest[2]].map(f64::from);
        let to = [digest[3], digest[4], digest[5]].map(f64::from);

        let src = &request.source_image;
        let (sw, sh) = src.dimensions();
        let (ow, oh) = request.output_size;
        let span = f64::from(ow + oh - 2).max(1.0);
        let s = request.strength;
        let mut data = Vec::with_capacity(ow as usize * oh as usize * 3);
        for y in 0..oh {
            for x in 0..ow {
                let sx = (u64::from(x) * u64::from(sw) / u64::from(ow)) as u32;
                let sy = (u64::from(y) * u64::from(sh) / u64::from(oh)) as u32;
                let px = src.pixel(sx, sy);
                let t = f64::from(x + y) / span;
                for c in 0..3 {
                    let jittered = (i32::from(px[c]) + rng.gen_range(-JITTER..=JITTER)).clamp(0, 255);
                    let field = from[c] + (to[c] - from[c]) * t;
                    let v = (1.0 - s) * f64::from(jittered) + s * field;
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        RasterImage::new(ow, oh, data).expect("output buffer matches output size")
    }
}

impl DiffusionBackend for MockBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RasterImage, DiffusionError> {
        request.validate()?;
        Ok(Self::render(request))
    }

    fn health_check(&self) -> HealthReport {
        HealthReport {
            backend: self.id(),
            reachable: true,
            latency_ms: 0.0,
            error_class: None,
            detail: None,
        }
    }
}
