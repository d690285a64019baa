//! Synthetic street-scene stand-in: colored shapes on a background class.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AdaptError;
use crate::label::{ClassCatalog, ClassId, LabelMap, RasterImage, DEFAULT_IGNORE_INDEX};
use crate::{par, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rect,
    Disk,
}

/// `count` shapes of one class per image; `size` is the side length of a
/// rectangle edge or the radius of a disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub class: ClassId,
    pub kind: ShapeKind,
    pub count: u32,
    pub min_size: u32,
    pub max_size: u32,
}

/// Per-pixel color transform applied in this order: hue, contrast, offset, noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleShift {
    pub hue_degrees: f64,
    /// Scales deviations from mid-gray (128).
    pub contrast: f64,
    pub offset: [f64; 3],
    pub noise_sd: f64,
}

impl Default for StyleShift {
    fn default() -> Self {
        StyleShift { hue_degrees: 0.0, contrast: 1.0, offset: [0.0; 3], noise_sd: 0.0 }
    }
}

impl StyleShift {
    pub fn is_identity(&self) -> bool {
        *self == StyleShift::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDomainSpec {
    pub width: u32,
    pub height: u32,
    /// Class 0 is the background.
    pub classes: Vec<String>,
    pub palette: Vec<[u8; 3]>,
    pub shapes: Vec<ShapeSpec>,
    #[serde(default)]
    pub source_noise_sd: f64,
    /// Turns the source domain into the shifted one.
    #[serde(default)]
    pub shift: StyleShift,
}

impl ToyDomainSpec {
    pub fn validate(&self) -> Result<(), AdaptError> {
        let bad = |m: String| Err(AdaptError::InvalidSpec(m));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if self.classes.len() < 2 {
            return bad("need a background and at least one shape class".into());
        }
        if self.palette.len() != self.classes.len() {
            return bad(format!("{} palette colors for {} classes", self.palette.len(), self.classes.len()));
        }
        for (i, a) in self.palette.iter().enumerate() {
            if self.palette[..i].contains(a) {
                return bad(format!("palette color {a:?} is used twice"));
            }
        }
        let side = self.width.min(self.height);
        for s in &self.shapes {
            if usize::from(s.class) >= self.classes.len() {
                return bad(format!("shape class {} is not in the class list", s.class));
            }
            if s.min_size == 0 || s.min_size > s.max_size {
                return bad(format!("shape sizes {}..={} are invalid", s.min_size, s.max_size));
            }
            let extent = match s.kind {
                ShapeKind::Rect => s.max_size,
                ShapeKind::Disk => 2 * s.max_size,
            };
            if extent > side {
                return bad(format!("{:?} of size {} does not fit a {}x{} image", s.kind, s.max_size, self.width, self.height));
            }
        }
        if !(self.source_noise_sd >= 0.0 && self.shift.noise_sd >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        Ok(())
    }

    pub fn catalog(&self) -> ClassCatalog {
        let n = self.classes.len() as ClassId;
        ClassCatalog::new(self.classes.clone(), 0..n, DEFAULT_IGNORE_INDEX).expect("validated class list")
    }
}

/// A shape as drawn: top-left corner and size for rectangles, center and radius for disks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub class: ClassId,
    pub kind: ShapeKind,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PlacedShape {
    fn contains(&self, px: u32, py: u32) -> bool {
        match self.kind {
            ShapeKind::Rect => {
                (self.x..self.x + self.width).contains(&px) && (self.y..self.y + self.height).contains(&py)
            }
            ShapeKind::Disk => {
                let r = f64::from(self.width);
                let dx = f64::from(px) + 0.5 - f64::from(self.x);
                let dy = f64::from(py) + 0.5 - f64::from(self.y);
                dx * dx + dy * dy <= r * r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToyDataset {
    pub images: Vec<RasterImage>,
    pub labels: Vec<LabelMap>,
    /// Shapes per image in drawing order; later shapes cover earlier ones.
    pub shapes: Vec<Vec<PlacedShape>>,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Renders `n` source-domain images; labels are written by the same pass.
pub fn gen_toy_dataset(spec: &ToyDomainSpec, n: usize, seed: u64) -> Result<ToyDataset, AdaptError> {
    spec.validate()?;
    if n == 0 {
        return Err(AdaptError::EmptyDataset("toy dataset size must be at least 1"));
    }
    let samples = par::map_range(n, |i| render(spec, seed::derive_indexed(seed, "toy-image", i as u64)));
    let mut out = ToyDataset::default();
    for (image, label, shapes) in samples {
        out.images.push(image);
        out.labels.push(label);
        out.shapes.push(shapes);
    }
    Ok(out)
}

fn render(spec: &ToyDomainSpec, seed: u64) -> (RasterImage, LabelMap, Vec<PlacedShape>) {
    let (w, h) = (spec.width, spec.height);
    let mut rng = seed::rng(seed);
    let mut shapes = Vec::new();
    for s in &spec.shapes {
        for _ in 0..s.count {
            let placed = match s.kind {
                ShapeKind::Rect => {
                    let sw = rng.gen_range(s.min_size..=s.max_size);
                    let sh = rng.gen_range(s.min_size..=s.max_size);
                    let x = rng.gen_range(0..=w - sw);
                    let y = rng.gen_range(0..=h - sh);
                    PlacedShape { class: s.class, kind: s.kind, x, y, width: sw, height: sh }
                }
                ShapeKind::Disk => {
                    let r = rng.gen_range(s.min_size..=s.max_size);
                    let x = rng.gen_range(r..=w - r);
                    let y = rng.gen_range(r..=h - r);
                    PlacedShape { class: s.class, kind: s.kind, x, y, width: r, height: r }
                }
            };
            shapes.push(placed);
        }
    }
    let mut label = LabelMap::filled(w, h, 0);
    for shape in &shapes {
        for y in 0..h {
            for x in 0..w {
                if shape.contains(x, y) {
                    label.set(x, y, shape.class);
                }
            }
        }
    }
    let noise = (spec.source_noise_sd > 0.0).then(|| Normal::new(0.0, spec.source_noise_sd).expect("sd checked"));
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for &class in label.data() {
        let color = spec.palette[usize::from(class)];
        for c in color {
            let v = f64::from(c) + noise.map_or(0.0, |n| n.sample(&mut rng));
            data.push(quantize(v));
        }
    }
    (RasterImage::new(w, h, data).expect("sized buffer"), label, shapes)
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Applies `shift` to every image; geometry, and hence labels, is untouched.
pub fn style_shift(images: &[RasterImage], shift: &StyleShift, seed: u64) -> Vec<RasterImage> {
    let indexed: Vec<(usize, &RasterImage)> = images.iter().enumerate().collect();
    par::map(&indexed, |&(i, img)| shift_one(img, shift, seed::derive_indexed(seed, "style-shift", i as u64)))
}

fn shift_one(image: &RasterImage, shift: &StyleShift, seed: u64) -> RasterImage {
    let mut rng = seed::rng(seed);
    let noise = (shift.noise_sd > 0.0).then(|| Normal::new(0.0, shift.noise_sd).expect("sd checked"));
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let mut rgb = [f64::from(px[0]), f64::from(px[1]), f64::from(px[2])];
        if shift.hue_degrees != 0.0 {
            rgb = rotate_hue(rgb, shift.hue_degrees);
        }
        for (c, v) in rgb.iter_mut().enumerate() {
            *v = 128.0 + shift.contrast * (*v - 128.0) + shift.offset[c];
            if let Some(n) = noise {
                *v += n.sample(&mut rng);
            }
        }
        for c in 0..3 {
            px[c] = quantize(rgb[c]);
        }
    }
    out
}

/// Rotates the HSV hue of an RGB color given on a 0..=255 scale.
fn rotate_hue(rgb: [f64; 3], degrees: f64) -> [f64; 3] {
    let [r, g, b] = rgb.map(|v| v / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return rgb;
    }
    let hue = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = (hue + degrees).rem_euclid(360.0) / 60.0;
    let (v, s) = (max, delta / max);
    let c = v * s;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r1, g1, b1) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r1 + m, g1 + m, b1 + m].map(|v| v * 255.0)
}
