//! Per-pixel linear softmax classifier.

use serde::{Deserialize, Serialize};

use super::AdaptError;
use crate::label::{ClassId, LabelMap, RasterImage};

/// Normalized RGB and normalized (row, col).
pub const FEATURES: usize = 5;
const STRIDE: usize = FEATURES + 1;

pub type PixelFeatures = [f64; FEATURES];

/// Features of every pixel in row-major order; all components lie in [0, 1].
pub fn pixel_features(image: &RasterImage) -> Vec<PixelFeatures> {
    let (w, h) = image.dimensions();
    let norm = |v: u32, n: u32| if n > 1 { f64::from(v) / f64::from(n - 1) } else { 0.0 };
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = image.pixel(x, y);
            out.push([
                f64::from(r) / 255.0,
                f64::from(g) / 255.0,
                f64::from(b) / 255.0,
                norm(y, h),
                norm(x, w),
            ]);
        }
    }
    out
}

/// `classes` rows of `FEATURES` weights followed by a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    classes: usize,
    weights: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(classes: usize) -> Self {
        ToyModel { classes, weights: vec![0.0; classes * STRIDE] }
    }

    pub fn from_weights(classes: usize, weights: Vec<f64>) -> Result<Self, AdaptError> {
        if classes == 0 || weights.len() != classes * STRIDE {
            return Err(AdaptError::ShapeMismatch { expected: classes * STRIDE, found: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(AdaptError::InvalidConfig("model weights must be finite".into()));
        }
        Ok(ToyModel { classes, weights })
    }

    /// Nearest-palette-color classifier: `w = 2c`, `b = -|c|^2`, positions ignored.
    pub fn from_palette(palette: &[[u8; 3]]) -> Self {
        let mut m = ToyModel::zeros(palette.len());
        for (s, color) in palette.iter().enumerate() {
            let c = color.map(|v| f64::from(v) / 255.0);
            let row = &mut m.weights[s * STRIDE..(s + 1) * STRIDE];
            for k in 0..3 {
                row[k] = 2.0 * c[k];
            }
            row[FEATURES] = -c.iter().map(|v| v * v).sum::<f64>();
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn logits_into(&self, x: &PixelFeatures, out: &mut [f64]) {
        for (s, z) in out.iter_mut().enumerate().take(self.classes) {
            let row = &self.weights[s * STRIDE..(s + 1) * STRIDE];
            *z = row[FEATURES] + row[..FEATURES].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn posteriors_of(&self, x: &PixelFeatures) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        self.logits_into(x, &mut p);
        softmax_in_place(&mut p);
        p
    }

    /// Posteriors of every pixel, `classes` values per pixel.
    pub fn posteriors(&self, image: &RasterImage) -> Vec<f64> {
        pixel_features(image).iter().flat_map(|x| self.posteriors_of(x)).collect()
    }

    pub fn predict(&self, image: &RasterImage) -> LabelMap {
        let data = pixel_features(image).iter().map(|x| argmax(&self.posteriors_of(x)).0).collect();
        LabelMap::from_raw(image.width(), image.height(), data).expect("one prediction per pixel")
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// First index of the maximum and the maximum itself.
fn argmax(p: &[f64]) -> (ClassId, f64) {
    let mut best = (0, p[0]);
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i as ClassId, v);
        }
    }
    best
}

/// Supervision for one gradient step: pixels with label, per-pixel mask.
///
/// A pixel contributes iff its mask is set and its label is a model class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub features: Vec<PixelFeatures>,
    pub labels: Vec<ClassId>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn push_image(&mut self, image: &RasterImage, label: &LabelMap, mask: Option<&[bool]>) {
        self.push_features(&pixel_features(image), label.data(), mask);
    }

    pub fn push_features(&mut self, features: &[PixelFeatures], labels: &[ClassId], mask: Option<&[bool]>) {
        debug_assert_eq!(features.len(), labels.len());
        self.features.extend_from_slice(features);
        self.labels.extend_from_slice(labels);
        match mask {
            Some(m) => self.mask.extend_from_slice(m),
            None => self.mask.extend(std::iter::repeat_n(true, labels.len())),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean cross-entropy over contributing pixels; 0 when none contribute.
pub fn masked_loss(model: &ToyModel, batch: &Batch) -> f64 {
    let mut z = vec![0.0; model.classes];
    let (mut total, mut count) = (0.0, 0usize);
    for ((x, &y), &m) in batch.features.iter().zip(&batch.labels).zip(&batch.mask) {
        if !m || usize::from(y) >= model.classes {
            continue;
        }
        model.logits_into(x, &mut z);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[usize::from(y)];
        count += 1;
    }
    if count == 0 { 0.0 } else { total / count as f64 }
}

/// [`masked_loss`] and its gradient with respect to the weights.
pub fn masked_loss_grad(model: &ToyModel, batch: &Batch) -> (f64, Vec<f64>) {
    let s_count = model.classes;
    let mut grad = vec![0.0; model.weights.len()];
    let mut p = vec![0.0; s_count];
    let (mut total, mut count) = (0.0, 0usize);
    for ((x, &y), &m) in batch.features.iter().zip(&batch.labels).zip(&batch.mask) {
        let y = usize::from(y);
        if !m || y >= s_count {
            continue;
        }
        model.logits_into(x, &mut p);
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - p[y];
        count += 1;
        for (s, v) in p.iter_mut().enumerate() {
            // dL/dz_s = p_s - [s == y]
            *v = (*v - lse).exp() - if s == y { 1.0 } else { 0.0 };
            let row = &mut grad[s * STRIDE..(s + 1) * STRIDE];
            for k in 0..FEATURES {
                row[k] += *v * x[k];
            }
            row[FEATURES] += *v;
        }
    }
    if count == 0 {
        return (0.0, grad);
    }
    let n = count as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (total / n, grad)
}

/// Argmax labels and a mask of pixels whose top posterior reaches `threshold`.
pub fn pseudo_label(teacher: &ToyModel, image: &RasterImage, threshold: f64) -> (LabelMap, Vec<bool>) {
    let feats = pixel_features(image);
    let mut labels = Vec::with_capacity(feats.len());
    let mut mask = Vec::with_capacity(feats.len());
    for x in &feats {
        let (class, p) = argmax(&teacher.posteriors_of(x));
        labels.push(class);
        mask.push(p >= threshold);
    }
    (LabelMap::from_raw(image.width(), image.height(), labels).expect("one label per pixel"), mask)
}
