//! Toy generalization-by-adaptation harness.
//!
//! A per-pixel linear softmax model is trained on a labeled synthetic source
//! domain, then adapted to unlabeled images of a color-shifted domain by
//! self-training: an EMA teacher pseudo-labels target images, confident
//! pseudo-labels are kept, and source classes are pasted onto target images
//! (ClassMix) for the student's second step of every iteration.

mod mix;
mod model;
mod scenario;
mod toy;

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::eval::{accumulate_pairs, EvalError};
use crate::label::{ClassCatalog, ClassId, LabelMap, RasterImage};
use crate::{par, seed};

pub use mix::{class_mix, ema_update};
pub use model::{
    masked_loss, masked_loss_grad, pixel_features, pseudo_label, Batch, PixelFeatures, ToyModel, FEATURES,
};
pub use scenario::{
    adapt_datasets, append_results, load_labeled, load_unlabeled, materialize_scenario, read_results,
    run_scenario, run_scenario_on_disk, AccessLog, Scenario, ScenarioData, ScenarioDatasets, ScenarioResult,
    COLOR_SHIFT_SCENARIO,
};
pub use toy::{gen_toy_dataset, style_shift, PlacedShape, ShapeKind, ShapeSpec, StyleShift, ToyDataset, ToyDomainSpec};

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("invalid toy domain: {0}")]
    InvalidSpec(String),
    #[error("invalid adaptation config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    EmptyDataset(&'static str),
    #[error("expected {expected:?} images, found {found:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("expected {expected} weights, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("{phase} diverged at epoch {epoch}, step {step}: loss {loss}, largest |weight| {max_weight}")]
    Diverged { phase: &'static str, epoch: usize, step: usize, loss: f64, max_weight: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {message}")]
    Results { path: PathBuf, message: String },
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
}

impl AdaptError {
    pub fn is_environment(&self) -> bool {
        match self {
            AdaptError::Dataset(e) => e.is_environment(),
            AdaptError::Results { .. } => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Images per step.
    pub batch_size: usize,
    pub ema_alpha: f64,
    pub confidence_threshold: f64,
    /// Fraction of the source image's classes pasted by ClassMix.
    pub mix_ratio: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            learning_rate: 1.0,
            epochs: 20,
            batch_size: 4,
            ema_alpha: 0.99,
            confidence_threshold: 0.968,
            mix_ratio: 0.5,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), AdaptError> {
        let bad = |m: &str| Err(AdaptError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return bad("ema_alpha must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad("confidence_threshold must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad("mix_ratio must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A trained model and the loss of every step, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: ToyModel,
    pub losses: Vec<f64>,
}

fn check_labeled(images: &[RasterImage], labels: &[LabelMap]) -> Result<(), AdaptError> {
    if images.is_empty() {
        return Err(AdaptError::EmptyDataset("the labeled set is empty"));
    }
    if images.len() != labels.len() {
        return Err(AdaptError::InvalidConfig(format!("{} images but {} labels", images.len(), labels.len())));
    }
    for (img, lbl) in images.iter().zip(labels) {
        if img.dimensions() != lbl.dimensions() {
            return Err(AdaptError::DimensionMismatch { expected: img.dimensions(), found: lbl.dimensions() });
        }
    }
    Ok(())
}

fn step(
    model: &mut ToyModel,
    batch: &Batch,
    lr: f64,
    phase: &'static str,
    epoch: usize,
    step: usize,
) -> Result<f64, AdaptError> {
    let (loss, grad) = masked_loss_grad(model, batch);
    for (w, g) in model.weights_mut().iter_mut().zip(&grad) {
        *w -= lr * g;
    }
    if !loss.is_finite() || !model.is_finite() {
        let max_weight = model.weights().iter().fold(0.0f64, |m, w| m.max(w.abs()));
        return Err(AdaptError::Diverged { phase, epoch, step, loss, max_weight });
    }
    Ok(loss)
}

/// Mini-batch gradient descent on the per-pixel cross-entropy, from zero weights.
pub fn train_source_only(
    images: &[RasterImage],
    labels: &[LabelMap],
    classes: usize,
    config: &AdaptConfig,
) -> Result<Trained, AdaptError> {
    config.validate()?;
    check_labeled(images, labels)?;
    let feats: Vec<Vec<PixelFeatures>> = par::map(images, pixel_features);
    let mut rng = seed::rng(seed::derive(config.seed, "source-only/order"));
    let mut model = ToyModel::zeros(classes);
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (k, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = Batch::default();
            for &i in chunk {
                batch.push_features(&feats[i], labels[i].data(), None);
            }
            losses.push(step(&mut model, &batch, config.learning_rate, "source-only training", epoch, k)?);
        }
    }
    Ok(Trained { model, losses })
}

/// Self-training with an EMA teacher and ClassMix; returns the teacher.
///
/// Each step takes one supervised step on a source batch, then one step on
/// the same source images class-mixed onto random target images, with
/// target pixels supervised by confident teacher pseudo-labels only.
pub fn adapt(
    source_images: &[RasterImage],
    source_labels: &[LabelMap],
    target_images: &[RasterImage],
    classes: usize,
    config: &AdaptConfig,
) -> Result<Trained, AdaptError> {
    config.validate()?;
    check_labeled(source_images, source_labels)?;
    if target_images.is_empty() {
        return Err(AdaptError::EmptyDataset("the target set is empty"));
    }
    let feats: Vec<Vec<PixelFeatures>> = par::map(source_images, pixel_features);
    let present: Vec<Vec<ClassId>> = source_labels
        .iter()
        .map(|l| {
            let set: BTreeSet<ClassId> = l.data().iter().copied().filter(|&c| usize::from(c) < classes).collect();
            set.into_iter().collect()
        })
        .collect();
    let mut rng = seed::rng(seed::derive(config.seed, "adapt/order"));
    let mut student = ToyModel::zeros(classes);
    let mut teacher = student.clone();
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..source_images.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (k, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = Batch::default();
            for &i in chunk {
                batch.push_features(&feats[i], source_labels[i].data(), None);
            }
            losses.push(step(&mut student, &batch, config.learning_rate, "adaptation (source step)", epoch, k)?);

            let mut mixed = Batch::default();
            for &i in chunk {
                let t = &target_images[rng.gen_range(0..target_images.len())];
                let (pseudo, mask) = pseudo_label(&teacher, t, config.confidence_threshold);
                let take = (present[i].len() as f64 * config.mix_ratio).round() as usize;
                let subset: BTreeSet<ClassId> = present[i].choose_multiple(&mut rng, take).copied().collect();
                let (img, lbl, m) = class_mix(&source_images[i], &source_labels[i], t, &pseudo, &mask, &subset)?;
                mixed.push_image(&img, &lbl, Some(&m));
            }
            losses.push(step(&mut student, &mixed, config.learning_rate, "adaptation (mixed step)", epoch, k)?);
            teacher = ema_update(&teacher, &student, config.ema_alpha)?;
        }
    }
    Ok(Trained { model: teacher, losses })
}

/// mIoU of the model's argmax predictions, through the evaluation suite.
pub fn evaluate_toy(
    model: &ToyModel,
    images: &[RasterImage],
    labels: &[LabelMap],
    catalog: &ClassCatalog,
) -> Result<f64, AdaptError> {
    check_labeled(images, labels)?;
    let pairs: Vec<(LabelMap, LabelMap)> =
        par::map(images, |img| model.predict(img)).into_iter().zip(labels.iter().cloned()).collect();
    Ok(accumulate_pairs(catalog, &pairs)?.miou(catalog)?)
}
