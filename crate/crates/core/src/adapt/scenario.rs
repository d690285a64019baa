//! Committed experiments, their on-disk form and the results table.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{adapt, evaluate_toy, gen_toy_dataset, style_shift, train_source_only, AdaptConfig, AdaptError, ToyDomainSpec, Trained};
use crate::dataset::{subsample_order, DatasetDescriptor, DatasetRole};
use crate::label::{LabelMap, RasterImage};
use crate::seed;

/// The color-shift scenario used by the acceptance suite.
pub const COLOR_SHIFT_SCENARIO: &str = include_str!("../../scenarios/color_shift.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Root seed; data, shifts and training seeds are derived from it.
    pub seed: u64,
    pub domain: ToyDomainSpec,
    pub n_source: usize,
    /// Unlabeled shifted images available to adaptation.
    pub n_target: usize,
    /// Labeled shifted images held out for evaluation.
    pub n_test: usize,
    #[serde(default)]
    pub config: AdaptConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, AdaptError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.domain.validate()?;
        s.config.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, AdaptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AdaptError::Results { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn color_shift() -> Self {
        Self::from_json(COLOR_SHIFT_SCENARIO).expect("committed scenario is valid")
    }

    /// Training config with its seed derived from the scenario root.
    pub fn training_config(&self) -> AdaptConfig {
        AdaptConfig { seed: seed::derive(self.seed, "training"), ..self.config.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub seed: u64,
    pub source_only_miou: f64,
    pub adapted_miou: f64,
}

impl ScenarioResult {
    pub fn gain(&self) -> f64 {
        self.adapted_miou - self.source_only_miou
    }
}

/// Materialized scenario data. Target labels exist only so they can be
/// written next to the target images; adaptation never receives them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub source_images: Vec<RasterImage>,
    pub source_labels: Vec<LabelMap>,
    pub target_images: Vec<RasterImage>,
    pub target_labels: Vec<LabelMap>,
    pub test_images: Vec<RasterImage>,
    pub test_labels: Vec<LabelMap>,
}

impl ScenarioData {
    pub fn build(s: &Scenario) -> Result<Self, AdaptError> {
        let source = gen_toy_dataset(&s.domain, s.n_source, seed::derive(s.seed, "toy/source"))?;
        let target = gen_toy_dataset(&s.domain, s.n_target, seed::derive(s.seed, "toy/target"))?;
        let test = gen_toy_dataset(&s.domain, s.n_test, seed::derive(s.seed, "toy/test"))?;
        Ok(ScenarioData {
            source_images: source.images,
            source_labels: source.labels,
            target_images: style_shift(&target.images, &s.domain.shift, seed::derive(s.seed, "shift/target")),
            target_labels: target.labels,
            test_images: style_shift(&test.images, &s.domain.shift, seed::derive(s.seed, "shift/test")),
            test_labels: test.labels,
        })
    }

    /// Keeps the first `k` target images of a seeded permutation, so smaller
    /// target sets are contained in larger ones.
    pub fn with_target_count(mut self, k: usize, seed: u64) -> Result<Self, AdaptError> {
        let n = self.target_images.len();
        if k == 0 || k > n {
            return Err(AdaptError::InvalidConfig(format!("target count {k} outside 1..={n}")));
        }
        let mut keep = subsample_order(n, seed)[..k].to_vec();
        keep.sort_unstable();
        self.target_images = keep.iter().map(|&i| self.target_images[i].clone()).collect();
        self.target_labels = keep.iter().map(|&i| self.target_labels[i].clone()).collect();
        Ok(self)
    }
}

/// Source-only training and adaptation, both scored on the held-out shifted test set.
pub fn run_scenario(s: &Scenario, data: &ScenarioData) -> Result<(ScenarioResult, Trained, Trained), AdaptError> {
    let config = s.training_config();
    let classes = s.domain.classes.len();
    let catalog = s.domain.catalog();
    let source_only = train_source_only(&data.source_images, &data.source_labels, classes, &config)?;
    let adapted = adapt(&data.source_images, &data.source_labels, &data.target_images, classes, &config)?;
    let result = ScenarioResult {
        scenario: s.name.clone(),
        seed: s.seed,
        source_only_miou: evaluate_toy(&source_only.model, &data.test_images, &data.test_labels, &catalog)?,
        adapted_miou: evaluate_toy(&adapted.model, &data.test_images, &data.test_labels, &catalog)?,
    };
    Ok((result, source_only, adapted))
}

/// Records every dataset file the harness opens.
#[derive(Debug, Default)]
pub struct AccessLog {
    opened: Mutex<Vec<PathBuf>>,
}

impl AccessLog {
    pub fn record(&self, path: &Path) {
        self.opened.lock().expect("access log poisoned").push(path.to_path_buf());
    }

    pub fn opened(&self) -> Vec<PathBuf> {
        self.opened.lock().expect("access log poisoned").clone()
    }

    pub fn touched_under(&self, dir: &Path) -> bool {
        self.opened().iter().any(|p| p.starts_with(dir))
    }
}

pub fn load_labeled(
    dataset: &DatasetDescriptor,
    log: &AccessLog,
) -> Result<(Vec<RasterImage>, Vec<LabelMap>), AdaptError> {
    let mut images = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    for id in &dataset.ids {
        log.record(&dataset.image_path(id));
        images.push(dataset.load_image(id)?);
        if let Some(p) = dataset.label_path(id) {
            log.record(&p);
        }
        labels.push(dataset.load_label(id)?);
    }
    Ok((images, labels))
}

/// Images only; label files are never touched, whatever the dataset role.
pub fn load_unlabeled(dataset: &DatasetDescriptor, log: &AccessLog) -> Result<Vec<RasterImage>, AdaptError> {
    dataset
        .ids
        .iter()
        .map(|id| {
            log.record(&dataset.image_path(id));
            Ok(dataset.load_image(id)?)
        })
        .collect()
}

/// Adapts from a labeled source dataset to the images of any target dataset,
/// for example a pseudo-target dataset written by an extension run.
pub fn adapt_datasets(
    source: &DatasetDescriptor,
    target: &DatasetDescriptor,
    config: &AdaptConfig,
    log: &AccessLog,
) -> Result<Trained, AdaptError> {
    let (images, labels) = load_labeled(source, log)?;
    let target_images = load_unlabeled(target, log)?;
    adapt(&images, &labels, &target_images, source.catalog.len(), config)
}

#[derive(Debug, Clone)]
pub struct ScenarioDatasets {
    pub source: DatasetDescriptor,
    /// Written with labels, which adaptation must not read.
    pub target: DatasetDescriptor,
    pub test: DatasetDescriptor,
}

/// Writes the scenario's source, target and test sets under `root`.
pub fn materialize_scenario(s: &Scenario, data: &ScenarioData, root: &Path) -> Result<ScenarioDatasets, AdaptError> {
    let catalog = s.domain.catalog();
    let write = |name: &str, role, images: &[RasterImage], labels: &[LabelMap]| {
        let samples: Vec<_> = images
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (img, lbl))| (format!("{name}{i:04}"), img.clone(), Some(lbl.clone())))
            .collect();
        DatasetDescriptor::write_samples(&root.join(name), role, catalog.clone(), &samples)
    };
    Ok(ScenarioDatasets {
        source: write("source", DatasetRole::Source, &data.source_images, &data.source_labels)?,
        target: write("target", DatasetRole::TargetVal, &data.target_images, &data.target_labels)?,
        test: write("test", DatasetRole::TargetVal, &data.test_images, &data.test_labels)?,
    })
}

/// [`run_scenario`] through files on disk, logging every file opened.
pub fn run_scenario_on_disk(
    s: &Scenario,
    sets: &ScenarioDatasets,
    log: &AccessLog,
) -> Result<ScenarioResult, AdaptError> {
    let config = s.training_config();
    let (src_images, src_labels) = load_labeled(&sets.source, log)?;
    let (test_images, test_labels) = load_labeled(&sets.test, log)?;
    let catalog = &sets.source.catalog;
    let source_only = train_source_only(&src_images, &src_labels, catalog.len(), &config)?;
    let adapted = adapt_datasets(&sets.source, &sets.target, &config, log)?;
    Ok(ScenarioResult {
        scenario: s.name.clone(),
        seed: s.seed,
        source_only_miou: evaluate_toy(&source_only.model, &test_images, &test_labels, catalog)?,
        adapted_miou: evaluate_toy(&adapted.model, &test_images, &test_labels, catalog)?,
    })
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append_results(path: &Path, rows: &[ScenarioResult]) -> Result<(), AdaptError> {
    let err = |message: String| AdaptError::Results { path: path.to_path_buf(), message };
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| err(e.to_string()))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

pub fn read_results(path: &Path) -> Result<Vec<ScenarioResult>, AdaptError> {
    let err = |message: String| AdaptError::Results { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| err(e.to_string()))).collect()
}
