//! The domain extension run: one generated image per source image and variant.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Mutex};

use serde::{Deserialize, Serialize};

use super::manifest::now_ms;
use super::{
    checksum, checksum_file, create_dir, read_manifest, write_atomic, DatasetDescriptor, DatasetError,
    DatasetRole, Manifest, ManifestRecord, ManifestWriter, RecordStatus, MANIFEST_FILE,
};
use crate::diffusion::{
    build_edge_constraint, build_segmentation_constraint, cityscapes_palette, load_depth_constraint,
    BackendConfig, Client, Constraint, ConstraintType, GenerationParams, HealthReport, Palette,
};
use crate::label::ClassId;
use crate::prompt::{ordered_present_classes, PromptConfig, PromptGenerator, PromptRecord};
use crate::seed;

pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtensionOptions {
    pub constraint: ConstraintType,
    pub generation: GenerationParams,
    /// Generated images per source image.
    pub variants_per_image: u32,
    /// Largest tolerated fraction of failed generations.
    pub failure_threshold: f64,
    /// Root of the per-image generation seeds.
    pub seed: u64,
    pub edge_low: f64,
    pub edge_high: f64,
    /// Holds `{source_id}.png` depth maps; required for depth constraints.
    pub depth_dir: Option<PathBuf>,
    /// Segmentation constraint colors; Cityscapes colors when unset.
    pub palette: Option<Palette>,
    /// Stop after this many new generations; the rest stays pending for a resume.
    pub max_new_generations: Option<usize>,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        ExtensionOptions {
            constraint: ConstraintType::None,
            generation: GenerationParams::default(),
            variants_per_image: 1,
            failure_threshold: 0.01,
            seed: 0,
            edge_low: 100.0,
            edge_high: 200.0,
            depth_dir: None,
            palette: None,
            max_new_generations: None,
        }
    }
}

impl ExtensionOptions {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Invalid(m.to_string()));
        if self.variants_per_image == 0 {
            return bad("variants_per_image must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad("failure_threshold must lie in [0, 1]");
        }
        if self.constraint == ConstraintType::Edge && !(self.edge_low < self.edge_high) {
            return bad("edge_low must be below edge_high");
        }
        if self.constraint == ConstraintType::Depth && self.depth_dir.is_none() {
            return bad("depth constraints need depth_dir with precomputed depth maps");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExtensionSummary {
    pub dataset: DatasetDescriptor,
    pub manifest_path: PathBuf,
    pub backend: HealthReport,
    pub planned: usize,
    /// Generated by this invocation.
    pub generated: usize,
    /// Valid outputs of an earlier invocation kept as they were.
    pub reused: usize,
    pub failed: usize,
    /// Neither generated nor failed yet.
    pub pending: usize,
    pub failure_threshold: f64,
}

impl ExtensionSummary {
    pub fn failure_rate(&self) -> f64 {
        if self.planned == 0 {
            0.0
        } else {
            self.failed as f64 / self.planned as f64
        }
    }

    pub fn within_threshold(&self) -> bool {
        self.failure_rate() <= self.failure_threshold
    }

    pub fn is_complete(&self) -> bool {
        self.pending == 0
    }
}

#[derive(Debug, Clone)]
struct Job {
    index: u64,
    variant: u32,
    source_id: String,
    output_id: String,
    prompt: PromptRecord,
    seed: u64,
}

impl Job {
    fn output_path(&self) -> PathBuf {
        Path::new(IMAGE_DIR).join(format!("{}.png", self.output_id))
    }
}

/// Runs the extension against the backend described by `backend`.
pub fn run_extension(
    source: &DatasetDescriptor,
    prompt_config: &PromptConfig,
    backend: &BackendConfig,
    options: &ExtensionOptions,
    out_root: &Path,
) -> Result<ExtensionSummary, DatasetError> {
    let client = Client::new(backend)?;
    run_extension_with_client(source, prompt_config, &client, options, out_root)
}

/// Prompts are built strictly in id order (the CUS histogram depends on it);
/// generation fans out to `client.max_concurrent()` workers and a single
/// writer appends manifest records in completion order.
pub fn run_extension_with_client(
    source: &DatasetDescriptor,
    prompt_config: &PromptConfig,
    client: &Client,
    options: &ExtensionOptions,
    out_root: &Path,
) -> Result<ExtensionSummary, DatasetError> {
    options.validate()?;
    if !source.role.has_labels() {
        return Err(DatasetError::Invalid("the source dataset must carry labels".into()));
    }
    source.validate()?;
    let palette = options.palette.clone().unwrap_or_else(cityscapes_palette);
    if options.constraint == ConstraintType::Segmentation && palette.len() < source.catalog.len() {
        return Err(DatasetError::Invalid(format!(
            "palette has {} colors for {} classes",
            palette.len(),
            source.catalog.len()
        )));
    }
    if let (ConstraintType::Depth, Some(dir)) = (options.constraint, &options.depth_dir) {
        if let Some(missing) = source.ids.iter().map(|id| dir.join(format!("{id}.png"))).find(|p| !p.is_file()) {
            return Err(DatasetError::MissingFile(missing));
        }
    }

    let health = client.health_check();
    if !health.reachable {
        return Err(DatasetError::BackendUnreachable {
            backend: health.backend.clone(),
            detail: health.detail.clone().unwrap_or_else(|| format!("{:?}", health.error_class)),
        });
    }
    let backend_id = client.backend_id();

    create_dir(&out_root.join(IMAGE_DIR))?;
    let manifest_path = out_root.join(MANIFEST_FILE);
    let previous = if manifest_path.exists() { read_manifest(&manifest_path)? } else { Manifest::default() };
    let mut writer = ManifestWriter::open(&manifest_path)?;

    let jobs = plan(source, prompt_config, options)?;
    let (reuse, todo): (Vec<&Job>, Vec<&Job>) =
        jobs.iter().partition(|job| reusable(job, &previous, &backend_id, options, out_root));
    let limit = options.max_new_generations.unwrap_or(usize::MAX).min(todo.len());
    log::info!(
        "extension: {} planned, {} reusable, {} to generate now",
        jobs.len(),
        reuse.len(),
        limit
    );

    let ctx = JobContext { source, client, options, out_root, backend_id: &backend_id, palette: &palette };
    let queue = Mutex::new(todo[..limit].iter());
    let abort = AtomicBool::new(false);
    let mut fatal: Option<DatasetError> = None;
    let mut generated = 0;
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..client.max_concurrent().min(limit.max(1)) {
            let tx = tx.clone();
            let (queue, abort, ctx) = (&queue, &abort, &ctx);
            s.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let Some(job) = queue.lock().expect("queue poisoned").next() else { break };
                if tx.send(ctx.run(job)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for outcome in rx {
            let appended = outcome.and_then(|record| {
                writer.append(&record)?;
                Ok(record)
            });
            match appended {
                Ok(record) => {
                    if record.is_ok() {
                        generated += 1;
                    } else {
                        log::warn!("generation {} failed: {:?}", record.output_id, record.status);
                    }
                }
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    fatal.get_or_insert(e);
                }
            }
        }
    });
    drop(writer);
    if let Some(e) = fatal {
        return Err(e);
    }

    let manifest = read_manifest(&manifest_path)?;
    let (mut ids, mut failed, mut pending) = (Vec::new(), 0, 0);
    for job in &jobs {
        match manifest.get(job.index, job.variant).map(|r| &r.status) {
            Some(RecordStatus::Ok) => ids.push(job.output_id.clone()),
            Some(RecordStatus::Failed(_)) => failed += 1,
            None => pending += 1,
        }
    }
    let dataset = DatasetDescriptor {
        root: out_root.to_path_buf(),
        role: DatasetRole::PseudoTarget,
        image_dir: IMAGE_DIR.into(),
        label_dir: None,
        label_suffix: String::new(),
        catalog: source.catalog.clone(),
        ids,
    };
    dataset.save()?;
    Ok(ExtensionSummary {
        dataset,
        manifest_path,
        backend: health,
        planned: jobs.len(),
        generated,
        reused: reuse.len(),
        failed,
        pending,
        failure_threshold: options.failure_threshold,
    })
}

/// Prompts of the first `limit` jobs (all when `None`), built exactly as a run builds them.
///
/// Labels are loaded lazily, so a small limit reads only the labels it needs.
pub fn plan_prompts(
    source: &DatasetDescriptor,
    prompt_config: &PromptConfig,
    variants_per_image: u32,
    limit: Option<usize>,
) -> Result<Vec<PromptRecord>, DatasetError> {
    let mut generator = PromptGenerator::new(prompt_config.clone(), source.catalog.clone())?;
    let total = source.len() * variants_per_image as usize;
    let limit = limit.unwrap_or(total).min(total);
    let mut out = Vec::with_capacity(limit);
    for id in &source.ids {
        if out.len() == limit {
            break;
        }
        let label = source.load_label(id)?;
        let present: Vec<ClassId> = ordered_present_classes(&label, &source.catalog, prompt_config.class_order);
        for _ in 0..variants_per_image {
            if out.len() == limit {
                break;
            }
            out.push(generator.build(&present)?);
        }
    }
    Ok(out)
}

/// The prompt stage: every job of the run, whether or not it needs generating.
fn plan(
    source: &DatasetDescriptor,
    prompt_config: &PromptConfig,
    options: &ExtensionOptions,
) -> Result<Vec<Job>, DatasetError> {
    let variants = options.variants_per_image;
    let prompts = plan_prompts(source, prompt_config, variants, None)?;
    Ok(prompts
        .into_iter()
        .enumerate()
        .map(|(flat, prompt)| {
            let (n, v) = (flat / variants as usize, flat as u32 % variants);
            let id = &source.ids[n];
            Job {
                index: n as u64,
                variant: v,
                source_id: id.clone(),
                output_id: format!("{id}_pt{v}"),
                prompt,
                seed: seed::derive_indexed(options.seed, "generation", flat as u64),
            }
        })
        .collect())
}

fn reusable(job: &Job, previous: &Manifest, backend_id: &str, options: &ExtensionOptions, out_root: &Path) -> bool {
    let Some(r) = previous.get(job.index, job.variant) else { return false };
    r.is_ok()
        && r.source_id == job.source_id
        && r.output_id == job.output_id
        && r.prompt == job.prompt
        && r.generation_seed == job.seed
        && r.constraint_kind == options.constraint
        && r.params == options.generation
        && r.backend_id == backend_id
        && r.output_path == job.output_path()
        && r.output_checksum.as_deref().is_some_and(|expected| {
            checksum_file(&out_root.join(&r.output_path)).is_ok_and(|actual| actual == expected)
        })
}

struct JobContext<'a> {
    source: &'a DatasetDescriptor,
    client: &'a Client,
    options: &'a ExtensionOptions,
    out_root: &'a Path,
    backend_id: &'a str,
    palette: &'a Palette,
}

impl JobContext<'_> {
    /// `Err` only for failures that must stop the run (writing outputs).
    fn run(&self, job: &Job) -> Result<ManifestRecord, DatasetError> {
        let mut record = ManifestRecord {
            index: job.index,
            variant: job.variant,
            source_id: job.source_id.clone(),
            output_id: job.output_id.clone(),
            prompt: job.prompt.clone(),
            constraint_kind: self.options.constraint,
            backend_id: self.backend_id.to_string(),
            generation_seed: job.seed,
            params: self.options.generation.clone(),
            output_path: job.output_path(),
            output_checksum: None,
            status: RecordStatus::Ok,
            timestamp_ms: 0,
        };
        match self.generate(job) {
            Ok(bytes) => {
                write_atomic(&self.out_root.join(&record.output_path), &bytes)?;
                record.output_checksum = Some(checksum(&bytes));
            }
            Err(reason) => record.status = RecordStatus::Failed(reason),
        }
        record.timestamp_ms = now_ms();
        Ok(record)
    }

    fn generate(&self, job: &Job) -> Result<Vec<u8>, String> {
        let image = self.source.load_image(&job.source_id).map_err(|e| e.to_string())?;
        let constraint = match self.options.constraint {
            ConstraintType::None => Constraint::None,
            ConstraintType::Edge => build_edge_constraint(&image, self.options.edge_low, self.options.edge_high)
                .map_err(|e| e.to_string())?,
            ConstraintType::Segmentation => {
                let label = self.source.load_label(&job.source_id).map_err(|e| e.to_string())?;
                build_segmentation_constraint(&label, &self.source.catalog, self.palette).map_err(|e| e.to_string())?
            }
            ConstraintType::Depth => {
                let dir = self.options.depth_dir.as_ref().expect("validated");
                load_depth_constraint(&dir.join(format!("{}.png", job.source_id)), image.dimensions())
                    .map_err(|e| e.to_string())?
            }
        };
        let request = self.options.generation.request(image, job.prompt.rendered.clone(), constraint, job.seed);
        let output = self.client.generate(&request).map_err(|e| e.to_string())?;
        Ok(output.to_png_bytes())
    }
}
