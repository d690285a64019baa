//! Cityscapes-style tree for external UDA trainers.
//!
//! ```text
//! {out}/images/{source}/{id}.png
//! {out}/labels/{source}/{id}_labelTrainIds.png
//! {out}/images/{pseudo_target}/{id}.png
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{create_dir, DatasetDescriptor, DatasetError, DatasetRole};

pub const SOURCE_SPLIT: &str = "source";
pub const PSEUDO_TARGET_SPLIT: &str = "pseudo_target";
pub const LABEL_SUFFIX: &str = "_labelTrainIds";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportSummary {
    pub root: PathBuf,
    pub source_pairs: usize,
    pub target_images: usize,
    /// Descriptors of the exported splits, readable with [`DatasetDescriptor::load`].
    pub source_descriptor: PathBuf,
    pub target_descriptor: PathBuf,
}

/// Copies both datasets byte for byte; only the source split carries labels.
pub fn export_layout(
    pseudo_target: &DatasetDescriptor,
    source: &DatasetDescriptor,
    out: &Path,
) -> Result<ExportSummary, DatasetError> {
    if !source.role.has_labels() {
        return Err(DatasetError::Invalid("source dataset must carry labels".into()));
    }
    source.validate()?;
    pseudo_target.validate()?;
    let source_ids: BTreeSet<&str> = source.ids.iter().map(String::as_str).collect();
    let collisions: Vec<String> =
        pseudo_target.ids.iter().filter(|id| source_ids.contains(id.as_str())).cloned().collect();
    if !collisions.is_empty() {
        return Err(DatasetError::IdCollision(collisions));
    }

    let split = |kind: &str, name: &str| PathBuf::from(kind).join(name);
    let src_images = split("images", SOURCE_SPLIT);
    let src_labels = split("labels", SOURCE_SPLIT);
    let tgt_images = split("images", PSEUDO_TARGET_SPLIT);
    for d in [&src_images, &src_labels, &tgt_images] {
        create_dir(&out.join(d))?;
    }
    for id in &source.ids {
        copy(&source.image_path(id), &out.join(&src_images).join(format!("{id}.png")))?;
        let label = source.label_path(id).expect("labeled role");
        copy(&label, &out.join(&src_labels).join(format!("{id}{LABEL_SUFFIX}.png")))?;
    }
    for id in &pseudo_target.ids {
        copy(&pseudo_target.image_path(id), &out.join(&tgt_images).join(format!("{id}.png")))?;
    }

    let source_desc = DatasetDescriptor {
        root: out.to_path_buf(),
        role: DatasetRole::Source,
        image_dir: src_images,
        label_dir: Some(src_labels),
        label_suffix: LABEL_SUFFIX.into(),
        catalog: source.catalog.clone(),
        ids: source.ids.clone(),
    };
    let target_desc = DatasetDescriptor {
        root: out.to_path_buf(),
        role: DatasetRole::PseudoTarget,
        image_dir: tgt_images,
        label_dir: None,
        label_suffix: String::new(),
        catalog: pseudo_target.catalog.clone(),
        ids: pseudo_target.ids.clone(),
    };
    let source_descriptor = out.join(format!("{SOURCE_SPLIT}.json"));
    let target_descriptor = out.join(format!("{PSEUDO_TARGET_SPLIT}.json"));
    super::write_atomic(&source_descriptor, source_desc.to_json().as_bytes())?;
    super::write_atomic(&target_descriptor, target_desc.to_json().as_bytes())?;
    Ok(ExportSummary {
        root: out.to_path_buf(),
        source_pairs: source.len(),
        target_images: pseudo_target.len(),
        source_descriptor,
        target_descriptor,
    })
}

fn copy(from: &Path, to: &Path) -> Result<(), DatasetError> {
    fs::copy(from, to).map(|_| ()).map_err(DatasetError::io(from))
}
