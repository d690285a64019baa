use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{checksum_file, read_manifest, DatasetDescriptor, DatasetError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Defect {
    MissingFile { output_id: String, path: PathBuf },
    ChecksumMismatch { output_id: String, path: PathBuf, expected: String, actual: String },
    DuplicateId { id: String },
    PromptNotReconstructible { index: u64, variant: u32 },
    /// An image under the dataset's image directory that no ok record produced.
    OrphanFile { path: PathBuf },
    /// A dataset id without an ok manifest record.
    UnrecordedId { id: String },
    /// An ok record whose output is not listed in the dataset.
    UnlistedRecord { output_id: String },
    /// Record keys must cover `0..n` for indices and `0..v` for variants.
    IndexGap { index: u64, variant: u32 },
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::MissingFile { output_id, path } => write!(f, "missing file for {output_id}: {}", path.display()),
            Defect::ChecksumMismatch { output_id, path, expected, actual } => {
                write!(f, "checksum mismatch for {output_id} ({}): expected {expected}, found {actual}", path.display())
            }
            Defect::DuplicateId { id } => write!(f, "duplicate id {id}"),
            Defect::PromptNotReconstructible { index, variant } => {
                write!(f, "prompt of record ({index}, {variant}) does not re-render to its stored string")
            }
            Defect::OrphanFile { path } => write!(f, "orphan file {}", path.display()),
            Defect::UnrecordedId { id } => write!(f, "id {id} has no ok manifest record"),
            Defect::UnlistedRecord { output_id } => write!(f, "record output {output_id} is not listed in the dataset"),
            Defect::IndexGap { index, variant } => write!(f, "no record for index {index}, variant {variant}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct IntegrityReport {
    pub records: usize,
    pub ok_records: usize,
    pub failed_records: usize,
    pub defects: Vec<Defect>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.defects.is_empty()
    }
}

/// Cross-checks a dataset against its manifest. Defects are report content;
/// only an unreadable dataset or manifest is an error.
pub fn verify_dataset(dataset: &DatasetDescriptor, manifest_path: &Path) -> Result<IntegrityReport, DatasetError> {
    let manifest = read_manifest(manifest_path)?;
    let mut report = IntegrityReport { records: manifest.len(), ..IntegrityReport::default() };
    let mut defects = Vec::new();

    let mut listed = BTreeSet::new();
    for id in &dataset.ids {
        if !listed.insert(id.as_str()) {
            defects.push(Defect::DuplicateId { id: id.clone() });
        }
    }

    let mut produced: BTreeMap<&str, usize> = BTreeMap::new();
    let mut referenced = BTreeSet::new();
    for r in manifest.iter() {
        if !r.prompt.is_reconstructible(&dataset.catalog) {
            defects.push(Defect::PromptNotReconstructible { index: r.index, variant: r.variant });
        }
        if !r.is_ok() {
            report.failed_records += 1;
            continue;
        }
        report.ok_records += 1;
        *produced.entry(r.output_id.as_str()).or_default() += 1;
        let path = dataset.root.join(&r.output_path);
        referenced.insert(normalize(&path));
        if !listed.contains(r.output_id.as_str()) {
            defects.push(Defect::UnlistedRecord { output_id: r.output_id.clone() });
        }
        if !path.is_file() {
            defects.push(Defect::MissingFile { output_id: r.output_id.clone(), path });
            continue;
        }
        let actual = checksum_file(&path)?;
        if r.output_checksum.as_deref() != Some(actual.as_str()) {
            defects.push(Defect::ChecksumMismatch {
                output_id: r.output_id.clone(),
                path,
                expected: r.output_checksum.clone().unwrap_or_default(),
                actual,
            });
        }
    }
    for (id, n) in &produced {
        if *n > 1 {
            defects.push(Defect::DuplicateId { id: id.to_string() });
        }
    }
    for id in &listed {
        if !produced.contains_key(id) {
            defects.push(Defect::UnrecordedId { id: id.to_string() });
        }
    }

    if let (Some(max_index), Some(max_variant)) =
        (manifest.iter().map(|r| r.index).max(), manifest.iter().map(|r| r.variant).max())
    {
        for index in 0..=max_index {
            for variant in 0..=max_variant {
                if manifest.get(index, variant).is_none() {
                    defects.push(Defect::IndexGap { index, variant });
                }
            }
        }
    }

    let image_dir = dataset.root.join(&dataset.image_dir);
    let mut on_disk = Vec::new();
    for entry in fs::read_dir(&image_dir).map_err(DatasetError::io(&image_dir))? {
        let path = entry.map_err(DatasetError::io(&image_dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "png") {
            on_disk.push(path);
        }
    }
    on_disk.sort();
    for path in on_disk {
        if !referenced.contains(&normalize(&path)) {
            defects.push(Defect::OrphanFile { path });
        }
    }

    report.defects = defects;
    Ok(report)
}

fn normalize(path: &Path) -> PathBuf {
    path.components().collect()
}
