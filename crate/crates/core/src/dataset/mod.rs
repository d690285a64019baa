//! Source and pseudo-target datasets on disk.
//!
//! A dataset is a directory with a `dataset.json` descriptor, an image
//! directory and, for labeled roles, a label directory. Sample `id` maps to
//! `{image_dir}/{id}.png` and `{label_dir}/{id}{label_suffix}.png`.

mod export;
mod extension;
mod manifest;
mod verify;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::label::{load_label_map, ClassCatalog, LabelError, LabelMap, RasterImage};
use crate::prompt::PromptError;

pub use export::{export_layout, ExportSummary, LABEL_SUFFIX, PSEUDO_TARGET_SPLIT, SOURCE_SPLIT};
pub use extension::{plan_prompts, run_extension, run_extension_with_client, ExtensionOptions, ExtensionSummary};
pub use manifest::{
    read_manifest, Manifest, ManifestRecord, ManifestWriter, RecordStatus, MANIFEST_SCHEMA,
};
pub use verify::{verify_dataset, Defect, IntegrityReport};

pub const DESCRIPTOR_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("ids present in both datasets: {}", .0.join(", "))]
    IdCollision(Vec<String>),
    #[error("k = {k} is outside 1..={n}")]
    OutOfRange { k: usize, n: usize },
    #[error("backend {backend} is unreachable: {detail}")]
    BackendUnreachable { backend: String, detail: String },
    #[error("manifest {path} line {line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
}

impl DatasetError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
        move |source| DatasetError::Io { path: path.to_path_buf(), source }
    }

    /// Network, disk and backend failures, as opposed to bad input.
    pub fn is_environment(&self) -> bool {
        match self {
            DatasetError::Io { .. } | DatasetError::BackendUnreachable { .. } => true,
            DatasetError::Label(e) => e.is_environment(),
            DatasetError::Diffusion(e) => e.is_environment(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Source,
    PseudoTarget,
    TargetVal,
}

impl DatasetRole {
    pub fn has_labels(self) -> bool {
        !matches!(self, DatasetRole::PseudoTarget)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorDoc {
    role: DatasetRole,
    image_dir: PathBuf,
    #[serde(default)]
    label_dir: Option<PathBuf>,
    #[serde(default)]
    label_suffix: String,
    catalog: ClassCatalog,
    ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetDescriptor {
    pub root: PathBuf,
    pub role: DatasetRole,
    /// Relative to `root`.
    pub image_dir: PathBuf,
    /// Relative to `root`; `None` for unlabeled data.
    pub label_dir: Option<PathBuf>,
    pub label_suffix: String,
    pub catalog: ClassCatalog,
    /// Sample order; prompts are built in this order.
    pub ids: Vec<String>,
}

impl DatasetDescriptor {
    /// Loads `dataset.json`; `path` may name the file or its directory.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let file = if path.is_dir() { path.join(DESCRIPTOR_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(DatasetError::io(&file))?;
        let doc: DescriptorDoc = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Json { path: file.clone(), message: e.to_string() })?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(DatasetDescriptor {
            root,
            role: doc.role,
            image_dir: doc.image_dir,
            label_dir: doc.label_dir,
            label_suffix: doc.label_suffix,
            catalog: doc.catalog,
            ids: doc.ids,
        })
    }

    pub fn to_json(&self) -> String {
        let doc = DescriptorDoc {
            role: self.role,
            image_dir: self.image_dir.clone(),
            label_dir: self.label_dir.clone(),
            label_suffix: self.label_suffix.clone(),
            catalog: self.catalog.clone(),
            ids: self.ids.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("descriptor serializes") + "\n"
    }

    /// Writes `{root}/dataset.json`.
    pub fn save(&self) -> Result<PathBuf, DatasetError> {
        let path = self.root.join(DESCRIPTOR_FILE);
        write_atomic(&path, self.to_json().as_bytes())?;
        Ok(path)
    }

    /// Builds a descriptor from the `*.png` files of `image_dir`, sorted by id.
    pub fn scan(
        root: &Path,
        role: DatasetRole,
        image_dir: impl Into<PathBuf>,
        label_dir: Option<PathBuf>,
        catalog: ClassCatalog,
    ) -> Result<Self, DatasetError> {
        let image_dir = image_dir.into();
        let dir = root.join(&image_dir);
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(DatasetError::io(&dir))? {
            let path = entry.map_err(DatasetError::io(&dir))?.path();
            if path.extension().is_some_and(|e| e == "png") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        let d = DatasetDescriptor {
            root: root.to_path_buf(),
            role,
            image_dir,
            label_dir,
            label_suffix: String::new(),
            catalog,
            ids,
        };
        d.validate()?;
        Ok(d)
    }

    /// Writes images (and labels when given) and the descriptor under `root`.
    pub fn write_samples(
        root: &Path,
        role: DatasetRole,
        catalog: ClassCatalog,
        samples: &[(String, RasterImage, Option<LabelMap>)],
    ) -> Result<Self, DatasetError> {
        let labeled = role.has_labels();
        let d = DatasetDescriptor {
            root: root.to_path_buf(),
            role,
            image_dir: "images".into(),
            label_dir: labeled.then(|| "labels".into()),
            label_suffix: String::new(),
            catalog,
            ids: samples.iter().map(|(id, _, _)| id.clone()).collect(),
        };
        create_dir(&root.join(&d.image_dir))?;
        if let Some(l) = &d.label_dir {
            create_dir(&root.join(l))?;
        }
        for (id, image, label) in samples {
            write_atomic(&d.image_path(id), &image.to_png_bytes())?;
            match (label, labeled) {
                (Some(label), true) => {
                    label.validate(&d.catalog, id)?;
                    label.save(&d.label_path(id).expect("labeled role"))?;
                }
                (None, true) => return Err(DatasetError::Invalid(format!("sample {id} has no label"))),
                _ => {}
            }
        }
        d.save()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join(&self.image_dir).join(format!("{id}.png"))
    }

    pub fn label_path(&self, id: &str) -> Option<PathBuf> {
        self.label_dir
            .as_ref()
            .map(|d| self.root.join(d).join(format!("{id}{}.png", self.label_suffix)))
    }

    pub fn load_image(&self, id: &str) -> Result<RasterImage, DatasetError> {
        Ok(RasterImage::load(&self.image_path(id))?)
    }

    pub fn load_label(&self, id: &str) -> Result<LabelMap, DatasetError> {
        let path = self
            .label_path(id)
            .ok_or_else(|| DatasetError::Invalid(format!("{:?} dataset has no labels", self.role)))?;
        Ok(load_label_map(&path, &self.catalog)?)
    }

    /// Unique ids, existing images and, for labeled roles, existing labels.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(DatasetError::Invalid(format!("duplicate id {dup}")));
        }
        if let Some(bad) = self.ids.iter().find(|id| id.is_empty() || id.contains(['/', '\\'])) {
            return Err(DatasetError::Invalid(format!("id `{bad}` is not a plain file stem")));
        }
        if self.role.has_labels() && self.label_dir.is_none() {
            return Err(DatasetError::Invalid(format!("{:?} dataset needs a label_dir", self.role)));
        }
        for id in &self.ids {
            let img = self.image_path(id);
            if !img.is_file() {
                return Err(DatasetError::MissingFile(img));
            }
            if self.role.has_labels() {
                let lbl = self.label_path(id).expect("checked above");
                if !lbl.is_file() {
                    return Err(DatasetError::MissingFile(lbl));
                }
            }
        }
        Ok(())
    }

    /// The same dataset restricted to `ids`, in the order given.
    pub fn with_ids(&self, ids: Vec<String>) -> Self {
        DatasetDescriptor { ids, ..self.clone() }
    }
}

/// Hex SHA-256 of `bytes`.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn checksum_file(path: &Path) -> Result<String, DatasetError> {
    Ok(checksum(&fs::read(path).map_err(DatasetError::io(path))?))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(path).map_err(DatasetError::io(path))
}

/// Writes through a temporary sibling and renames, so `path` is never partial.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(DatasetError::io(path))
}

/// The seeded permutation of `0..n` whose prefixes are the subsamples.
pub fn subsample_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::seed::rng(seed));
    order
}

/// `k` ids drawn uniformly without replacement, listed in dataset order.
///
/// Every call with the same seed takes a prefix of the same permutation, so
/// smaller subsamples are contained in larger ones.
pub fn subsample(dataset: &DatasetDescriptor, k: usize, seed: u64) -> Result<DatasetDescriptor, DatasetError> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(DatasetError::OutOfRange { k, n });
    }
    let mut picked = subsample_order(n, seed)[..k].to_vec();
    picked.sort_unstable();
    Ok(dataset.with_ids(picked.into_iter().map(|i| dataset.ids[i].clone()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::CatalogScheme;
    use proptest::prelude::*;

    fn toy(n: usize) -> DatasetDescriptor {
        DatasetDescriptor {
            root: PathBuf::from("/nonexistent"),
            role: DatasetRole::PseudoTarget,
            image_dir: "images".into(),
            label_dir: None,
            label_suffix: String::new(),
            catalog: ClassCatalog::from_scheme(CatalogScheme::Gta19),
            ids: (0..n).map(|i| format!("s{i:03}")).collect(),
        }
    }

    #[test]
    fn full_subsample_is_identity() {
        let d = toy(12);
        assert_eq!(subsample(&d, 12, 3).unwrap().ids, d.ids);
    }

    #[test]
    fn single_subsample_is_stable() {
        let d = toy(40);
        assert_eq!(subsample(&d, 1, 9).unwrap().ids, subsample(&d, 1, 9).unwrap().ids);
        assert!(matches!(subsample(&d, 0, 9), Err(DatasetError::OutOfRange { .. })));
        assert!(matches!(subsample(&d, 41, 9), Err(DatasetError::OutOfRange { .. })));
    }

    #[test]
    fn descriptor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
        let samples: Vec<_> = (0..3)
            .map(|i| (format!("a{i}"), RasterImage::filled(4, 3, [i as u8, 0, 0]), Some(LabelMap::filled(4, 3, i as u8))))
            .collect();
        let d = DatasetDescriptor::write_samples(dir.path(), DatasetRole::Source, catalog.clone(), &samples).unwrap();
        d.validate().unwrap();
        assert_eq!(DatasetDescriptor::load(dir.path()).unwrap(), d);
        assert_eq!(d.load_label("a2").unwrap(), LabelMap::filled(4, 3, 2));
        let scanned = DatasetDescriptor::scan(dir.path(), DatasetRole::Source, "images", Some("labels".into()), catalog).unwrap();
        assert_eq!(scanned.ids, d.ids);

        fs::remove_file(d.label_path("a1").unwrap()).unwrap();
        assert!(matches!(d.validate(), Err(DatasetError::MissingFile(_))));
        assert!(d.with_ids(vec!["a0".into(), "a0".into()]).validate().is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_atomic(&p, b"abc").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"abc");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(checksum(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    proptest! {
        #[test]
        fn subsamples_nest(n in 1usize..60, a in 1usize..60, b in 1usize..60, seed in any::<u64>()) {
            let (k1, k2) = (a.min(b).min(n), a.max(b).min(n));
            let d = toy(n);
            let small: BTreeSet<_> = subsample(&d, k1, seed).unwrap().ids.into_iter().collect();
            let large: BTreeSet<_> = subsample(&d, k2, seed).unwrap().ids.into_iter().collect();
            prop_assert_eq!(small.len(), k1);
            prop_assert_eq!(large.len(), k2);
            prop_assert!(small.is_subset(&large));
        }
    }
}
