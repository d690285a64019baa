//! Raster images, per-pixel label maps and class catalogs.
//!
//! Label maps are stored as single-channel 8-bit PNGs holding train ids, with
//! `255` reserved for pixels that are excluded from every metric and loss.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ColorType, DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a class in a [`ClassCatalog`]. Equal to the train id stored in label files.
pub type ClassId = u8;

/// Label value excluded from evaluation and training.
pub const DEFAULT_IGNORE_INDEX: u8 = 255;

/// The 19 Cityscapes train classes in train-id order.
pub const CITYSCAPES_CLASSES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// Classes missing from the 16-class evaluation used for SYNTHIA-trained models.
pub const SYNTHIA_EXCLUDED: [&str; 3] = ["terrain", "truck", "train"];

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("unknown catalog scheme `{0}` (expected `gta19` or `synthia16`)")]
    UnknownScheme(String),
    #[error("invalid class catalog: {0}")]
    InvalidCatalog(String),
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: expected a single-channel 8-bit label PNG, found {found:?}")]
    NotSingleChannel { path: PathBuf, found: ColorType },
    #[error("{context}: pixel ({x}, {y}) has class id {value}, which is neither a catalog id nor the ignore index")]
    InvalidClassId {
        context: String,
        x: u32,
        y: u32,
        value: u8,
    },
    #[error("buffer of {got} bytes does not match {width}x{height}x{channels}")]
    BadDimensions {
        width: u32,
        height: u32,
        channels: u32,
        got: usize,
    },
    #[error("png codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error("catalog json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LabelError {
    /// Whether the failure comes from the environment (files, disks) rather than bad input.
    pub fn is_environment(&self) -> bool {
        match self {
            LabelError::Io { .. } => true,
            LabelError::Read { source, .. } | LabelError::Write { source, .. } => {
                matches!(source, image::ImageError::IoError(_))
            }
            _ => false,
        }
    }
}

/// Named evaluation conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatalogScheme {
    /// All 19 classes are evaluated (GTA5-style).
    Gta19,
    /// Same ids, 16 evaluated classes (SYNTHIA-style).
    Synthia16,
}

impl FromStr for CatalogScheme {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gta19" => Ok(CatalogScheme::Gta19),
            "synthia16" => Ok(CatalogScheme::Synthia16),
            other => Err(LabelError::UnknownScheme(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CatalogDoc {
    classes: Vec<ClassInfo>,
    eval_subset: Vec<ClassId>,
    ignore_index: u8,
}

/// Class-id to name mapping plus the evaluated subset and the ignore index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogDoc", into = "CatalogDoc")]
pub struct ClassCatalog {
    classes: Vec<ClassInfo>,
    eval_subset: BTreeSet<ClassId>,
    ignore_index: u8,
}

impl TryFrom<CatalogDoc> for ClassCatalog {
    type Error = LabelError;

    fn try_from(doc: CatalogDoc) -> Result<Self, Self::Error> {
        let names = doc.classes.into_iter().map(|c| (c.id, c.name)).collect::<Vec<_>>();
        let mut sorted = names.clone();
        sorted.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in sorted.iter().enumerate() {
            if usize::from(*id) != expected {
                return Err(LabelError::InvalidCatalog(format!(
                    "class ids must be unique and contiguous from 0, missing or duplicate id near {expected}"
                )));
            }
        }
        ClassCatalog::new(
            sorted.into_iter().map(|(_, n)| n).collect(),
            doc.eval_subset,
            doc.ignore_index,
        )
    }
}

impl From<ClassCatalog> for CatalogDoc {
    fn from(c: ClassCatalog) -> Self {
        CatalogDoc {
            classes: c.classes,
            eval_subset: c.eval_subset.into_iter().collect(),
            ignore_index: c.ignore_index,
        }
    }
}

impl ClassCatalog {
    /// Builds a catalog whose ids are the positions of `names`.
    pub fn new(
        names: Vec<String>,
        eval_subset: impl IntoIterator<Item = ClassId>,
        ignore_index: u8,
    ) -> Result<Self, LabelError> {
        if names.is_empty() {
            return Err(LabelError::InvalidCatalog("no classes".into()));
        }
        if names.len() > usize::from(u8::MAX) {
            return Err(LabelError::InvalidCatalog(format!(
                "{} classes do not fit one byte per pixel",
                names.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if name.trim().is_empty() {
                return Err(LabelError::InvalidCatalog("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(LabelError::InvalidCatalog(format!("duplicate class name `{name}`")));
            }
        }
        if usize::from(ignore_index) < names.len() {
            return Err(LabelError::InvalidCatalog(format!(
                "ignore index {ignore_index} collides with a class id"
            )));
        }
        let eval_subset: BTreeSet<ClassId> = eval_subset.into_iter().collect();
        if let Some(bad) = eval_subset.iter().find(|&&id| usize::from(id) >= names.len()) {
            return Err(LabelError::InvalidCatalog(format!(
                "eval subset references unknown id {bad}"
            )));
        }
        let classes = names
            .into_iter()
            .enumerate()
            .map(|(id, name)| ClassInfo { id: id as ClassId, name })
            .collect();
        Ok(ClassCatalog { classes, eval_subset, ignore_index })
    }

    /// Catalog for one of the named evaluation schemes.
    pub fn from_scheme(scheme: CatalogScheme) -> Self {
        let names: Vec<String> = CITYSCAPES_CLASSES.iter().map(|s| s.to_string()).collect();
        let subset: Vec<ClassId> = match scheme {
            CatalogScheme::Gta19 => (0..19).collect(),
            CatalogScheme::Synthia16 => CITYSCAPES_CLASSES
                .iter()
                .enumerate()
                .filter(|(_, n)| !SYNTHIA_EXCLUDED.contains(n))
                .map(|(i, _)| i as ClassId)
                .collect(),
        };
        ClassCatalog::new(names, subset, DEFAULT_IGNORE_INDEX).expect("builtin catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, LabelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load_json(path: &Path) -> Result<Self, LabelError> {
        let text = std::fs::read_to_string(path).map_err(|source| LabelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn eval_subset(&self) -> &BTreeSet<ClassId> {
        &self.eval_subset
    }

    pub fn ignore_index(&self) -> u8 {
        self.ignore_index
    }

    pub fn contains(&self, id: ClassId) -> bool {
        usize::from(id) < self.classes.len()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.classes.get(usize::from(id)).map(|c| c.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    /// True for any value a label pixel may legally hold.
    pub fn is_valid_label(&self, value: u8) -> bool {
        self.contains(value) || value == self.ignore_index
    }
}

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub const CHANNELS: u32 = 3;

    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, LabelError> {
        let expected = width as usize * height as usize * Self::CHANNELS as usize;
        if width == 0 || height == 0 || data.len() != expected {
            return Err(LabelError::BadDimensions {
                width,
                height,
                channels: Self::CHANNELS,
                got: data.len(),
            });
        }
        Ok(RasterImage { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        RasterImage::new(width, height, data).expect("filled image has consistent size")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let img = image::open(path).map_err(|source| LabelError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(img))
    }

    pub fn save(&self, path: &Path) -> Result<(), LabelError> {
        self.to_rgb_image()
            .save_with_format(path, ImageFormat::Png)
            .map_err(|source| LabelError::Write {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb_image()
            .write_to(&mut buf, ImageFormat::Png)
            .expect("in-memory png encoding cannot fail");
        buf.into_inner()
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, LabelError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Ok(Self::from_dynamic(img))
    }

    fn from_dynamic(img: DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        RasterImage { width: w, height: h, data: rgb.into_raw() }
    }

    fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.data.clone()).expect("dimensions checked")
    }
}

/// Per-pixel class ids, one byte per pixel, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LabelMap")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl LabelMap {
    /// Wraps raw ids without checking them against a catalog.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, LabelError> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize {
            return Err(LabelError::BadDimensions { width, height, channels: 1, got: data.len() });
        }
        Ok(LabelMap { width, height, data })
    }

    /// Wraps raw ids and rejects any value outside the catalog ids and the ignore index.
    pub fn new(
        width: u32,
        height: u32,
        data: Vec<u8>,
        catalog: &ClassCatalog,
    ) -> Result<Self, LabelError> {
        let map = Self::from_raw(width, height, data)?;
        map.validate(catalog, "label map")?;
        Ok(map)
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        LabelMap::from_raw(width, height, vec![value; width as usize * height as usize])
            .expect("filled map has consistent size")
    }

    pub fn validate(&self, catalog: &ClassCatalog, context: &str) -> Result<(), LabelError> {
        match self.data.iter().position(|&v| !catalog.is_valid_label(v)) {
            None => Ok(()),
            Some(i) => Err(LabelError::InvalidClassId {
                context: context.to_string(),
                x: (i % self.width as usize) as u32,
                y: (i / self.width as usize) as u32,
                value: self.data[i],
            }),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), LabelError> {
        GrayImage::from_raw(self.width, self.height, self.data.clone())
            .expect("dimensions checked")
            .save_with_format(path, ImageFormat::Png)
            .map_err(|source| LabelError::Write {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Reads a single-channel 8-bit PNG of train ids and validates it against `catalog`.
pub fn load_label_map(path: &Path, catalog: &ClassCatalog) -> Result<LabelMap, LabelError> {
    let img = image::open(path).map_err(|source| LabelError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let color = img.color();
    let DynamicImage::ImageLuma8(gray) = img else {
        return Err(LabelError::NotSingleChannel { path: path.to_path_buf(), found: color });
    };
    let (w, h) = gray.dimensions();
    let map = LabelMap::from_raw(w, h, gray.into_raw())?;
    map.validate(catalog, &path.display().to_string())?;
    Ok(map)
}

/// Ascending ids of classes with at least one pixel; the ignore index never appears.
pub fn present_classes(label: &LabelMap, catalog: &ClassCatalog) -> Vec<ClassId> {
    class_pixel_counts(label, catalog)
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(id, _)| id as ClassId)
        .collect()
}

/// Pixel count per catalog class, indexed by class id.
pub fn class_pixel_counts(label: &LabelMap, catalog: &ClassCatalog) -> Vec<u64> {
    let mut counts = vec![0u64; catalog.len()];
    for &v in label.data() {
        if let Some(slot) = counts.get_mut(usize::from(v)) {
            *slot += 1;
        }
    }
    counts
}
