use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::label::{ClassCatalog, LabelMap, RasterImage};

/// Kind of structural guidance sent along with the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintType {
    #[default]
    None,
    Depth,
    Edge,
    Segmentation,
}

impl ConstraintType {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintType::None => "none",
            ConstraintType::Depth => "depth",
            ConstraintType::Edge => "edge",
            ConstraintType::Segmentation => "segmentation",
        }
    }
}

impl std::str::FromStr for ConstraintType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ConstraintType::None),
            "depth" => Ok(ConstraintType::Depth),
            "edge" => Ok(ConstraintType::Edge),
            "segmentation" => Ok(ConstraintType::Segmentation),
            other => Err(format!("unknown constraint type `{other}`")),
        }
    }
}

/// A rendered constraint image; only [`Constraint::None`] carries no payload.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Constraint {
    #[default]
    None,
    Depth(RasterImage),
    Edge(RasterImage),
    Segmentation(RasterImage),
}

impl Constraint {
    pub fn kind(&self) -> ConstraintType {
        match self {
            Constraint::None => ConstraintType::None,
            Constraint::Depth(_) => ConstraintType::Depth,
            Constraint::Edge(_) => ConstraintType::Edge,
            Constraint::Segmentation(_) => ConstraintType::Segmentation,
        }
    }

    pub fn payload(&self) -> Option<&RasterImage> {
        match self {
            Constraint::None => None,
            Constraint::Depth(p) | Constraint::Edge(p) | Constraint::Segmentation(p) => Some(p),
        }
    }
}

/// Per-class colors indexed by class id.
pub type Palette = Vec<[u8; 3]>;

/// The usual Cityscapes train-id colors.
pub fn cityscapes_palette() -> Palette {
    vec![
        [128, 64, 128],
        [244, 35, 232],
        [70, 70, 70],
        [102, 102, 156],
        [190, 153, 153],
        [153, 153, 153],
        [250, 170, 30],
        [220, 220, 0],
        [107, 142, 35],
        [152, 251, 152],
        [70, 130, 180],
        [220, 20, 60],
        [255, 0, 0],
        [0, 0, 142],
        [0, 0, 70],
        [0, 60, 100],
        [0, 80, 100],
        [0, 0, 230],
        [119, 11, 32],
    ]
}

/// Colorizes a label map; ignore pixels become black.
pub fn build_segmentation_constraint(
    label: &LabelMap,
    catalog: &ClassCatalog,
    palette: &[[u8; 3]],
) -> Result<Constraint, DiffusionError> {
    if palette.len() < catalog.len() {
        return Err(DiffusionError::Constraint(format!(
            "palette has {} colors, catalog has {} classes",
            palette.len(),
            catalog.len()
        )));
    }
    let mut data = Vec::with_capacity(label.len() * 3);
    for &v in label.data() {
        let rgb = if catalog.contains(v) { palette[usize::from(v)] } else { [0, 0, 0] };
        data.extend_from_slice(&rgb);
    }
    let image = RasterImage::new(label.width(), label.height(), data)
        .expect("colorized map has label dimensions");
    Ok(Constraint::Segmentation(image))
}

/// Loads a precomputed depth map (sidecar file). Depth is never estimated locally.
pub fn load_depth_constraint(
    path: &Path,
    expected: (u32, u32),
) -> Result<Constraint, DiffusionError> {
    let image = RasterImage::load(path)
        .map_err(|e| DiffusionError::Constraint(format!("depth sidecar: {e}")))?;
    if image.dimensions() != expected {
        return Err(DiffusionError::Constraint(format!(
            "depth sidecar {} is {:?}, source image is {expected:?}",
            path.display(),
            image.dimensions()
        )));
    }
    Ok(Constraint::Depth(image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::CatalogScheme;
    use proptest::prelude::*;

    #[test]
    fn all_road_is_uniform_road_color() {
        let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
        let palette = cityscapes_palette();
        let c = build_segmentation_constraint(&LabelMap::filled(3, 2, 0), &catalog, &palette).unwrap();
        assert_eq!(c.kind(), ConstraintType::Segmentation);
        assert!(c.payload().unwrap().pixels().all(|p| p == [128, 64, 128]));
    }

    #[test]
    fn short_palette_is_rejected() {
        let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
        let palette = &cityscapes_palette()[..18];
        assert!(build_segmentation_constraint(&LabelMap::filled(1, 1, 0), &catalog, palette).is_err());
    }

    #[test]
    fn depth_sidecar_must_exist_and_match() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_depth_constraint(&dir.path().join("missing.png"), (2, 2)).is_err());
        let p = dir.path().join("d.png");
        RasterImage::filled(2, 3, [9, 9, 9]).save(&p).unwrap();
        assert!(load_depth_constraint(&p, (2, 2)).is_err());
        assert_eq!(load_depth_constraint(&p, (2, 3)).unwrap().kind(), ConstraintType::Depth);
    }

    proptest! {
        #[test]
        fn colorize_then_invert(w in 1u32..8, h in 1u32..8, seed in any::<u64>()) {
            use rand::Rng;
            let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
            let palette = cityscapes_palette();
            let mut rng = crate::seed::rng(seed);
            let data: Vec<u8> = (0..w * h).map(|_| if rng.gen_bool(0.1) { 255 } else { rng.gen_range(0..19) }).collect();
            let label = LabelMap::from_raw(w, h, data).unwrap();
            let c = build_segmentation_constraint(&label, &catalog, &palette).unwrap();
            let payload = c.payload().unwrap();
            for y in 0..h {
                for x in 0..w {
                    let v = label.get(x, y);
                    let expected = if v == 255 { [0, 0, 0] } else { palette[v as usize] };
                    prop_assert_eq!(payload.pixel(x, y), expected);
                }
            }
            let inverted: Vec<u8> = payload
                .pixels()
                .map(|rgb| palette.iter().position(|&p| p == rgb).map(|i| i as u8).unwrap_or(255))
                .collect();
            prop_assert_eq!(inverted.as_slice(), label.data());
        }
    }
}
