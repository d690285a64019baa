use std::collections::BTreeSet;

use super::{AdaptError, ToyModel};
use crate::label::{ClassId, LabelMap, RasterImage};

/// Pastes the source pixels of `classes` onto the target image.
///
/// Pasted pixels carry their source label and a set mask; every other pixel
/// keeps the target image, pseudo-label and pseudo mask.
pub fn class_mix(
    src_img: &RasterImage,
    src_lbl: &LabelMap,
    tgt_img: &RasterImage,
    tgt_pseudo: &LabelMap,
    tgt_mask: &[bool],
    classes: &BTreeSet<ClassId>,
) -> Result<(RasterImage, LabelMap, Vec<bool>), AdaptError> {
    let dims = src_img.dimensions();
    let n = (dims.0 * dims.1) as usize;
    if src_lbl.dimensions() != dims
        || tgt_img.dimensions() != dims
        || tgt_pseudo.dimensions() != dims
        || tgt_mask.len() != n
    {
        return Err(AdaptError::DimensionMismatch {
            expected: dims,
            found: [src_lbl.dimensions(), tgt_img.dimensions(), tgt_pseudo.dimensions()]
                .into_iter()
                .find(|d| *d != dims)
                .unwrap_or((tgt_mask.len() as u32, 1)),
        });
    }
    let mut img = tgt_img.clone();
    let mut lbl = tgt_pseudo.data().to_vec();
    let mut mask = tgt_mask.to_vec();
    for (i, &s) in src_lbl.data().iter().enumerate() {
        if classes.contains(&s) {
            img.data_mut()[3 * i..3 * i + 3].copy_from_slice(&src_img.data()[3 * i..3 * i + 3]);
            lbl[i] = s;
            mask[i] = true;
        }
    }
    let lbl = LabelMap::from_raw(dims.0, dims.1, lbl).expect("same dimensions");
    Ok((img, lbl, mask))
}

/// `alpha * teacher + (1 - alpha) * student`, elementwise.
pub fn ema_update(teacher: &ToyModel, student: &ToyModel, alpha: f64) -> Result<ToyModel, AdaptError> {
    if teacher.classes() != student.classes() {
        return Err(AdaptError::ShapeMismatch { expected: teacher.weights().len(), found: student.weights().len() });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AdaptError::InvalidConfig(format!("ema alpha {alpha} outside [0, 1]")));
    }
    let mut out = teacher.clone();
    for (t, s) in out.weights_mut().iter_mut().zip(student.weights()) {
        *t = alpha * *t + (1.0 - alpha) * s;
    }
    Ok(out)
}
