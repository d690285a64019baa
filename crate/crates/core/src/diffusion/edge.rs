//! Canny edge maps for edge-conditioned generation.

use std::collections::VecDeque;

use super::{Constraint, DiffusionError};
use crate::label::RasterImage;

const SIGMA: f64 = 1.4;
const RADIUS: isize = 2;

/// Binary Canny edge map, row-major. Gradient magnitudes are in Sobel units on
/// 0..=255 luma, so thresholds such as `100`/`200` behave as in common tooling.
pub fn canny(image: &RasterImage, low: f64, high: f64) -> Vec<bool> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let gray: Vec<f64> = image
        .pixels()
        .map(|[r, g, b]| 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
        .collect();
    let blurred = gaussian_blur(&gray, w, h);

    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        blurred[y * w + x]
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            gx[i] = dx;
            gy[i] = dy;
            mag[i] = dx.hypot(dy);
        }
    }

    let thin = non_maximum_suppression(&mag, &gx, &gy, w, h);

    let mut edges = vec![false; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if thin[i] >= high && thin[i] > 0.0 && !edges[i] {
            edges[i] = true;
            queue.push_back(i);
            while let Some(j) = queue.pop_front() {
                let (jx, jy) = ((j % w) as isize, (j / w) as isize);
                for (nx, ny) in neighbors8(jx, jy, w, h) {
                    let k = ny * w + nx;
                    if !edges[k] && thin[k] >= low && thin[k] > 0.0 {
                        edges[k] = true;
                        queue.push_back(k);
                    }
                }
            }
        }
    }
    edges
}

fn gaussian_kernel() -> Vec<f64> {
    let raw: Vec<f64> = (-RADIUS..=RADIUS)
        .map(|i| (-((i * i) as f64) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn gaussian_blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-RADIUS..=RADIUS)
                .map(|d| k[(d + RADIUS) as usize] * src[y * w + clamp(x as isize + d, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-RADIUS..=RADIUS)
                .map(|d| k[(d + RADIUS) as usize] * tmp[clamp(y as isize + d, h) * w + x])
                .sum();
        }
    }
    out
}

/// Keeps a pixel when its magnitude is strictly above the neighbor ahead along
/// the gradient and not below the one behind, so plateaus of two equal
/// pixels keep exactly one.
fn non_maximum_suppression(mag: &[f64], gx: &[f64], gy: &[f64], w: usize, h: usize) -> Vec<f64> {
    let get = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let (dx, dy) = gradient_step(gx[i], gy[i]);
            let ahead = get(x + dx, y + dy);
            let behind = get(x - dx, y - dy);
            if m > ahead && m >= behind {
                out[i] = m;
            }
        }
    }
    out
}

/// Gradient direction quantized to one of four neighbor offsets.
fn gradient_step(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

fn neighbors8(x: isize, y: isize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1..=1)
        .flat_map(move |dy| (-1..=1).map(move |dx| (x + dx, y + dy)))
        .filter(move |&(nx, ny)| {
            (nx, ny) != (x, y) && nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize
        })
        .map(|(nx, ny)| (nx as usize, ny as usize))
}

/// Edge constraint rendered as white-on-black RGB.
pub fn build_edge_constraint(
    image: &RasterImage,
    low: f64,
    high: f64,
) -> Result<Constraint, DiffusionError> {
    if !(low < high) {
        return Err(DiffusionError::Constraint(format!(
            "canny low threshold {low} must be below high threshold {high}"
        )));
    }
    let data = canny(image, low, high)
        .into_iter()
        .flat_map(|e| if e { [255u8; 3] } else { [0u8; 3] })
        .collect();
    Ok(Constraint::Edge(
        RasterImage::new(image.width(), image.height(), data).expect("edge map keeps dimensions"),
    ))
}
