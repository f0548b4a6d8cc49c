//! Resizing to 64×64 and cutting the face into nine overlapping patches.

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const FACE_SIZE: usize = 64;
pub const PATCH_SIZE: usize = 32;
pub const PATCH_OFFSETS: [usize; 3] = [0, 16, 32];
/// Nine patches plus the full face.
pub const SOURCES: usize = 10;
pub const FULL_FACE: usize = 9;
const MIN_INPUT: usize = 8;

/// Input length of source `s`: 1,024 for patches, 4,096 for the full face.
pub fn source_dim(s: usize) -> usize {
    if s == FULL_FACE {
        FACE_SIZE * FACE_SIZE
    } else {
        PATCH_SIZE * PATCH_SIZE
    }
}

/// `(row, col)` of the top-left corner of patch `p` (0-based, row-major).
pub fn patch_origin(p: usize) -> (usize, usize) {
    (PATCH_OFFSETS[p / 3], PATCH_OFFSETS[p % 3])
}

/// Human-readable source label: `patch1`..`patch9`, `full_face`.
pub fn source_name(s: usize) -> String {
    if s == FULL_FACE {
        "full_face".to_owned()
    } else {
        format!("patch{}", s + 1)
    }
}

/// Bilinear resample of a raw 0–255 image to 64×64, scaled to [0,1].
///
/// Pixel centres sit at half-integer positions, so a 64×64 input maps onto
/// itself exactly.
pub fn preprocess(image: &Mat<f64>) -> Result<Mat<f64>> {
    let (h, w) = image.shape();
    if h < MIN_INPUT || w < MIN_INPUT {
        return Err(Error::Input(format!("{h}x{w} image is smaller than {MIN_INPUT}x{MIN_INPUT}")));
    }
    let axis = |n: usize| -> Vec<(usize, usize, f64)> {
        let scale = n as f64 / FACE_SIZE as f64;
        (0..FACE_SIZE)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = axis(h);
    let cols = axis(w);
    let mut out = Mat::zeros(FACE_SIZE, FACE_SIZE);
    for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            let top = lerp(image.get(r0, c0), image.get(r0, c1), fc);
            let bottom = lerp(image.get(r1, c0), image.get(r1, c1), fc);
            out.set(r, c, lerp(top, bottom, fr) / 255.0);
        }
    }
    Ok(out)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// The ten source vectors of a 64×64 face, each flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub sources: Vec<Vec<f64>>,
}

pub fn tessellate(face: &Mat<f64>) -> Result<PatchGrid> {
    if face.shape() != (FACE_SIZE, FACE_SIZE) {
        return Err(Error::shape("tessellate", (FACE_SIZE, FACE_SIZE), face.shape()));
    }
    let mut sources = Vec::with_capacity(SOURCES);
    for p in 0..9 {
        let (r0, c0) = patch_origin(p);
        let mut v = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
        for r in r0..r0 + PATCH_SIZE {
            v.extend_from_slice(&face.row(r)[c0..c0 + PATCH_SIZE]);
        }
        sources.push(v);
    }
    sources.push(face.data().to_vec());
    Ok(PatchGrid { sources })
}
