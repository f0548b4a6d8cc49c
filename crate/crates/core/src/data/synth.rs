//! Procedural 64×64 faces with planted binary attributes.
//!
//! Every image is a bright ellipse on a dark background. Each 16×16 block gets
//! its own brightness offset, so local windows are noisier estimates of the
//! global brightness than the whole face is. Attributes are drawn
//! independently with probability one half and painted additively.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Mat;

use super::attrs::{AttributeDataset, ImageSource, Record, SplitRatios};

pub const SYNTH_SIZE: usize = 64;
pub const MAX_SYNTH_ATTRIBUTES: usize = 8;

const BACKGROUND: f64 = 0.2;
const FACE: f64 = 0.45;
const BLOCK_SD: f64 = 0.12;
const PIXEL_SD: f64 = 0.05;
const GLOBAL_SHIFT: f64 = 0.15;

/// Rectangle `rows × cols` (half-open) and the intensity added inside it.
struct Primitive {
    name: &'static str,
    rows: (usize, usize),
    cols: (usize, usize),
    delta: f64,
}

const PRIMITIVES: [Primitive; MAX_SYNTH_ATTRIBUTES] = [
    Primitive { name: "TopLeftSquare", rows: (2, 22), cols: (2, 22), delta: 0.4 },
    Primitive { name: "BottomBar", rows: (50, 56), cols: (8, 56), delta: 0.4 },
    // Covers the whole image; painted as a global shift.
    Primitive { name: "Bright", rows: (0, 64), cols: (0, 64), delta: GLOBAL_SHIFT },
    Primitive { name: "RightBar", rows: (20, 44), cols: (50, 56), delta: 0.4 },
    Primitive { name: "CenterDark", rows: (26, 38), cols: (26, 38), delta: -0.3 },
    Primitive { name: "TopRightBar", rows: (4, 10), cols: (30, 60), delta: 0.4 },
    Primitive { name: "LeftBlock", rows: (36, 46), cols: (2, 12), delta: 0.4 },
    Primitive { name: "UpperDark", rows: (12, 20), cols: (36, 44), delta: -0.3 },
];

/// Attribute names used by [`gen_synthetic`] for `k` attributes.
pub fn synth_attribute_names(k: usize) -> Vec<String> {
    PRIMITIVES[..k.min(MAX_SYNTH_ATTRIBUTES)]
        .iter()
        .map(|p| p.name.to_owned())
        .collect()
}

/// `n` images with `k ≤ 8` planted attributes, raw pixel values 0–255.
pub fn gen_synthetic(n: usize, k: usize, seed: u64) -> Result<AttributeDataset> {
    if k > MAX_SYNTH_ATTRIBUTES {
        return Err(Error::Config(format!(
            "synthetic data supports at most {MAX_SYNTH_ATTRIBUTES} attributes, got {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let splits = SplitRatios::default().assign(n);
    let mut records = Vec::with_capacity(n);
    for (i, split) in splits.into_iter().enumerate() {
        let labels: Vec<u8> = (0..k).map(|_| rng.gen_bool(0.5) as u8).collect();
        images.push(render(&labels, &mut rng));
        records.push(Record {
            file: format!("{:06}.rcim", i + 1),
            labels,
            split,
        });
    }
    Ok(AttributeDataset {
        attributes: synth_attribute_names(k),
        records,
        images: ImageSource::Memory(images),
    })
}

fn render<R: Rng>(labels: &[u8], rng: &mut R) -> Mat<f64> {
    let s = SYNTH_SIZE;
    let block = Normal::new(0.0, BLOCK_SD).expect("valid sd");
    let pixel = Normal::new(0.0, PIXEL_SD).expect("valid sd");
    let offsets: Vec<f64> = (0..16).map(|_| block.sample(rng)).collect();
    let centre = (s as f64 - 1.0) / 2.0;
    let mut img = Mat::zeros(s, s);
    for r in 0..s {
        for c in 0..s {
            let dy = (r as f64 - centre) / 30.0;
            let dx = (c as f64 - centre) / 24.0;
            let mut v = if dx * dx + dy * dy <= 1.0 { FACE } else { BACKGROUND };
            v += offsets[(r / 16) * 4 + c / 16];
            for (p, &on) in PRIMITIVES.iter().zip(labels) {
                if on == 1 && (p.rows.0..p.rows.1).contains(&r) && (p.cols.0..p.cols.1).contains(&c) {
                    v += p.delta;
                }
            }
            v += pixel.sample(rng);
            img.set(r, c, (v.clamp(0.0, 1.0) * 255.0).round());
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_mean(img: &Mat<f64>, rows: (usize, usize), cols: (usize, usize)) -> f64 {
        let mut s = 0.0;
        for r in rows.0..rows.1 {
            for c in cols.0..cols.1 {
                s += img.get(r, c);
            }
        }
        s / ((rows.1 - rows.0) * (cols.1 - cols.0)) as f64
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_synthetic(100, 4, 3).unwrap(), gen_synthetic(100, 4, 3).unwrap());
        assert_ne!(gen_synthetic(10, 4, 3).unwrap(), gen_synthetic(10, 4, 4).unwrap());
    }

    #[test]
    fn too_many_attributes() {
        assert!(matches!(gen_synthetic(1, 9, 0), Err(Error::Config(_))));
    }

    #[test]
    fn top_left_square_is_brighter() {
        let ds = gen_synthetic(200, 4, 1).unwrap();
        let ImageSource::Memory(images) = &ds.images else { unreachable!() };
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (img, r) in images.iter().zip(&ds.records) {
            let m = window_mean(img, (2, 22), (2, 22));
            if r.labels[0] == 1 { pos.push(m) } else { neg.push(m) }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&pos) > mean(&neg) + 60.0);
    }

    #[test]
    fn class_balance() {
        let ds = gen_synthetic(1000, 8, 11).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        for rate in ds.positive_rate(&all) {
            assert!((rate - 0.5).abs() <= 0.05, "{rate}");
        }
    }

    #[test]
    fn pixels_are_bytes() {
        let ds = gen_synthetic(5, 8, 2).unwrap();
        let ImageSource::Memory(images) = &ds.images else { unreachable!() };
        for img in images {
            assert_eq!(img.shape(), (64, 64));
            assert!(img.data().iter().all(|&v| v.fract() == 0.0 && (0.0..=255.0).contains(&v)));
        }
    }
}
