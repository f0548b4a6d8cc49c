//! Grayscale image files: binary PGM (P5, maxval 255) and the packed RCIM format
//! (`"RCIM"`, u16 LE height, u16 LE width, row-major u8 pixels).
//!
//! Colour sources must be converted upstream, e.g. with luma
//! `Y = 0.299 R + 0.587 G + 0.114 B`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const RCIM_MAGIC: &[u8; 4] = b"RCIM";

/// Decode a file into an `H × W` matrix of raw 0–255 values.
pub fn load_gray_image(path: impl AsRef<Path>) -> Result<Mat<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::DatasetNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_gray_image(&bytes)
}

pub fn decode_gray_image(bytes: &[u8]) -> Result<Mat<f64>> {
    if bytes.starts_with(RCIM_MAGIC) {
        decode_rcim(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(b"P2") {
        Err(Error::Format("ASCII PGM (P2) is not supported; use binary P5".into()))
    } else {
        Err(Error::Format("unknown image magic".into()))
    }
}

fn decode_rcim(bytes: &[u8]) -> Result<Mat<f64>> {
    if bytes.len() < 8 {
        return Err(Error::Format("truncated RCIM header".into()));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    pixels(&bytes[8..], h, w)
}

fn decode_pgm(bytes: &[u8]) -> Result<Mat<f64>> {
    // Header: magic, width, height, maxval separated by whitespace (with
    // `#` comments), then exactly one whitespace byte before the raster.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("PGM header value out of range".into()))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!("PGM maxval {maxval} is not supported; expected 255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("malformed PGM header".into()));
    }
    pixels(&bytes[pos + 1..], h, w)
}

fn pixels(raster: &[u8], h: usize, w: usize) -> Result<Mat<f64>> {
    if raster.len() < h * w {
        return Err(Error::Format(format!(
            "truncated pixel data: {} bytes for a {h}x{w} image",
            raster.len()
        )));
    }
    Mat::from_vec(h, w, raster[..h * w].iter().map(|&p| p as f64).collect())
}

fn to_bytes(image: &Mat<f64>) -> Vec<u8> {
    image.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
}

/// Pixels are rounded and clamped to 0–255.
pub fn encode_rcim(image: &Mat<f64>) -> Result<Vec<u8>> {
    let (h, w) = image.shape();
    let (Ok(h16), Ok(w16)) = (u16::try_from(h), u16::try_from(w)) else {
        return Err(Error::Input(format!("{h}x{w} image exceeds the RCIM size limit")));
    };
    let mut out = Vec::with_capacity(8 + h * w);
    out.extend_from_slice(RCIM_MAGIC);
    out.extend_from_slice(&h16.to_le_bytes());
    out.extend_from_slice(&w16.to_le_bytes());
    out.extend(to_bytes(image));
    Ok(out)
}

pub fn encode_pgm(image: &Mat<f64>) -> Vec<u8> {
    let (h, w) = image.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(to_bytes(image));
    out
}

pub fn save_rcim(image: &Mat<f64>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_rcim(image)?)?;
    Ok(())
}

pub fn save_pgm(image: &Mat<f64>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(image))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_pgm() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 255, 128, 64]);
        let m = decode_gray_image(&bytes).unwrap();
        assert_eq!(m, Mat::from_rows(&[[0.0, 255.0], [128.0, 64.0]]));
    }

    #[test]
    fn pgm_with_comment_and_nonsquare() {
        let mut bytes = b"P5 # made by hand\n3 1 255\n".to_vec();
        bytes.extend([1, 2, 3]);
        let m = decode_gray_image(&bytes).unwrap();
        assert_eq!(m.shape(), (1, 3));
        assert_eq!(m.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn ascii_pgm_rejected() {
        assert!(matches!(decode_gray_image(b"P2\n1 1\n255\n0\n"), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_magic_and_truncation() {
        assert!(matches!(decode_gray_image(b"GIF89a"), Err(Error::Format(_))));
        assert!(matches!(decode_gray_image(b"RCIM\x02\x00\x02\x00\x01\x02\x03"), Err(Error::Format(_))));
        assert!(matches!(decode_gray_image(b"P5\n2 2\n255\n\x01"), Err(Error::Format(_))));
        assert!(matches!(decode_gray_image(b"P5\n1 1\n65535\n\x00\x00"), Err(Error::Format(_))));
    }

    #[test]
    fn rcim_layout() {
        let img = Mat::from_rows(&[[1.0, 2.0, 3.0]]);
        let bytes = encode_rcim(&img).unwrap();
        assert_eq!(bytes, b"RCIM\x01\x00\x03\x00\x01\x02\x03");
    }

    #[test]
    fn round_trips_are_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..37 * 23).map(|_| rng.gen_range(0..=255u8) as f64).collect();
        let img = Mat::from_vec(37, 23, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_rcim(&img, dir.path().join("a.rcim")).unwrap();
        save_pgm(&img, dir.path().join("a.pgm")).unwrap();
        assert_eq!(load_gray_image(dir.path().join("a.rcim")).unwrap(), img);
        assert_eq!(load_gray_image(dir.path().join("a.pgm")).unwrap(), img);
    }
}
