//! Row-major single-channel images and binary masks, plus the on-disk
//! formats: binary PGM (`P5`, 8-bit) and a raw little-endian `f32` sidecar
//! that round-trips pixel values without quantization.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::format(
                "image",
                format!("{} values for {width}x{height}", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn ensure_shape(&self, other: (usize, usize)) -> Result<()> {
        if self.shape() != other {
            return Err(Error::Shape {
                expected: other,
                actual: self.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64;
        var.sqrt()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// 8-bit quantization of a `[0,1]` image (values are clamped first).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, self.width, self.height, &self.to_u8())
    }

    pub fn read_pgm(path: &Path) -> Result<Image> {
        let (w, h, bytes) = read_pgm(path)?;
        Image::new(w, h, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    /// Raw sidecar: `width*height` little-endian `f32` values, no header.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: &Path, width: usize, height: usize) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != width * height * 4 {
            return Err(Error::format(
                "raw image",
                format!("{}: {} bytes for {width}x{height}", path.display(), bytes.len()),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Image::new(width, height, data)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::format(
                "mask",
                format!("{} values for {width}x{height}", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.data
    }

    pub fn ensure_shape(&self, other: (usize, usize)) -> Result<()> {
        if self.shape() != other {
            return Err(Error::Shape {
                expected: other,
                actual: self.shape(),
            });
        }
        Ok(())
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// `(x, y)` centroid of set pixels, `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a || **b)
            .count()
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm(path, self.width, self.height, &bytes)
    }

    pub fn read_pgm(path: &Path) -> Result<Mask> {
        let (w, h, bytes) = read_pgm(path)?;
        Mask::new(w, h, bytes.iter().map(|&b| b >= 128).collect())
    }
}

fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(bytes.len() + 20);
    write!(out, "P5\n{width} {height}\n255\n").expect("write to vec");
    out.extend_from_slice(bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format("PGM", format!("{}: {d}", path.display()));

    // Header: magic, width, height, maxval separated by whitespace, with
    // optional `#` comments, followed by a single whitespace byte.
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary graymap"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit graymaps are supported"));
    }
    let body = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated body"))?;
    Ok((w, h, body.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 3, |x, y| (x + 5 * y) as f64 / 14.0);
        let p = dir.path().join("a.pgm");
        img.write_pgm(&p).unwrap();
        let back = Image::read_pgm(&p).unwrap();
        assert_eq!(back.shape(), (5, 3));
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn raw_sidecar_is_lossless_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(4, 4, |x, y| 0.1 * x as f64 + 0.01 * y as f64);
        let p = dir.path().join("a.f32");
        img.write_raw(&p).unwrap();
        let back = Image::read_raw(&p, 4, 4).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert!(Image::read_raw(&p, 5, 4).is_err());
    }

    #[test]
    fn mask_pgm_uses_0_and_255() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::from_fn(3, 2, |x, y| x == y);
        let p = dir.path().join("m.pgm");
        m.write_pgm(&p).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert!(raw.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&raw[raw.len() - 6..], &[255, 0, 0, 0, 255, 0]);
        assert_eq!(Mask::read_pgm(&p).unwrap(), m);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        std::fs::write(&p, bytes).unwrap();
        let img = Image::read_pgm(&p).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }
}
