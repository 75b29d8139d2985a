//! Binary masks and 8-bit grayscale PGM files.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid("BinaryMask", format!("{} bits for {height}x{width}", bits.len())));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, bits }
    }

    /// Thresholds a `[H, W]` (or `[1, H, W]`, `[1, 1, H, W]`) tensor: a
    /// pixel is set when its value is `>= threshold`.
    pub fn from_tensor(t: &Tensor, threshold: f64) -> Result<Self> {
        let s = t.shape();
        if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
            return Err(Error::invalid("BinaryMask::from_tensor", format!("expected [H, W], got {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        Ok(Self { height: h, width: w, bits: t.data().iter().map(|&v| v >= threshold).collect() })
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(&[self.height, self.width], data).expect("mask extents are positive")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Coordinates `(row, col)` of all set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (i / self.width, i % self.width))
    }

    /// Set pixels with at least one unset 4-neighbour; pixels outside the
    /// image count as unset.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.height, self.width);
        self.pixels()
            .filter(|&(r, c)| {
                r == 0
                    || c == 0
                    || r + 1 == h
                    || c + 1 == w
                    || !self.get(r - 1, c)
                    || !self.get(r + 1, c)
                    || !self.get(r, c - 1)
                    || !self.get(r, c + 1)
            })
            .collect()
    }

    pub fn ensure_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::MaskShape(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let img = read_gray(path)?;
        let (w, h) = img.dimensions();
        Ok(Self { height: h as usize, width: w as usize, bits: img.pixels().map(|p| p.0[0] >= 128).collect() })
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let values: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_gray(path, self.height, self.width, &values)
    }
}

pub(crate) fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .with_guessed_format()?
        .decode()?;
    Ok(img.into_luma8())
}

pub(crate) fn write_gray(path: impl AsRef<Path>, height: usize, width: usize, values: &[u8]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary)).write_image(
        values,
        width as u32,
        height as u32,
        ExtendedColorType::L8,
    )?;
    Ok(())
}

/// Reads an 8-bit PGM and maps intensities to `[0, 1]`.
pub fn read_gray_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let img = read_gray(path)?;
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.pixels().map(|p| p.0[0] as f64 / 255.0).collect()))
}

/// Writes `[0, 1]` intensities as an 8-bit binary PGM, clamping and rounding.
pub fn write_gray_pgm(path: impl AsRef<Path>, height: usize, width: usize, values: &[f64]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::invalid("write_gray_pgm", format!("{} values for {height}x{width}", values.len())));
    }
    let bytes: Vec<u8> = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write_gray(path, height, width, &bytes)
}
