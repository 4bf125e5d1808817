//! RGB float images and their on-disk forms (8-bit PNG, raw `.wsim`).

use std::path::Path;

use crate::error::{contract_err, Error, Result};
use crate::numerics::ByteReader;

pub const WSIM_MAGIC: &[u8; 4] = b"WSIM";

/// Row-major `H×W×3` image of `f64` values, nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(contract_err!(
                "image buffer of {} values does not match {width}x{height}x3",
                data.len()
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height || width == 0 || height == 0 {
            return Err(contract_err!("crop out of bounds"));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Image::new(width, height, data)
    }

    /// Bilinear resampling with pixel centers aligned at `(i + 0.5)`.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Image::filled(width, height, [0.0; 3]);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
                let x1 = (x0 + 1).min(self.width - 1);
                let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
                let mut rgb = [0.0; 3];
                for k in 0..3 {
                    let top = a[k] + (b[k] - a[k]) * tx;
                    let bottom = c[k] + (d[k] - c[k]) * tx;
                    rgb[k] = top + (bottom - top) * ty;
                }
                out.set_pixel(x, y, rgb);
            }
        }
        out
    }

    /// Center crop to a square, then resample to `size × size`.
    pub fn square_resized(&self, size: usize) -> Image {
        let side = self.width.min(self.height);
        let cropped = if self.width == self.height {
            self.clone()
        } else {
            self.crop((self.width - side) / 2, (self.height - side) / 2, side, side)
                .expect("center crop is in bounds")
        };
        cropped.resize(size, size)
    }

    /// 8-bit quantization: `round(255 · clamp(c, 0, 1))`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Image> {
        Image::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        Image::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
    }

    pub fn to_wsim_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 8);
        out.extend_from_slice(WSIM_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_wsim_bytes(bytes: &[u8]) -> Result<Image> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != WSIM_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "missing WSIM magic".into(),
            });
        }
        let (w, h, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if c != 3 {
            return Err(r.error(format!("expected 3 channels, found {c}")));
        }
        let data = (0..w * h * 3).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Image::new(w, h, data)
    }

    pub fn save_wsim(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_wsim_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_wsim(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_wsim_bytes(&bytes)
    }
}

pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wsim_round_trip() {
        let img = Image::new(2, 1, vec![0.1, 0.2, 0.3, -1.0, 2.0, 1e-300]).unwrap();
        assert_eq!(Image::from_wsim_bytes(&img.to_wsim_bytes()).unwrap(), img);
    }

    #[test]
    fn png_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::new(2, 1, vec![0.0, 0.5, 1.2, 0.25, -0.1, 1.0]).unwrap();
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(back.to_rgb8(), vec![0, 128, 255, 64, 0, 255]);
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = Image::filled(8, 6, [0.25, 0.5, 0.75]);
        let r = img.resize(64, 64);
        assert!(r.data().chunks(3).all(|p| p == [0.25, 0.5, 0.75]));
        let sq = img.square_resized(6);
        assert_eq!((sq.width(), sq.height()), (6, 6));
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = Image::new(3, 1, (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(img.flip_horizontal().pixel(0, 0), [6.0, 7.0, 8.0]);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }
}
