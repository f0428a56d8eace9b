//! Single-channel intensity rasters.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};

/// Default calibration: a 32 nm pitch spans 40 px.
pub const DEFAULT_PIXEL_SIZE_NM: f64 = 0.8;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    pixel_size_nm: f64,
}

impl SemImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, pixel_size_nm: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("width/height", "image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::Contract(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if !(pixel_size_nm > 0.0 && pixel_size_nm.is_finite()) {
            return Err(Error::param("pixel_size_nm", format!("must be positive, got {pixel_size_nm}")));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("intensity {v} outside [0, 1]")));
        }
        Ok(SemImage {
            width,
            height,
            pixels,
            pixel_size_nm,
        })
    }

    /// Build from arbitrary finite values, clamping into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>, pixel_size_nm: f64) -> Result<Self> {
        for v in &mut pixels {
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite intensity".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        SemImage::new(width, height, pixels, pixel_size_nm)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        SemImage::new(width, height, vec![value; width * height], DEFAULT_PIXEL_SIZE_NM)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size_nm(&self) -> f64 {
        self.pixel_size_nm
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Same geometry and calibration, new pixel values (clamped).
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        SemImage::from_clamped(self.width, self.height, pixels, self.pixel_size_nm)
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([(self.get(x as usize, y as usize) * 255.0).round() as u8])
        })
    }

    pub fn from_gray8(img: &GrayImage, pixel_size_nm: f64) -> Result<Self> {
        let pixels = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        SemImage::new(img.width() as usize, img.height() as usize, pixels, pixel_size_nm)
    }

    /// PNG bytes, 8-bit grayscale.
    pub fn encode_png(&self) -> Vec<u8> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_gray8()
            .write_to(&mut buf, image::ImageFormat::Png)
            .expect("in-memory PNG encoding");
        buf.into_inner()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }

    /// Decode any supported raster, converting to 8-bit luma.
    pub fn load(path: &Path, pixel_size_nm: f64) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        SemImage::decode(&bytes, pixel_size_nm).map_err(|e| match e {
            Error::Codec { message, .. } => Error::Codec {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn decode(bytes: &[u8], pixel_size_nm: f64) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Codec {
            path: Default::default(),
            message: e.to_string(),
        })?;
        SemImage::from_gray8(&img.to_luma8(), pixel_size_nm)
    }
}
