//! Denoisers and the spectral checks that validate them.

mod filters;
mod spectral;
mod spikes;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::SemImage;

pub use filters::gaussian_blur_values;
pub use spectral::{
    band_powers, power_spectrum, profile_of, psd_profile, spectral_report, PowerSpectrum, PsdProfile,
    SpectralConfig, SpectralReport, PSD_BINS,
};
pub use spikes::{edge_spike_metric, edge_spike_metric_with, SpikeConfig};

/// Shipped denoising methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DenoiseMethod {
    Median { k: usize },
    Gaussian { sigma: f64 },
    FourierLowpass { cutoff: f64 },
}

impl DenoiseMethod {
    /// Every shipped method at its default parameter.
    pub fn defaults() -> [DenoiseMethod; 3] {
        [
            DenoiseMethod::Median { k: 3 },
            DenoiseMethod::Gaussian { sigma: 1.0 },
            DenoiseMethod::FourierLowpass { cutoff: 0.2 },
        ]
    }

    /// Build from a method name and an optional numeric parameter.
    pub fn parse(name: &str, param: Option<f64>) -> Result<Self> {
        let m = match name {
            "median" => {
                let k = param.unwrap_or(3.0);
                if k.fract() != 0.0 || k < 1.0 {
                    return Err(Error::param("param", format!("median window must be a positive integer, got {k}")));
                }
                DenoiseMethod::Median { k: k as usize }
            }
            "gaussian" => DenoiseMethod::Gaussian {
                sigma: param.unwrap_or(1.0),
            },
            "fourier" | "fourier_lowpass" => DenoiseMethod::FourierLowpass {
                cutoff: param.unwrap_or(0.2),
            },
            other => return Err(Error::param("method", format!("unknown denoiser `{other}`"))),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DenoiseMethod::Median { k } if k == 0 || k % 2 == 0 => {
                Err(Error::param("k", format!("median window must be odd, got {k}")))
            }
            DenoiseMethod::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::param("sigma", format!("must be positive, got {sigma}")))
            }
            DenoiseMethod::FourierLowpass { cutoff } if !(cutoff > 0.0 && cutoff.is_finite()) => {
                Err(Error::param("cutoff", format!("must be positive, got {cutoff}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DenoiseMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiseMethod::Median { k } => write!(f, "median({k})"),
            DenoiseMethod::Gaussian { sigma } => write!(f, "gaussian({sigma})"),
            DenoiseMethod::FourierLowpass { cutoff } => write!(f, "fourier_lowpass({cutoff})"),
        }
    }
}

/// Plug-in point for other denoisers, such as a learned model.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> String;
    fn denoise(&self, image: &SemImage) -> Result<SemImage>;
}

impl Denoiser for DenoiseMethod {
    fn name(&self) -> String {
        self.to_string()
    }

    fn denoise(&self, image: &SemImage) -> Result<SemImage> {
        denoise(image, *self)
    }
}

/// Apply one method; output keeps size and calibration, clamped to `[0, 1]`.
pub fn denoise(image: &SemImage, method: DenoiseMethod) -> Result<SemImage> {
    method.validate()?;
    let (w, h) = (image.width(), image.height());
    let px = image.pixels();
    let out = match method {
        DenoiseMethod::Median { k } => filters::median_values(px, w, h, k),
        DenoiseMethod::Gaussian { sigma } => gaussian_blur_values(px, w, h, sigma),
        DenoiseMethod::FourierLowpass { cutoff } => filters::fourier_lowpass_values(px, w, h, cutoff),
    };
    image.with_pixels(out)
}

pub fn denoise_batch(images: &[SemImage], denoiser: &dyn Denoiser) -> Result<Vec<SemImage>> {
    images.par_iter().map(|img| denoiser.denoise(img)).collect()
}

#[cfg(test)]
mod tests;
