//! Power spectral density, radial profiles and band-power comparisons.

use serde::{Deserialize, Serialize};

use super::filters::{fft2, freq};
use crate::error::{Error, Result};
use crate::raster::SemImage;

pub const PSD_BINS: usize = 64;
const NYQUIST: f64 = 0.5;

/// 2-D power spectrum normalized so that the sum over all non-DC bins equals
/// the intensity variance (Parseval).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub side: usize,
    /// Row-major `side x side` power, DC at index 0.
    pub power: Vec<f64>,
}

impl PowerSpectrum {
    /// Radial frequency (cycles/pixel) of flat index `i`.
    pub fn radius(&self, i: usize) -> f64 {
        let fx = freq(i % self.side, self.side);
        let fy = freq(i / self.side, self.side);
        (fx * fx + fy * fy).sqrt()
    }

    /// Summed power over `lo < f < hi` (DC never included).
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.power
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(i, _)| {
                let f = self.radius(*i);
                f > lo && f < hi
            })
            .map(|(_, p)| p)
            .sum()
    }

    /// Total power excluding DC.
    pub fn ac_power(&self) -> f64 {
        self.power[1..].iter().sum()
    }
}

/// Pad to a power-of-two square with the image mean, then take `|F|^2 / N^2`.
///
/// Padding with the mean adds no DC offset; images that already are
/// power-of-two squares are transformed as-is.
pub fn power_spectrum(image: &SemImage) -> PowerSpectrum {
    let (w, h) = (image.width(), image.height());
    let side = w.max(h).next_power_of_two();
    let values: Vec<f64> = if side == w && side == h {
        image.pixels().to_vec()
    } else {
        let mean = image.pixels().iter().sum::<f64>() / (w * h) as f64;
        let mut v = vec![mean; side * side];
        for y in 0..h {
            v[y * side..y * side + w].copy_from_slice(image.row(y));
        }
        v
    };
    let n2 = ((side * side) as f64).powi(2);
    let power = fft2(&values, side, side).iter().map(|c| c.norm_sqr() / n2).collect();
    PowerSpectrum { side, power }
}

/// Radially averaged PSD in [`PSD_BINS`] integer bins over `[0, 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdProfile {
    /// Lower edge of each bin, cycles/pixel.
    pub freqs: Vec<f64>,
    /// Mean power per bin (0 for empty bins).
    pub power: Vec<f64>,
}

impl PsdProfile {
    pub fn bin_of(f: f64) -> usize {
        (PSD_BINS as f64 * f / NYQUIST).floor() as usize
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_freq,power\n");
        for (f, p) in self.freqs.iter().zip(&self.power) {
            s.push_str(&format!("{f},{p:e}\n"));
        }
        s
    }
}

/// Radial profile of the power spectrum. DC is excluded; corner
/// frequencies at or beyond Nyquist fall outside every bin.
pub fn psd_profile(image: &SemImage) -> PsdProfile {
    profile_of(&power_spectrum(image))
}

pub fn profile_of(spec: &PowerSpectrum) -> PsdProfile {
    let mut sum = vec![0.0; PSD_BINS];
    let mut count = vec![0usize; PSD_BINS];
    for (i, p) in spec.power.iter().enumerate().skip(1) {
        let bin = PsdProfile::bin_of(spec.radius(i));
        if bin < PSD_BINS {
            sum[bin] += p;
            count[bin] += 1;
        }
    }
    PsdProfile {
        freqs: (0..PSD_BINS).map(|b| b as f64 * NYQUIST / PSD_BINS as f64).collect(),
        power: sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect(),
    }
}

/// Band edges and pass tolerances for [`spectral_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    /// Low band is `f < 1 / (2 * pitch_px)`.
    pub pitch_px: f64,
    /// High band is `f > high_band_start`.
    pub high_band_start: f64,
    pub max_high_change: f64,
    pub max_abs_low_change: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            pitch_px: 40.0,
            high_band_start: 0.25,
            max_high_change: -0.5,
            max_abs_low_change: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub low_band_change: f64,
    pub high_band_change: f64,
    pub pass: bool,
}

pub fn band_powers(spec: &PowerSpectrum, cfg: &SpectralConfig) -> (f64, f64) {
    (
        spec.band_power(0.0, 1.0 / (2.0 * cfg.pitch_px)),
        spec.band_power(cfg.high_band_start, f64::INFINITY),
    )
}

/// Relative band-power change from `noisy` to `denoised`.
pub fn spectral_report(noisy: &SemImage, denoised: &SemImage, cfg: &SpectralConfig) -> Result<SpectralReport> {
    if (noisy.width(), noisy.height()) != (denoised.width(), denoised.height()) {
        return Err(Error::Contract(format!(
            "size mismatch: {}x{} vs {}x{}",
            noisy.width(),
            noisy.height(),
            denoised.width(),
            denoised.height()
        )));
    }
    if !(cfg.pitch_px > 0.0) {
        return Err(Error::param("pitch_px", "must be positive"));
    }
    let (low_a, high_a) = band_powers(&power_spectrum(noisy), cfg);
    let (low_b, high_b) = band_powers(&power_spectrum(denoised), cfg);
    if low_a == 0.0 || high_a == 0.0 {
        return Err(Error::Undefined("noisy image has zero power in a reference band".into()));
    }
    let low_band_change = (low_b - low_a) / low_a;
    let high_band_change = (high_b - high_a) / high_a;
    Ok(SpectralReport {
        low_band_change,
        high_band_change,
        pass: high_band_change <= cfg.max_high_change && low_band_change.abs() <= cfg.max_abs_low_change,
    })
}
