use proptest::prelude::*;

use super::*;
use crate::synthgen::{add_noise, noisy_fixture, render_clean, NoiseSpec, PatternSpec};

fn fixture() -> (PatternSpec, SemImage) {
    let (p, _, noisy) = noisy_fixture(1).unwrap();
    (p, noisy)
}

#[test]
fn constant_image_is_a_fixed_point_of_every_method() {
    let img = SemImage::new(37, 23, vec![0.3137; 37 * 23], 0.8).unwrap();
    for m in DenoiseMethod::defaults() {
        assert_eq!(denoise(&img, m).unwrap(), img, "{m}");
    }
}

#[test]
fn median_removes_isolated_hot_pixel() {
    let mut px = vec![0.2; 15 * 15];
    px[7 * 15 + 7] = 1.0;
    let img = SemImage::new(15, 15, px, 0.8).unwrap();
    let out = denoise(&img, DenoiseMethod::Median { k: 3 }).unwrap();
    assert!(out.pixels().iter().all(|&v| v == 0.2));
}

#[test]
fn even_or_nonpositive_parameters_are_rejected() {
    let img = SemImage::constant(8, 8, 0.5).unwrap();
    assert!(matches!(denoise(&img, DenoiseMethod::Median { k: 4 }), Err(Error::Param { .. })));
    assert!(matches!(denoise(&img, DenoiseMethod::Gaussian { sigma: 0.0 }), Err(Error::Param { .. })));
    assert!(DenoiseMethod::parse("fourier", Some(-1.0)).is_err());
    assert!(DenoiseMethod::parse("wiener", None).is_err());
    assert_eq!(DenoiseMethod::parse("median", Some(5.0)).unwrap(), DenoiseMethod::Median { k: 5 });
}

#[test]
fn denoising_keeps_size_and_calibration() {
    let img = SemImage::new(9, 5, (0..45).map(|i| i as f64 / 45.0).collect(), 1.7).unwrap();
    for m in DenoiseMethod::defaults() {
        let out = denoise(&img, m).unwrap();
        assert_eq!((out.width(), out.height(), out.pixel_size_nm()), (9, 5, 1.7));
    }
}

#[test]
fn line_pattern_power_peaks_at_pitch_bin() {
    let p = PatternSpec { image_size: 512, ..Default::default() };
    let profile = psd_profile(&p.render_nominal().unwrap());
    let peak = (1..PSD_BINS).max_by(|&a, &b| profile.power[a].total_cmp(&profile.power[b])).unwrap();
    assert_eq!(peak, PsdProfile::bin_of(1.0 / 40.0));
    assert!(profile.freqs.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn white_noise_profile_is_flat_over_high_band() {
    let img = add_noise(&SemImage::constant(256, 256, 0.5).unwrap(), &NoiseSpec::gaussian(0.05, 3)).unwrap();
    let profile = psd_profile(&img);
    let high: Vec<f64> = (0..PSD_BINS)
        .filter(|&b| profile.freqs[b] > 0.25)
        .map(|b| profile.power[b])
        .collect();
    let max = high.iter().copied().fold(0.0, f64::max);
    let min = high.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(max / min < 3.0, "{max} / {min}");
}

#[test]
fn zero_image_has_zero_profile() {
    let profile = psd_profile(&SemImage::constant(64, 64, 0.0).unwrap());
    assert!(profile.power.iter().all(|&p| p == 0.0));
}

#[test]
fn parseval_holds_on_noisy_fixture() {
    let (_, noisy) = fixture();
    let spec = power_spectrum(&noisy);
    let px = noisy.pixels();
    let n = px.len() as f64;
    let mean = px.iter().sum::<f64>() / n;
    let var = px.iter().map(|v| v * v).sum::<f64>() / n - mean * mean;
    assert!((spec.ac_power() - var).abs() <= 1e-6 * var);
}

#[test]
fn non_square_images_are_padded() {
    let img = SemImage::new(100, 60, (0..6000).map(|i| ((i * 7) % 13) as f64 / 13.0).collect(), 0.8).unwrap();
    let spec = power_spectrum(&img);
    assert_eq!(spec.side, 128);
    assert!(spec.power[0] > 0.0);
}

#[test]
fn unchanged_image_reports_zero_change_and_fails() {
    let (p, noisy) = fixture();
    let cfg = SpectralConfig { pitch_px: p.pitch_px, ..Default::default() };
    let r = spectral_report(&noisy, &noisy, &cfg).unwrap();
    assert_eq!((r.low_band_change, r.high_band_change, r.pass), (0.0, 0.0, false));
}

#[test]
fn lowpass_between_bands_removes_high_band() {
    let (p, noisy) = fixture();
    let cfg = SpectralConfig { pitch_px: p.pitch_px, ..Default::default() };
    let out = denoise(&noisy, DenoiseMethod::FourierLowpass { cutoff: 0.2 }).unwrap();
    let r = spectral_report(&noisy, &out, &cfg).unwrap();
    assert!(r.high_band_change < -0.95, "{r:?}");
}

#[test]
fn gaussian_passes_spectral_contract_and_lowers_high_band() {
    let (p, noisy) = fixture();
    let cfg = SpectralConfig { pitch_px: p.pitch_px, ..Default::default() };
    let out = denoise(&noisy, DenoiseMethod::Gaussian { sigma: 1.0 }).unwrap();
    let r = spectral_report(&noisy, &out, &cfg).unwrap();
    assert!(r.high_band_change < 0.0);
    assert!(r.pass, "{r:?}");
}

#[test]
fn zero_reference_power_is_undefined() {
    let flat = SemImage::constant(32, 32, 0.5).unwrap();
    assert!(matches!(spectral_report(&flat, &flat, &SpectralConfig::default()), Err(Error::Undefined(_))));
}

#[test]
fn mismatched_sizes_are_rejected() {
    let a = SemImage::constant(32, 32, 0.5).unwrap();
    let b = SemImage::constant(16, 32, 0.5).unwrap();
    assert!(spectral_report(&a, &b, &SpectralConfig::default()).is_err());
}

#[test]
fn psd_csv_has_header_and_one_row_per_bin() {
    let csv = psd_profile(&SemImage::constant(16, 16, 0.1).unwrap()).to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "bin_freq,power");
    assert_eq!(lines.len(), PSD_BINS + 1);
}

#[test]
fn straight_clean_edges_have_no_spikes() {
    let p = PatternSpec { image_size: 256, charging_contrast: 0.1, seed: 2, ..Default::default() };
    let (img, _) = render_clean(&p, &[]).unwrap();
    assert_eq!(edge_spike_metric(&img, &p).unwrap(), 0.0);
}

#[test]
fn flat_image_has_no_edges() {
    let p = PatternSpec { image_size: 64, ..Default::default() };
    let flat = SemImage::constant(64, 64, 0.5).unwrap();
    assert!(matches!(edge_spike_metric(&flat, &p), Err(Error::Detection(_))));
}

#[test]
fn denoising_does_not_add_spikes() {
    let p = PatternSpec { image_size: 512, charging_contrast: 0.1, seed: 4, ..Default::default() };
    let (clean, _) = render_clean(&p, &[]).unwrap();
    let noisy = add_noise(&clean, &NoiseSpec::gaussian(0.08, 5)).unwrap();
    let before = edge_spike_metric(&noisy, &p).unwrap();
    for m in DenoiseMethod::defaults() {
        let after = edge_spike_metric(&denoise(&noisy, m).unwrap(), &p).unwrap();
        assert!(after <= before, "{m}: {after} > {before}");
    }
}

#[test]
fn batch_matches_single_calls() {
    let imgs: Vec<SemImage> = (0..3)
        .map(|s| add_noise(&SemImage::constant(16, 16, 0.5).unwrap(), &NoiseSpec::gaussian(0.1, s)).unwrap())
        .collect();
    let m = DenoiseMethod::Median { k: 3 };
    let out = denoise_batch(&imgs, &m).unwrap();
    for (i, o) in imgs.iter().zip(&out) {
        assert_eq!(&denoise(i, m).unwrap(), o);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn outputs_stay_in_unit_interval(px in proptest::collection::vec(0.0f64..=1.0, 64), which in 0usize..3) {
        let img = SemImage::new(8, 8, px, 0.8).unwrap();
        let out = denoise(&img, DenoiseMethod::defaults()[which]).unwrap();
        prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
