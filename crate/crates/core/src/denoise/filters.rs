//! Spatial and Fourier filters on raw value buffers.
//!
//! Every filter is written as `center + sum(w_i * (x_i - center))` (or the
//! Fourier equivalent with the first pixel as reference), so a constant
//! image comes back bit-identical.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn convolve_rows(src: &[f64], width: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = kernel.len() / 2;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(width).zip(src.par_chunks(width)).for_each(|(o, row)| {
        for x in 0..width {
            let c = row[x];
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                let xi = (x + i).saturating_sub(radius).min(width - 1);
                acc += w * (row[xi] - c);
            }
            o[x] = c + acc;
        }
    });
    out
}

fn transpose(src: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = src[y * width + x];
        }
    }
    out
}

/// Separable Gaussian blur with replicated borders. `sigma == 0` copies.
pub fn gaussian_blur_values(src: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return src.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let rows = convolve_rows(src, width, &kernel);
    let cols = convolve_rows(&transpose(&rows, width, height), height, &kernel);
    transpose(&cols, height, width)
}

/// k x k median with replicated borders; `k` must be odd.
pub(crate) fn median_values(src: &[f64], width: usize, height: usize, k: usize) -> Vec<f64> {
    let r = k / 2;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, o)| {
        let mut window = Vec::with_capacity(k * k);
        for (x, slot) in o.iter_mut().enumerate() {
            window.clear();
            for dy in 0..k {
                let yy = (y + dy).saturating_sub(r).min(height - 1);
                for dx in 0..k {
                    let xx = (x + dx).saturating_sub(r).min(width - 1);
                    window.push(src[yy * width + xx]);
                }
            }
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            *slot = *m;
        }
    });
    out
}

/// Signed frequency of DFT index `i` out of `n`, in cycles per sample.
pub(crate) fn freq(i: usize, n: usize) -> f64 {
    let i = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    i / n as f64
}

/// Forward 2-D DFT (unnormalized), row-major.
pub(crate) fn fft2(values: &[f64], width: usize, height: usize) -> Vec<Complex<f64>> {
    let mut data: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2_in_place(&mut data, width, height, false);
    data
}

pub(crate) fn fft2_in_place(data: &mut [Complex<f64>], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    data.par_chunks_mut(width).for_each(|row| row_fft.process(row));
    let mut t = vec![Complex::new(0.0, 0.0); data.len()];
    for y in 0..height {
        for x in 0..width {
            t[x * height + y] = data[y * width + x];
        }
    }
    t.par_chunks_mut(height).for_each(|col| col_fft.process(col));
    for x in 0..width {
        for y in 0..height {
            data[y * width + x] = t[x * height + y];
        }
    }
}

/// Ideal radial low-pass: zero every frequency with radius above `cutoff`.
pub(crate) fn fourier_lowpass_values(src: &[f64], width: usize, height: usize, cutoff: f64) -> Vec<f64> {
    let reference = src[0];
    let mut data: Vec<Complex<f64>> = src.iter().map(|&v| Complex::new(v - reference, 0.0)).collect();
    fft2_in_place(&mut data, width, height, false);
    for y in 0..height {
        let fy = freq(y, height);
        for x in 0..width {
            let fx = freq(x, width);
            if (fx * fx + fy * fy).sqrt() > cutoff {
                data[y * width + x] = Complex::new(0.0, 0.0);
            }
        }
    }
    fft2_in_place(&mut data, width, height, true);
    let n = (width * height) as f64;
    data.iter().map(|c| reference + c.re / n).collect()
}
