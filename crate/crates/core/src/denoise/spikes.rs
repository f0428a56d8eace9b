//! Edge-spike counting: how often a line edge jumps away from its own
//! typical position from one row to the next.

use serde::{Deserialize, Serialize};

use super::filters::gaussian_blur_values;
use crate::error::{Error, Result};
use crate::raster::SemImage;
use crate::synthgen::PatternSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpikeConfig {
    /// 1-D Gaussian applied to each row before locating crossings.
    pub smoothing_sigma_px: f64,
    pub mad_factor: f64,
    /// Deviations at or below this never count, so sub-pixel jitter around
    /// a near-zero MAD is not reported as a spike.
    pub min_deviation_px: f64,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        SpikeConfig {
            smoothing_sigma_px: 1.0,
            mad_factor: 3.0,
            min_deviation_px: 0.5,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sub-pixel crossing of `level` nearest to `nominal` within `reach`.
/// `rising` selects space-to-line (left) edges.
fn crossing(row: &[f64], level: f64, nominal: f64, reach: f64, rising: bool) -> Option<f64> {
    let lo = (nominal - reach).floor().max(0.0) as usize;
    let hi = ((nominal + reach).ceil() as usize).min(row.len() - 1);
    let mut best: Option<f64> = None;
    for x in lo..hi {
        let (a, b) = (row[x] - level, row[x + 1] - level);
        let hit = if rising { a < 0.0 && b >= 0.0 } else { a >= 0.0 && b < 0.0 };
        if hit {
            // pixel centers sit at x + 0.5
            let pos = x as f64 + 0.5 + a / (a - b);
            if best.is_none_or(|p| (pos - nominal).abs() < (p - nominal).abs()) {
                best = Some(pos);
            }
        }
    }
    best
}

pub fn edge_spike_metric(image: &SemImage, pattern: &PatternSpec) -> Result<f64> {
    edge_spike_metric_with(image, pattern, &SpikeConfig::default())
}

/// Spikes per edge over every line lying fully inside the image.
///
/// Each row is smoothed, then each nominal edge is located at the crossing
/// of the line/space mid intensity closest to its design position. A row
/// counts as a spike for an edge when the edge is missing or deviates from
/// that edge's median position by more than `mad_factor` median absolute
/// deviations (and more than `min_deviation_px`).
pub fn edge_spike_metric_with(image: &SemImage, pattern: &PatternSpec, cfg: &SpikeConfig) -> Result<f64> {
    let (w, h) = (image.width(), image.height());
    let level = pattern.mid_intensity();
    let reach = pattern.pitch_px / 4.0;
    let edges: Vec<(f64, bool)> = pattern
        .nominal_lines()
        .into_iter()
        .filter(|l| l.right <= w as f64)
        .flat_map(|l| [(l.left, true), (l.right, false)])
        .collect();

    let mut positions: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(h); edges.len()];
    for y in 0..h {
        let row = gaussian_blur_values(image.row(y), w, 1, cfg.smoothing_sigma_px);
        for (e, &(nominal, rising)) in edges.iter().enumerate() {
            positions[e].push(crossing(&row, level, nominal, reach, rising));
        }
    }

    if positions.iter().flatten().all(Option::is_none) {
        return Err(Error::Detection("no mid-intensity crossing near any nominal edge".into()));
    }

    let mut spikes = 0usize;
    for pos in &positions {
        let mut found: Vec<f64> = pos.iter().flatten().copied().collect();
        if found.is_empty() {
            spikes += pos.len();
            continue;
        }
        let med = median(&mut found);
        let mut dev: Vec<f64> = found.iter().map(|p| (p - med).abs()).collect();
        let mad = median(&mut dev);
        let limit = (cfg.mad_factor * mad).max(cfg.min_deviation_px);
        spikes += pos
            .iter()
            .filter(|p| p.is_none_or(|v| (v - med).abs() > limit))
            .count();
    }
    Ok(spikes as f64 / edges.len() as f64)
}
