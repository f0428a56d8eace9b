//! Per-row resist geometry: a sorted list of material segments with their
//! target intensity, rasterized by exact area coverage.

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Segment {
    pub l: f64,
    pub r: f64,
    pub level: f64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RowLayout {
    segments: Vec<Segment>,
}

impl RowLayout {
    /// Add material on `[l, r)`; parts already covered keep their level.
    pub fn add(&mut self, l: f64, r: f64, level: f64) {
        if r <= l {
            return;
        }
        let mut pieces = vec![(l, r)];
        for s in &self.segments {
            pieces = pieces
                .into_iter()
                .flat_map(|(a, b)| {
                    let mut out = Vec::with_capacity(2);
                    if a < s.l.min(b) {
                        out.push((a, s.l.min(b)));
                    }
                    if s.r.max(a) < b {
                        out.push((s.r.max(a), b));
                    }
                    out
                })
                .collect();
        }
        for (a, b) in pieces {
            self.segments.push(Segment { l: a, r: b, level });
        }
        self.segments.sort_by(|x, y| x.l.total_cmp(&y.l));
    }

    /// Remove material on `[l, r)`.
    pub fn remove(&mut self, l: f64, r: f64) {
        if r <= l {
            return;
        }
        self.segments = self
            .segments
            .iter()
            .flat_map(|s| {
                let mut out = Vec::with_capacity(2);
                if s.l < l.min(s.r) {
                    out.push(Segment { r: l.min(s.r), ..*s });
                }
                if r.max(s.l) < s.r {
                    out.push(Segment { l: r.max(s.l), ..*s });
                }
                out
            })
            .collect();
    }

    /// Target intensity per pixel column: background plus coverage-weighted
    /// segment contrast.
    pub fn rasterize(&self, width: usize, background: f64, out: &mut [f64]) {
        out[..width].fill(background);
        for s in &self.segments {
            let x0 = s.l.max(0.0).floor() as usize;
            let x1 = (s.r.min(width as f64).ceil() as usize).min(width);
            for (x, v) in out.iter_mut().enumerate().take(x1).skip(x0) {
                let cov = (s.r.min(x as f64 + 1.0) - s.l.max(x as f64)).max(0.0);
                *v += cov * (s.level - background);
            }
        }
    }
}
