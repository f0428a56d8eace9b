//! Per-defect CSV report with physical dimensions.

use super::{DefectClass, ImagePredictions};
use crate::error::{Error, Result};
use crate::geometry::score_order;

pub const CSV_HEADER: &str = "image,class,score,x_min,y_min,x_max,y_max,length_nm,width_nm,area_nm2";

/// One row of the defect report.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectCsvRow {
    pub image_id: String,
    pub class: DefectClass,
    pub score: f64,
    pub corners: [f64; 4],
    pub length_nm: f64,
    pub width_nm: f64,
    pub area_nm2: f64,
}

/// Format with six significant digits in the manner of C's `%g`.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn rows(images: &[ImagePredictions], pixel_size_nm: f64) -> Vec<DefectCsvRow> {
    let mut refs: Vec<(&str, &super::Detection)> = images
        .iter()
        .flat_map(|img| img.detections.iter().map(move |d| (img.image_id.as_str(), d)))
        .collect();
    refs.sort_by(|a, b| a.0.cmp(b.0).then_with(|| score_order(a.1, b.1)));
    refs.into_iter()
        .map(|(image_id, d)| {
            let (w, h) = (d.bbox.width(), d.bbox.height());
            DefectCsvRow {
                image_id: image_id.to_string(),
                class: d.class,
                score: d.score,
                corners: d.bbox.corners(),
                length_nm: w.max(h) * pixel_size_nm,
                width_nm: w.min(h) * pixel_size_nm,
                area_nm2: d.bbox.area() * pixel_size_nm * pixel_size_nm,
            }
        })
        .collect()
}

/// Render every detection as one CSV row, sorted by image then descending score.
pub fn export_csv(images: &[ImagePredictions], pixel_size_nm: f64) -> Result<String> {
    if !(pixel_size_nm > 0.0 && pixel_size_nm.is_finite()) {
        return Err(Error::param("pixel_size_nm", format!("must be positive, got {pixel_size_nm}")));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))
        .and_then(|_| {
            for r in rows(images, pixel_size_nm) {
                let mut fields = vec![r.image_id.clone(), r.class.to_string(), format_sig6(r.score)];
                fields.extend(r.corners.iter().map(|v| format_sig6(*v)));
                fields.extend([r.length_nm, r.width_nm, r.area_nm2].map(format_sig6));
                w.write_record(&fields)?;
            }
            Ok(())
        })
        .map_err(|e| Error::Validation(format!("csv: {e}")))?;
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
