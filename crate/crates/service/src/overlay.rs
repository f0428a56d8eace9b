//! Detection overlays: class-coloured rectangles with `class: score` labels.

use image::{GrayImage, ImageEncoder, Rgb, RgbImage};

use lsinspect::{DefectClass, Detection};

pub fn class_color(class: DefectClass) -> Rgb<u8> {
    match class {
        DefectClass::Bridge => Rgb([255, 0, 0]),
        DefectClass::LineCollapse => Rgb([255, 165, 0]),
        DefectClass::Gap => Rgb([0, 0, 255]),
        DefectClass::PGap => Rgb([0, 255, 255]),
        DefectClass::Microbridge => Rgb([255, 0, 255]),
    }
}

pub fn label(det: &Detection) -> String {
    format!("{}: {:.2}", det.class, det.score)
}

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;
const ADVANCE: u32 = GLYPH_W + 1;
const LABEL_H: u32 = GLYPH_H + 2;

/// Rows of a 5x7 glyph, bit 4 = leftmost column.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'a' => [0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F],
        'b' => [0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E],
        'c' => [0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E],
        'd' => [0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F],
        'e' => [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        'f' => [0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08],
        'g' => [0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E],
        'h' => [0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11],
        'i' => [0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E],
        'j' => [0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C],
        'k' => [0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12],
        'l' => [0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'm' => [0x00, 0x00, 0x1A, 0x15, 0x15, 0x11, 0x11],
        'n' => [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11],
        'o' => [0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E],
        'p' => [0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10],
        'q' => [0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01],
        'r' => [0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10],
        's' => [0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E],
        't' => [0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06],
        'u' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D],
        'v' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'w' => [0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A],
        'x' => [0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11],
        'y' => [0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E],
        'z' => [0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        ' ' => [0; 7],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    for x in x0..=x1 {
        put(img, x, y0, color);
        put(img, x, y1, color);
    }
    for y in y0..=y1 {
        put(img, x0, y, color);
        put(img, x1, y, color);
    }
}

fn draw_text(img: &mut RgbImage, text: &str, x: i64, y: i64, color: Rgb<u8>) {
    let w = text.chars().count() as i64 * ADVANCE as i64 + 1;
    for yy in y..y + LABEL_H as i64 {
        for xx in x..x + w {
            put(img, xx, yy, Rgb([0, 0, 0]));
        }
    }
    for (i, c) in text.chars().enumerate() {
        let gx = x + 1 + i as i64 * ADVANCE as i64;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (0x10 >> col) != 0 {
                    put(img, gx + col as i64, y + 1 + row as i64, color);
                }
            }
        }
    }
}

/// Pixel extent `[x0, x1] x [y0, y1]` of the outline drawn for a box.
pub fn outline_extent(det: &Detection, width: u32, height: u32) -> (i64, i64, i64, i64) {
    let [x0, y0, x1, y1] = det.bbox.corners();
    let clamp = |v: f64, hi: u32| (v as i64).clamp(0, hi as i64 - 1);
    (
        clamp(x0.floor(), width),
        clamp(y0.floor(), height),
        clamp(x1.ceil() - 1.0, width),
        clamp(y1.ceil() - 1.0, height),
    )
}

/// Draw `detections` over `base`. The caller filters by score; with nothing
/// to draw the grayscale input is returned unchanged as PNG.
pub fn render(base: &GrayImage, detections: &[Detection]) -> Vec<u8> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    if detections.is_empty() {
        encoder
            .write_image(base.as_raw(), base.width(), base.height(), image::ExtendedColorType::L8)
            .expect("in-memory PNG encoding");
        return out;
    }
    let mut img = RgbImage::from_fn(base.width(), base.height(), |x, y| {
        let v = base.get_pixel(x, y).0[0];
        Rgb([v, v, v])
    });
    for det in detections {
        let (x0, y0, x1, y1) = outline_extent(det, img.width(), img.height());
        draw_rect(&mut img, x0, y0, x1, y1, class_color(det.class));
    }
    // Labels after every box so no outline crosses a label.
    for det in detections {
        let (x0, y0, _, _) = outline_extent(det, img.width(), img.height());
        let text = label(det);
        let text_w = text.chars().count() as i64 * ADVANCE as i64 + 1;
        let lx = x0.min(img.width() as i64 - text_w).max(0);
        let ly = if y0 >= LABEL_H as i64 { y0 - LABEL_H as i64 } else { y0 + 1 };
        draw_text(&mut img, &text, lx, ly, class_color(det.class));
    }
    encoder
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .expect("in-memory PNG encoding");
    out
}
