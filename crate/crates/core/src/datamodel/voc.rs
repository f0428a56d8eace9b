//! Pascal-VOC XML annotations (as written by LabelImg) and the internal JSON
//! ground-truth form.
//!
//! `bndbox` corners are taken verbatim as floats: no +1 is added to the
//! inclusive VOC max corner, which keeps VOC -> JSON -> VOC lossless.

use std::fmt::Write as _;

use roxmltree::{Document, Node};

use super::{DefectClass, GroundTruthDefect, GroundTruthRecord};
use crate::error::{Error, Result};
use crate::geometry::BBox;

fn line_of(doc: &Document, node: Node) -> u32 {
    doc.text_pos_at(node.range().start).row
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn required_text<'a>(doc: &Document, node: Node<'a, '_>, name: &str) -> Result<&'a str> {
    let c = child(node, name).ok_or_else(|| Error::Parse {
        line: line_of(doc, node),
        message: format!("<{}> is missing <{name}>", node.tag_name().name()),
    })?;
    Ok(c.text().unwrap_or("").trim())
}

fn number(doc: &Document, node: Node, name: &str) -> Result<f64> {
    let text = required_text(doc, node, name)?;
    text.parse::<f64>().map_err(|_| Error::Parse {
        line: line_of(doc, child(node, name).unwrap()),
        message: format!("<{name}> is not a number: `{text}`"),
    })
}

/// Parse one LabelImg/Pascal-VOC annotation document.
pub fn parse_voc_annotation(xml: &str) -> Result<GroundTruthRecord> {
    let doc = Document::parse(xml).map_err(|e| Error::Parse {
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(Error::Parse {
            line: line_of(&doc, root),
            message: format!("root element is <{}>, expected <annotation>", root.tag_name().name()),
        });
    }

    let image_id = child(root, "filename")
        .and_then(|n| n.text())
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    let size = child(root, "size").ok_or_else(|| Error::Parse {
        line: line_of(&doc, root),
        message: "<annotation> is missing <size>".into(),
    })?;
    let dim = |name: &str| -> Result<u32> {
        let v = number(&doc, size, name)?;
        if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::Parse {
                line: line_of(&doc, size),
                message: format!("<{name}> must be a positive integer, got {v}"),
            });
        }
        Ok(v as u32)
    };
    let mut record = GroundTruthRecord::new(image_id, dim("width")?, dim("height")?);

    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let class: DefectClass = required_text(&doc, obj, "name")?.parse()?;
        let bnd = child(obj, "bndbox").ok_or_else(|| Error::Parse {
            line: line_of(&doc, obj),
            message: "<object> is missing <bndbox>".into(),
        })?;
        let bbox = BBox::new(
            number(&doc, bnd, "xmin")?,
            number(&doc, bnd, "ymin")?,
            number(&doc, bnd, "xmax")?,
            number(&doc, bnd, "ymax")?,
        )?;
        record.defects.push(GroundTruthDefect { class, bbox });
    }
    record.validate()?;
    Ok(record)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Serialize a record in the LabelImg layout.
pub fn to_voc_xml(record: &GroundTruthRecord) -> String {
    let mut out = String::new();
    out.push_str("<annotation>\n");
    let _ = writeln!(out, "\t<filename>{}</filename>", escape(&record.image_id));
    out.push_str("\t<size>\n");
    let _ = writeln!(out, "\t\t<width>{}</width>", record.width);
    let _ = writeln!(out, "\t\t<height>{}</height>", record.height);
    out.push_str("\t\t<depth>1</depth>\n\t</size>\n");
    for d in &record.defects {
        let [x0, y0, x1, y1] = d.bbox.corners();
        out.push_str("\t<object>\n");
        let _ = writeln!(out, "\t\t<name>{}</name>", d.class);
        out.push_str("\t\t<pose>Unspecified</pose>\n\t\t<truncated>0</truncated>\n\t\t<difficult>0</difficult>\n");
        out.push_str("\t\t<bndbox>\n");
        let _ = writeln!(out, "\t\t\t<xmin>{x0}</xmin>");
        let _ = writeln!(out, "\t\t\t<ymin>{y0}</ymin>");
        let _ = writeln!(out, "\t\t\t<xmax>{x1}</xmax>");
        let _ = writeln!(out, "\t\t\t<ymax>{y1}</ymax>");
        out.push_str("\t\t</bndbox>\n\t</object>\n");
    }
    out.push_str("</annotation>\n");
    out
}

/// Read the internal JSON ground-truth form.
pub fn read_ground_truth_json(text: &str) -> Result<GroundTruthRecord> {
    let record: GroundTruthRecord = serde_json::from_str(text).map_err(|e| {
        // serde reports unknown enum variants as data errors; surface them as taxonomy errors
        let msg = e.to_string();
        match msg.split('`').nth(1) {
            Some(label) if msg.starts_with("unknown variant") => Error::Taxonomy(label.to_string()),
            _ => Error::Parse {
                line: e.line() as u32,
                message: msg,
            },
        }
    })?;
    record.validate()?;
    Ok(record)
}

pub fn write_ground_truth_json(record: &GroundTruthRecord) -> String {
    let mut s = serde_json::to_string_pretty(record).expect("record serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"<annotation>
    <folder>wafer</folder>
    <filename>die_0001.tif</filename>
    <size><width>1024</width><height>1024</height><depth>1</depth></size>
    <object>
        <name>line_collapse</name>
        <bndbox><xmin>100</xmin><ymin>100</ymin><xmax>200</xmax><ymax>900</ymax></bndbox>
    </object>
</annotation>"#;

    #[test]
    fn parses_labelimg_object() {
        let r = parse_voc_annotation(ONE).unwrap();
        assert_eq!(r.image_id, "die_0001.tif");
        assert_eq!((r.width, r.height), (1024, 1024));
        assert_eq!(r.defects.len(), 1);
        assert_eq!(r.defects[0].class, DefectClass::LineCollapse);
        assert_eq!(r.defects[0].bbox.corners(), [100.0, 100.0, 200.0, 900.0]);
    }

    #[test]
    fn zero_objects_give_empty_record() {
        let xml = "<annotation><filename>a.png</filename><size><width>8</width><height>8</height></size></annotation>";
        let r = parse_voc_annotation(xml).unwrap();
        assert!(r.defects.is_empty());
    }

    #[test]
    fn unknown_label_is_taxonomy_error() {
        let xml = ONE.replace("line_collapse", "scratch");
        match parse_voc_annotation(&xml) {
            Err(Error::Taxonomy(label)) => assert_eq!(label, "scratch"),
            other => panic!("expected taxonomy error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_xml_names_line() {
        let xml = "<annotation>\n<size>\n<width>4</width>\n</sise>\n</annotation>";
        match parse_voc_annotation(xml) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_box_rejected() {
        let xml = ONE.replace("<ymax>900</ymax>", "<ymax>1100</ymax>");
        assert!(matches!(parse_voc_annotation(&xml), Err(Error::Bounds { .. })));
    }

    #[test]
    fn voc_json_voc_round_trip() {
        let r = parse_voc_annotation(ONE).unwrap();
        let json = write_ground_truth_json(&r);
        let back = read_ground_truth_json(&json).unwrap();
        assert_eq!(back, r);
        let xml = to_voc_xml(&back);
        assert_eq!(parse_voc_annotation(&xml).unwrap(), r);
    }

    #[test]
    fn json_unknown_class_is_taxonomy_error() {
        let doc = r#"{"image":"a","width":10,"height":10,"defects":[{"class":"scratch","bbox":[0,0,1,1]}]}"#;
        assert!(matches!(read_ground_truth_json(doc), Err(Error::Taxonomy(s)) if s == "scratch"));
    }
}
