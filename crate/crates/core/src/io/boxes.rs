//! Ground-truth boxes as text rows: `class cx cy cz w h l yaw`.

use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::{ClassId, ClassTable};
use crate::error::{Error, Result};
use crate::geometry::{BoxDims, OrientedBox, Vec3};

/// An object box with its class and instance id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub class: ClassId,
    pub instance: u16,
    pub bbox: OrientedBox,
}

pub fn encode_boxes(boxes: &[LabeledBox], classes: &ClassTable) -> String {
    let mut s = String::from("# class instance cx cy cz w h l yaw\n");
    for b in boxes {
        let c = b.bbox.center;
        let d = b.bbox.dims;
        let _ = writeln!(
            s,
            "{} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            classes.name(b.class).unwrap_or("unknown"),
            b.instance,
            c.x,
            c.y,
            c.z,
            d.width,
            d.height,
            d.length,
            b.bbox.yaw
        );
    }
    s
}

pub fn decode_boxes(text: &str, classes: &ClassTable) -> Result<Vec<LabeledBox>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_ascii_whitespace().collect();
        if tok.len() != 9 {
            return Err(Error::Format(format!("box row {}: expected 9 fields, got {}", lineno + 1, tok.len())));
        }
        let num = |i: usize| -> Result<f64> {
            tok[i].parse::<f64>().map_err(|_| Error::Format(format!("box row {}: bad number `{}`", lineno + 1, tok[i])))
        };
        let class = classes.id(tok[0])?;
        let instance: u16 =
            tok[1].parse().map_err(|_| Error::Format(format!("box row {}: bad instance `{}`", lineno + 1, tok[1])))?;
        let bbox = OrientedBox::new(
            Vec3::new(num(2)?, num(3)?, num(4)?),
            BoxDims::new(num(5)?, num(6)?, num(7)?),
            num(8)?,
        )?;
        out.push(LabeledBox { class, instance, bbox });
    }
    Ok(out)
}

pub fn write_boxes(boxes: &[LabeledBox], classes: &ClassTable, path: &Path) -> Result<()> {
    std::fs::write(path, encode_boxes(boxes, classes)).map_err(|e| Error::io(path, e))
}

pub fn read_boxes(path: &Path, classes: &ClassTable) -> Result<Vec<LabeledBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_boxes(&text, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_exactly() {
        let t = ClassTable::desk();
        let b = vec![LabeledBox {
            class: 1,
            instance: 4,
            bbox: OrientedBox::new(Vec3::new(12.3, -4.0, 0.95), BoxDims::new(1.8, 1.6, 4.6), 0.1).unwrap(),
        }];
        assert_eq!(decode_boxes(&encode_boxes(&b, &t), &t).unwrap(), b);
        assert!(decode_boxes("car 1 2 3", &t).is_err());
        assert!(decode_boxes("truck 1 0 0 0 1 1 1 0", &t).is_err());
    }
}
