//! Which vectors a fitted bank actually uses, and where they push points.

use std::fmt::Write as _;

use crate::error::Result;
use crate::field::{anchor_roots, field_seed, FieldBank, VectorField};
use crate::geometry::{OrientedBox, Vec3};
use crate::rotation::GroupScheme;

/// Box faces, named in the box frame (x forward along the length).
pub const FACES: [&str; 6] = ["front", "back", "left", "right", "top", "bottom"];

/// Range at which a field is placed for the toward/away tally.
const REFERENCE_RANGE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldStats {
    pub group: usize,
    pub variant: usize,
    pub roots: usize,
    /// Vectors longer than their own random initialization.
    pub active: usize,
    /// Per face: active vectors pointing toward / away from the sensor.
    pub toward: [usize; 6],
    pub away: [usize; 6],
}

/// Face whose plane is closest (relative to the half extent) to a root.
fn face_of(root: Vec3, field: &VectorField) -> usize {
    let d = field.reference;
    let rel = [root.x / (d.length / 2.0), root.y / (d.width / 2.0), root.z / (d.height / 2.0)];
    let axis = (0..3).max_by(|&a, &b| rel[a].abs().total_cmp(&rel[b].abs())).unwrap_or(0);
    2 * axis + usize::from(rel[axis] < 0.0)
}

/// Statistics for every field, placing each at the reference position of its
/// group: bearing `β_g`, heading 0, 10 m from the sensor.
pub fn analyze_fields(bank: &FieldBank, init_seed: u64) -> Result<Vec<FieldStats>> {
    let scheme = GroupScheme::new(bank.groups)?;
    let sensor = Vec3::new(0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(bank.fields.len());
    for (i, f) in bank.fields.iter().enumerate() {
        let mut init = f.clone();
        init.init_random(field_seed(init_seed, i));
        let beta = scheme.reference_angle(f.group);
        let center = Vec3::new(REFERENCE_RANGE * beta.cos(), REFERENCE_RANGE * beta.sin(), 0.0);
        let pose = OrientedBox::new(center, bank.reference, 0.0)?;
        let world = anchor_roots(&f.roots, bank.reference, &pose);
        let mut s = FieldStats { group: f.group, variant: f.variant, roots: f.len(), active: 0, toward: [0; 6], away: [0; 6] };
        for j in 0..f.len() {
            let v = f.world_vector(j, 1.0, 0.0);
            let v0 = init.world_vector(j, 1.0, 0.0);
            if v.norm() <= v0.norm() {
                continue;
            }
            s.active += 1;
            let ray = (world[j] - sensor).normalized().unwrap_or(Vec3::new(1.0, 0.0, 0.0));
            let face = face_of(f.roots[j], f);
            if v.dot(ray) < 0.0 {
                s.toward[face] += 1;
            } else {
                s.away[face] += 1;
            }
        }
        out.push(s);
    }
    Ok(out)
}

/// Long-format CSV: one row per field and face.
pub fn field_stats_csv(stats: &[FieldStats]) -> String {
    let mut s = String::from("group,variant,roots,active,face,toward,away\n");
    for f in stats {
        for (k, face) in FACES.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{face},{},{}", f.group, f.variant, f.roots, f.active, f.toward[k], f.away[k]);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::AttackClasses;
    use crate::field::AnchorMode;

    fn bank(seed: u64) -> FieldBank {
        let classes = AttackClasses::new(1, None).unwrap();
        let mut cfg = crate::attack::AttackConfig::new("untargeted", classes, "car", AnchorMode::Oriented).unwrap();
        cfg.seed = seed;
        cfg.groups = 2;
        cfg.variants = 2;
        cfg.new_bank("car").unwrap()
    }

    #[test]
    fn untrained_bank_has_no_active_vectors() {
        let stats = analyze_fields(&bank(9), 9).unwrap();
        assert_eq!(stats.len(), 4);
        assert!(stats.iter().all(|s| s.active == 0 && s.roots == 1656));
    }

    #[test]
    fn grown_vectors_are_counted_once() {
        let mut b = bank(1);
        for v in &mut b.fields[0].vectors[..10] {
            v[0] *= 5.0;
            v[1] *= 5.0;
            v[2] *= 5.0;
        }
        let stats = analyze_fields(&b, 1).unwrap();
        assert_eq!(stats[0].active, 10);
        assert_eq!(stats[0].toward.iter().sum::<usize>() + stats[0].away.iter().sum::<usize>(), 10);
        assert!(stats[1..].iter().all(|s| s.active == 0));
        let csv = field_stats_csv(&stats);
        assert_eq!(csv.lines().count(), 1 + 4 * 6);
    }

    #[test]
    fn faces_follow_the_dominant_axis() {
        let f = VectorField::build(crate::geometry::BoxDims::new(1.8, 1.6, 4.6), 0.2).unwrap();
        assert_eq!(FACES[face_of(Vec3::new(2.2, 0.0, 0.0), &f)], "front");
        assert_eq!(FACES[face_of(Vec3::new(0.0, -0.85, 0.0), &f)], "right");
        assert_eq!(FACES[face_of(Vec3::new(0.0, 0.0, 0.75), &f)], "top");
    }
}
