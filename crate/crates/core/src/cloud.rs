//! In-memory LiDAR sweep with per-point labels, and the class table.

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point3, RigidTransform};

pub type ClassId = u16;

/// Instance id reserved for points that belong to no object.
pub const NO_INSTANCE: u16 = 0;

/// Ordered class names; ids are dense indices into the list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
}

impl ClassTable {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        if names.is_empty() {
            return Err(Error::InvalidArgument("class table must not be empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid class name `{n}`")));
            }
            if names[..i].contains(n) {
                return Err(Error::InvalidArgument(format!("duplicate class name `{n}`")));
            }
        }
        Ok(Self { names })
    }

    /// The five classes produced by the synthetic scene generator.
    pub fn desk() -> Self {
        Self::new(&["ground", "car", "person", "building", "vegetation"]).expect("static table")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Result<ClassId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| i as ClassId)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class `{name}` (classes: {})", self.names.join(", "))))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Which class is perturbed, and optionally which class it should be pushed towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackClasses {
    pub adversarial: ClassId,
    pub target: Option<ClassId>,
}

impl AttackClasses {
    pub fn new(adversarial: ClassId, target: Option<ClassId>) -> Result<Self> {
        if target == Some(adversarial) {
            return Err(Error::InvalidArgument("target class must differ from the adversarial class".into()));
        }
        Ok(Self { adversarial, target })
    }
}

/// One LiDAR sweep. All per-point arrays have the same length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point3>,
    /// Return intensity in `[0, 1]`.
    pub intensity: Vec<f64>,
    pub semantic: Vec<ClassId>,
    pub instance: Vec<u16>,
}

impl PointCloud {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            intensity: Vec::with_capacity(n),
            semantic: Vec::with_capacity(n),
            instance: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, p: Point3, intensity: f64, semantic: ClassId, instance: u16) {
        self.positions.push(p);
        self.intensity.push(intensity);
        self.semantic.push(semantic);
        self.instance.push(instance);
    }

    /// Checks array lengths, finiteness, intensity range and class ids.
    pub fn validate(&self, classes: Option<&ClassTable>) -> Result<()> {
        let n = self.positions.len();
        if self.intensity.len() != n || self.semantic.len() != n || self.instance.len() != n {
            return Err(Error::LengthMismatch(format!(
                "positions {n}, intensity {}, semantic {}, instance {}",
                self.intensity.len(),
                self.semantic.len(),
                self.instance.len()
            )));
        }
        for (i, (p, t)) in self.positions.iter().zip(&self.intensity).enumerate() {
            if !p.is_finite() || !t.is_finite() {
                return Err(Error::Numeric(format!("non-finite value at point {i}")));
            }
            if !(0.0..=1.0).contains(t) {
                return Err(Error::InvalidArgument(format!("intensity {t} out of [0,1] at point {i}")));
            }
        }
        if let Some(ct) = classes {
            if let Some((i, c)) = self.semantic.iter().enumerate().find(|(_, &c)| c as usize >= ct.len()) {
                return Err(Error::InvalidArgument(format!("class id {c} at point {i} outside class table")));
            }
        }
        Ok(())
    }

    /// Points at the given indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> PointCloud {
        let mut out = PointCloud::with_capacity(idx.len());
        for &i in idx {
            out.push(self.positions[i], self.intensity[i], self.semantic[i], self.instance[i]);
        }
        out
    }

    /// Copy without the points at `drop` (indices need not be sorted).
    pub fn without(&self, drop: &[usize]) -> PointCloud {
        let mut mask = vec![true; self.len()];
        for &i in drop {
            mask[i] = false;
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| mask[i]).collect();
        self.subset(&keep)
    }

    pub fn extend_from(&mut self, other: &PointCloud) {
        self.positions.extend_from_slice(&other.positions);
        self.intensity.extend_from_slice(&other.intensity);
        self.semantic.extend_from_slice(&other.semantic);
        self.instance.extend_from_slice(&other.instance);
    }

    pub fn transform(&mut self, t: &RigidTransform) {
        for p in &mut self.positions {
            *p = t.apply(*p);
        }
    }

    /// Indices of points inside `b`.
    pub fn indices_in_box(&self, b: &OrientedBox) -> Vec<usize> {
        self.positions.iter().enumerate().filter(|(_, p)| b.contains(**p)).map(|(i, _)| i).collect()
    }

    pub fn indices_of_instance(&self, instance: u16) -> Vec<usize> {
        self.instance.iter().enumerate().filter(|(_, &k)| k == instance).map(|(i, _)| i).collect()
    }

    pub fn count_class(&self, class: ClassId) -> usize {
        self.semantic.iter().filter(|&&c| c == class).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn class_table_rules() {
        let t = ClassTable::desk();
        assert_eq!(t.id("car").unwrap(), 1);
        assert_eq!(t.name(3), Some("building"));
        assert!(ClassTable::new(&["a", "a"]).is_err());
        assert!(ClassTable::new::<&str>(&[]).is_err());
        assert!(AttackClasses::new(1, Some(1)).is_err());
    }

    #[test]
    fn validate_catches_bad_clouds() {
        let mut c = PointCloud::default();
        c.push(Vec3::new(1.0, 2.0, 3.0), 0.5, 1, 0);
        assert!(c.validate(Some(&ClassTable::desk())).is_ok());
        c.intensity[0] = 1.5;
        assert!(c.validate(None).is_err());
        c.intensity[0] = 0.5;
        c.semantic[0] = 9;
        assert!(c.validate(Some(&ClassTable::desk())).is_err());
        c.semantic.push(0);
        assert!(matches!(c.validate(None), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn without_drops_requested_points() {
        let mut c = PointCloud::default();
        for i in 0..5 {
            c.push(Vec3::new(i as f64, 0.0, 0.0), 0.1, 0, i as u16);
        }
        let d = c.without(&[3, 1]);
        assert_eq!(d.instance, vec![0, 2, 4]);
    }
}
