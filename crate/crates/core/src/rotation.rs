//! Relative-rotation grouping of objects around the sensor.
//!
//! An object is rotated about the sensor until it faces forward (`yaw = 0`)
//! while keeping its incidence angle; the slice of the full turn it lands in
//! selects its field. Group `g` (0-based) is centered on `β_g = g·2π/G` and
//! covers the half-open slice `[β_g − π/G, β_g + π/G)`.

use std::f64::consts::{PI, TAU};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{bearing, wrap_tau, BoxDims, OrientedBox, Point3, Vec3};

/// Partition of the full turn around the sensor into `groups` slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupScheme {
    pub groups: usize,
}

impl GroupScheme {
    pub fn new(groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::InvalidArgument("G must be at least 1".into()));
        }
        Ok(Self { groups })
    }

    /// Twelve 30° slices, used with oriented boxes.
    pub fn oriented() -> Self {
        Self { groups: 12 }
    }

    /// Six slices, each also used at its opposite position (axis-aligned boxes).
    pub fn folded() -> Self {
        Self { groups: 6 }
    }

    pub fn width(&self) -> f64 {
        TAU / self.groups as f64
    }

    pub fn reference_angle(&self, g: usize) -> f64 {
        g as f64 * self.width()
    }

    /// Slice containing `angle` (any real; wrapped to `[0, 2π)`).
    pub fn slice_of(&self, angle: f64) -> usize {
        let w = self.width();
        let shifted = wrap_tau(angle + w / 2.0);
        let g = (shifted / w).floor() as usize;
        g.min(self.groups - 1)
    }
}

/// Angle of the equivalent forward-facing position: `(bearing − yaw) mod 2π`.
pub fn relative_angle(b: &OrientedBox, sensor: Point3) -> Result<f64> {
    Ok(wrap_tau(bearing(b.center, sensor)? - b.yaw))
}

/// Field group of an oriented box.
pub fn group_of(b: &OrientedBox, sensor: Point3, scheme: GroupScheme) -> Result<usize> {
    Ok(scheme.slice_of(relative_angle(b, sensor)?))
}

/// Group for a box whose heading is only known modulo π.
///
/// The relative angle is computed on a full circle of `2·G` slices and opposite
/// slices `(g, g + G)` are folded onto `g`.
pub fn group_of_axis_aligned(b: &OrientedBox, sensor: Point3, scheme: GroupScheme) -> Result<usize> {
    let full = GroupScheme { groups: 2 * scheme.groups };
    Ok(fold(group_of(b, sensor, full)?, scheme.groups))
}

/// Folds a group of a `2·half` scheme onto `0..half`.
pub fn fold(g: usize, half: usize) -> usize {
    g % half
}

/// Pseudo-orientation of an instance: heading of the longer horizontal extent, modulo π.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoYaw {
    /// In `[0, π)`.
    pub yaw: f64,
    /// Set when width and length are indistinguishable.
    pub ambiguous: bool,
}

const AMBIGUOUS_TOL: f64 = 1e-6;

/// Pseudo-orientation from a box: its heading if `length ≥ width`, else the perpendicular.
pub fn pseudo_yaw_of_box(b: &OrientedBox) -> PseudoYaw {
    if (b.dims.length - b.dims.width).abs() <= AMBIGUOUS_TOL {
        return PseudoYaw { yaw: 0.0, ambiguous: true };
    }
    let yaw = if b.dims.length > b.dims.width { b.yaw } else { b.yaw + PI / 2.0 };
    PseudoYaw { yaw: yaw.rem_euclid(PI) % PI, ambiguous: false }
}

/// Pseudo-orientation from points: long side of the minimum-area enclosing rectangle.
pub fn pseudo_yaw_of_points(points: &[Point3]) -> Result<PseudoYaw> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("pseudo yaw needs >= 3 points, got {}", points.len())));
    }
    let area_at = |theta: f64| -> (f64, f64, f64) {
        let (s, c) = theta.sin_cos();
        let (mut ax0, mut ax1, mut ay0, mut ay1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in points {
            let u = c * p.x + s * p.y;
            let v = -s * p.x + c * p.y;
            ax0 = ax0.min(u);
            ax1 = ax1.max(u);
            ay0 = ay0.min(v);
            ay1 = ay1.max(v);
        }
        let (ex, ey) = (ax1 - ax0, ay1 - ay0);
        (ex * ey, ex, ey)
    };
    // Coarse sweep over a quarter turn, then golden-section refinement.
    let steps = 90;
    let h = (PI / 2.0) / steps as f64;
    let mut best = 0usize;
    let mut best_area = f64::MAX;
    for i in 0..steps {
        let a = area_at(i as f64 * h).0;
        if a < best_area {
            best_area = a;
            best = i;
        }
    }
    let (mut lo, mut hi) = ((best as f64 - 1.0) * h, (best as f64 + 1.0) * h);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = hi - gr * (hi - lo);
        let m2 = lo + gr * (hi - lo);
        if area_at(m1).0 <= area_at(m2).0 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let theta = 0.5 * (lo + hi);
    let (_, ex, ey) = area_at(theta);
    let scale = ex.max(ey).max(1e-12);
    if (ex - ey).abs() / scale <= AMBIGUOUS_TOL {
        return Ok(PseudoYaw { yaw: 0.0, ambiguous: true });
    }
    let yaw = if ex >= ey { theta } else { theta + PI / 2.0 };
    Ok(PseudoYaw { yaw: yaw.rem_euclid(PI) % PI, ambiguous: false })
}

/// Axis-aligned box around the points of one instance, inflated by `margin` per side.
///
/// The result is expressed as an [`OrientedBox`] whose heading follows the longer
/// horizontal side (`0` or `π/2`), which is the instance's pseudo-orientation.
pub fn axis_aligned_box_of_instance(cloud: &PointCloud, instance: u16, margin: f64) -> Result<OrientedBox> {
    let pts: Vec<Point3> = cloud.indices_of_instance(instance).into_iter().map(|i| cloud.positions[i]).collect();
    axis_aligned_box_of_points(&pts, margin)
}

pub fn axis_aligned_box_of_points(pts: &[Point3], margin: f64) -> Result<OrientedBox> {
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!("instance has {} points, need at least 3", pts.len())));
    }
    let mut lo = Vec3::new(f64::MAX, f64::MAX, f64::MAX);
    let mut hi = Vec3::new(f64::MIN, f64::MIN, f64::MIN);
    for p in pts {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    let ext = hi - lo + Vec3::new(2.0 * margin, 2.0 * margin, 2.0 * margin);
    let center = (lo + hi) * 0.5;
    let (dims, yaw) = if ext.x >= ext.y {
        (BoxDims::new(ext.y, ext.z, ext.x), 0.0)
    } else {
        (BoxDims::new(ext.x, ext.z, ext.y), PI / 2.0)
    };
    OrientedBox::new(center, dims, yaw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SENSOR: Vec3 = Vec3::new(0.0, 0.0, 1.73);

    fn box_at(bearing_deg: f64, yaw_deg: f64) -> OrientedBox {
        let b = bearing_deg.to_radians();
        OrientedBox::new(Vec3::new(15.0 * b.cos(), 15.0 * b.sin(), 0.9), BoxDims::new(1.8, 1.6, 4.6), yaw_deg.to_radians())
            .unwrap()
    }

    #[test]
    fn forward_facing_reference_positions() {
        let s = GroupScheme::oriented();
        for g in 0..12 {
            assert_eq!(group_of(&box_at(g as f64 * 30.0, 0.0), SENSOR, s).unwrap(), g);
        }
    }

    #[test]
    fn half_open_slices() {
        let s = GroupScheme::oriented();
        let w = s.width();
        assert_eq!(s.slice_of(w / 2.0), 1);
        assert_eq!(s.slice_of(w / 2.0 - 1e-12), 0);
        assert_eq!(s.slice_of(-w / 2.0), 0);
        assert_eq!(s.slice_of(TAU - 1e-15), 0);
    }

    #[test]
    fn degenerate_bearing_is_error() {
        let b = OrientedBox::new(Vec3::new(0.0, 0.0, 0.9), BoxDims::new(1.8, 1.6, 4.6), 0.0).unwrap();
        assert!(group_of(&b, SENSOR, GroupScheme::oriented()).is_err());
    }

    #[test]
    fn opposite_positions_fold_together() {
        let s6 = GroupScheme::folded();
        for g in 0..12 {
            assert_eq!(fold(g, 6), fold(g + 6, 6));
        }
        let a = box_at(40.0, 10.0);
        let b = box_at(220.0, 10.0);
        assert_eq!(group_of_axis_aligned(&a, SENSOR, s6).unwrap(), group_of_axis_aligned(&b, SENSOR, s6).unwrap());
    }

    #[test]
    fn folded_group_matches_oriented_mod_six() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let b = box_at(rng.random_range(0.0..360.0), rng.random_range(-180.0..180.0));
            let g12 = group_of(&b, SENSOR, GroupScheme::oriented()).unwrap();
            // Pseudo-yaw only knows the heading modulo π; folding must absorb the flip.
            let mut flipped = b;
            flipped.yaw = crate::geometry::wrap_pi(b.yaw + PI);
            let g6 = group_of_axis_aligned(&flipped, SENSOR, GroupScheme::folded()).unwrap();
            assert_eq!(g6, g12 % 6);
        }
    }

    #[test]
    fn global_rotation_keeps_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let b = box_at(rng.random_range(0.0..360.0), rng.random_range(-180.0..180.0));
            let delta = rng.random_range(-PI..PI);
            let rotated = RigidTransform::about(SENSOR, delta).apply_box(&b);
            let a0 = relative_angle(&b, SENSOR).unwrap();
            let a1 = relative_angle(&rotated, SENSOR).unwrap();
            assert!(crate::geometry::wrap_pi(a0 - a1).abs() < 1e-9);
        }
    }

    #[test]
    fn pseudo_yaw_from_boxes() {
        let b = OrientedBox::new(Vec3::new(5.0, 0.0, 0.0), BoxDims::new(1.0, 1.0, 4.0), 0.0).unwrap();
        assert_eq!(pseudo_yaw_of_box(&b).yaw, 0.0);
        let r = OrientedBox::new(Vec3::new(5.0, 0.0, 0.0), BoxDims::new(4.0, 1.0, 1.0), 0.0).unwrap();
        assert!((pseudo_yaw_of_box(&r).yaw - PI / 2.0).abs() < 1e-12);
        let sq = OrientedBox::new(Vec3::new(5.0, 0.0, 0.0), BoxDims::new(2.0, 1.0, 2.0), 0.3).unwrap();
        assert!(pseudo_yaw_of_box(&sq).ambiguous);
    }

    fn pca_axis(points: &[Point3]) -> f64 {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
        let my = points.iter().map(|p| p.y).sum::<f64>() / n;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for p in points {
            sxx += (p.x - mx) * (p.x - mx);
            syy += (p.y - my) * (p.y - my);
            sxy += (p.x - mx) * (p.y - my);
        }
        (0.5 * (2.0 * sxy).atan2(sxx - syy)).rem_euclid(PI)
    }

    #[test]
    fn pseudo_yaw_agrees_with_pca_on_elongated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let yaw = rng.random_range(0.0..PI);
            let pts: Vec<Point3> = (0..300)
                .map(|_| {
                    let l = Vec3::new(rng.random_range(-2.3..2.3), rng.random_range(-0.9..0.9), rng.random_range(0.0..1.6));
                    l.rotate_yaw(yaw) + Vec3::new(10.0, -3.0, 0.0)
                })
                .collect();
            let est = pseudo_yaw_of_points(&pts).unwrap();
            let oracle = pca_axis(&pts);
            let d = (est.yaw - oracle).rem_euclid(PI);
            assert!(d.min(PI - d) < 5f64.to_radians(), "est {} pca {}", est.yaw, oracle);
        }
        assert!(pseudo_yaw_of_points(&[Vec3::ZERO, Vec3::ZERO]).is_err());
    }

    #[test]
    fn instance_boxes_contain_their_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut cloud = PointCloud::default();
        let yaw = 0.7;
        for _ in 0..200 {
            let l = Vec3::new(rng.random_range(-2.3..2.3), rng.random_range(-0.9..0.9), rng.random_range(0.2..1.8));
            cloud.push(l.rotate_yaw(yaw) + Vec3::new(20.0, 5.0, 0.0), 0.2, 1, 3);
        }
        cloud.push(Vec3::new(0.0, 0.0, 0.0), 0.2, 0, 0);
        let b = axis_aligned_box_of_instance(&cloud, 3, 0.1).unwrap();
        for i in cloud.indices_of_instance(3) {
            assert!(b.contains(cloud.positions[i]));
        }
        assert!(!b.contains(Vec3::ZERO));
        assert!(b.yaw == 0.0 || (b.yaw - PI / 2.0).abs() < 1e-12);
        assert!(axis_aligned_box_of_instance(&cloud, 9, 0.1).is_err());
    }
}
