//! Exact 3D primitives: vectors, rays, yaw-only oriented boxes and rigid transforms.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// A 3-vector in meters. Used both for positions and displacements.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// World-frame position.
pub type Point3 = Vec3;

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist_sq(self, o: Vec3) -> f64 {
        (self - o).norm_sq()
    }

    #[inline]
    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction, or `None` for (near) zero input.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-12 || !n.is_finite() {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Rotation about the vertical axis by `yaw` radians (counter-clockwise seen from above).
    #[inline]
    pub fn rotate_yaw(self, yaw: f64) -> Vec3 {
        let (s, c) = yaw.sin_cos();
        self.rotate_cs(c, s)
    }

    #[inline]
    pub fn rotate_cs(self, c: f64, s: f64) -> Vec3 {
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    #[inline]
    pub fn horizontal_norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Half-line from `origin` along the unit vector `dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Point3,
    dir: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `dir`.
    pub fn new(origin: Point3, dir: Vec3) -> Result<Self> {
        let dir = dir
            .normalized()
            .ok_or_else(|| Error::Degenerate("ray direction has zero length".into()))?;
        Ok(Self { origin, dir })
    }

    /// Ray from `origin` through `target`.
    pub fn through(origin: Point3, target: Point3) -> Result<Self> {
        Self::new(origin, target - origin)
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn dir(&self) -> Vec3 {
        self.dir
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.dir * t
    }
}

/// Projects `v` onto the line spanned by the ray direction: `(v·d)d`.
#[inline]
pub fn project_onto_ray(v: Vec3, ray: &Ray) -> Vec3 {
    project_onto_dir(v, ray.dir)
}

#[inline]
pub fn project_onto_dir(v: Vec3, unit_dir: Vec3) -> Vec3 {
    unit_dir * v.dot(unit_dir)
}

/// Wraps an angle to `[-π, π)`.
pub fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Wraps an angle to `[0, 2π)`.
pub fn wrap_tau(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Box extents in meters: `width` across the heading, `height` vertical, `length` along the heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDims {
    pub width: f64,
    pub height: f64,
    pub length: f64,
}

impl BoxDims {
    pub const fn new(width: f64, height: f64, length: f64) -> Self {
        Self { width, height, length }
    }

    pub fn volume(&self) -> f64 {
        self.width * self.height * self.length
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0.0
            && self.height > 0.0
            && self.length > 0.0
            && self.width.is_finite()
            && self.height.is_finite()
            && self.length.is_finite()
    }
}

/// Yaw-only oriented bounding box.
///
/// Local frame: `+x` along the heading (length), `+y` to the left (width), `+z` up (height).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Point3,
    pub dims: BoxDims,
    /// Heading in `[-π, π)`.
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(center: Point3, dims: BoxDims, yaw: f64) -> Result<Self> {
        if !dims.is_valid() {
            return Err(Error::InvalidArgument(format!("box dims must be positive, got {dims:?}")));
        }
        if !center.is_finite() || !yaw.is_finite() {
            return Err(Error::InvalidArgument("box center and yaw must be finite".into()));
        }
        Ok(Self { center, dims, yaw: wrap_pi(yaw) })
    }

    /// World point expressed in the box frame.
    #[inline]
    pub fn to_local(&self, p: Point3) -> Vec3 {
        (p - self.center).rotate_yaw(-self.yaw)
    }

    #[inline]
    pub fn to_world(&self, local: Vec3) -> Point3 {
        local.rotate_yaw(self.yaw) + self.center
    }

    pub fn contains(&self, p: Point3) -> bool {
        box_contains(self, p)
    }

    pub fn volume(&self) -> f64 {
        self.dims.volume()
    }

    /// Same box with every extent grown by `margin` on each side.
    pub fn inflated(&self, margin: f64) -> OrientedBox {
        OrientedBox {
            center: self.center,
            dims: BoxDims::new(
                self.dims.width + 2.0 * margin,
                self.dims.height + 2.0 * margin,
                self.dims.length + 2.0 * margin,
            ),
            yaw: self.yaw,
        }
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [(f64, f64); 4] {
        let hl = self.dims.length / 2.0;
        let hw = self.dims.width / 2.0;
        let (s, c) = self.yaw.sin_cos();
        let mk = |lx: f64, ly: f64| {
            (self.center.x + c * lx - s * ly, self.center.y + s * lx + c * ly)
        };
        [mk(hl, hw), mk(-hl, hw), mk(-hl, -hw), mk(hl, -hw)]
    }

    /// Radius of the circumscribed circle of the footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.dims.length.hypot(self.dims.width)
    }

    pub fn z_range(&self) -> (f64, f64) {
        let hh = self.dims.height / 2.0;
        (self.center.z - hh, self.center.z + hh)
    }
}

/// True iff `p` lies within the box (boundary inclusive).
pub fn box_contains(b: &OrientedBox, p: Point3) -> bool {
    let l = b.to_local(p);
    l.x.abs() <= b.dims.length / 2.0 && l.y.abs() <= b.dims.width / 2.0 && l.z.abs() <= b.dims.height / 2.0
}

/// Volumetric intersection-over-union of two yaw-only boxes.
///
/// The footprint overlap is computed exactly by convex polygon clipping, so the
/// result is symmetric and exact for any yaw pair.
pub fn iou_3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let inter = intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn intersection_volume(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (az0, az1) = a.z_range();
    let (bz0, bz1) = b.z_range();
    let dz = az1.min(bz1) - az0.max(bz0);
    if dz <= 0.0 {
        return 0.0;
    }
    let dc = (a.center.x - b.center.x).hypot(a.center.y - b.center.y);
    if dc >= a.bev_radius() + b.bev_radius() {
        return 0.0;
    }
    bev_overlap_area(a, b) * dz
}

/// Footprint overlap area of two boxes.
pub fn bev_overlap_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    // Equal headings modulo π/2 reduce to an interval product in a's frame.
    let dyaw = wrap_tau(b.yaw - a.yaw);
    let quarter = dyaw / (PI / 2.0);
    let k = quarter.round();
    if (quarter - k).abs() * (PI / 2.0) < 1e-12 {
        let rel = b.center - a.center;
        let local = rel.rotate_yaw(-a.yaw);
        let (bl, bw) = if (k as i64) % 2 == 0 {
            (b.dims.length, b.dims.width)
        } else {
            (b.dims.width, b.dims.length)
        };
        let ox = overlap_1d(-a.dims.length / 2.0, a.dims.length / 2.0, local.x - bl / 2.0, local.x + bl / 2.0);
        let oy = overlap_1d(-a.dims.width / 2.0, a.dims.width / 2.0, local.y - bw / 2.0, local.y + bw / 2.0);
        return ox * oy;
    }
    let clipped = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&clipped).abs()
}

fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Sutherland–Hodgman clipping of `subject` against the convex CCW polygon `clip`.
fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (ax, ay) = clip[i];
        let (bx, by) = clip[(i + 1) % clip.len()];
        let side = |p: (f64, f64)| (bx - ax) * (p.1 - ay) - (by - ay) * (p.0 - ax);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let sc = side(cur);
            let sp = side(prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: (f64, f64), q: (f64, f64), sp: f64, sq: f64) -> (f64, f64) {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        a += x0 * y1 - x1 * y0;
    }
    0.5 * a
}

/// Horizontal angle of `p - sensor`, in `[0, 2π)`.
pub fn bearing(p: Point3, sensor: Point3) -> Result<f64> {
    let dx = p.x - sensor.x;
    let dy = p.y - sensor.y;
    if dx.hypot(dy) < 1e-9 {
        return Err(Error::Degenerate(format!(
            "bearing undefined for point ({:.3}, {:.3}, {:.3}) directly above/below the sensor",
            p.x, p.y, p.z
        )));
    }
    Ok(wrap_tau(dy.atan2(dx)))
}

/// Yaw rotation followed by a translation: `x ↦ R(yaw)·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub yaw: f64,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform { yaw: 0.0, translation: Vec3::ZERO };

    pub fn new(yaw: f64, translation: Vec3) -> Self {
        Self { yaw, translation }
    }

    /// Rotation by `yaw` about the vertical axis through `pivot`.
    pub fn about(pivot: Point3, yaw: f64) -> Self {
        let t = pivot - pivot.rotate_yaw(yaw);
        Self { yaw, translation: t }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        p.rotate_yaw(self.yaw) + self.translation
    }

    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        v.rotate_yaw(self.yaw)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            yaw: self.yaw + other.yaw,
            translation: other.translation.rotate_yaw(self.yaw) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        RigidTransform { yaw: -self.yaw, translation: (-self.translation).rotate_yaw(-self.yaw) }
    }

    pub fn apply_box(&self, b: &OrientedBox) -> OrientedBox {
        OrientedBox { center: self.apply(b.center), dims: b.dims, yaw: wrap_pi(b.yaw + self.yaw) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(center: Vec3, yaw: f64) -> OrientedBox {
        OrientedBox::new(center, BoxDims::new(1.0, 1.0, 1.0), yaw).unwrap()
    }

    #[test]
    fn projection_examples() {
        let r = Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(project_onto_ray(Vec3::new(0.0, 2.0, -1.0), &r), Vec3::ZERO);
        assert_eq!(project_onto_ray(r.dir(), &r), r.dir());
        assert_eq!(project_onto_ray(Vec3::new(1.0, 1.0, 0.0), &r), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn projection_idempotent_and_contracting() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let v = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let Ok(r) = Ray::new(Vec3::ZERO, d) else { continue };
            assert!((r.dir().norm() - 1.0).abs() <= 1e-12);
            let p = project_onto_ray(v, &r);
            let pp = project_onto_ray(p, &r);
            assert!((p - pp).norm() <= 1e-12);
            assert!(p.norm() <= v.norm() + 1e-12);
            assert!(p.cross(r.dir()).norm() <= 1e-12 * (1.0 + v.norm()));
        }
    }

    #[test]
    fn contains_center_and_boundary() {
        let b = OrientedBox::new(Vec3::new(3.0, -2.0, 1.0), BoxDims::new(1.8, 1.6, 4.6), 0.7).unwrap();
        assert!(b.contains(b.center));
        let corner = b.to_world(Vec3::new(2.3, 0.9, 0.8));
        assert!(b.contains(corner - (corner - b.center) * 1e-9));
        let outward = b.to_world(Vec3::new(2.3 + 1e-6, 0.9 + 1e-6, 0.8 + 1e-6));
        assert!(!b.contains(outward));
    }

    #[test]
    fn contains_matches_rotation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let yaw = rng.random_range(-PI..PI);
            let b = OrientedBox::new(
                Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.5),
                BoxDims::new(rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..5.0)),
                yaw,
            )
            .unwrap();
            let p = Vec3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(-2.0..3.0));
            // Oracle: explicit rotation matrix applied to the offset.
            let d = p - b.center;
            let lx = yaw.cos() * d.x + yaw.sin() * d.y;
            let ly = -yaw.sin() * d.x + yaw.cos() * d.y;
            let inside = lx.abs() <= b.dims.length / 2.0 && ly.abs() <= b.dims.width / 2.0 && d.z.abs() <= b.dims.height / 2.0;
            assert_eq!(box_contains(&b, p), inside);
        }
    }

    #[test]
    fn iou_examples() {
        let a = unit_box(Vec3::ZERO, 0.0);
        assert_eq!(iou_3d(&a, &a), 1.0);
        let far = unit_box(Vec3::new(5.0, 0.0, 0.0), 0.3);
        assert_eq!(iou_3d(&a, &far), 0.0);
        let shifted = unit_box(Vec3::new(0.5, 0.0, 0.0), 0.0);
        assert!((iou_3d(&a, &shifted) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_rotated_against_sampling_oracle() {
        // Monte-Carlo estimate as an independent reference for the clipping path.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = OrientedBox::new(Vec3::ZERO, BoxDims::new(1.8, 1.6, 4.6), rng.random_range(-PI..PI)).unwrap();
            let b = OrientedBox::new(
                Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5)),
                BoxDims::new(1.7, 1.5, 4.2),
                rng.random_range(-PI..PI),
            )
            .unwrap();
            let n = 200_000;
            let mut hit = 0usize;
            for _ in 0..n {
                let l = Vec3::new(
                    rng.random_range(-0.5..0.5) * a.dims.length,
                    rng.random_range(-0.5..0.5) * a.dims.width,
                    rng.random_range(-0.5..0.5) * a.dims.height,
                );
                if b.contains(a.to_world(l)) {
                    hit += 1;
                }
            }
            let inter = a.volume() * hit as f64 / n as f64;
            let mc = inter / (a.volume() + b.volume() - inter);
            let exact = iou_3d(&a, &b);
            assert!((mc - exact).abs() < 0.01, "mc {mc} exact {exact}");
            assert!((iou_3d(&a, &b) - iou_3d(&b, &a)).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_quarter_turn_is_exact() {
        let a = OrientedBox::new(Vec3::ZERO, BoxDims::new(2.0, 1.0, 4.0), 0.0).unwrap();
        let b = OrientedBox::new(Vec3::ZERO, BoxDims::new(2.0, 1.0, 4.0), PI / 2.0).unwrap();
        // 2x2 square overlap of two 2x4 rectangles crossed at right angles.
        assert!((iou_3d(&a, &b) - 4.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn bearing_examples() {
        let s = Vec3::new(0.0, 0.0, 1.7);
        assert_eq!(bearing(Vec3::new(1.0, 0.0, 0.0), s).unwrap(), 0.0);
        assert!((bearing(Vec3::new(0.0, 1.0, 5.0), s).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((bearing(Vec3::new(-1.0, -1.0, 0.0), s).unwrap() - 5.0 * PI / 4.0).abs() < 1e-15);
        assert!(bearing(Vec3::new(0.0, 0.0, 0.0), s).is_err());
    }

    #[test]
    fn bearing_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Vec3::new(0.2, -0.1, 1.7);
        for _ in 0..1000 {
            let p = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 0.0);
            let d = rng.random_range(-10.0..10.0);
            let rot = RigidTransform::about(s, d);
            let lhs = bearing(rot.apply(p), s).unwrap();
            let rhs = wrap_tau(bearing(p, s).unwrap() + d);
            let diff = wrap_pi(lhs - rhs);
            assert!(diff.abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn transform_inverse_and_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let mut t = || {
                RigidTransform::new(
                    rng.random_range(-PI..PI),
                    Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                )
            };
            let (a, b, c) = (t(), t(), t());
            let p = Vec3::new(1.3, -0.4, 2.0);
            let lhs = a.compose(&b).compose(&c).apply(p);
            let rhs = a.compose(&b.compose(&c)).apply(p);
            assert!((lhs - rhs).norm() < 1e-12);
            assert!((a.inverse().compose(&a).apply(p) - p).norm() < 1e-12);
        }
    }

    #[test]
    fn wrap_ranges() {
        assert_eq!(wrap_pi(PI), -PI);
        assert!(wrap_pi(-PI) == -PI);
        assert!(wrap_tau(-1e-20) < TAU);
        assert_eq!(wrap_tau(TAU), 0.0);
    }
}
