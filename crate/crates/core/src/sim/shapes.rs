//! Analytic solids with exact ray intersection.
//!
//! All solids are convex, so a ray that hits one enters once and leaves once;
//! the chord between the two is used to keep dents inside the hull.

use crate::geometry::Vec3;

/// Entry and exit parameters of a ray through a convex solid, with the outward
/// normal at the entry point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t_in: f64,
    pub t_out: f64,
    pub normal: Vec3,
}

/// Intersection of half-spaces `n · x <= d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub planes: Vec<(Vec3, f64)>,
}

impl Polytope {
    /// Axis-aligned box `[lo, hi]`.
    pub fn cuboid(lo: Vec3, hi: Vec3) -> Self {
        Self {
            planes: vec![
                (Vec3::new(1.0, 0.0, 0.0), hi.x),
                (Vec3::new(-1.0, 0.0, 0.0), -lo.x),
                (Vec3::new(0.0, 1.0, 0.0), hi.y),
                (Vec3::new(0.0, -1.0, 0.0), -lo.y),
                (Vec3::new(0.0, 0.0, 1.0), hi.z),
                (Vec3::new(0.0, 0.0, -1.0), -lo.z),
            ],
        }
    }

    /// Prism along y whose xz cross-section is the trapezoid with bottom
    /// `[x0, x1]` at `z0` and top `[x2, x3]` at `z1`.
    pub fn trapezoid_prism(x0: f64, x1: f64, x2: f64, x3: f64, z0: f64, z1: f64, half_w: f64) -> Self {
        let h = z1 - z0;
        // Front face through (x1, z0) and (x3, z1); outward normal points +x.
        let nf = Vec3::new(h, 0.0, x1 - x3).normalized().expect("nondegenerate");
        let nb = Vec3::new(-h, 0.0, x2 - x0).normalized().expect("nondegenerate");
        Self {
            planes: vec![
                (nf, nf.x * x1 + nf.z * z0),
                (nb, nb.x * x0 + nb.z * z0),
                (Vec3::new(0.0, 1.0, 0.0), half_w),
                (Vec3::new(0.0, -1.0, 0.0), half_w),
                (Vec3::new(0.0, 0.0, 1.0), z1),
                (Vec3::new(0.0, 0.0, -1.0), -z0),
            ],
        }
    }

    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        self.planes.iter().all(|(n, d)| n.dot(p) <= d + tol)
    }

    pub fn intersect(&self, o: Vec3, dir: Vec3) -> Option<Hit> {
        let mut t_in = f64::NEG_INFINITY;
        let mut t_out = f64::INFINITY;
        let mut normal = Vec3::ZERO;
        for &(n, d) in &self.planes {
            let denom = n.dot(dir);
            let dist = d - n.dot(o);
            if denom.abs() < 1e-15 {
                if dist < 0.0 {
                    return None;
                }
                continue;
            }
            let t = dist / denom;
            if denom < 0.0 {
                if t > t_in {
                    t_in = t;
                    normal = n;
                }
            } else if t < t_out {
                t_out = t;
            }
            if t_in > t_out {
                return None;
            }
        }
        (t_in > 0.0 && t_in <= t_out).then_some(Hit { t_in, t_out, normal })
    }
}

/// Vertical cylinder with flat caps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    pub center: Vec3,
    pub radius: f64,
    pub z0: f64,
    pub z1: f64,
}

impl Cylinder {
    pub fn intersect(&self, o: Vec3, dir: Vec3) -> Option<Hit> {
        let (ox, oy) = (o.x - self.center.x, o.y - self.center.y);
        let a = dir.x * dir.x + dir.y * dir.y;
        // Interval of t inside the infinite cylinder.
        let (mut t0, mut t1, mut n0) = if a < 1e-15 {
            if ox * ox + oy * oy > self.radius * self.radius {
                return None;
            }
            (f64::NEG_INFINITY, f64::INFINITY, Vec3::ZERO)
        } else {
            let b = ox * dir.x + oy * dir.y;
            let c = ox * ox + oy * oy - self.radius * self.radius;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let ta = (-b - sq) / a;
            let tb = (-b + sq) / a;
            let n = Vec3::new(ox + ta * dir.x, oy + ta * dir.y, 0.0) / self.radius;
            (ta, tb, n)
        };
        // Clip with the caps.
        if dir.z.abs() < 1e-15 {
            if o.z < self.z0 || o.z > self.z1 {
                return None;
            }
        } else {
            let ta = (self.z0 - o.z) / dir.z;
            let tb = (self.z1 - o.z) / dir.z;
            let (lo, hi, nlo) =
                if ta < tb { (ta, tb, Vec3::new(0.0, 0.0, -1.0)) } else { (tb, ta, Vec3::new(0.0, 0.0, 1.0)) };
            if lo > t0 {
                t0 = lo;
                n0 = nlo;
            }
            t1 = t1.min(hi);
        }
        (t0 > 0.0 && t0 <= t1).then_some(Hit { t_in: t0, t_out: t1, normal: n0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn intersect(&self, o: Vec3, dir: Vec3) -> Option<Hit> {
        let oc = o - self.center;
        let b = oc.dot(dir);
        let c = oc.norm_sq() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let (t0, t1) = (-b - sq, -b + sq);
        if t0 <= 0.0 {
            return None;
        }
        let normal = (o + dir * t0 - self.center) / self.radius;
        Some(Hit { t_in: t0, t_out: t1, normal })
    }
}

/// One convex piece of an object, in the object's local frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Polytope(Polytope),
    Cylinder(Cylinder),
    Sphere(Sphere),
}

impl Primitive {
    /// Ray `o + t·dir` with unit `dir`.
    pub fn intersect(&self, o: Vec3, dir: Vec3) -> Option<Hit> {
        match self {
            Primitive::Polytope(p) => p.intersect(o, dir),
            Primitive::Cylinder(c) => c.intersect(o, dir),
            Primitive::Sphere(s) => s.intersect(o, dir),
        }
    }
}

/// Nearest hit over a union of primitives.
pub fn intersect_union(prims: &[Primitive], o: Vec3, dir: Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for p in prims {
        if let Some(h) = p.intersect(o, dir) {
            if best.is_none_or(|b| h.t_in < b.t_in) {
                best = Some(h);
            }
        }
    }
    best
}
