//! Sample-independent adversarial vector fields.
//!
//! A field is a regular lattice of roots inside a reference box, each carrying a
//! learnable displacement `(x, y, z)` plus an intensity shift. To perturb an
//! object the lattice is stretched onto the object's box, every point inside the
//! box picks its `k` nearest roots, and the inverse-distance blend of their
//! vectors, projected on the point's sensor ray, is added to the point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{BoxDims, OrientedBox, Point3, Vec3};
use crate::spatial::UniformGrid;

/// Magnitude of the uniform random initialization, in meters (and intensity units).
pub const INIT_RANGE: f64 = 0.01;

/// Distances below this count as "on the root".
const COINCIDENT: f64 = 1e-9;

/// Number of cells along each axis, floor(extent / step).
pub fn lattice_counts(dims: BoxDims, step: f64) -> Result<[usize; 3]> {
    if !dims.is_valid() || !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("lattice needs positive dims and step, got {dims:?}, t={step}")));
    }
    let min = dims.width.min(dims.height).min(dims.length);
    if step > min * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("step {step} exceeds the smallest box extent {min}")));
    }
    // The epsilon absorbs representation error in quotients such as 4.6 / 0.2.
    let count = |d: f64| ((d / step) + 1e-9).floor() as usize;
    Ok([count(dims.length), count(dims.width), count(dims.height)])
}

/// Lattice of displacement vectors anchored in a reference box.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub reference: BoxDims,
    pub step: f64,
    /// Cells along (length, width, height).
    pub shape: [usize; 3],
    /// Root coordinates in the reference box frame (x along length, y along width, z up).
    pub roots: Vec<Vec3>,
    /// Per-root spatial displacement in the box frame and intensity shift.
    pub vectors: Vec<[f64; 4]>,
    pub group: usize,
    pub variant: usize,
    pub class: ClassId,
}

impl VectorField {
    /// Zero-initialized lattice with roots at cell centers.
    pub fn build(dims: BoxDims, step: f64) -> Result<Self> {
        let shape = lattice_counts(dims, step)?;
        let [nl, nw, nh] = shape;
        let mut roots = Vec::with_capacity(nl * nw * nh);
        for il in 0..nl {
            for iw in 0..nw {
                for ih in 0..nh {
                    roots.push(Vec3::new(
                        (il as f64 + 0.5 - nl as f64 / 2.0) * step,
                        (iw as f64 + 0.5 - nw as f64 / 2.0) * step,
                        (ih as f64 + 0.5 - nh as f64 / 2.0) * step,
                    ));
                }
            }
        }
        let vectors = vec![[0.0; 4]; roots.len()];
        Ok(Self { reference: dims, step, shape, roots, vectors, group: 0, variant: 0, class: 0 })
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Fills every component with U(-1 cm, 1 cm), deterministic in `seed`.
    pub fn init_random(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut self.vectors {
            for c in v.iter_mut() {
                *c = rng.random_range(-INIT_RANGE..INIT_RANGE);
            }
        }
    }

    /// Clips spatial components to `[-eps, eps]` and the intensity shift to `[-psi, psi]`.
    pub fn clamp(&mut self, eps: f64, psi: f64) {
        for v in &mut self.vectors {
            for c in &mut v[..3] {
                *c = c.clamp(-eps, eps);
            }
            v[3] = v[3].clamp(-psi, psi);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.iter().all(|v| v.iter().all(|&c| c == 0.0))
    }

    /// Roots stretched onto `b` in world coordinates. Vectors are not scaled.
    pub fn anchor(&self, b: &OrientedBox) -> Vec<Point3> {
        anchor_roots(&self.roots, self.reference, b)
    }

    /// Spatial part of vector `j`, rotated into the world frame of a box with the given yaw.
    #[inline]
    pub fn world_vector(&self, j: usize, cos_yaw: f64, sin_yaw: f64) -> Vec3 {
        let v = self.vectors[j];
        Vec3::new(v[0], v[1], v[2]).rotate_cs(cos_yaw, sin_yaw)
    }
}

pub fn anchor_roots(roots: &[Vec3], reference: BoxDims, b: &OrientedBox) -> Vec<Point3> {
    let sx = b.dims.length / reference.length;
    let sy = b.dims.width / reference.width;
    let sz = b.dims.height / reference.height;
    roots.iter().map(|r| b.to_world(Vec3::new(r.x * sx, r.y * sy, r.z * sz))).collect()
}

/// How fields are anchored to objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    /// Oriented ground-truth (or detected) boxes.
    Oriented,
    /// Axis-aligned boxes around instance points, with opposite rotation groups folded.
    AxisAligned,
}

impl AnchorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnchorMode::Oriented => "oriented",
            AnchorMode::AxisAligned => "axis-aligned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oriented" | "gt" => Ok(AnchorMode::Oriented),
            "axis-aligned" => Ok(AnchorMode::AxisAligned),
            other => Err(Error::InvalidArgument(format!("unknown anchor mode `{other}`"))),
        }
    }
}

/// G × N fields for one class, all sharing reference dims and step.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBank {
    pub class: ClassId,
    pub class_name: String,
    pub groups: usize,
    pub variants: usize,
    pub anchor: AnchorMode,
    pub reference: BoxDims,
    pub step: f64,
    pub epsilon: f64,
    pub psi: f64,
    /// Indexed by `group * variants + variant`.
    pub fields: Vec<VectorField>,
}

impl FieldBank {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        class: ClassId,
        class_name: &str,
        groups: usize,
        variants: usize,
        anchor: AnchorMode,
        reference: BoxDims,
        step: f64,
        epsilon: f64,
        psi: f64,
    ) -> Result<Self> {
        if groups == 0 || variants == 0 {
            return Err(Error::InvalidArgument("a bank needs G >= 1 and N >= 1".into()));
        }
        if !(epsilon > 0.0) || !(psi > 0.0) {
            return Err(Error::InvalidArgument("epsilon and psi must be positive".into()));
        }
        let proto = VectorField::build(reference, step)?;
        let mut fields = Vec::with_capacity(groups * variants);
        for g in 0..groups {
            for n in 0..variants {
                let mut f = proto.clone();
                f.group = g;
                f.variant = n;
                f.class = class;
                fields.push(f);
            }
        }
        Ok(Self {
            class,
            class_name: class_name.to_string(),
            groups,
            variants,
            anchor,
            reference,
            step,
            epsilon,
            psi,
            fields,
        })
    }

    pub fn index(&self, group: usize, variant: usize) -> usize {
        group * self.variants + variant
    }

    pub fn field(&self, group: usize, variant: usize) -> &VectorField {
        &self.fields[self.index(group, variant)]
    }

    pub fn field_mut(&mut self, group: usize, variant: usize) -> &mut VectorField {
        let i = self.index(group, variant);
        &mut self.fields[i]
    }

    pub fn roots_per_field(&self) -> usize {
        self.fields.first().map_or(0, VectorField::len)
    }

    pub fn total_vectors(&self) -> usize {
        self.fields.iter().map(VectorField::len).sum()
    }

    /// Independent random initialization of every field.
    pub fn init_random(&mut self, seed: u64) {
        for (i, f) in self.fields.iter_mut().enumerate() {
            f.init_random(field_seed(seed, i));
        }
    }

    pub fn clamp(&mut self) {
        let (e, p) = (self.epsilon, self.psi);
        for f in &mut self.fields {
            f.clamp(e, p);
        }
    }

    /// Checks the invariants that must hold for a bank loaded from disk.
    pub fn validate(&self) -> Result<()> {
        if self.fields.len() != self.groups * self.variants {
            return Err(Error::LengthMismatch(format!(
                "{} fields for G={} N={}",
                self.fields.len(),
                self.groups,
                self.variants
            )));
        }
        let proto = VectorField::build(self.reference, self.step)?;
        for (i, f) in self.fields.iter().enumerate() {
            if f.group * self.variants + f.variant != i {
                return Err(Error::Format(format!("field {i} has (g={}, n={}) out of order", f.group, f.variant)));
            }
            if f.len() != proto.len() || f.vectors.len() != f.roots.len() {
                return Err(Error::LengthMismatch(format!(
                    "field {i} has {} roots / {} vectors, expected {}",
                    f.roots.len(),
                    f.vectors.len(),
                    proto.len()
                )));
            }
            if f.reference != self.reference || f.step != self.step {
                return Err(Error::Format(format!("field {i} disagrees with the bank geometry")));
            }
        }
        Ok(())
    }
}

/// Seed of field `index` derived from a bank seed.
pub fn field_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64).rotate_left(17) ^ 0xA5A5_5A5A_0F0F_F0F0
}

/// Frozen assignment of the points inside one box to their nearest roots.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationPlan {
    pub k: usize,
    pub cos_yaw: f64,
    pub sin_yaw: f64,
    /// Cloud indices of affected points.
    pub points: Vec<usize>,
    /// `k` root indices per affected point.
    pub roots: Vec<u32>,
    /// `k` normalized inverse-distance weights per affected point.
    pub weights: Vec<f64>,
    /// Unit direction from the sensor to each affected point.
    pub rays: Vec<Vec3>,
}

impl DeformationPlan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = i * self.k;
        self.roots[s..s + self.k].iter().zip(&self.weights[s..s + self.k]).map(|(&r, &w)| (r as usize, w))
    }
}

/// Plans the deformation of every point inside `b` with the lattice of `field`.
pub fn plan(cloud: &PointCloud, b: &OrientedBox, field: &VectorField, sensor: Point3, k: usize) -> Result<DeformationPlan> {
    let affected = cloud.indices_in_box(b);
    plan_points(cloud, &affected, b, field, sensor, k)
}

/// Like [`plan`] but for an explicit set of point indices.
pub fn plan_points(
    cloud: &PointCloud,
    affected: &[usize],
    b: &OrientedBox,
    field: &VectorField,
    sensor: Point3,
    k: usize,
) -> Result<DeformationPlan> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let k = k.min(field.len());
    let (sin_yaw, cos_yaw) = b.yaw.sin_cos();
    let mut out = DeformationPlan {
        k,
        cos_yaw,
        sin_yaw,
        points: Vec::with_capacity(affected.len()),
        roots: Vec::with_capacity(affected.len() * k),
        weights: Vec::with_capacity(affected.len() * k),
        rays: Vec::with_capacity(affected.len()),
    };
    if affected.is_empty() {
        return Ok(out);
    }
    let anchored = field.anchor(b);
    let spacing = field.step
        * (b.dims.length / field.reference.length)
            .max(b.dims.width / field.reference.width)
            .max(b.dims.height / field.reference.height);
    let grid = UniformGrid::new(&anchored, spacing.max(1e-6));
    for &i in affected {
        let p = cloud.positions[i];
        let ray = (p - sensor)
            .normalized()
            .ok_or_else(|| Error::Degenerate(format!("point {i} coincides with the sensor")))?;
        let nn = grid.knn(p, k);
        let dists: Vec<f64> = nn.iter().map(|&(_, d2)| d2.sqrt()).collect();
        out.points.push(i);
        out.rays.push(ray);
        if let Some(hit) = dists.iter().position(|&d| d < COINCIDENT) {
            for (j, &(r, _)) in nn.iter().enumerate() {
                out.roots.push(r as u32);
                out.weights.push(if j == hit { 1.0 } else { 0.0 });
            }
        } else {
            let total: f64 = dists.iter().map(|d| 1.0 / d).sum();
            for (&(r, _), d) in nn.iter().zip(&dists) {
                out.roots.push(r as u32);
                out.weights.push((1.0 / d) / total);
            }
        }
    }
    Ok(out)
}

/// Spatial displacement and raw (unclipped) intensity shift of planned point `i`.
#[inline]
pub fn point_shift(plan: &DeformationPlan, field: &VectorField, i: usize) -> (Vec3, f64) {
    let u = plan.rays[i];
    let mut along = 0.0;
    let mut dt = 0.0;
    for (j, w) in plan.neighbors(i) {
        along += w * field.world_vector(j, plan.cos_yaw, plan.sin_yaw).dot(u);
        dt += w * field.vectors[j][3];
    }
    (u * along, dt)
}

/// Applies `field` through `plan` in place. Labels are untouched.
pub fn deform_in_place(cloud: &mut PointCloud, plan: &DeformationPlan, field: &VectorField) {
    for (i, &idx) in plan.points.iter().enumerate() {
        let (dp, dt) = point_shift(plan, field, i);
        cloud.positions[idx] += dp;
        cloud.intensity[idx] = (cloud.intensity[idx] + dt).clamp(0.0, 1.0);
    }
}

pub fn deform(cloud: &PointCloud, plan: &DeformationPlan, field: &VectorField) -> PointCloud {
    let mut out = cloud.clone();
    deform_in_place(&mut out, plan, field);
    out
}

/// Gradient of a scalar loss w.r.t. every field component, box frame.
pub type FieldGrad = Vec<[f64; 4]>;

/// Linearization of [`deform`] around a clean cloud and a field.
///
/// Spatial block for point `i` and neighbor `j`: `w_ij · û_i û_iᵀ · R(yaw)`
/// (the field is stored in the box frame). Intensity: `w_ij` where the
/// `[0, 1]` clip is inactive, zero otherwise.
#[derive(Debug, Clone)]
pub struct ShiftJacobian<'a> {
    plan: &'a DeformationPlan,
    /// Per planned point: intensity clip inactive.
    open: Vec<bool>,
}

pub fn shift_jacobian<'a>(clean: &PointCloud, plan: &'a DeformationPlan, field: &VectorField) -> ShiftJacobian<'a> {
    let open = (0..plan.len())
        .map(|i| {
            let (_, dt) = point_shift(plan, field, i);
            let t = clean.intensity[plan.points[i]] + dt;
            (0.0..=1.0).contains(&t)
        })
        .collect();
    ShiftJacobian { plan, open }
}

impl ShiftJacobian<'_> {
    /// 3×3 block `∂p'_i / ∂v_j` (row-major) for planned point `i`; zero if `j` is not a neighbor.
    pub fn spatial_block(&self, i: usize, j: usize) -> [[f64; 3]; 3] {
        let w: f64 = self.plan.neighbors(i).filter(|&(r, _)| r == j).map(|(_, w)| w).sum();
        let u = self.plan.rays[i];
        let (c, s) = (self.plan.cos_yaw, self.plan.sin_yaw);
        // û ûᵀ R, with R the yaw rotation.
        let ru = [c * u.x + s * u.y, -s * u.x + c * u.y, u.z]; // Rᵀû
        let uu = [u.x, u.y, u.z];
        let mut m = [[0.0; 3]; 3];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell = w * uu[a] * ru[b];
            }
        }
        m
    }

    /// `∂τ'_i / ∂τshift_j`.
    pub fn intensity_entry(&self, i: usize, j: usize) -> f64 {
        if !self.open[i] {
            return 0.0;
        }
        self.plan.neighbors(i).filter(|&(r, _)| r == j).map(|(_, w)| w).sum()
    }

    /// Vector-Jacobian product: adds `Jᵀ g` into `out`.
    ///
    /// `grad_pos` / `grad_int` are indexed by cloud point index.
    pub fn accumulate(&self, grad_pos: &[Vec3], grad_int: &[f64], out: &mut FieldGrad) {
        let plan = self.plan;
        let (c, s) = (plan.cos_yaw, plan.sin_yaw);
        for (i, &idx) in plan.points.iter().enumerate() {
            let u = plan.rays[i];
            let along = grad_pos[idx].dot(u);
            // Rᵀ û, so that d/dv_local (û · R v) = Rᵀ û.
            let ru = Vec3::new(c * u.x + s * u.y, -s * u.x + c * u.y, u.z);
            let gt = if self.open[i] { grad_int[idx] } else { 0.0 };
            for (j, w) in plan.neighbors(i) {
                let o = &mut out[j];
                let a = w * along;
                o[0] += a * ru.x;
                o[1] += a * ru.y;
                o[2] += a * ru.z;
                o[3] += w * gt;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn car_dims() -> BoxDims {
        BoxDims::new(1.8, 1.6, 4.6)
    }

    #[test]
    fn lattice_counts_examples() {
        let f = VectorField::build(car_dims(), 0.2).unwrap();
        assert_eq!(f.len(), 9 * 8 * 23);
        assert_eq!(f.len(), 1656);
        let unit = VectorField::build(BoxDims::new(1.0, 1.0, 1.0), 1.0).unwrap();
        assert_eq!(unit.roots, vec![Vec3::ZERO]);
        let person = VectorField::build(BoxDims::new(0.54, 1.7, 0.66), 0.05).unwrap();
        assert_eq!(person.len(), 10 * 34 * 13);
        assert!(VectorField::build(BoxDims::new(1.0, 0.1, 1.0), 0.2).is_err());
    }

    #[test]
    fn roots_are_cell_centers_inside_box() {
        let f = VectorField::build(car_dims(), 0.2).unwrap();
        let b = OrientedBox::new(Vec3::ZERO, car_dims(), 0.0).unwrap();
        assert!(f.roots.iter().all(|r| b.contains(*r)));
        let mean = f.roots.iter().fold(Vec3::ZERO, |a, r| a + *r) / f.len() as f64;
        assert!(mean.norm() < 1e-12);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let mut a = VectorField::build(car_dims(), 0.2).unwrap();
        let mut b = a.clone();
        a.init_random(3);
        b.init_random(3);
        assert_eq!(a, b);
        assert!(a.vectors.iter().flatten().all(|c| c.abs() <= INIT_RANGE));
        b.init_random(4);
        let differ = a.vectors.iter().flatten().zip(b.vectors.iter().flatten()).filter(|(x, y)| x != y).count();
        assert!(differ as f64 >= 0.99 * (4 * a.len()) as f64);
    }

    #[test]
    fn anchor_identity_scale_and_rotation() {
        let f = VectorField::build(car_dims(), 0.2).unwrap();
        let b0 = OrientedBox::new(Vec3::ZERO, car_dims(), 0.0).unwrap();
        assert_eq!(f.anchor(&b0), f.roots);

        let long = OrientedBox::new(Vec3::ZERO, BoxDims::new(1.8, 1.6, 9.2), 0.0).unwrap();
        let a = f.anchor(&long);
        for (r, w) in f.roots.iter().zip(&a) {
            assert!((w.x - 2.0 * r.x).abs() < 1e-12 && (w.y - r.y).abs() < 1e-12 && (w.z - r.z).abs() < 1e-12);
        }

        let rot = OrientedBox::new(Vec3::new(5.0, 1.0, 0.8), car_dims(), PI / 2.0).unwrap();
        let a = f.anchor(&rot);
        for (r, w) in f.roots.iter().zip(&a) {
            // local +x (length) goes to world +y
            let expect = Vec3::new(5.0 - r.y, 1.0 + r.x, 0.8 + r.z);
            assert!((*w - expect).norm() < 1e-12);
        }
    }

    fn cloud_of(points: &[Vec3]) -> PointCloud {
        let mut c = PointCloud::default();
        for p in points {
            c.push(*p, 0.4, 1, 1);
        }
        c
    }

    #[test]
    fn plan_weights_symmetric_and_degenerate() {
        let f = VectorField::build(BoxDims::new(1.0, 1.0, 2.0), 1.0).unwrap();
        // roots at x = ±0.5
        let b = OrientedBox::new(Vec3::new(10.0, 0.0, 0.0), BoxDims::new(1.0, 1.0, 2.0), 0.0).unwrap();
        let c = cloud_of(&[Vec3::new(10.0, 0.2, 0.1), Vec3::new(10.5, 0.0, 0.0)]);
        let p = plan(&c, &b, &f, Vec3::ZERO, 2).unwrap();
        let w0: Vec<f64> = p.neighbors(0).map(|x| x.1).collect();
        assert!((w0[0] - 0.5).abs() < 1e-12 && (w0[1] - 0.5).abs() < 1e-12);
        let w1: Vec<(usize, f64)> = p.neighbors(1).collect();
        assert_eq!(w1[0], (1, 1.0));
        assert_eq!(w1[1].1, 0.0);
    }

    #[test]
    fn plan_rejects_point_at_sensor() {
        let f = VectorField::build(BoxDims::new(1.0, 1.0, 1.0), 0.5).unwrap();
        let b = OrientedBox::new(Vec3::ZERO, BoxDims::new(1.0, 1.0, 1.0), 0.0).unwrap();
        let c = cloud_of(&[Vec3::ZERO]);
        assert!(matches!(plan(&c, &b, &f, Vec3::ZERO, 2), Err(Error::Degenerate(_))));
        assert!(plan(&c, &b, &f, Vec3::new(5.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn zero_field_is_identity_and_colinear_vector_slides() {
        let mut f = VectorField::build(BoxDims::new(1.0, 1.0, 1.0), 1.0).unwrap();
        let b = OrientedBox::new(Vec3::new(10.0, 0.0, 0.0), BoxDims::new(1.0, 1.0, 1.0), 0.0).unwrap();
        let c = cloud_of(&[Vec3::new(10.0, 0.0, 0.0), Vec3::new(30.0, 0.0, 0.0)]);
        let p = plan(&c, &b, &f, Vec3::ZERO, 1).unwrap();
        assert_eq!(deform(&c, &p, &f), c);
        f.vectors[0] = [0.25, 0.0, 0.0, 0.0];
        let d = deform(&c, &p, &f);
        assert_eq!(d.positions[0], Vec3::new(10.25, 0.0, 0.0));
        assert_eq!(d.positions[1], c.positions[1]);
    }

    #[test]
    fn clamp_examples() {
        let mut f = VectorField::build(BoxDims::new(1.0, 1.0, 1.0), 1.0).unwrap();
        f.vectors[0] = [0.5, -0.1, -0.7, 0.9];
        f.clamp(0.3, 0.3);
        assert_eq!(f.vectors[0], [0.3, -0.1, -0.3, 0.3]);
        let once = f.clone();
        f.clamp(0.3, 0.3);
        assert_eq!(f, once);
    }

    #[test]
    fn jacobian_block_for_axis_ray() {
        let f = VectorField::build(BoxDims::new(1.0, 1.0, 1.0), 1.0).unwrap();
        let b = OrientedBox::new(Vec3::new(10.0, 0.0, 0.0), BoxDims::new(1.0, 1.0, 1.0), 0.0).unwrap();
        let c = cloud_of(&[Vec3::new(10.0, 0.0, 0.0)]);
        let p = plan(&c, &b, &f, Vec3::ZERO, 1).unwrap();
        let j = shift_jacobian(&c, &p, &f);
        assert_eq!(j.spatial_block(0, 0), [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(j.spatial_block(0, 5), [[0.0; 3]; 3]);
        assert_eq!(j.intensity_entry(0, 0), 1.0);
    }

    #[test]
    fn bank_layout_and_count() {
        let bank = FieldBank::new(1, "car", 12, 6, AnchorMode::Oriented, car_dims(), 0.2, 0.3, 0.3).unwrap();
        assert_eq!(bank.fields.len(), 72);
        assert_eq!(bank.total_vectors(), 119_232);
        assert_eq!(bank.field(3, 2).group, 3);
        assert_eq!(bank.field(3, 2).variant, 2);
        bank.validate().unwrap();
    }
}
