//! Deterministic synthetic LiDAR scenes.
//!
//! A scene is a flat ground plane at `z = 0` with cars, people, buildings and
//! vegetation built from analytic solids, swept by a spinning multi-channel
//! sensor. Three domains share one layout generator: `normal`, `rare` (cars
//! re-proportioned per axis) and `damaged` (cars with inward dents).
//!
//! Randomness comes from ChaCha8 streams derived from the scene seed: one for
//! the layout, one for domain-specific car changes and one for per-ray noise.
//! Because the noise stream is consumed once per ray whether or not it hits,
//! two domains of the same seed agree bit-for-bit on every ray that misses the
//! cars in both.

pub mod shapes;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cloud::{ClassId, ClassTable, PointCloud, NO_INSTANCE};
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::{BoxDims, OrientedBox, Point3, Vec3};
use crate::io::LabeledBox;
use shapes::{intersect_union, Cylinder, Hit, Polytope, Primitive, Sphere};

pub const CLASS_GROUND: ClassId = 0;
pub const CLASS_CAR: ClassId = 1;
pub const CLASS_PERSON: ClassId = 2;
pub const CLASS_BUILDING: ClassId = 3;
pub const CLASS_VEGETATION: ClassId = 4;

/// Canonical car box (width, height, length).
pub const CAR_DIMS: BoxDims = BoxDims::new(1.8, 1.6, 4.6);
/// Canonical person box.
pub const PERSON_DIMS: BoxDims = BoxDims::new(0.54, 1.7, 0.66);

/// Range noise is truncated at this many standard deviations.
const NOISE_CLIP: f64 = 2.0;
const CAR_CLEARANCE: f64 = 0.15;
const BASE_CLEARANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub height: f64,
    pub channels: usize,
    pub elev_min_deg: f64,
    pub elev_max_deg: f64,
    pub azimuth_res_deg: f64,
    pub max_range: f64,
    pub range_noise: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            height: 1.73,
            channels: 32,
            elev_min_deg: -25.0,
            elev_max_deg: 3.0,
            azimuth_res_deg: 0.4,
            max_range: 80.0,
            range_noise: 0.01,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || !(self.azimuth_res_deg > 0.0) || !(self.max_range > 0.0) || !(self.height > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid sensor {self:?}")));
        }
        if !(self.elev_max_deg > self.elev_min_deg) || !(self.range_noise >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid sensor {self:?}")));
        }
        Ok(())
    }

    pub fn origin(&self) -> Point3 {
        Vec3::new(0.0, 0.0, self.height)
    }

    pub fn azimuth_steps(&self) -> usize {
        (360.0 / self.azimuth_res_deg).round() as usize
    }

    pub fn ray_count(&self) -> usize {
        self.channels * self.azimuth_steps()
    }

    /// Unit direction of ray `index = channel * azimuth_steps + step`.
    pub fn ray_dir(&self, index: usize) -> Vec3 {
        let steps = self.azimuth_steps();
        let (c, a) = (index / steps, index % steps);
        let elev = (self.elev_min_deg + (self.elev_max_deg - self.elev_min_deg) * c as f64 / (self.channels - 1) as f64)
            .to_radians();
        let az = (a as f64 * 360.0 / steps as f64).to_radians();
        Vec3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Normal,
    Rare,
    Damaged,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Normal => "normal",
            Domain::Rare => "rare",
            Domain::Damaged => "damaged",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Domain::Normal),
            "rare" => Ok(Domain::Rare),
            "damaged" => Ok(Domain::Damaged),
            other => Err(Error::InvalidArgument(format!("unknown domain `{other}` (normal, rare, damaged)"))),
        }
    }
}

/// A spherical dent in object-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dent {
    pub center: Vec3,
    pub radius: f64,
    pub depth: f64,
}

/// One object of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub class: ClassId,
    pub instance: u16,
    /// Ground-truth box; the solids are expressed in this box's frame.
    pub pose: OrientedBox,
    pub parts: Vec<Primitive>,
    pub reflectivity: f64,
    pub domain: Domain,
    pub dents: Vec<Dent>,
    /// Per-point intensity noise (vegetation is noisier).
    pub intensity_noise: f64,
    bound_radius: f64,
}

impl ObjectSpec {
    fn intersect(&self, origin: Point3, dir: Vec3) -> Option<Hit> {
        // Bounding-sphere rejection.
        let oc = origin - self.pose.center;
        let b = oc.dot(dir);
        let c = oc.norm_sq() - self.bound_radius * self.bound_radius;
        if c > 0.0 && (b > 0.0 || b * b < c) {
            return None;
        }
        let o = self.pose.to_local(origin);
        let d = dir.rotate_yaw(-self.pose.yaw);
        intersect_union(&self.parts, o, d).map(|h| Hit { normal: h.normal.rotate_yaw(self.pose.yaw), ..h })
    }
}

/// Object counts per scene, as inclusive ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub sensor: SensorSpec,
    pub cars: (usize, usize),
    pub persons: (usize, usize),
    pub buildings: (usize, usize),
    pub vegetation: (usize, usize),
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            sensor: SensorSpec::default(),
            cars: (5, 8),
            persons: (2, 4),
            buildings: (2, 3),
            vegetation: (2, 4),
            min_range: 5.0,
            max_range: 60.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        let total_max = self.cars.1 + self.persons.1 + self.buildings.1 + self.vegetation.1;
        for (lo, hi) in [self.cars, self.persons, self.buildings, self.vegetation] {
            if lo > hi {
                return Err(Error::InvalidArgument(format!("bad count range {lo}..={hi}")));
            }
        }
        if total_max == 0 {
            return Err(Error::InvalidArgument("a scene needs at least one object".into()));
        }
        if !(self.min_range > 0.0 && self.max_range > self.min_range) {
            return Err(Error::InvalidArgument("bad placement range".into()));
        }
        Ok(())
    }
}

/// A generated scene: its objects and the resulting labeled sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub domain: Domain,
    pub sensor: SensorSpec,
    pub objects: Vec<ObjectSpec>,
    pub cloud: PointCloud,
    /// Ray index of every point.
    pub rays: Vec<u32>,
    /// Object index per point, `None` for ground.
    pub hit_object: Vec<Option<u32>>,
}

impl Scene {
    pub fn boxes(&self) -> Vec<LabeledBox> {
        self.objects.iter().map(|o| LabeledBox { class: o.class, instance: o.instance, bbox: o.pose }).collect()
    }

    pub fn to_sample(&self) -> Sample {
        Sample { id: self.seed, cloud: self.cloud.clone(), boxes: self.boxes() }
    }
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

const STREAM_LAYOUT: u64 = 1;
const STREAM_DOMAIN: u64 = 2;
const STREAM_NOISE: u64 = 3;

fn car_parts(d: BoxDims, cabin_offset: f64, cabin_ratio: f64) -> Vec<Primitive> {
    let (hw, hl, hh) = (d.width / 2.0, d.length / 2.0, d.height / 2.0);
    let split = -hh + cabin_ratio * d.height;
    let body = Polytope::cuboid(Vec3::new(-hl, -hw, -hh), Vec3::new(hl, hw, split));
    let l = d.length;
    let cabin = Polytope::trapezoid_prism(
        (-0.38 + cabin_offset) * l,
        (0.22 + cabin_offset) * l,
        (-0.28 + cabin_offset) * l,
        (0.05 + cabin_offset) * l,
        split,
        hh,
        0.45 * d.width,
    );
    vec![Primitive::Polytope(body), Primitive::Polytope(cabin)]
}

fn person_parts(d: BoxDims) -> Vec<Primitive> {
    let hh = d.height / 2.0;
    let head = 0.12;
    let r = 0.5 * d.width.min(d.length);
    vec![
        Primitive::Cylinder(Cylinder { center: Vec3::ZERO, radius: r, z0: -hh, z1: hh - 2.0 * head }),
        Primitive::Sphere(Sphere { center: Vec3::new(0.0, 0.0, hh - head), radius: head }),
    ]
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Per-axis factor in `[0.7, 0.8] ∪ [1.25, 1.4]`.
fn rare_factor(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        uniform(rng, 0.7, 0.8)
    } else {
        uniform(rng, 1.25, 1.4)
    }
}

struct Placement {
    center_xy: (f64, f64),
    radius: f64,
}

/// Builds the object list for `seed` in `domain`.
pub fn layout(seed: u64, domain: Domain, cfg: &SceneConfig) -> Result<Vec<ObjectSpec>> {
    cfg.validate()?;
    let mut rng = stream(seed, STREAM_LAYOUT);
    let mut dom = stream(seed, STREAM_DOMAIN);
    let count = |r: (usize, usize), rng: &mut ChaCha8Rng| rng.random_range(r.0..=r.1);
    let plan = [
        (CLASS_BUILDING, count(cfg.buildings, &mut rng)),
        (CLASS_CAR, count(cfg.cars, &mut rng)),
        (CLASS_PERSON, count(cfg.persons, &mut rng)),
        (CLASS_VEGETATION, count(cfg.vegetation, &mut rng)),
    ];
    let mut placed: Vec<Placement> = Vec::new();
    let mut objects = Vec::new();
    let mut dropped = 0usize;
    for (class, n) in plan {
        for _ in 0..n {
            // Shape draws happen before placement so the stream does not depend on retries.
            let (dims, extra) = match class {
                CLASS_CAR => (
                    BoxDims::new(
                        CAR_DIMS.width * uniform(&mut rng, 0.975, 1.02),
                        CAR_DIMS.height * uniform(&mut rng, 0.975, 1.02),
                        CAR_DIMS.length * uniform(&mut rng, 0.975, 1.02),
                    ),
                    [uniform(&mut rng, -0.04, 0.04), uniform(&mut rng, 0.5, 0.6), uniform(&mut rng, 0.08, 0.25)],
                ),
                CLASS_PERSON => (
                    BoxDims::new(
                        PERSON_DIMS.width * uniform(&mut rng, 0.92, 1.08),
                        PERSON_DIMS.height * uniform(&mut rng, 0.92, 1.08),
                        PERSON_DIMS.length * uniform(&mut rng, 0.92, 1.08),
                    ),
                    [0.0, 0.0, uniform(&mut rng, 0.3, 0.4)],
                ),
                CLASS_BUILDING => (
                    BoxDims::new(uniform(&mut rng, 3.0, 8.0), uniform(&mut rng, 4.0, 10.0), uniform(&mut rng, 8.0, 20.0)),
                    [0.0, 0.0, uniform(&mut rng, 0.55, 0.75)],
                ),
                _ => (
                    BoxDims::new(uniform(&mut rng, 1.5, 3.5), uniform(&mut rng, 2.5, 5.0), uniform(&mut rng, 1.5, 3.5)),
                    [rng.random_range(3..6) as f64, rng.random::<u32>() as f64, uniform(&mut rng, 0.4, 0.55)],
                ),
            };
            let (rmin, rmax) = if class == CLASS_BUILDING {
                (cfg.min_range.max(20.0).min(cfg.max_range), cfg.max_range)
            } else {
                (cfg.min_range, cfg.max_range)
            };
            // Cars reserve room for the largest rare scaling so every domain shares the layout.
            let grow = if class == CLASS_CAR { 1.4 } else { 1.0 };
            let radius = 0.5 * grow * dims.width.hypot(dims.length);
            let mut spot = None;
            for _ in 0..100 {
                let r = uniform(&mut rng, rmin, rmax.max(rmin + 1e-6));
                let phi = uniform(&mut rng, -PI, PI);
                let yaw = uniform(&mut rng, -PI, PI);
                let (x, y) = (r * phi.cos(), r * phi.sin());
                let clear = placed.iter().all(|p| (p.center_xy.0 - x).hypot(p.center_xy.1 - y) > p.radius + radius + 0.5);
                if clear && r - radius > 2.0 {
                    spot = Some((x, y, yaw));
                    break;
                }
            }
            // Domain draws are consumed for every car so later cars stay aligned.
            let scale = [rare_factor(&mut dom), rare_factor(&mut dom), rare_factor(&mut dom)];
            let n_dents = dom.random_range(1..=3usize);
            let dent_draws: Vec<[f64; 5]> =
                (0..3).map(|_| [dom.random(), dom.random(), dom.random(), dom.random(), dom.random()]).collect();
            let Some((x, y, yaw)) = spot else {
                dropped += 1;
                continue;
            };
            placed.push(Placement { center_xy: (x, y), radius });
            let instance = objects.len() as u16 + 1;
            let obj = match class {
                CLASS_CAR => {
                    let dims = if domain == Domain::Rare {
                        BoxDims::new(dims.width * scale[1], dims.height * scale[2], dims.length * scale[0])
                    } else {
                        dims
                    };
                    let dents = if domain == Domain::Damaged {
                        dent_draws[..n_dents].iter().map(|d| make_dent(dims, d)).collect()
                    } else {
                        Vec::new()
                    };
                    build_object(
                        class,
                        instance,
                        Vec3::new(x, y, CAR_CLEARANCE + dims.height / 2.0),
                        dims,
                        yaw,
                        car_parts(dims, extra[0], extra[1]),
                        extra[2],
                        domain,
                        dents,
                        0.02,
                    )
                }
                CLASS_PERSON => build_object(
                    class,
                    instance,
                    Vec3::new(x, y, BASE_CLEARANCE + dims.height / 2.0),
                    dims,
                    yaw,
                    person_parts(dims),
                    extra[2],
                    Domain::Normal,
                    Vec::new(),
                    0.02,
                ),
                CLASS_BUILDING => {
                    let (hw, hh, hl) = (dims.width / 2.0, dims.height / 2.0, dims.length / 2.0);
                    build_object(
                        class,
                        instance,
                        Vec3::new(x, y, BASE_CLEARANCE + hh),
                        dims,
                        yaw,
                        vec![Primitive::Polytope(Polytope::cuboid(Vec3::new(-hl, -hw, -hh), Vec3::new(hl, hw, hh)))],
                        extra[2],
                        Domain::Normal,
                        Vec::new(),
                        0.02,
                    )
                }
                _ => vegetation_object(instance, x, y, yaw, dims, extra),
            };
            objects.push(obj);
        }
    }
    if dropped > 0 {
        log::warn!("scene {seed}: placed {} objects, {dropped} dropped after 100 placement tries", objects.len());
    }
    Ok(objects)
}

fn make_dent(d: BoxDims, u: &[f64; 5]) -> Dent {
    // Dent centered on one of the four vertical faces of the body.
    let side = (u[0] * 4.0).floor() as usize;
    let along = u[1] - 0.5;
    let z = -d.height / 2.0 + (0.15 + 0.35 * u[2]) * d.height;
    let center = match side {
        0 => Vec3::new(along * d.length, d.width / 2.0, z),
        1 => Vec3::new(along * d.length, -d.width / 2.0, z),
        2 => Vec3::new(d.length / 2.0, along * d.width, z),
        _ => Vec3::new(-d.length / 2.0, along * d.width, z),
    };
    Dent { center, radius: 0.4 + 0.5 * u[3], depth: 0.1 + 0.2 * u[4] }
}

fn vegetation_object(instance: u16, x: f64, y: f64, yaw: f64, dims: BoxDims, extra: [f64; 3]) -> ObjectSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(extra[1] as u64);
    let blobs = extra[0] as usize;
    let (hw, hh, hl) = (dims.width / 2.0, dims.height / 2.0, dims.length / 2.0);
    let trunk_top = -hh + 0.45 * dims.height;
    let mut parts =
        vec![Primitive::Cylinder(Cylinder { center: Vec3::ZERO, radius: 0.12, z0: -hh, z1: trunk_top + 0.2 })];
    let crown_r = hw.min(hl).min((hh - trunk_top) / 2.0 + 0.4);
    for _ in 0..blobs {
        let r = crown_r * uniform(&mut rng, 0.55, 0.9);
        let c = Vec3::new(
            uniform(&mut rng, -(hl - r).max(0.0), (hl - r).max(0.0) + 1e-9),
            uniform(&mut rng, -(hw - r).max(0.0), (hw - r).max(0.0) + 1e-9),
            uniform(&mut rng, (trunk_top + r).min(hh - r), hh - r + 1e-9),
        );
        parts.push(Primitive::Sphere(Sphere { center: c, radius: r }));
    }
    build_object(
        CLASS_VEGETATION,
        instance,
        Vec3::new(x, y, BASE_CLEARANCE + hh),
        dims,
        yaw,
        parts,
        extra[2],
        Domain::Normal,
        Vec::new(),
        0.06,
    )
}

#[allow(clippy::too_many_arguments)]
fn build_object(
    class: ClassId,
    instance: u16,
    center: Vec3,
    dims: BoxDims,
    yaw: f64,
    parts: Vec<Primitive>,
    reflectivity: f64,
    domain: Domain,
    dents: Vec<Dent>,
    intensity_noise: f64,
) -> ObjectSpec {
    // The box gets a margin that covers truncated range noise.
    let m = 2.0 * NOISE_CLIP * 0.01;
    let pose = OrientedBox::new(center, BoxDims::new(dims.width + m, dims.height + m, dims.length + m), yaw)
        .expect("positive dims");
    let bound_radius = 0.5 * (dims.width.powi(2) + dims.height.powi(2) + dims.length.powi(2)).sqrt() + 0.1;
    ObjectSpec { class, instance, pose, parts, reflectivity, domain, dents, intensity_noise, bound_radius }
}

/// Sweeps the sensor over `objects`. Nearest hit wins; the ground is `z = 0`.
pub fn raycast(seed: u64, sensor: &SensorSpec, objects: &[ObjectSpec]) -> (PointCloud, Vec<u32>, Vec<Option<u32>>) {
    let origin = sensor.origin();
    let mut noise = stream(seed, STREAM_NOISE);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let n_rays = sensor.ray_count();
    let mut cloud = PointCloud::with_capacity(n_rays);
    let mut rays = Vec::with_capacity(n_rays);
    let mut hit_object = Vec::with_capacity(n_rays);
    for r in 0..n_rays {
        let eps_range: f64 = std.sample(&mut noise);
        let eps_int: f64 = std.sample(&mut noise);
        let dir = sensor.ray_dir(r);
        let mut best: Option<(f64, usize, Hit)> = None;
        for (k, o) in objects.iter().enumerate() {
            if let Some(h) = o.intersect(origin, dir) {
                if best.is_none_or(|b| h.t_in < b.0) {
                    best = Some((h.t_in, k, h));
                }
            }
        }
        let ground_t = if dir.z < -1e-12 { Some(-origin.z / dir.z) } else { None };
        let (t, class, instance, obj, normal, refl, inoise) = match (best, ground_t) {
            (Some((t, k, h)), g) if g.is_none_or(|g| t < g) => {
                let o = &objects[k];
                let mut t = t;
                if !o.dents.is_empty() {
                    t += dent_push(o, origin + dir * t, h);
                }
                (t, o.class, o.instance, Some(k as u32), h.normal, o.reflectivity, o.intensity_noise)
            }
            (_, Some(g)) => (g, CLASS_GROUND, NO_INSTANCE, None, Vec3::new(0.0, 0.0, 1.0), 0.25, 0.03),
            _ => continue,
        };
        if t > sensor.max_range {
            continue;
        }
        let t_noisy = t + sensor.range_noise * eps_range.clamp(-NOISE_CLIP, NOISE_CLIP);
        let cos_inc = (-normal.dot(dir)).clamp(0.0, 1.0);
        let falloff = 1.0 - 0.5 * (t / sensor.max_range).min(1.0);
        let tau = (refl * (1.0 + 0.2 * cos_inc) * falloff + inoise * eps_int).clamp(0.0, 1.0);
        cloud.push(origin + dir * t_noisy, tau, class, instance);
        rays.push(r as u32);
        hit_object.push(obj);
    }
    (cloud, rays, hit_object)
}

/// How far a dent pushes a hit point along its ray, limited to half the chord
/// through the hit solid so the point stays inside the hull.
fn dent_push(o: &ObjectSpec, p_world: Point3, h: Hit) -> f64 {
    let local = o.pose.to_local(p_world);
    let mut push: f64 = 0.0;
    for d in &o.dents {
        let r2 = local.dist_sq(d.center) / (d.radius * d.radius);
        if r2 < 1.0 {
            push = push.max(d.depth * (1.0 - r2) * (1.0 - r2));
        }
    }
    push.min(0.5 * (h.t_out - h.t_in))
}

pub fn generate_scene(seed: u64, domain: Domain, cfg: &SceneConfig) -> Result<Scene> {
    let objects = layout(seed, domain, cfg)?;
    let (cloud, rays, hit_object) = raycast(seed, &cfg.sensor, &objects);
    Ok(Scene { seed, domain, sensor: cfg.sensor, objects, cloud, rays, hit_object })
}

pub fn generate_dataset(seeds: std::ops::Range<u64>, domain: Domain, cfg: &SceneConfig) -> Result<Dataset> {
    let scenes: Vec<Scene> =
        seeds.collect::<Vec<_>>().into_par_iter().map(|s| generate_scene(s, domain, cfg)).collect::<Result<_>>()?;
    Ok(Dataset {
        classes: ClassTable::desk(),
        sensor: cfg.sensor.origin(),
        domain: domain.as_str().to_string(),
        samples: scenes.iter().map(Scene::to_sample).collect(),
    })
}

/// Number of scenes per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub ood_rare: usize,
    pub ood_damaged: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { train: 200, val: 50, ood_rare: 50, ood_damaged: 50 }
    }
}

/// Seed ranges of every split, consecutive and disjoint starting at `base`.
pub fn split_seeds(base: u64, sizes: SplitSizes) -> [(&'static str, std::ops::Range<u64>); 4] {
    let a = base;
    let b = a + sizes.train as u64;
    let c = b + sizes.val as u64;
    let d = c + sizes.ood_rare as u64;
    let e = d + sizes.ood_damaged as u64;
    [("train", a..b), ("val", b..c), ("ood-rare", c..d), ("ood-damaged", d..e)]
}

/// All splits. The ood sets come with clean twins built from the same seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub ood_rare: Dataset,
    pub ood_rare_clean: Dataset,
    pub ood_damaged: Dataset,
    pub ood_damaged_clean: Dataset,
}

impl Splits {
    pub fn named(&self) -> [(&'static str, &Dataset); 6] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("ood-rare", &self.ood_rare),
            ("ood-rare-clean", &self.ood_rare_clean),
            ("ood-damaged", &self.ood_damaged),
            ("ood-damaged-clean", &self.ood_damaged_clean),
        ]
    }
}

pub fn make_splits(base: u64, sizes: SplitSizes, cfg: &SceneConfig) -> Result<Splits> {
    let [(_, train), (_, val), (_, rare), (_, damaged)] = split_seeds(base, sizes);
    Ok(Splits {
        train: generate_dataset(train, Domain::Normal, cfg)?,
        val: generate_dataset(val, Domain::Normal, cfg)?,
        ood_rare: generate_dataset(rare.clone(), Domain::Rare, cfg)?,
        ood_rare_clean: generate_dataset(rare, Domain::Normal, cfg)?,
        ood_damaged: generate_dataset(damaged.clone(), Domain::Damaged, cfg)?,
        ood_damaged_clean: generate_dataset(damaged, Domain::Normal, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig { sensor: SensorSpec { azimuth_res_deg: 1.0, ..SensorSpec::default() }, ..SceneConfig::default() }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(7, Domain::Normal, &small()).unwrap();
        let b = generate_scene(7, Domain::Normal, &small()).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(8, Domain::Normal, &small()).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }

    #[test]
    fn points_lie_on_their_rays() {
        let s = generate_scene(3, Domain::Damaged, &small()).unwrap();
        let o = s.sensor.origin();
        assert!(s.cloud.len() <= s.sensor.ray_count());
        for (p, &r) in s.cloud.positions.iter().zip(&s.rays) {
            let d = s.sensor.ray_dir(r as usize);
            let v = *p - o;
            let perp = (v - d * v.dot(d)).norm();
            assert!(perp <= 1e-9 * v.norm().max(1.0), "off-ray by {perp}");
        }
        let mut sorted = s.rays.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), s.rays.len(), "one point per ray");
    }

    #[test]
    fn labels_match_boxes() {
        let s = generate_scene(11, Domain::Normal, &small()).unwrap();
        let boxes = s.boxes();
        for i in 0..s.cloud.len() {
            let c = s.cloud.semantic[i];
            if c == CLASS_GROUND {
                continue;
            }
            let inst = s.cloud.instance[i];
            let owner = boxes.iter().find(|b| b.instance == inst).unwrap();
            assert_eq!(owner.class, c);
            let p = s.cloud.positions[i];
            let containing = boxes.iter().filter(|b| b.bbox.inflated(0.01).contains(p)).count();
            assert!(owner.bbox.inflated(0.01).contains(p));
            assert_eq!(containing, 1, "point {i} in {containing} boxes");
        }
    }

    #[test]
    fn normal_cars_have_canonical_size() {
        for seed in 0..10 {
            for o in layout(seed, Domain::Normal, &small()).unwrap() {
                if o.class == CLASS_CAR {
                    let d = o.pose.dims;
                    for (x, c) in [(d.width, 1.8), (d.height, 1.6), (d.length, 4.6)] {
                        assert!(x >= 0.95 * c && x <= 1.05 * c, "{d:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn rare_cars_are_rescaled_per_axis() {
        for seed in 0..10 {
            let n = layout(seed, Domain::Normal, &small()).unwrap();
            let r = layout(seed, Domain::Rare, &small()).unwrap();
            assert_eq!(n.len(), r.len());
            for (a, b) in n.iter().zip(&r) {
                assert_eq!(a.pose.center.x, b.pose.center.x);
                if a.class != CLASS_CAR {
                    assert_eq!(a, b);
                    continue;
                }
                let m = 0.04;
                for (x, y) in [
                    (a.pose.dims.width, b.pose.dims.width),
                    (a.pose.dims.height, b.pose.dims.height),
                    (a.pose.dims.length, b.pose.dims.length),
                ] {
                    let f = (y - m) / (x - m);
                    assert!((0.7 - 1e-9..=0.8 + 1e-9).contains(&f) || (1.25 - 1e-9..=1.4 + 1e-9).contains(&f), "{f}");
                }
            }
        }
    }

    #[test]
    fn ood_twins_share_non_car_rays() {
        for domain in [Domain::Rare, Domain::Damaged] {
            let clean = generate_scene(5, Domain::Normal, &small()).unwrap();
            let ood = generate_scene(5, domain, &small()).unwrap();
            let car_rays = |s: &Scene| -> std::collections::HashSet<u32> {
                (0..s.cloud.len()).filter(|&i| s.cloud.semantic[i] == CLASS_CAR).map(|i| s.rays[i]).collect()
            };
            let (ca, cb) = (car_rays(&clean), car_rays(&ood));
            let index = |s: &Scene| -> std::collections::HashMap<u32, usize> {
                s.rays.iter().enumerate().map(|(i, &r)| (r, i)).collect()
            };
            let ib = index(&ood);
            let mut compared = 0;
            for (i, &r) in clean.rays.iter().enumerate() {
                if ca.contains(&r) || cb.contains(&r) {
                    continue;
                }
                let j = ib[&r];
                assert_eq!(clean.cloud.positions[i], ood.cloud.positions[j]);
                assert_eq!(clean.cloud.intensity[i], ood.cloud.intensity[j]);
                assert_eq!(clean.cloud.semantic[i], ood.cloud.semantic[j]);
                compared += 1;
            }
            assert!(compared > 1000);
        }
    }

    #[test]
    fn dented_points_stay_inside_the_hull() {
        let mut cfg = small();
        cfg.sensor.range_noise = 0.0;
        let s = generate_scene(9, Domain::Damaged, &cfg).unwrap();
        let clean = generate_scene(9, Domain::Normal, &cfg).unwrap();
        let origin = s.sensor.origin();
        let (mut inside, mut moved) = (0, 0);
        for i in 0..s.cloud.len() {
            let Some(k) = s.hit_object[i] else { continue };
            let o = &s.objects[k as usize];
            if o.class != CLASS_CAR {
                continue;
            }
            let l = o.pose.to_local(s.cloud.positions[i]);
            let hull = o.parts.iter().any(|p| match p {
                Primitive::Polytope(poly) => poly.contains(l, 1e-6),
                _ => false,
            });
            assert!(hull, "point {i} left the hull");
            inside += 1;
            let j = clean.rays.iter().position(|&r| r == s.rays[i]).unwrap();
            if (clean.cloud.positions[j] - origin).norm() + 1e-6 < (s.cloud.positions[i] - origin).norm() {
                moved += 1;
            }
        }
        assert!(inside > 0 && moved > 0, "inside {inside}, moved {moved}");
    }

    #[test]
    fn walls_occlude() {
        let sensor = SensorSpec { azimuth_res_deg: 1.0, ..SensorSpec::default() };
        let wall = build_object(
            CLASS_BUILDING,
            1,
            Vec3::new(10.0, 0.0, 5.0),
            BoxDims::new(1.0, 10.0, 30.0),
            PI / 2.0,
            vec![Primitive::Polytope(Polytope::cuboid(Vec3::new(-15.0, -0.5, -5.0), Vec3::new(15.0, 0.5, 5.0)))],
            0.6,
            Domain::Normal,
            Vec::new(),
            0.02,
        );
        let car = build_object(
            CLASS_CAR,
            2,
            Vec3::new(20.0, 0.0, 0.95),
            CAR_DIMS,
            0.0,
            car_parts(CAR_DIMS, 0.0, 0.55),
            0.2,
            Domain::Normal,
            Vec::new(),
            0.02,
        );
        let (cloud, _, _) = raycast(1, &sensor, &[wall, car]);
        assert_eq!(cloud.count_class(CLASS_CAR), 0);
        assert!(cloud.count_class(CLASS_BUILDING) > 0);
    }

    #[test]
    fn intensity_class_ordering() {
        let mut sums = [0.0f64; 5];
        let mut counts = [0usize; 5];
        for seed in 0..4 {
            let s = generate_scene(seed, Domain::Normal, &small()).unwrap();
            for (c, t) in s.cloud.semantic.iter().zip(&s.cloud.intensity) {
                sums[*c as usize] += t;
                counts[*c as usize] += 1;
            }
        }
        let mean = |c: ClassId| sums[c as usize] / counts[c as usize] as f64;
        assert!(mean(CLASS_CAR) < mean(CLASS_PERSON));
        assert!(mean(CLASS_PERSON) < mean(CLASS_BUILDING));
    }

    #[test]
    fn splits_use_disjoint_seeds() {
        let s = split_seeds(1000, SplitSizes::default());
        let mut all: Vec<u64> = s.iter().flat_map(|(_, r)| r.clone()).collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(n, 350);
    }
}
