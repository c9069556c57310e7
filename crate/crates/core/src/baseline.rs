//! Sample-specific point attacks used as baselines: free per-point L2 PGD, the
//! Chamfer-regularized attack, critical-point removal and adversarial point
//! generation. Each works on one object at a time and returns an edit of the
//! scene, so objects can be attacked independently and merged.

use rayon::prelude::*;

use crate::attack::{anchors_near, influence_of, objectives, region_near, Objective, ObjectiveInput};
use crate::cloud::{AttackClasses, PointCloud};
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Vec3};
use crate::registry::{Named, Registry};
use crate::spatial::UniformGrid;
use crate::victim::mlp::Adam;
use crate::victim::Victim;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    /// Registry name of the adversarial objective.
    pub objective: String,
    pub classes: AttackClasses,
    pub epsilon: f64,
    pub psi: f64,
    pub iterations: usize,
    pub lr: f64,
    /// Chamfer weight.
    pub lambda: f64,
    /// Share of an object's points removed or generated.
    pub fraction: f64,
}

impl BaselineParams {
    pub fn new(objective: &str, classes: AttackClasses) -> Self {
        Self {
            objective: objective.to_string(),
            classes,
            epsilon: 0.3,
            psi: 0.3,
            iterations: 50,
            lr: if objective == "detection" { 0.05 } else { 0.01 },
            lambda: 0.1,
            fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.psi > 0.0) || !(self.lr > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument("epsilon, psi and lr must be positive, lambda non-negative".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("fraction {} not in (0, 1]", self.fraction)));
        }
        Ok(())
    }
}

/// Changes one attack makes to a scene cloud.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectEdit {
    /// `(index, new position, new intensity)`.
    pub moved: Vec<(usize, Vec3, f64)>,
    pub removed: Vec<usize>,
    pub added: PointCloud,
}

/// Applies edits in order: moves, then appended points, then removals.
pub fn apply_edits(cloud: &PointCloud, edits: &[ObjectEdit]) -> PointCloud {
    let mut out = cloud.clone();
    let mut removed = Vec::new();
    for e in edits {
        for &(i, p, t) in &e.moved {
            out.positions[i] = p;
            out.intensity[i] = t;
        }
        removed.extend_from_slice(&e.removed);
    }
    for e in edits {
        out.extend_from(&e.added);
    }
    removed.sort_unstable();
    removed.dedup();
    if removed.is_empty() {
        out
    } else {
        out.without(&removed)
    }
}

/// What a baseline needs about the scene and the object it attacks.
pub struct BaselineInput<'a> {
    pub victim: &'a Victim,
    pub sample: &'a Sample,
    pub object: OrientedBox,
}

pub trait BaselineAttack: Named + Send + Sync {
    fn attack(&self, input: &BaselineInput, params: &BaselineParams) -> Result<ObjectEdit>;
}

/// One-sided mean nearest distance `(1/|X|) Σ_x min_y ‖x − y‖`.
pub fn chamfer_distance(x: &[Vec3], y: &[Vec3]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("chamfer distance needs nonempty point sets".into()));
    }
    let cell = grid_cell(y);
    let grid = UniformGrid::new(y, cell);
    let total: f64 = x.iter().map(|p| grid.nearest(*p).map_or(f64::INFINITY, |(_, d2)| d2.sqrt())).sum();
    Ok(total / x.len() as f64)
}

/// Chamfer distance between scalar sets.
pub fn chamfer_distance_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("chamfer distance needs nonempty sets".into()));
    }
    let mut ys = y.to_vec();
    ys.sort_by(f64::total_cmp);
    let total: f64 = x
        .iter()
        .map(|&v| {
            let k = ys.partition_point(|&w| w < v);
            let a = if k < ys.len() { (ys[k] - v).abs() } else { f64::INFINITY };
            let b = if k > 0 { (v - ys[k - 1]).abs() } else { f64::INFINITY };
            a.min(b)
        })
        .sum();
    Ok(total / x.len() as f64)
}

/// Cell size giving a few points per cell for a roughly surface-like set.
fn grid_cell(pts: &[Vec3]) -> f64 {
    let (mut lo, mut hi) = (pts[0], pts[0]);
    for p in pts {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    let ext = hi - lo;
    let area = (ext.x * ext.y + ext.y * ext.z + ext.x * ext.z).max(1e-6);
    (area / pts.len() as f64).sqrt().max(0.05)
}

enum Projection {
    /// Per-point norm ball of radius ε (ψ for intensity).
    Ball,
    /// Proximal shrink toward zero, then a global rescale to keep the Chamfer bound.
    Chamfer { lambda: f64 },
}

/// PGD on free offsets of the points `movable` of `base`.
///
/// Returns the spatial and intensity offsets (intensity before clipping to [0, 1]).
fn pgd(
    victim: &Victim,
    objective: &dyn Objective,
    base: &PointCloud,
    movable: &[usize],
    object: OrientedBox,
    params: &BaselineParams,
    projection: Projection,
) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let n = movable.len();
    let mut m = vec![Vec3::ZERO; n];
    let mut dt = vec![0.0; n];
    if n == 0 || params.iterations == 0 {
        return Ok((m, dt));
    }
    let influence = influence_of(victim);
    let mut adam = Adam::new(4 * n, params.lr);
    let mut flat = vec![0.0; 4 * n];
    let mut grad = vec![0.0; 4 * n];
    let original: Vec<Vec3> = movable.iter().map(|&i| base.positions[i]).collect();
    let original_int: Vec<f64> = movable.iter().map(|&i| base.intensity[i]).collect();
    for _ in 0..params.iterations {
        let deformed = offset_cloud(base, movable, &m, &dt);
        let reach = m.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let region = region_near(&deformed, &[object], reach + influence);
        let anchors = anchors_near(&[object], reach);
        let input = ObjectiveInput {
            deformed: &deformed,
            labels: &base.semantic,
            region: &region,
            anchors: &anchors,
            targets: &[object],
            classes: params.classes,
        };
        let ev = objective.evaluate(victim, &input)?;
        if !ev.loss.is_finite() {
            return Err(Error::Numeric("baseline objective is not finite".into()));
        }
        for (r, &i) in movable.iter().enumerate() {
            let g = ev.grad_pos[i];
            grad[4 * r] = g.x;
            grad[4 * r + 1] = g.y;
            grad[4 * r + 2] = g.z;
            let t = original_int[r] + dt[r];
            grad[4 * r + 3] = if (0.0..=1.0).contains(&t) { ev.grad_int[i] } else { 0.0 };
            flat[4 * r..4 * r + 3].copy_from_slice(&[m[r].x, m[r].y, m[r].z]);
            flat[4 * r + 3] = dt[r];
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("baseline gradient is not finite".into()));
        }
        adam.step(&mut flat, &grad);
        for r in 0..n {
            m[r] = Vec3::new(flat[4 * r], flat[4 * r + 1], flat[4 * r + 2]);
            dt[r] = flat[4 * r + 3];
        }
        match projection {
            Projection::Ball => {
                for r in 0..n {
                    let norm = m[r].norm();
                    if norm > params.epsilon {
                        m[r] = m[r] * (params.epsilon / norm);
                    }
                    dt[r] = dt[r].clamp(-params.psi, params.psi);
                }
            }
            Projection::Chamfer { lambda } => {
                // The Chamfer term is bounded by the mean offset norm; its proximal
                // operator under Adam's diagonal metric is a per-point shrink.
                let w = lambda / n as f64;
                for r in 0..n {
                    let d = (adam.denominator(4 * r) + adam.denominator(4 * r + 1) + adam.denominator(4 * r + 2)) / 3.0;
                    let thr = params.lr * w / d;
                    let norm = m[r].norm();
                    m[r] = if norm > thr { m[r] * (1.0 - thr / norm) } else { Vec3::ZERO };
                    let thr_t = params.lr * w / adam.denominator(4 * r + 3);
                    dt[r] = dt[r].signum() * (dt[r].abs() - thr_t).max(0.0);
                }
                rescale_to_bound(&mut m, &original, params.epsilon, |v| v.norm(), |a, b| {
                    let moved: Vec<Vec3> = a.iter().zip(b).map(|(o, d)| *o + *d).collect();
                    chamfer_distance(&moved, a).unwrap_or(0.0)
                });
                rescale_to_bound(&mut dt, &original_int, params.psi, |v| v.abs(), |a, b| {
                    let moved: Vec<f64> = a.iter().zip(b).map(|(o, d)| o + d).collect();
                    chamfer_distance_1d(&moved, a).unwrap_or(0.0)
                });
            }
        }
    }
    Ok((m, dt))
}

/// Shrinks all offsets by one common factor until `measure(original, offsets) ≤ bound`.
fn rescale_to_bound<T: Copy + std::ops::Mul<f64, Output = T>>(
    offsets: &mut [T],
    original: &[T],
    bound: f64,
    norm: impl Fn(&T) -> f64,
    measure: impl Fn(&[T], &[T]) -> f64,
) {
    let c = measure(original, offsets);
    if c <= bound {
        return;
    }
    let scaled: Vec<T> = offsets.iter().map(|&v| v * (bound / c)).collect();
    if measure(original, &scaled) <= bound {
        offsets.copy_from_slice(&scaled);
        return;
    }
    // The mean offset norm bounds the Chamfer distance from above.
    let mean = offsets.iter().map(&norm).sum::<f64>() / offsets.len() as f64;
    let s = (bound / mean).min(1.0);
    offsets.iter_mut().for_each(|v| *v = *v * s);
}

fn offset_cloud(base: &PointCloud, movable: &[usize], m: &[Vec3], dt: &[f64]) -> PointCloud {
    let mut out = base.clone();
    for (r, &i) in movable.iter().enumerate() {
        out.positions[i] += m[r];
        out.intensity[i] = (out.intensity[i] + dt[r]).clamp(0.0, 1.0);
    }
    out
}

fn objective_for(victim: &Victim, params: &BaselineParams) -> Result<&'static dyn Objective> {
    params.validate()?;
    let reg = objective_registry();
    let o = reg.get(&params.objective)?;
    if o.task() != victim.task() {
        return Err(Error::InvalidArgument(format!("objective `{}` does not fit a {} victim", params.objective, victim.task())));
    }
    Ok(o)
}

fn objective_registry() -> &'static Registry<dyn Objective> {
    static REG: std::sync::OnceLock<Registry<dyn Objective>> = std::sync::OnceLock::new();
    REG.get_or_init(objectives)
}

fn moved_edit(base: &PointCloud, movable: &[usize], m: &[Vec3], dt: &[f64]) -> ObjectEdit {
    let moved = movable
        .iter()
        .enumerate()
        .map(|(r, &i)| (i, base.positions[i] + m[r], (base.intensity[i] + dt[r]).clamp(0.0, 1.0)))
        .collect();
    ObjectEdit { moved, ..Default::default() }
}

/// Per-point PGD with `‖m_i‖ ≤ ε` and `|Δτ_i| ≤ ψ`.
pub struct IterativeL2;

impl Named for IterativeL2 {
    fn name(&self) -> &str {
        "l2"
    }
}

impl BaselineAttack for IterativeL2 {
    fn attack(&self, input: &BaselineInput, params: &BaselineParams) -> Result<ObjectEdit> {
        let objective = objective_for(input.victim, params)?;
        let cloud = &input.sample.cloud;
        let movable = cloud.indices_in_box(&input.object);
        let (m, dt) = pgd(input.victim, objective, cloud, &movable, input.object, params, Projection::Ball)?;
        Ok(moved_edit(cloud, &movable, &m, &dt))
    }
}

/// Adversarial loss plus `λ · C(p + m, p)`, with `C ≤ ε` (and the same for intensity with ψ).
pub struct ChamferAttack;

impl Named for ChamferAttack {
    fn name(&self) -> &str {
        "chamfer"
    }
}

impl BaselineAttack for ChamferAttack {
    fn attack(&self, input: &BaselineInput, params: &BaselineParams) -> Result<ObjectEdit> {
        let objective = objective_for(input.victim, params)?;
        let cloud = &input.sample.cloud;
        let movable = cloud.indices_in_box(&input.object);
        let projection = Projection::Chamfer { lambda: params.lambda };
        let (m, dt) = pgd(input.victim, objective, cloud, &movable, input.object, params, projection)?;
        Ok(moved_edit(cloud, &movable, &m, &dt))
    }
}

/// Indices (into the cloud) of the `⌈fraction · n⌉` object points that the L2
/// attack moves the most. Ties go to the lower index.
pub fn critical_points(input: &BaselineInput, params: &BaselineParams) -> Result<Vec<usize>> {
    let objective = objective_for(input.victim, params)?;
    let cloud = &input.sample.cloud;
    let movable = cloud.indices_in_box(&input.object);
    let (m, _) = pgd(input.victim, objective, cloud, &movable, input.object, params, Projection::Ball)?;
    Ok(top_fraction(&movable, &m.iter().map(|v| v.norm()).collect::<Vec<_>>(), params.fraction))
}

/// `⌈fraction · n⌉` entries of `idx` with the largest `score`.
pub fn top_fraction(idx: &[usize], score: &[f64], fraction: f64) -> Vec<usize> {
    let keep = (fraction * idx.len() as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..idx.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(idx[a].cmp(&idx[b])));
    let mut out: Vec<usize> = order[..keep.min(idx.len())].iter().map(|&r| idx[r]).collect();
    out.sort_unstable();
    out
}

/// Deletes the critical points of the object (with their labels).
pub struct Removal;

impl Named for Removal {
    fn name(&self) -> &str {
        "remove"
    }
}

impl BaselineAttack for Removal {
    fn attack(&self, input: &BaselineInput, params: &BaselineParams) -> Result<ObjectEdit> {
        Ok(ObjectEdit { removed: critical_points(input, params)?, ..Default::default() })
    }
}

/// Duplicates the critical points, then runs the L2 attack on the copies only.
pub struct Generation;

impl Named for Generation {
    fn name(&self) -> &str {
        "generate"
    }
}

impl BaselineAttack for Generation {
    fn attack(&self, input: &BaselineInput, params: &BaselineParams) -> Result<ObjectEdit> {
        let objective = objective_for(input.victim, params)?;
        let critical = critical_points(input, params)?;
        let cloud = &input.sample.cloud;
        let mut base = cloud.clone();
        base.extend_from(&cloud.subset(&critical));
        let added: Vec<usize> = (cloud.len()..base.len()).collect();
        let (m, dt) = pgd(input.victim, objective, &base, &added, input.object, params, Projection::Ball)?;
        let deformed = offset_cloud(&base, &added, &m, &dt);
        Ok(ObjectEdit { added: deformed.subset(&added), ..Default::default() })
    }
}

/// All built-in baselines, by name.
pub fn baselines() -> Registry<dyn BaselineAttack> {
    let mut r: Registry<dyn BaselineAttack> = Registry::new("baseline");
    r.register(Box::new(IterativeL2)).register(Box::new(ChamferAttack)).register(Box::new(Removal)).register(Box::new(Generation));
    r
}

/// Attacks every object of the adversarial class in every scene independently
/// and merges the edits per scene.
pub fn attack_dataset(attack: &dyn BaselineAttack, victim: &Victim, data: &Dataset, params: &BaselineParams) -> Result<Dataset> {
    let class = params.classes.adversarial;
    let samples = data
        .samples
        .par_iter()
        .map(|s| {
            let edits = s
                .boxes_of(class)
                .map(|b| attack.attack(&BaselineInput { victim, sample: s, object: b.bbox }, params))
                .collect::<Result<Vec<_>>>()?;
            Ok(Sample { id: s.id, cloud: apply_edits(&s.cloud, &edits), boxes: s.boxes.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { classes: data.classes.clone(), sensor: data.sensor, domain: data.domain.clone(), samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chamfer_examples() {
        let x = [Vec3::ZERO];
        let y = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0)];
        assert!((chamfer_distance(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(chamfer_distance(&y, &y).unwrap(), 0.0);
        assert!(chamfer_distance(&[], &y).is_err());
        assert!((chamfer_distance_1d(&[0.2, 0.9], &[0.0, 1.0]).unwrap() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut pts = || -> Vec<Vec3> {
                (0..200).map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..2.0))).collect()
            };
            let (x, y) = (pts(), pts());
            let brute: f64 =
                x.iter().map(|p| y.iter().map(|q| p.dist(*q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64;
            assert!((chamfer_distance(&x, &y).unwrap() - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn top_fraction_counts_and_ties() {
        let idx = [10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20];
        let score = [0.0, 5.0, 1.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(top_fraction(&idx, &score, 0.1), vec![11, 13]);
        assert_eq!(top_fraction(&idx[..1], &score[..1], 0.1), vec![10]);
    }

    #[test]
    fn edits_compose() {
        let mut c = PointCloud::with_capacity(4);
        for i in 0..4 {
            c.push(Vec3::new(i as f64, 0.0, 0.0), 0.5, 0, 0);
        }
        let mut added = PointCloud::with_capacity(1);
        added.push(Vec3::new(9.0, 0.0, 0.0), 0.1, 1, 3);
        let e1 = ObjectEdit { moved: vec![(1, Vec3::new(1.0, 1.0, 0.0), 0.7)], ..Default::default() };
        let e2 = ObjectEdit { removed: vec![2], added, ..Default::default() };
        let out = apply_edits(&c, &[e1, e2]);
        assert_eq!(out.len(), 4);
        assert_eq!(out.positions[1], Vec3::new(1.0, 1.0, 0.0));
        assert_eq!(out.positions[2], Vec3::new(3.0, 0.0, 0.0));
        assert_eq!(out.positions[3], Vec3::new(9.0, 0.0, 0.0));
        assert_eq!(out.semantic[3], 1);
    }

    #[test]
    fn registry_names() {
        assert_eq!(baselines().names(), vec!["chamfer", "generate", "l2", "remove"]);
    }
}
