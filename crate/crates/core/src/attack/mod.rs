//! Fitting a field bank against a frozen victim with projected Adam.

pub mod objective;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloud::{AttackClasses, ClassId, PointCloud};
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::metrics::Confusion;
use crate::field::{deform_in_place, plan, shift_jacobian, AnchorMode, DeformationPlan, FieldBank, FieldGrad};
use crate::geometry::{BoxDims, OrientedBox, Point3};
use crate::io::LabeledBox;
use crate::rotation::{axis_aligned_box_of_instance, group_of, group_of_axis_aligned, GroupScheme};
use crate::victim::det::{anchor_center, anchor_count, nms, POOL_RADIUS};
use crate::victim::mlp::Adam;
use crate::victim::Victim;

pub use objective::{objectives, Objective, ObjectiveEval, ObjectiveInput};

/// Reference box and lattice step for a class, if one is built in.
pub fn reference_for(class_name: &str) -> Option<(BoxDims, f64)> {
    match class_name {
        "car" => Some((BoxDims::new(1.8, 1.6, 4.6), 0.2)),
        "person" => Some((BoxDims::new(0.54, 1.7, 0.66), 0.05)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Registry name of the objective.
    pub objective: String,
    pub classes: AttackClasses,
    pub groups: usize,
    pub variants: usize,
    pub reference: BoxDims,
    pub step: f64,
    pub epsilon: f64,
    pub psi: f64,
    pub lr: f64,
    pub iterations: usize,
    pub k: usize,
    pub seed: u64,
    pub drop_fraction: f64,
    pub anchor: AnchorMode,
    /// Scenes whose gradients are summed before each Adam step.
    pub batch: usize,
}

impl AttackConfig {
    /// Defaults for `objective` on the named class: G=12 (6 for axis-aligned
    /// boxes), N=6, ε=ψ=0.3, k=2, lr 0.05 for detection and 0.01 otherwise.
    pub fn new(objective: &str, classes: AttackClasses, class_name: &str, anchor: AnchorMode) -> Result<Self> {
        let (reference, step) = reference_for(class_name)
            .ok_or_else(|| Error::InvalidArgument(format!("no reference box for class `{class_name}`")))?;
        Ok(Self {
            objective: objective.to_string(),
            classes,
            groups: if anchor == AnchorMode::AxisAligned { 6 } else { 12 },
            variants: 6,
            reference,
            step,
            epsilon: 0.3,
            psi: 0.3,
            lr: if objective == "detection" { 0.05 } else { 0.01 },
            iterations: 50,
            k: 2,
            seed: 0,
            drop_fraction: 0.0,
            anchor,
            batch: 4,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.psi > 0.0) {
            return Err(Error::InvalidArgument("epsilon and psi must be positive".into()));
        }
        if !(self.lr > 0.0) || self.k == 0 || self.batch == 0 || self.groups == 0 || self.variants == 0 {
            return Err(Error::InvalidArgument("lr, k, batch, G and N must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return Err(Error::InvalidArgument(format!("drop fraction {} not in [0, 1)", self.drop_fraction)));
        }
        if self.objective == "targeted" && self.classes.target.is_none() {
            return Err(Error::InvalidArgument("targeted objective needs a target class".into()));
        }
        Ok(())
    }

    pub fn scheme(&self) -> Result<GroupScheme> {
        GroupScheme::new(self.groups)
    }

    /// A freshly initialized bank matching this configuration.
    pub fn new_bank(&self, class_name: &str) -> Result<FieldBank> {
        let mut bank = FieldBank::new(
            self.classes.adversarial,
            class_name,
            self.groups,
            self.variants,
            self.anchor,
            self.reference,
            self.step,
            self.epsilon,
            self.psi,
        )?;
        bank.init_random(self.seed);
        Ok(bank)
    }
}

/// Keeps the boxes of `class` that contain at least one point of that class,
/// then removes `round(fraction · n)` of them uniformly at random.
pub fn drop_boxes(boxes: &[LabeledBox], cloud: &PointCloud, class: ClassId, fraction: f64, seed: u64) -> Vec<LabeledBox> {
    let valid: Vec<LabeledBox> = boxes
        .iter()
        .filter(|b| b.class == class)
        .filter(|b| cloud.positions.iter().zip(&cloud.semantic).any(|(p, &s)| s == class && b.bbox.contains(*p)))
        .copied()
        .collect();
    let remove = (fraction.clamp(0.0, 1.0) * valid.len() as f64).round() as usize;
    if remove == 0 {
        return valid;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gone = vec![false; valid.len()];
    for i in index::sample(&mut rng, valid.len(), remove) {
        gone[i] = true;
    }
    valid.into_iter().zip(gone).filter(|(_, g)| !g).map(|(b, _)| b).collect()
}

/// An object the bank will deform, with the box its field is anchored to.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub instance: u16,
    pub bbox: OrientedBox,
    pub group: usize,
}

/// Attackable objects of `bank.class` in one scene, in box order.
pub fn scene_targets(sample: &Sample, boxes: &[LabeledBox], sensor: Point3, bank: &FieldBank) -> Result<Vec<Target>> {
    let scheme = GroupScheme::new(bank.groups)?;
    let mut out = Vec::new();
    for b in boxes.iter().filter(|b| b.class == bank.class) {
        let t = match bank.anchor {
            AnchorMode::Oriented => Target { instance: b.instance, bbox: b.bbox, group: group_of(&b.bbox, sensor, scheme)? },
            AnchorMode::AxisAligned => {
                let aab = match axis_aligned_box_of_instance(&sample.cloud, b.instance, bank.step / 2.0) {
                    Ok(a) => a,
                    Err(e) => {
                        log::debug!("scene {}: skipping instance {}: {e}", sample.id, b.instance);
                        continue;
                    }
                };
                Target { instance: b.instance, bbox: aab, group: group_of_axis_aligned(&aab, sensor, scheme)? }
            }
        };
        out.push(t);
    }
    Ok(out)
}

/// Targets of one scene with their deformation plans and the variant they use.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub index: usize,
    pub variant: usize,
    pub targets: Vec<Target>,
    pub plans: Vec<DeformationPlan>,
    /// Points whose features can change under any admissible field.
    pub region: Vec<usize>,
    /// Detector anchors whose pooled neighborhood can change.
    pub anchors: Vec<usize>,
}

impl PreparedScene {
    pub fn field_index(&self, bank: &FieldBank, t: usize) -> usize {
        bank.index(self.targets[t].group, self.variant)
    }

    /// The clean cloud with every target deformed by its field.
    pub fn apply(&self, clean: &PointCloud, bank: &FieldBank) -> PointCloud {
        let mut out = clean.clone();
        for (t, p) in self.plans.iter().enumerate() {
            deform_in_place(&mut out, p, &bank.fields[self.field_index(bank, t)]);
        }
        out
    }
}

/// Largest distance a point can move under a clamped field.
pub fn max_shift(epsilon: f64) -> f64 {
    3f64.sqrt() * epsilon
}

/// Plans every target of a scene. `influence` is how far beyond a moved point
/// the victim's receptive field reaches.
pub fn prepare_scene(
    sample: &Sample,
    index: usize,
    variant: usize,
    boxes: &[LabeledBox],
    sensor: Point3,
    bank: &FieldBank,
    k: usize,
    influence: f64,
) -> Result<PreparedScene> {
    let targets = scene_targets(sample, boxes, sensor, bank)?;
    let proto = &bank.fields[0];
    let plans = targets.iter().map(|t| plan(&sample.cloud, &t.bbox, proto, sensor, k)).collect::<Result<Vec<_>>>()?;
    let boxes: Vec<OrientedBox> = targets.iter().map(|t| t.bbox).collect();
    let region = region_near(&sample.cloud, &boxes, max_shift(bank.epsilon) + influence);
    let anchors = anchors_near(&boxes, max_shift(bank.epsilon));
    Ok(PreparedScene { index, variant, targets, plans, region, anchors })
}

/// Indices of the points inside any of `boxes` grown by `reach`.
pub fn region_near(cloud: &PointCloud, boxes: &[OrientedBox], reach: f64) -> Vec<usize> {
    let grown: Vec<OrientedBox> = boxes.iter().map(|b| b.inflated(reach)).collect();
    (0..cloud.len()).filter(|&i| grown.iter().any(|g| g.contains(cloud.positions[i]))).collect()
}

/// Detector anchors whose pooling disc can reach a point within `reach` of any box.
pub fn anchors_near(boxes: &[OrientedBox], reach: f64) -> Vec<usize> {
    (0..anchor_count())
        .filter(|&a| {
            let (x, y) = anchor_center(a);
            boxes.iter().any(|b| {
                let d = ((x - b.center.x).powi(2) + (y - b.center.y).powi(2)).sqrt();
                d <= POOL_RADIUS + reach + b.bev_radius()
            })
        })
        .collect()
}

/// How far the victim's receptive field reaches beyond a point.
pub fn influence_of(victim: &Victim) -> f64 {
    match victim {
        Victim::Seg(s) => s.radius,
        Victim::Det(_) => 0.0,
    }
}

/// Seed for per-scene box dropping.
fn drop_seed(seed: u64, scene: usize) -> u64 {
    seed.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ (scene as u64).wrapping_mul(0x94D0_49BB_1331_11EB) ^ 0x5151
}

/// Prepares every scene of `data`; variant = scene index mod N.
pub fn prepare_dataset(data: &Dataset, bank: &FieldBank, victim: &Victim, k: usize, drop: Option<(f64, u64)>) -> Result<Vec<PreparedScene>> {
    let influence = influence_of(victim);
    data.samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let boxes = match drop {
                Some((fraction, seed)) => drop_boxes(&s.boxes, &s.cloud, bank.class, fraction, drop_seed(seed, i)),
                None => s.boxes.clone(),
            };
            prepare_scene(s, i, i % bank.variants, &boxes, data.sensor, bank, k, influence)
        })
        .collect()
}

/// Loss and victim metric per iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackTrace {
    /// Objective summed over all scenes (restricted to the influence region).
    pub loss: Vec<f64>,
    /// Probe metric after the iteration; NaN when no probe set was given.
    pub probe: Vec<f64>,
    /// Probe metric of the initial bank.
    pub probe_initial: f64,
}

impl AttackTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss,probe\n");
        for (i, (l, p)) in self.loss.iter().zip(&self.probe).enumerate() {
            let _ = writeln!(s, "{},{l},{p}", i + 1);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Objective value and per-field gradients for one scene.
pub fn scene_gradient(
    objective: &dyn Objective,
    victim: &Victim,
    sample: &Sample,
    work: &PreparedScene,
    bank: &FieldBank,
    classes: AttackClasses,
) -> Result<(f64, BTreeMap<usize, FieldGrad>)> {
    let mut grads = BTreeMap::new();
    if work.targets.is_empty() {
        return Ok((0.0, grads));
    }
    let deformed = work.apply(&sample.cloud, bank);
    let boxes: Vec<OrientedBox> = work.targets.iter().map(|t| t.bbox).collect();
    let input = ObjectiveInput {
        deformed: &deformed,
        labels: &sample.cloud.semantic,
        region: &work.region,
        anchors: &work.anchors,
        targets: &boxes,
        classes,
    };
    let ev = objective.evaluate(victim, &input)?;
    if !ev.loss.is_finite() || ev.grad_pos.iter().any(|g| !g.is_finite()) || ev.grad_int.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("victim produced a non-finite loss or gradient on scene {}", sample.id)));
    }
    for (t, p) in work.plans.iter().enumerate() {
        let fi = work.field_index(bank, t);
        let jac = shift_jacobian(&sample.cloud, p, &bank.fields[fi]);
        let g = grads.entry(fi).or_insert_with(|| vec![[0.0; 4]; bank.roots_per_field()]);
        jac.accumulate(&ev.grad_pos, &ev.grad_int, g);
    }
    Ok((ev.loss, grads))
}

/// Fields that receive no target over a full pass; they keep their initialization.
pub fn uncovered_fields(bank: &FieldBank, prepared: &[PreparedScene]) -> Vec<(usize, usize)> {
    let mut hit = vec![0usize; bank.fields.len()];
    for w in prepared {
        for t in 0..w.targets.len() {
            hit[w.field_index(bank, t)] += 1;
        }
    }
    hit.iter().enumerate().filter(|(_, &h)| h == 0).map(|(i, _)| (i / bank.variants, i % bank.variants)).collect()
}

/// Clean predictions plus prepared targets for computing the probe metric cheaply.
pub struct Probe<'a> {
    data: &'a Dataset,
    prepared: Vec<PreparedScene>,
    clean_pred: Vec<Vec<ClassId>>,
}

impl<'a> Probe<'a> {
    pub fn new(data: &'a Dataset, bank: &FieldBank, victim: &Victim, k: usize) -> Result<Self> {
        let prepared = prepare_dataset(data, bank, victim, k, None)?;
        let clean_pred = match victim {
            Victim::Seg(net) => data.samples.par_iter().map(|s| net.predict(&s.cloud)).collect(),
            Victim::Det(_) => Vec::new(),
        };
        Ok(Self { data, prepared, clean_pred })
    }

    /// Segmentation predictions of every probe scene under `bank`. Points
    /// outside the influence region keep their clean prediction, which is exact.
    pub fn predictions(&self, net: &crate::victim::SegNet, bank: &FieldBank) -> Vec<Vec<ClassId>> {
        self.prepared
            .par_iter()
            .map(|w| {
                let s = &self.data.samples[w.index];
                let mut pred = self.clean_pred[w.index].clone();
                if w.targets.is_empty() {
                    return pred;
                }
                let deformed = w.apply(&s.cloud, bank);
                let out = net.forward_queries(&deformed, &w.region);
                let c = net.num_classes();
                for (r, &i) in w.region.iter().enumerate() {
                    pred[i] = crate::victim::seg::argmax_rows(&out.probs[r * c..(r + 1) * c], c)[0];
                }
                pred
            })
            .collect()
    }

    /// Victim metric the objective attacks: c* IoU (untargeted), fraction of c*
    /// points predicted as the target class (targeted), or c* recall at IoU 0.5
    /// with confidence above 0.5 (detection).
    pub fn metric(&self, objective: &str, victim: &Victim, bank: &FieldBank, classes: AttackClasses) -> Result<f64> {
        match victim {
            Victim::Seg(net) => {
                let preds = self.predictions(net, bank);
                let c = net.num_classes();
                let cstar = classes.adversarial;
                if objective == "targeted" {
                    let target = classes.target.unwrap_or(cstar);
                    let (mut hit, mut total) = (0usize, 0usize);
                    for (s, p) in self.data.samples.iter().zip(&preds) {
                        for (&y, &q) in s.cloud.semantic.iter().zip(p) {
                            if y == cstar {
                                total += 1;
                                hit += (q == target) as usize;
                            }
                        }
                    }
                    Ok(if total == 0 { f64::NAN } else { hit as f64 / total as f64 })
                } else {
                    let mut conf = Confusion::new(c);
                    for (s, p) in self.data.samples.iter().zip(&preds) {
                        conf.add_all(&s.cloud.semantic, p)?;
                    }
                    Ok(conf.iou(cstar as usize).unwrap_or(f64::NAN))
                }
            }
            Victim::Det(head) => {
                let per_scene: Vec<(usize, usize)> = self
                    .prepared
                    .par_iter()
                    .map(|w| {
                        let s = &self.data.samples[w.index];
                        let deformed = w.apply(&s.cloud, bank);
                        let props = nms(head.forward(&deformed).proposals.into_iter().filter(|p| p.score > 0.5).collect(), 0.1);
                        let boxes: Vec<OrientedBox> = props.iter().map(|p| p.bbox).collect();
                        let gt: Vec<OrientedBox> = w.targets.iter().map(|t| t.bbox).collect();
                        let found = crate::eval::metrics::detected(&gt, &boxes, 0.5).into_iter().filter(|&d| d).count();
                        (found, gt.len())
                    })
                    .collect();
                let (found, total) = per_scene.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
                Ok(if total == 0 { f64::NAN } else { found as f64 / total as f64 })
            }
        }
    }
}

/// Learns `bank` against the frozen `victim` on every scene of `data`.
///
/// Each iteration is one pass over the scenes in order, in batches of
/// `cfg.batch`; gradients of a batch are summed per field, then each touched
/// field takes one Adam step and is clamped back into its ε/ψ box.
pub fn fit_bank(mut bank: FieldBank, data: &Dataset, victim: &Victim, cfg: &AttackConfig, probe: Option<&Dataset>) -> Result<(FieldBank, AttackTrace)> {
    cfg.validate()?;
    let registry = objectives();
    let objective = registry.get(&cfg.objective)?;
    if objective.task() != victim.task() {
        return Err(Error::InvalidArgument(format!(
            "objective `{}` needs a {} victim, got {}",
            cfg.objective,
            objective.task(),
            victim.task()
        )));
    }
    let drop = (cfg.drop_fraction > 0.0).then_some((cfg.drop_fraction, cfg.seed));
    let prepared = prepare_dataset(data, &bank, victim, cfg.k, drop)?;
    let uncovered = uncovered_fields(&bank, &prepared);
    if !uncovered.is_empty() {
        log::warn!("{} of {} fields have no target in the fitting set (risk of overfit): {uncovered:?}", uncovered.len(), bank.fields.len());
    }
    let probe = probe.map(|p| Probe::new(p, &bank, victim, cfg.k)).transpose()?;
    let measure = |bank: &FieldBank| -> Result<f64> {
        match &probe {
            Some(p) => p.metric(&cfg.objective, victim, bank, cfg.classes),
            None => Ok(f64::NAN),
        }
    };
    let mut trace = AttackTrace { probe_initial: measure(&bank)?, ..Default::default() };
    let mut adam: Vec<Adam> = (0..bank.fields.len()).map(|_| Adam::new(bank.roots_per_field() * 4, cfg.lr)).collect();
    bank.clamp();
    for it in 0..cfg.iterations {
        let mut total = 0.0;
        for chunk in prepared.chunks(cfg.batch) {
            let results: Vec<Result<(f64, BTreeMap<usize, FieldGrad>)>> = chunk
                .par_iter()
                .map(|w| scene_gradient(objective, victim, &data.samples[w.index], w, &bank, cfg.classes))
                .collect();
            let mut acc: BTreeMap<usize, FieldGrad> = BTreeMap::new();
            for r in results {
                let (loss, grads) = r?;
                total += loss;
                for (fi, g) in grads {
                    match acc.get_mut(&fi) {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| (0..4).for_each(|c| a[c] += g[c])),
                        None => {
                            acc.insert(fi, g);
                        }
                    }
                }
            }
            for (fi, g) in acc {
                let f = &mut bank.fields[fi];
                adam[fi].step(f.vectors.as_flattened_mut(), g.as_flattened());
                f.clamp(cfg.epsilon, cfg.psi);
            }
        }
        let p = measure(&bank)?;
        log::info!("attack iteration {}: loss {total:.4} probe {p:.4}", it + 1);
        trace.loss.push(total);
        trace.probe.push(p);
    }
    Ok((bank, trace))
}

/// Deforms every attackable object of each scene with its `(group, scene mod N)` field.
pub fn apply_bank(data: &Dataset, bank: &FieldBank, k: usize) -> Result<Dataset> {
    let samples = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let w = prepare_scene(s, i, i % bank.variants, &s.boxes, data.sensor, bank, k, 0.0)?;
            Ok(Sample { id: s.id, cloud: w.apply(&s.cloud, bank), boxes: s.boxes.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { classes: data.classes.clone(), sensor: data.sensor, domain: data.domain.clone(), samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn scene_with_boxes(n: usize) -> (PointCloud, Vec<LabeledBox>) {
        let mut cloud = PointCloud::with_capacity(n);
        let mut boxes = Vec::new();
        for i in 0..n {
            let c = Vec3::new(10.0 + 6.0 * i as f64, 0.0, 0.9);
            let b = OrientedBox::new(c, BoxDims::new(1.8, 1.6, 4.6), 0.0).unwrap();
            boxes.push(LabeledBox { class: 1, instance: i as u16 + 1, bbox: b });
            cloud.push(c, 0.2, 1, i as u16 + 1);
        }
        (cloud, boxes)
    }

    #[test]
    fn drop_boxes_fractions() {
        let (cloud, boxes) = scene_with_boxes(100);
        assert_eq!(drop_boxes(&boxes, &cloud, 1, 0.0, 1), boxes);
        let kept = drop_boxes(&boxes, &cloud, 1, 0.1, 1);
        assert_eq!(kept.len(), 90);
        assert_eq!(kept, drop_boxes(&boxes, &cloud, 1, 0.1, 1));
        assert_ne!(kept, drop_boxes(&boxes, &cloud, 1, 0.1, 2));
        // Kept boxes preserve their order.
        assert!(kept.windows(2).all(|w| w[0].instance < w[1].instance));
    }

    #[test]
    fn boxes_without_class_points_are_removed() {
        let (mut cloud, boxes) = scene_with_boxes(5);
        cloud.semantic[2] = 0;
        let kept = drop_boxes(&boxes, &cloud, 1, 0.0, 1);
        assert_eq!(kept.len(), 4);
        assert!(kept.iter().all(|b| b.instance != 3));
    }

    #[test]
    fn config_validation() {
        let classes = AttackClasses::new(1, None).unwrap();
        let cfg = AttackConfig::new("untargeted", classes, "car", AnchorMode::Oriented).unwrap();
        assert_eq!((cfg.groups, cfg.variants, cfg.k), (12, 6, 2));
        assert_eq!(cfg.lr, 0.01);
        cfg.validate().unwrap();
        let det = AttackConfig::new("detection", classes, "car", AnchorMode::Oriented).unwrap();
        assert_eq!(det.lr, 0.05);
        let aa = AttackConfig::new("untargeted", classes, "person", AnchorMode::AxisAligned).unwrap();
        assert_eq!((aa.groups, aa.step), (6, 0.05));
        assert!(AttackConfig { epsilon: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(AttackConfig { objective: "targeted".into(), ..cfg.clone() }.validate().is_err());
        assert!(AttackConfig::new("untargeted", classes, "tree", AnchorMode::Oriented).is_err());
    }
}
