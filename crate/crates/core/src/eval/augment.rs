//! Adversarial augmentation: one object per scene deformed by a random variant
//! of its group's field, on top of the standard augmentations.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{drop_boxes, scene_targets};
use crate::cloud::PointCloud;
use crate::dataset::{Dataset, Sample};
use crate::error::Result;
use crate::field::{deform_in_place, plan, FieldBank};
use crate::geometry::Point3;
use crate::victim::det::{train_det, DetTrainConfig};
use crate::victim::seg::{train_seg, SegTrainConfig};
use crate::victim::{DetHead, SceneAugment, SegNet, TrainLog};

/// Augmentation hook backed by a frozen bank.
pub struct BankAugment<'a> {
    pub bank: &'a FieldBank,
    pub sensor: Point3,
    pub k: usize,
    /// Drop `(fraction, seed)` of the boxes before picking, as during fitting.
    pub drop: Option<(f64, u64)>,
    skipped: AtomicUsize,
}

/// What [`augment_scene`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentChoice {
    pub instance: u16,
    pub group: usize,
    pub variant: usize,
}

impl<'a> BankAugment<'a> {
    pub fn new(bank: &'a FieldBank, sensor: Point3, k: usize) -> Self {
        Self { bank, sensor, k, drop: None, skipped: AtomicUsize::new(0) }
    }

    /// Scenes that had no eligible object so far.
    pub fn skipped(&self) -> usize {
        self.skipped.load(Ordering::Relaxed)
    }
}

/// Deforms one randomly chosen object of the bank's class with a uniformly
/// drawn variant of its group. Returns `None` (cloud untouched) when the scene
/// has no eligible object.
pub fn augment_scene(
    sample: &Sample,
    cloud: &mut PointCloud,
    bank: &FieldBank,
    sensor: Point3,
    k: usize,
    drop: Option<(f64, u64)>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<AugmentChoice>> {
    let boxes = match drop {
        Some((fraction, seed)) => drop_boxes(&sample.boxes, &sample.cloud, bank.class, fraction, seed ^ sample.id),
        None => drop_boxes(&sample.boxes, &sample.cloud, bank.class, 0.0, 0),
    };
    let targets = scene_targets(sample, &boxes, sensor, bank)?;
    if targets.is_empty() {
        return Ok(None);
    }
    let t = &targets[rng.random_range(0..targets.len())];
    let variant = rng.random_range(0..bank.variants);
    let field = bank.field(t.group, variant);
    let p = plan(cloud, &t.bbox, field, sensor, k)?;
    deform_in_place(cloud, &p, field);
    Ok(Some(AugmentChoice { instance: t.instance, group: t.group, variant }))
}

impl SceneAugment for BankAugment<'_> {
    fn augment(&self, sample: &Sample, cloud: &mut PointCloud, rng: &mut ChaCha8Rng) -> bool {
        match augment_scene(sample, cloud, self.bank, self.sensor, self.k, self.drop, rng) {
            Ok(Some(_)) => true,
            Ok(None) => {
                self.skipped.fetch_add(1, Ordering::Relaxed);
                false
            }
            Err(e) => {
                log::warn!("scene {}: augmentation skipped: {e}", sample.id);
                self.skipped.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }
}

/// Segmentation training with adversarial augmentation.
pub fn train_seg_augmented(data: &Dataset, bank: &FieldBank, cfg: &SegTrainConfig, k: usize) -> Result<(SegNet, TrainLog)> {
    let hook = BankAugment::new(bank, data.sensor, k);
    train_seg(data, cfg, Some(&hook))
}

/// Detection training with adversarial augmentation.
pub fn train_det_augmented(data: &Dataset, bank: &FieldBank, cfg: &DetTrainConfig, k: usize) -> Result<(DetHead, TrainLog)> {
    let hook = BankAugment::new(bank, data.sensor, k);
    train_det(data, bank.class, cfg, Some(&hook))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackConfig;
    use crate::cloud::AttackClasses;
    use crate::field::AnchorMode;
    use crate::sim::{generate_scene, Domain, SceneConfig};
    use rand::SeedableRng;

    fn bank() -> FieldBank {
        let classes = AttackClasses::new(1, None).unwrap();
        AttackConfig::new("untargeted", classes, "car", AnchorMode::Oriented).unwrap().new_bank("car").unwrap()
    }

    #[test]
    fn exactly_one_instance_changes() {
        let s = generate_scene(7, Domain::Normal, &SceneConfig::default()).unwrap().to_sample();
        let b = bank();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cloud = s.cloud.clone();
        let choice = augment_scene(&s, &mut cloud, &b, s_sensor(), 2, None, &mut rng).unwrap().unwrap();
        let bbox = s.boxes.iter().find(|x| x.instance == choice.instance).unwrap().bbox;
        let mut changed = 0;
        for i in 0..cloud.len() {
            if cloud.positions[i] != s.cloud.positions[i] || cloud.intensity[i] != s.cloud.intensity[i] {
                changed += 1;
                assert!(bbox.contains(s.cloud.positions[i]));
            }
        }
        assert!(changed > 0);
        assert_eq!(cloud.semantic, s.cloud.semantic);
        assert_eq!(cloud.instance, s.cloud.instance);
    }

    fn s_sensor() -> Point3 {
        crate::sim::SensorSpec::default().origin()
    }

    #[test]
    fn zero_bank_is_identity() {
        let s = generate_scene(3, Domain::Normal, &SceneConfig::default()).unwrap().to_sample();
        let mut b = bank();
        b.fields.iter_mut().for_each(|f| f.vectors.iter_mut().for_each(|v| *v = [0.0; 4]));
        let mut cloud = s.cloud.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(augment_scene(&s, &mut cloud, &b, s_sensor(), 2, None, &mut rng).unwrap().is_some());
        assert_eq!(cloud, s.cloud);
    }

    #[test]
    fn variants_are_drawn_uniformly() {
        let s = generate_scene(5, Domain::Normal, &SceneConfig::default()).unwrap().to_sample();
        let b = bank();
        let mut counts = vec![0usize; b.variants];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 1000;
        for _ in 0..trials {
            let mut cloud = s.cloud.clone();
            counts[augment_scene(&s, &mut cloud, &b, s_sensor(), 2, None, &mut rng).unwrap().unwrap().variant] += 1;
        }
        let p = 1.0 / b.variants as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn zero_bank_training_matches_baseline() {
        let data = crate::sim::make_splits(
            1,
            crate::sim::SplitSizes { train: 3, val: 0, ood_rare: 0, ood_damaged: 0 },
            &SceneConfig::default(),
        )
        .unwrap()
        .train;
        let mut b = bank();
        b.fields.iter_mut().for_each(|f| f.vectors.iter_mut().for_each(|v| *v = [0.0; 4]));
        let cfg = SegTrainConfig { epochs: 2, ..Default::default() };
        let (base, _) = train_seg(&data, &cfg, None).unwrap();
        let (aug, log) = train_seg_augmented(&data, &b, &cfg, 2).unwrap();
        assert_eq!(log.augment_skipped, 0);
        assert_eq!(base.mlp.params, aug.mlp.params);
    }

    #[test]
    fn no_eligible_object_leaves_scene_alone() {
        let mut s = generate_scene(3, Domain::Normal, &SceneConfig::default()).unwrap().to_sample();
        s.boxes.retain(|b| b.class != 1);
        let b = bank();
        let hook = BankAugment::new(&b, s_sensor(), 2);
        let mut cloud = s.cloud.clone();
        assert!(!hook.augment(&s, &mut cloud, &mut ChaCha8Rng::seed_from_u64(0)));
        assert_eq!(hook.skipped(), 1);
        assert_eq!(cloud, s.cloud);
    }
}
