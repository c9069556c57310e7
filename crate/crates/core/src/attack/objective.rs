//! Adversarial objectives. Each one turns a victim's prediction on a deformed
//! cloud into a scalar loss (to be minimized) and its gradient w.r.t. every
//! point's position and intensity.

use crate::cloud::{AttackClasses, ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{iou_3d, OrientedBox, Vec3};
use crate::registry::{Named, Registry};
use crate::victim::det::DET_OUTPUTS;
use crate::victim::Victim;

/// Probability floor inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;
/// Proposals at or below this confidence are not relevant.
pub const RELEVANCE: f64 = 0.1;

/// What an objective sees for one scene.
pub struct ObjectiveInput<'a> {
    pub deformed: &'a PointCloud,
    /// Ground-truth labels (unchanged by the deformation).
    pub labels: &'a [ClassId],
    /// Points whose prediction can change; the loss is summed over them.
    pub region: &'a [usize],
    /// Detector anchors near the attacked objects.
    pub anchors: &'a [usize],
    /// Boxes of the attacked objects.
    pub targets: &'a [OrientedBox],
    pub classes: AttackClasses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub loss: f64,
    pub grad_pos: Vec<Vec3>,
    pub grad_int: Vec<f64>,
}

pub trait Objective: Named + Send + Sync {
    /// `seg` or `det`.
    fn task(&self) -> &'static str;
    fn evaluate(&self, victim: &Victim, input: &ObjectiveInput) -> Result<ObjectiveEval>;
}

/// `Σ_p log ρ_{p, y_p}`: minimizing it drives every prediction away from its label.
pub fn loss_untargeted(probs: &[f64], labels: &[ClassId], c: usize) -> f64 {
    labels.iter().enumerate().map(|(r, &y)| probs[r * c + y as usize].max(LOG_FLOOR).ln()).sum()
}

/// `−Σ_{p ∈ c*} log ρ_{p, ĉ}` over the adversarial-class points only.
pub fn loss_targeted(probs: &[f64], labels: &[ClassId], c: usize, adversarial: ClassId, target: ClassId) -> f64 {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == adversarial)
        .map(|(r, _)| -probs[r * c + target as usize].max(LOG_FLOOR).ln())
        .sum()
}

/// `−Σ IoU(q*, q) log(1 − s)` over proposals with `s > 0.1`, where `q*` is the
/// ground truth with the highest IoU.
pub fn loss_detection(proposals: &[(f64, OrientedBox)], gt: &[OrientedBox]) -> f64 {
    proposals
        .iter()
        .filter(|(s, _)| *s > RELEVANCE)
        .map(|(s, b)| {
            let iou = gt.iter().map(|g| iou_3d(b, g)).fold(0.0, f64::max);
            if iou > 0.0 {
                -iou * (1.0 - s).max(LOG_FLOOR).ln()
            } else {
                0.0
            }
        })
        .sum()
}

fn seg_victim(victim: &Victim) -> Result<&crate::victim::SegNet> {
    victim.as_seg().ok_or_else(|| Error::InvalidArgument("this objective needs a segmentation victim".into()))
}

fn check(input: &ObjectiveInput) -> Result<()> {
    if input.labels.len() != input.deformed.len() {
        return Err(Error::LengthMismatch("labels and cloud differ in length".into()));
    }
    Ok(())
}

pub struct Untargeted;

impl Named for Untargeted {
    fn name(&self) -> &str {
        "untargeted"
    }
}

impl Objective for Untargeted {
    fn task(&self) -> &'static str {
        "seg"
    }

    fn evaluate(&self, victim: &Victim, input: &ObjectiveInput) -> Result<ObjectiveEval> {
        check(input)?;
        let net = seg_victim(victim)?;
        let c = net.num_classes();
        let out = net.forward_queries(input.deformed, input.region);
        let labels: Vec<ClassId> = input.region.iter().map(|&i| input.labels[i]).collect();
        let loss = loss_untargeted(&out.probs, &labels, c);
        // d/dz_k log ρ_y = [k = y] − ρ_k.
        let mut g = vec![0.0; out.probs.len()];
        for (r, &y) in labels.iter().enumerate() {
            if out.probs[r * c + y as usize] <= LOG_FLOOR {
                continue;
            }
            for k in 0..c {
                g[r * c + k] = -out.probs[r * c + k];
            }
            g[r * c + y as usize] += 1.0;
        }
        let (grad_pos, grad_int) = net.backward_inputs(input.deformed, &out.tape, &g)?;
        Ok(ObjectiveEval { loss, grad_pos, grad_int })
    }
}

pub struct Targeted;

impl Named for Targeted {
    fn name(&self) -> &str {
        "targeted"
    }
}

impl Objective for Targeted {
    fn task(&self) -> &'static str {
        "seg"
    }

    fn evaluate(&self, victim: &Victim, input: &ObjectiveInput) -> Result<ObjectiveEval> {
        check(input)?;
        let net = seg_victim(victim)?;
        let c = net.num_classes();
        let target = input
            .classes
            .target
            .ok_or_else(|| Error::InvalidArgument("targeted objective needs a target class".into()))?;
        let cstar = input.classes.adversarial;
        let queries: Vec<usize> = input.region.iter().copied().filter(|&i| input.labels[i] == cstar).collect();
        if queries.is_empty() {
            log::warn!("targeted objective: no points of the adversarial class in this scene");
            let n = input.deformed.len();
            return Ok(ObjectiveEval { loss: 0.0, grad_pos: vec![Vec3::ZERO; n], grad_int: vec![0.0; n] });
        }
        let out = net.forward_queries(input.deformed, &queries);
        let labels = vec![cstar; queries.len()];
        let loss = loss_targeted(&out.probs, &labels, c, cstar, target);
        // d/dz_k (−log ρ_ĉ) = ρ_k − [k = ĉ].
        let mut g = out.probs.clone();
        for r in 0..queries.len() {
            if out.probs[r * c + target as usize] <= LOG_FLOOR {
                g[r * c..(r + 1) * c].iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            g[r * c + target as usize] -= 1.0;
        }
        let (grad_pos, grad_int) = net.backward_inputs(input.deformed, &out.tape, &g)?;
        Ok(ObjectiveEval { loss, grad_pos, grad_int })
    }
}

pub struct Detection;

impl Named for Detection {
    fn name(&self) -> &str {
        "detection"
    }
}

impl Objective for Detection {
    fn task(&self) -> &'static str {
        "det"
    }

    fn evaluate(&self, victim: &Victim, input: &ObjectiveInput) -> Result<ObjectiveEval> {
        let head = victim.as_det().ok_or_else(|| Error::InvalidArgument("detection objective needs a detector".into()))?;
        let out = head.forward_anchors(input.deformed, input.anchors);
        let mut loss = 0.0;
        let mut g = vec![0.0; out.outputs.len()];
        for (r, p) in out.proposals.iter().enumerate() {
            if p.score <= RELEVANCE {
                continue;
            }
            // The IoU weight is held constant; only the confidence is differentiated.
            let iou = input.targets.iter().map(|t| iou_3d(&p.bbox, t)).fold(0.0, f64::max);
            if iou > 0.0 {
                loss -= iou * (1.0 - p.score).max(LOG_FLOOR).ln();
                g[r * DET_OUTPUTS] = iou * p.score;
            }
        }
        let (grad_pos, grad_int) = head.backward_inputs(input.deformed, &out.tape, &g)?;
        Ok(ObjectiveEval { loss, grad_pos, grad_int })
    }
}

/// All built-in objectives, by name.
pub fn objectives() -> Registry<dyn Objective> {
    let mut r: Registry<dyn Objective> = Registry::new("objective");
    r.register(Box::new(Untargeted)).register(Box::new(Targeted)).register(Box::new(Detection));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn detection_loss_closed_forms() {
        let b = OrientedBox::new(Vec3::new(10.0, 0.0, 1.0), BoxDims::new(1.8, 1.6, 4.6), 0.0).unwrap();
        let far = OrientedBox::new(Vec3::new(40.0, 0.0, 1.0), BoxDims::new(1.8, 1.6, 4.6), 0.0).unwrap();
        assert_eq!(loss_detection(&[(0.05, b)], &[b]), 0.0);
        assert!((loss_detection(&[(0.5, b)], &[b]) - 2f64.ln()).abs() < 1e-12);
        assert_eq!(loss_detection(&[(0.99, far)], &[b]), 0.0);
        assert_eq!(loss_detection(&[], &[b]), 0.0);
    }

    #[test]
    fn segmentation_losses_closed_forms() {
        let perfect = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(loss_untargeted(&perfect, &[0], 4), 0.0);
        let uniform = vec![0.25; 4 * 7];
        assert!((loss_untargeted(&uniform, &[1; 7], 4) - 7.0 * 0.25f64.ln()).abs() < 1e-12);
        assert!((loss_targeted(&[0.5, 0.5], &[1], 2, 1, 0) - 2f64.ln()).abs() < 1e-12);
        assert!((loss_targeted(&[0.0, 1.0], &[1], 2, 1, 0) + LOG_FLOOR.ln()).abs() < 1e-9);
        // Points of other classes are ignored.
        let a = loss_targeted(&[0.3, 0.7, 0.8, 0.2], &[0, 1], 2, 1, 0);
        assert!((a + 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn untargeted_matches_independent_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 5;
        for _ in 0..100 {
            let n = rng.random_range(1..40);
            let mut probs = Vec::new();
            for _ in 0..n {
                let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                probs.extend(raw.iter().map(|v| v / s));
            }
            let labels: Vec<ClassId> = (0..n).map(|_| rng.random_range(0..c as u16)).collect();
            // Cross-entropy from the one-hot definition.
            let mut ce = 0.0;
            for r in 0..n {
                for k in 0..c {
                    let onehot = if labels[r] as usize == k { 1.0 } else { 0.0 };
                    ce -= onehot * probs[r * c + k].ln();
                }
            }
            assert!((loss_untargeted(&probs, &labels, c) + ce).abs() < 1e-9);
        }
    }

    #[test]
    fn registry_lists_all_objectives() {
        let r = objectives();
        assert_eq!(r.names(), vec!["detection", "targeted", "untargeted"]);
        assert_eq!(r.get("detection").unwrap().task(), "det");
        assert!(r.get("chamfer").is_err());
    }
}
