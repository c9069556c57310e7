//! Segmentation and detection metrics.

use crate::cloud::ClassId;
use crate::error::{Error, Result};
use crate::geometry::{iou_3d, OrientedBox, Point3};

/// Square confusion matrix, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn add(&mut self, truth: ClassId, pred: ClassId) {
        self.counts[truth as usize * self.classes + pred as usize] += 1;
    }

    pub fn add_all(&mut self, truth: &[ClassId], pred: &[ClassId]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::LengthMismatch(format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if t as usize >= self.classes || p as usize >= self.classes {
                return Err(Error::InvalidArgument(format!("class id out of range ({t}, {p})")));
            }
            self.add(t, p);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class never occurs in truth or prediction.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let fn_: u64 = (0..self.classes).filter(|&p| p != c).map(|p| self.get(c, p)).sum();
        let fp: u64 = (0..self.classes).filter(|&t| t != c).map(|t| self.get(t, c)).sum();
        let union = tp + fp + fn_;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class IoU and their mean over `subset` (all classes if `None`).
    pub fn miou(&self, subset: Option<&[ClassId]>) -> MiouReport {
        let ids: Vec<usize> = match subset {
            Some(s) => s.iter().map(|&c| c as usize).collect(),
            None => (0..self.classes).collect(),
        };
        let per_class: Vec<Option<f64>> = (0..self.classes).map(|c| self.iou(c)).collect();
        let present: Vec<f64> = ids.iter().filter_map(|&c| per_class[c]).collect();
        let excluded = ids.iter().filter(|&&c| per_class[c].is_none()).map(|&c| c as ClassId).collect();
        let mean = if present.is_empty() { None } else { Some(present.iter().sum::<f64>() / present.len() as f64) };
        MiouReport { per_class, mean, excluded }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    pub per_class: Vec<Option<f64>>,
    /// Mean over the requested classes that have a non-empty union.
    pub mean: Option<f64>,
    /// Requested classes left out of the mean because their union is empty.
    pub excluded: Vec<ClassId>,
}

pub fn miou(truth: &[ClassId], pred: &[ClassId], classes: usize, subset: Option<&[ClassId]>) -> Result<MiouReport> {
    let mut c = Confusion::new(classes);
    c.add_all(truth, pred)?;
    Ok(c.miou(subset))
}

/// Number of 10 m range bins.
pub const DISTANCE_BINS: usize = 8;
pub const BIN_WIDTH: f64 = 10.0;

/// Confusion matrices per horizontal-range bin `[10k, 10(k+1))`. Points at
/// 80 m or farther are counted in the returned overflow tally.
pub fn distance_binned(
    positions: &[Point3],
    truth: &[ClassId],
    pred: &[ClassId],
    sensor: Point3,
    classes: usize,
) -> Result<(Vec<Confusion>, u64)> {
    if positions.len() != truth.len() || truth.len() != pred.len() {
        return Err(Error::LengthMismatch("positions, labels and predictions differ in length".into()));
    }
    let mut bins = vec![Confusion::new(classes); DISTANCE_BINS];
    let mut overflow = 0;
    for ((p, &t), &q) in positions.iter().zip(truth).zip(pred) {
        let r = (p.x - sensor.x).hypot(p.y - sensor.y);
        let b = (r / BIN_WIDTH).floor() as usize;
        if b < DISTANCE_BINS {
            bins[b].add(t, q);
        } else {
            overflow += 1;
        }
    }
    Ok((bins, overflow))
}

/// Detections and ground truth of one scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneDetections {
    /// `(score, box)`.
    pub detections: Vec<(f64, OrientedBox)>,
    pub gt: Vec<OrientedBox>,
    /// Boxes that neither count as misses nor turn matching detections into false positives.
    pub ignore: Vec<OrientedBox>,
}

/// Average precision: area under the precision envelope, detections matched
/// greedily in descending score order, each ground truth at most once.
pub fn average_precision(scenes: &[SceneDetections], iou_thr: f64) -> f64 {
    let n_gt: usize = scenes.iter().map(|s| s.gt.len()).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<(f64, usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| s.detections.iter().enumerate().map(move |(di, d)| (d.0, si, di)))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut taken: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.gt.len()]).collect();
    let mut flags = Vec::with_capacity(order.len());
    for &(_, si, di) in &order {
        let s = &scenes[si];
        let d = &s.detections[di].1;
        let mut best = None;
        let mut best_iou = iou_thr;
        for (g, gt) in s.gt.iter().enumerate() {
            if taken[si][g] {
                continue;
            }
            let iou = iou_3d(d, gt);
            if iou >= best_iou {
                best_iou = iou;
                best = Some(g);
            }
        }
        match best {
            Some(g) => {
                taken[si][g] = true;
                flags.push(Some(true));
            }
            None if s.ignore.iter().any(|b| iou_3d(d, b) >= iou_thr) => flags.push(None),
            None => flags.push(Some(false)),
        }
    }
    precision_envelope_ap(&flags, n_gt)
}

/// AP from a ranked list of true/false positives (`None` = ignored).
///
/// Every true positive raises recall by `1/n_gt`; that step is weighted by the
/// best precision reached at this rank or later.
pub fn precision_envelope_ap(flags: &[Option<bool>], n_gt: usize) -> f64 {
    let ranked: Vec<bool> = flags.iter().flatten().copied().collect();
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (i, &f) in ranked.iter().enumerate() {
        tp += f as usize;
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    ranked.iter().zip(&precision).filter(|(f, _)| **f).map(|(_, p)| p / n_gt as f64).sum()
}

/// Whether each ground-truth box is hit by some detection with IoU above `thr`.
pub fn detected(gt: &[OrientedBox], detections: &[OrientedBox], thr: f64) -> Vec<bool> {
    gt.iter().map(|g| detections.iter().any(|d| iou_3d(d, g) > thr)).collect()
}

/// Attack success rate in percent: among ground-truth objects detected on the
/// clean input, the share no longer detected after the attack. `None` if no
/// object was detected on clean input.
pub fn attack_success_rate(
    gt: &[Vec<OrientedBox>],
    clean: &[Vec<OrientedBox>],
    attacked: &[Vec<OrientedBox>],
    thr: f64,
) -> Result<Option<f64>> {
    if gt.len() != clean.len() || gt.len() != attacked.len() {
        return Err(Error::LengthMismatch("ASR needs one entry per scene in every list".into()));
    }
    let (mut base, mut lost) = (0usize, 0usize);
    for ((g, c), a) in gt.iter().zip(clean).zip(attacked) {
        let before = detected(g, c, thr);
        let after = detected(g, a, thr);
        for (b, a) in before.iter().zip(&after) {
            if *b {
                base += 1;
                if !a {
                    lost += 1;
                }
            }
        }
    }
    Ok((base > 0).then(|| 100.0 * lost as f64 / base as f64))
}
