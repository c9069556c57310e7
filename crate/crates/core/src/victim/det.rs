//! Anchor-grid car detector.
//!
//! Anchors sit on a 2 m ground grid. Each anchor pools the points around it
//! with the horizontal kernel `(1 − d²/R²)²` times a smooth height gate that
//! suppresses the ground, expresses the pooled moments in a frame aligned with
//! the sensor bearing of the anchor, and feeds them to a tanh MLP that outputs
//! a confidence logit and box residuals. Working in the bearing frame makes the
//! head equivariant to rotations about the sensor up to the grid discretization.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mlp::{sigmoid, Adam, Mlp, MlpTape, CHUNK};
use super::seg::{standard_augment, TrainLog};
use super::{derive_rng, SceneAugment, STREAM_ADVERSARIAL, STREAM_SAMPLING, STREAM_STANDARD};
use crate::cloud::{ClassId, PointCloud};
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::{bev_overlap_area, BoxDims, OrientedBox, RigidTransform, Vec3};
use crate::spatial::UniformGrid;

pub const DET_FEATURES: usize = 9;
pub const DET_OUTPUTS: usize = 9;
pub const STRIDE: f64 = 2.0;
pub const HALF_EXTENT: f64 = 62.0;
pub const POOL_RADIUS: f64 = 3.0;
pub const ANCHOR_DIMS: BoxDims = BoxDims::new(1.8, 1.6, 4.6);
pub const ANCHOR_Z: f64 = 0.95;

const GATE_LOW: f64 = 0.3;
const GATE_LOW_SOFT: f64 = 0.05;
const GATE_HIGH: f64 = 2.5;
const GATE_HIGH_SOFT: f64 = 0.1;
const MASS_FLOOR: f64 = 0.01;
/// Divisors of the pooled moments r, t, r², t², rt, z, z², τ.
const SCALES: [f64; 8] = [POOL_RADIUS, POOL_RADIUS, 9.0, 9.0, 9.0, 2.0, 4.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct DetHead {
    /// Class the head detects.
    pub class: ClassId,
    pub mlp: Mlp,
}

/// One anchor's prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub anchor: usize,
    pub logit: f64,
    pub score: f64,
    pub bbox: OrientedBox,
}

#[derive(Debug, Clone, Default)]
pub struct DetTape {
    pub n_cloud: usize,
    pub anchors: Vec<usize>,
    offsets: Vec<usize>,
    pairs: Vec<u32>,
    mass: Vec<f64>,
    feats: Vec<f64>,
    mlp: MlpTape,
}

#[derive(Debug, Clone)]
pub struct DetOutput {
    /// `anchors × DET_OUTPUTS` raw outputs.
    pub outputs: Vec<f64>,
    pub proposals: Vec<Proposal>,
    pub tape: DetTape,
}

pub fn anchors_per_axis() -> usize {
    (2.0 * HALF_EXTENT / STRIDE).round() as usize
}

pub fn anchor_count() -> usize {
    anchors_per_axis().pow(2)
}

/// Ground position of anchor `a`.
pub fn anchor_center(a: usize) -> (f64, f64) {
    let n = anchors_per_axis();
    let (i, j) = (a / n, a % n);
    (-HALF_EXTENT + (i as f64 + 0.5) * STRIDE, -HALF_EXTENT + (j as f64 + 0.5) * STRIDE)
}

/// Anchor whose cell contains `(x, y)`, if inside the grid.
pub fn anchor_of(x: f64, y: f64) -> Option<usize> {
    let n = anchors_per_axis() as i64;
    let i = ((x + HALF_EXTENT) / STRIDE).floor() as i64;
    let j = ((y + HALF_EXTENT) / STRIDE).floor() as i64;
    (i >= 0 && j >= 0 && i < n && j < n).then(|| (i * n + j) as usize)
}

/// Unit bearing frame of an anchor: radial and tangential directions.
fn frame(a: usize) -> (f64, (f64, f64), (f64, f64)) {
    let (x, y) = anchor_center(a);
    let phi = y.atan2(x);
    let (s, c) = phi.sin_cos();
    (phi, (c, s), (-s, c))
}

#[inline]
fn gate(z: f64) -> (f64, f64) {
    let a = sigmoid((z - GATE_LOW) / GATE_LOW_SOFT);
    let b = sigmoid((GATE_HIGH - z) / GATE_HIGH_SOFT);
    let d = a * (1.0 - a) / GATE_LOW_SOFT * b - a * b * (1.0 - b) / GATE_HIGH_SOFT;
    (a * b, d)
}

/// Regression targets of a positive anchor for box `b`.
pub fn encode_target(a: usize, b: &OrientedBox) -> [f64; DET_OUTPUTS] {
    let (ax, ay) = anchor_center(a);
    let (phi, er, et) = frame(a);
    let (dx, dy) = (b.center.x - ax, b.center.y - ay);
    let rel = 2.0 * (b.yaw - phi);
    [
        1.0,
        dx * er.0 + dy * er.1,
        dx * et.0 + dy * et.1,
        b.center.z - ANCHOR_Z,
        (b.dims.width / ANCHOR_DIMS.width).ln(),
        (b.dims.height / ANCHOR_DIMS.height).ln(),
        (b.dims.length / ANCHOR_DIMS.length).ln(),
        rel.cos(),
        rel.sin(),
    ]
}

/// Box decoded from the raw outputs of anchor `a`.
pub fn decode(a: usize, o: &[f64]) -> OrientedBox {
    let (ax, ay) = anchor_center(a);
    let (phi, er, et) = frame(a);
    let center = Vec3::new(ax + o[1] * er.0 + o[2] * et.0, ay + o[1] * er.1 + o[2] * et.1, ANCHOR_Z + o[3]);
    let dims = BoxDims::new(
        ANCHOR_DIMS.width * o[4].clamp(-1.0, 1.0).exp(),
        ANCHOR_DIMS.height * o[5].clamp(-1.0, 1.0).exp(),
        ANCHOR_DIMS.length * o[6].clamp(-1.0, 1.0).exp(),
    );
    let yaw = crate::geometry::wrap_pi(phi + 0.5 * o[8].atan2(o[7]));
    OrientedBox::new(center, dims, yaw).expect("decoded dims are positive")
}

impl DetHead {
    pub fn new(class: ClassId, seed: u64) -> Result<Self> {
        let mut mlp = Mlp::init(&[DET_FEATURES, 64, 64, DET_OUTPUTS], seed)?;
        // Start with a low prior confidence.
        let n = mlp.params.len();
        mlp.params[n - DET_OUTPUTS] = -4.0;
        Ok(Self { class, mlp })
    }

    fn grid(cloud: &PointCloud) -> UniformGrid {
        let flat: Vec<Vec3> = cloud.positions.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
        UniformGrid::with_cells(&flat, POOL_RADIUS, 1.0)
    }

    /// Pooled features of one anchor and the contributing point indices.
    fn pool(cloud: &PointCloud, grid: &UniformGrid, a: usize) -> ([f64; DET_FEATURES], Vec<u32>, f64) {
        let (ax, ay) = anchor_center(a);
        let (_, er, et) = frame(a);
        let inv_r2 = 1.0 / (POOL_RADIUS * POOL_RADIUS);
        let mut acc = [0.0; 8];
        let mut w = 0.0;
        let mut pts = Vec::new();
        grid.for_each_within(Vec3::new(ax, ay, 0.0), POOL_RADIUS, |j, d2| {
            let p = cloud.positions[j];
            let u = d2 * inv_r2;
            let (g, _) = gate(p.z);
            let k = (1.0 - u) * (1.0 - u) * g;
            let (dx, dy) = (p.x - ax, p.y - ay);
            let r = dx * er.0 + dy * er.1;
            let t = dx * et.0 + dy * et.1;
            let h = [r, t, r * r, t * t, r * t, p.z, p.z * p.z, cloud.intensity[j]];
            for (a, hv) in acc.iter_mut().zip(h) {
                *a += k * hv;
            }
            w += k;
            pts.push(j as u32);
        });
        let wt = w + MASS_FLOOR;
        let mut f = [0.0; DET_FEATURES];
        f[0] = w.ln_1p() * 0.25;
        for m in 0..8 {
            f[m + 1] = acc[m] / (wt * SCALES[m]);
        }
        (f, pts, w)
    }

    /// Forward pass over a subset of anchors.
    pub fn forward_anchors(&self, cloud: &PointCloud, anchors: &[usize]) -> DetOutput {
        let grid = Self::grid(cloud);
        let pooled: Vec<([f64; DET_FEATURES], Vec<u32>, f64)> = anchors
            .par_chunks(CHUNK)
            .flat_map_iter(|ch| ch.iter().map(|&a| Self::pool(cloud, &grid, a)).collect::<Vec<_>>())
            .collect();
        let mut tape = DetTape { n_cloud: cloud.len(), anchors: anchors.to_vec(), offsets: vec![0], ..DetTape::default() };
        for (f, pts, w) in pooled {
            tape.feats.extend_from_slice(&f);
            tape.pairs.extend_from_slice(&pts);
            tape.offsets.push(tape.pairs.len());
            tape.mass.push(w);
        }
        tape.mlp = self.mlp.forward(&tape.feats);
        let outputs = tape.mlp.output().to_vec();
        let proposals = anchors
            .iter()
            .zip(outputs.chunks(DET_OUTPUTS))
            .map(|(&a, o)| Proposal { anchor: a, logit: o[0], score: sigmoid(o[0]), bbox: decode(a, o) })
            .collect();
        DetOutput { outputs, proposals, tape }
    }

    /// One proposal per anchor of the full grid.
    pub fn forward(&self, cloud: &PointCloud) -> DetOutput {
        let all: Vec<usize> = (0..anchor_count()).collect();
        self.forward_anchors(cloud, &all)
    }

    /// Proposals above `min_score` after bird's-eye-view non-maximum suppression.
    pub fn detect(&self, cloud: &PointCloud, min_score: f64) -> Vec<Proposal> {
        let props: Vec<Proposal> = self.forward(cloud).proposals.into_iter().filter(|p| p.score > min_score).collect();
        nms(props, 0.1)
    }

    /// Gradient w.r.t. point positions and intensities given `dL/doutputs`.
    pub fn backward_inputs(&self, cloud: &PointCloud, tape: &DetTape, grad_out: &[f64]) -> Result<(Vec<Vec3>, Vec<f64>)> {
        if tape.offsets.len() != tape.anchors.len() + 1 || tape.n_cloud != cloud.len() {
            return Err(Error::InvalidArgument("backward needs the tape of a forward pass over this cloud".into()));
        }
        if grad_out.len() != tape.anchors.len() * DET_OUTPUTS {
            return Err(Error::LengthMismatch(format!("{} output gradients for {} anchors", grad_out.len(), tape.anchors.len())));
        }
        let (gf, _) = self.mlp.backward(&tape.mlp, grad_out, false);
        let mut gp = vec![Vec3::ZERO; cloud.len()];
        let mut gi = vec![0.0; cloud.len()];
        let inv_r2 = 1.0 / (POOL_RADIUS * POOL_RADIUS);
        for (ai, &a) in tape.anchors.iter().enumerate() {
            let g = &gf[ai * DET_FEATURES..(ai + 1) * DET_FEATURES];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let f = &tape.feats[ai * DET_FEATURES..(ai + 1) * DET_FEATURES];
            let w = tape.mass[ai];
            let wt = w + MASS_FLOOR;
            let mut ga = [0.0; 8];
            let mut gw = g[0] * 0.25 / (1.0 + w);
            for m in 0..8 {
                ga[m] = g[m + 1] / (wt * SCALES[m]);
                gw -= g[m + 1] * f[m + 1] / wt;
            }
            let (ax, ay) = anchor_center(a);
            let (_, er, et) = frame(a);
            for &j in &tape.pairs[tape.offsets[ai]..tape.offsets[ai + 1]] {
                let j = j as usize;
                let p = cloud.positions[j];
                let (dx, dy) = (p.x - ax, p.y - ay);
                let u = (dx * dx + dy * dy) * inv_r2;
                let kb = (1.0 - u) * (1.0 - u);
                let (gz, dgz) = gate(p.z);
                let k = kb * gz;
                let r = dx * er.0 + dy * er.1;
                let t = dx * et.0 + dy * et.1;
                let tau = cloud.intensity[j];
                let h = [r, t, r * r, t * t, r * t, p.z, p.z * p.z, tau];
                let gk = gw + ga.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
                // Kernel derivative.
                let dk_du = -2.0 * (1.0 - u) * gz;
                let mut gx = gk * dk_du * 2.0 * dx * inv_r2;
                let mut gy = gk * dk_du * 2.0 * dy * inv_r2;
                let mut gzz = gk * kb * dgz;
                // Moment derivatives.
                let dr = ga[0] + 2.0 * r * ga[2] + t * ga[4];
                let dt = ga[1] + 2.0 * t * ga[3] + r * ga[4];
                gx += k * (dr * er.0 + dt * et.0);
                gy += k * (dr * er.1 + dt * et.1);
                gzz += k * (ga[5] + 2.0 * p.z * ga[6]);
                gp[j] += Vec3::new(gx, gy, gzz);
                gi[j] += k * ga[7];
            }
        }
        Ok((gp, gi))
    }
}

/// Greedy non-maximum suppression on bird's-eye-view IoU, highest score first.
pub fn nms(mut props: Vec<Proposal>, max_iou: f64) -> Vec<Proposal> {
    props.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.anchor.cmp(&b.anchor)));
    let mut kept: Vec<Proposal> = Vec::new();
    for p in props {
        let clash = kept.iter().any(|k| {
            let inter = bev_overlap_area(&k.bbox, &p.bbox);
            let union = k.bbox.dims.width * k.bbox.dims.length + p.bbox.dims.width * p.bbox.dims.length - inter;
            union > 0.0 && inter / union > max_iou
        });
        if !clash {
            kept.push(p);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Negative anchors sampled per scene among anchors with support.
    pub negatives: usize,
    /// Additional negatives sampled uniformly over the grid.
    pub random_negatives: usize,
    pub batch: usize,
    pub standard_aug: bool,
    /// Ground-truth boxes need this many points to count as positives.
    pub min_points: usize,
}

impl Default for DetTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 3e-3,
            seed: 0,
            negatives: 48,
            random_negatives: 16,
            batch: 4,
            standard_aug: true,
            min_points: 5,
        }
    }
}

/// Positive radius (BEV distance from anchor center to box center).
const POSITIVE_RADIUS: f64 = 1.5;
/// Anchors between the positive radius and this one are ignored in training.
const IGNORE_RADIUS: f64 = 2.5;

/// Trains the detection head. Positives are anchors within 1.5 m of a car
/// center (cars with at least `min_points` points).
pub fn train_det(data: &Dataset, class: ClassId, cfg: &DetTrainConfig, hook: Option<&dyn SceneAugment>) -> Result<(DetHead, TrainLog)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut head = DetHead::new(class, cfg.seed)?;
    let mut opt = Adam::new(head.mlp.params.len(), cfg.lr);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_anchor = anchor_count();
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch) {
            let results: Vec<Result<(f64, Vec<f64>, bool)>> = batch
                .par_iter()
                .map(|&si| {
                    let s: &Sample = &data.samples[si];
                    let mut cloud = s.cloud.clone();
                    let mut skipped = false;
                    if let Some(h) = hook {
                        let mut rng = derive_rng(cfg.seed, STREAM_ADVERSARIAL, epoch, si);
                        skipped = !h.augment(s, &mut cloud, &mut rng);
                    }
                    let mut boxes: Vec<OrientedBox> = s
                        .boxes_of(class)
                        .filter(|b| {
                            s.cloud.instance.iter().zip(&s.cloud.semantic).filter(|&(&i, &c)| i == b.instance && c == class).count()
                                >= cfg.min_points
                        })
                        .map(|b| b.bbox)
                        .collect();
                    if cfg.standard_aug {
                        let mut rng = derive_rng(cfg.seed, STREAM_STANDARD, epoch, si);
                        let (yaw, flip) = augment_params(&mut rng.clone());
                        standard_augment(&mut cloud, data.sensor, &mut rng);
                        let rot = RigidTransform::about(data.sensor, yaw);
                        for b in &mut boxes {
                            *b = rot.apply_box(b);
                            if flip {
                                b.center.y = 2.0 * data.sensor.y - b.center.y;
                                b.yaw = crate::geometry::wrap_pi(-b.yaw);
                            }
                        }
                    }
                    let mut rng = derive_rng(cfg.seed, STREAM_SAMPLING, epoch, si);
                    let (anchors, targets) = select_anchors(&cloud, &boxes, cfg, n_anchor, &mut rng);
                    let out = head.forward_anchors(&cloud, &anchors);
                    let (loss, grad) = det_loss(&out.outputs, &targets);
                    if !loss.is_finite() {
                        return Err(Error::Numeric(format!("epoch {epoch}, scene {}: loss {loss}", s.id)));
                    }
                    let (_, gp) = head.mlp.backward(&out.tape.mlp, &grad, true);
                    Ok((loss, gp.expect("requested"), skipped))
                })
                .collect();
            let mut total = vec![0.0; head.mlp.params.len()];
            for r in results {
                let (loss, gp, skipped) = r?;
                loss_sum += loss;
                steps += 1;
                log.augment_skipped += skipped as usize;
                for (t, g) in total.iter_mut().zip(&gp) {
                    *t += g / batch.len() as f64;
                }
            }
            opt.step(&mut head.mlp.params, &total);
            if head.mlp.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!("non-finite detector parameters in epoch {epoch}")));
            }
        }
        let mean = loss_sum / steps.max(1) as f64;
        log::info!("det epoch {epoch}: loss {mean:.4}");
        log.epoch_loss.push(mean);
    }
    Ok((head, log))
}

/// The yaw and mirror flag that [`standard_augment`] draws from this stream.
fn augment_params(rng: &mut ChaCha8Rng) -> (f64, bool) {
    use rand::Rng;
    let yaw = rng.random_range(-PI..PI);
    let flip = rng.random_bool(0.5);
    (yaw, flip)
}

/// Per selected anchor: target row, with `target[0]` = 1 for positives, 0 for
/// negatives.
fn select_anchors(
    cloud: &PointCloud,
    boxes: &[OrientedBox],
    cfg: &DetTrainConfig,
    n_anchor: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<[f64; DET_OUTPUTS]>) {
    use rand::Rng;
    let mut anchors = Vec::new();
    let mut targets = Vec::new();
    let mut blocked = std::collections::HashSet::new();
    for b in boxes {
        let n = anchors_per_axis() as i64;
        let Some(home) = anchor_of(b.center.x, b.center.y) else { continue };
        let (hi, hj) = ((home / n as usize) as i64, (home % n as usize) as i64);
        for di in -2..=2 {
            for dj in -2..=2 {
                let (i, j) = (hi + di, hj + dj);
                if i < 0 || j < 0 || i >= n || j >= n {
                    continue;
                }
                let a = (i * n + j) as usize;
                let (ax, ay) = anchor_center(a);
                let d = (ax - b.center.x).hypot(ay - b.center.y);
                if d < POSITIVE_RADIUS {
                    anchors.push(a);
                    targets.push(encode_target(a, b));
                }
                if d < IGNORE_RADIUS {
                    blocked.insert(a);
                }
            }
        }
    }
    // Anchors with non-trivial support are the informative negatives.
    let mut occupied = vec![false; n_anchor];
    for p in &cloud.positions {
        if p.z > GATE_LOW {
            if let Some(a) = anchor_of(p.x, p.y) {
                occupied[a] = true;
            }
        }
    }
    let candidates: Vec<usize> = (0..n_anchor).filter(|&a| occupied[a] && !blocked.contains(&a)).collect();
    let take = cfg.negatives.min(candidates.len());
    let mut negs: Vec<usize> = sample(rng, candidates.len(), take).into_iter().map(|i| candidates[i]).collect();
    for _ in 0..cfg.random_negatives {
        let a = rng.random_range(0..n_anchor);
        if !blocked.contains(&a) {
            negs.push(a);
        }
    }
    for a in negs {
        anchors.push(a);
        targets.push([0.0; DET_OUTPUTS]);
    }
    (anchors, targets)
}

/// Balanced binary cross-entropy plus squared-error box regression on positives.
fn det_loss(outputs: &[f64], targets: &[[f64; DET_OUTPUTS]]) -> (f64, Vec<f64>) {
    let n_pos = targets.iter().filter(|t| t[0] > 0.5).count();
    let n_neg = targets.len() - n_pos;
    let mut grad = vec![0.0; outputs.len()];
    let mut loss = 0.0;
    for (r, t) in targets.iter().enumerate() {
        let o = &outputs[r * DET_OUTPUTS..(r + 1) * DET_OUTPUTS];
        let g = &mut grad[r * DET_OUTPUTS..(r + 1) * DET_OUTPUTS];
        let s = sigmoid(o[0]);
        if t[0] > 0.5 {
            let wpos = 1.0 / n_pos as f64;
            loss -= wpos * s.max(1e-12).ln();
            g[0] = wpos * (s - 1.0);
            for m in 1..DET_OUTPUTS {
                let d = o[m] - t[m];
                loss += wpos * d * d;
                g[m] = wpos * 2.0 * d;
            }
        } else {
            let wneg = 1.0 / n_neg.max(1) as f64;
            loss -= wneg * (1.0 - s).max(1e-12).ln();
            g[0] = wneg * s;
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn car_cloud(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = PointCloud::default();
        for _ in 0..300 {
            c.push(
                Vec3::new(rng.random_range(8.0..12.0), rng.random_range(-1.0..2.0), rng.random_range(0.0..2.0)),
                rng.random_range(0.0..1.0),
                1,
                1,
            );
        }
        c
    }

    #[test]
    fn empty_cloud_gives_bias_confidence() {
        let head = DetHead::new(1, 3).unwrap();
        let out = head.forward(&PointCloud::default());
        assert_eq!(out.proposals.len(), anchor_count());
        let s0 = out.proposals[0].score;
        assert!(out.proposals.iter().all(|p| p.score == s0 && p.score > 0.0 && p.score < 1.0));
    }

    #[test]
    fn decode_inverts_encode() {
        let b = OrientedBox::new(Vec3::new(10.3, -4.2, 0.9), BoxDims::new(1.7, 1.5, 4.4), 0.7).unwrap();
        let a = anchor_of(b.center.x, b.center.y).unwrap();
        let t = encode_target(a, &b);
        let d = decode(a, &t);
        assert!((d.center - b.center).norm() < 1e-9);
        assert!((d.dims.length - 4.4).abs() < 1e-9);
        let dy = crate::geometry::wrap_pi(d.yaw - b.yaw);
        assert!(dy.abs() < 1e-9 || (dy.abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let head = DetHead::new(1, 5).unwrap();
        let cloud = car_cloud(2);
        let anchors: Vec<usize> = [(9.0, 0.0), (11.0, 1.0), (9.0, 2.0), (13.0, -1.0)]
            .iter()
            .map(|&(x, y)| anchor_of(x, y).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..anchors.len() * DET_OUTPUTS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |c: &PointCloud| -> f64 { head.forward_anchors(c, &anchors).outputs.iter().zip(&w).map(|(a, b)| a * b).sum() };
        let out = head.forward_anchors(&cloud, &anchors);
        let (gp, gi) = head.backward_inputs(&cloud, &out.tape, &w).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for i in (0..cloud.len()).step_by(5) {
            for axis in 0..4 {
                let bump = |d: f64| {
                    let mut c = cloud.clone();
                    match axis {
                        0 => c.positions[i].x += d,
                        1 => c.positions[i].y += d,
                        2 => c.positions[i].z += d,
                        _ => c.intensity[i] += d,
                    }
                    f(&c)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = [gp[i].x, gp[i].y, gp[i].z, gi[i]][axis];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-3), "point {i} axis {axis}: {fd} vs {an}");
                checked += 1;
            }
        }
        assert!(checked >= 100);
    }

    #[test]
    fn nms_keeps_best_of_overlaps() {
        let mk = |x: f64, s: f64, a: usize| Proposal {
            anchor: a,
            logit: 0.0,
            score: s,
            bbox: OrientedBox::new(Vec3::new(x, 0.0, 1.0), ANCHOR_DIMS, 0.0).unwrap(),
        };
        let kept = nms(vec![mk(0.0, 0.5, 0), mk(0.3, 0.9, 1), mk(10.0, 0.2, 2)], 0.1);
        assert_eq!(kept.iter().map(|p| p.anchor).collect::<Vec<_>>(), vec![1, 2]);
    }
}
