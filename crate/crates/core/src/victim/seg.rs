//! Per-point semantic segmenter built on smooth neighborhood statistics.
//!
//! Every point looks at the points within radius ρ of it through the kernel
//! `k(d) = (1 − d²/ρ²)²` (itself included) and forms seven features:
//! offset to the kernel-weighted centroid (÷ρ), height, intensity, log kernel
//! mass, and kernel-weighted mean intensity. A tanh MLP maps them to class
//! logits. All features are smooth in the inputs, so input gradients are exact.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mlp::{softmax_rows, Adam, Mlp, MlpTape, CHUNK};
use super::{derive_rng, SceneAugment, STREAM_ADVERSARIAL, STREAM_SAMPLING, STREAM_STANDARD};
use crate::cloud::{ClassId, ClassTable, PointCloud};
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::spatial::UniformGrid;

pub const SEG_FEATURES: usize = 7;
pub const HIDDEN: usize = 64;
pub const DEFAULT_RADIUS: f64 = 0.5;

const HEIGHT_SCALE: f64 = 0.3;
const MASS_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    pub classes: ClassTable,
    pub radius: f64,
    pub mlp: Mlp,
}

/// Neighborhood statistics of the query points, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct SegTape {
    pub n_cloud: usize,
    pub queries: Vec<usize>,
    /// CSR offsets into `neighbors` per query.
    offsets: Vec<usize>,
    /// `(cloud index, u = d²/ρ²)`.
    neighbors: Vec<(u32, f64)>,
    mass: Vec<f64>,
    centroid: Vec<Vec3>,
    mean_int: Vec<f64>,
    mlp: MlpTape,
}

/// Result of a forward pass over a set of query points.
#[derive(Debug, Clone)]
pub struct SegOutput {
    /// `queries × C` logits.
    pub logits: Vec<f64>,
    /// `queries × C` probabilities.
    pub probs: Vec<f64>,
    pub tape: SegTape,
}

struct Stats {
    neighbors: Vec<(u32, f64)>,
    mass: f64,
    centroid: Vec3,
    mean_int: f64,
}

impl SegNet {
    pub fn new(classes: ClassTable, seed: u64) -> Result<Self> {
        let mlp = Mlp::init(&[SEG_FEATURES, HIDDEN, HIDDEN, classes.len()], seed)?;
        Ok(Self { classes, radius: DEFAULT_RADIUS, mlp })
    }

    /// All parameters zero: uniform predictions everywhere.
    pub fn zeros(classes: ClassTable) -> Result<Self> {
        let mlp = Mlp::zeros(&[SEG_FEATURES, HIDDEN, HIDDEN, classes.len()])?;
        Ok(Self { classes, radius: DEFAULT_RADIUS, mlp })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn stats(&self, cloud: &PointCloud, grid: &UniformGrid, q: usize, keep: bool) -> Stats {
        let p = cloud.positions[q];
        let inv_r2 = 1.0 / (self.radius * self.radius);
        let mut w = 0.0;
        let mut s = Vec3::ZERO;
        let mut t = 0.0;
        let mut neighbors = Vec::new();
        grid.for_each_within(p, self.radius, |j, d2| {
            let u = d2 * inv_r2;
            let k = (1.0 - u) * (1.0 - u);
            w += k;
            s += cloud.positions[j] * k;
            t += k * cloud.intensity[j];
            if keep {
                neighbors.push((j as u32, u));
            }
        });
        Stats { neighbors, mass: w, centroid: s / w, mean_int: t / w }
    }

    fn features_of(&self, cloud: &PointCloud, q: usize, st: &Stats, out: &mut [f64]) {
        let p = cloud.positions[q];
        let rel = (p - st.centroid) / self.radius;
        out[0] = rel.x;
        out[1] = rel.y;
        out[2] = rel.z;
        out[3] = p.z * HEIGHT_SCALE;
        out[4] = cloud.intensity[q];
        out[5] = st.mass.ln_1p() * MASS_SCALE;
        out[6] = st.mean_int;
    }

    /// Forward pass for `queries`, with neighborhoods taken from the whole cloud.
    pub fn forward_queries(&self, cloud: &PointCloud, queries: &[usize]) -> SegOutput {
        let grid = UniformGrid::new(&cloud.positions, self.radius);
        self.forward_with_grid(cloud, &grid, queries, true)
    }

    fn forward_with_grid(&self, cloud: &PointCloud, grid: &UniformGrid, queries: &[usize], keep: bool) -> SegOutput {
        let c = self.num_classes();
        let stats: Vec<Stats> = queries.par_chunks(CHUNK)
            .flat_map_iter(|qs| qs.iter().map(|&q| self.stats(cloud, grid, q, keep)).collect::<Vec<_>>())
            .collect();
        let mut feats = vec![0.0; queries.len() * SEG_FEATURES];
        for ((&q, st), f) in queries.iter().zip(&stats).zip(feats.chunks_mut(SEG_FEATURES)) {
            self.features_of(cloud, q, st, f);
        }
        let mlp = self.mlp.forward(&feats);
        let logits = mlp.output().to_vec();
        let probs = softmax_rows(&logits, c);
        let mut tape = SegTape { n_cloud: cloud.len(), queries: queries.to_vec(), mlp, ..SegTape::default() };
        if keep {
            tape.offsets.push(0);
            for st in stats {
                tape.neighbors.extend_from_slice(&st.neighbors);
                tape.offsets.push(tape.neighbors.len());
                tape.mass.push(st.mass);
                tape.centroid.push(st.centroid);
                tape.mean_int.push(st.mean_int);
            }
        }
        SegOutput { logits, probs, tape }
    }

    /// Class probabilities for every point (`n × C`, row-major).
    pub fn forward(&self, cloud: &PointCloud) -> Vec<f64> {
        if cloud.is_empty() {
            return Vec::new();
        }
        let grid = UniformGrid::new(&cloud.positions, self.radius);
        let all: Vec<usize> = (0..cloud.len()).collect();
        self.forward_with_grid(cloud, &grid, &all, false).probs
    }

    /// Arg-max class per point.
    pub fn predict(&self, cloud: &PointCloud) -> Vec<ClassId> {
        argmax_rows(&self.forward(cloud), self.num_classes())
    }

    /// Gradient of a scalar loss w.r.t. every point's position and intensity,
    /// given `dL/dlogits` for the taped queries.
    pub fn backward_inputs(&self, cloud: &PointCloud, tape: &SegTape, grad_logits: &[f64]) -> Result<(Vec<Vec3>, Vec<f64>)> {
        if tape.offsets.len() != tape.queries.len() + 1 || tape.n_cloud != cloud.len() {
            return Err(Error::InvalidArgument("backward needs the tape of a forward pass over this cloud".into()));
        }
        if grad_logits.len() != tape.queries.len() * self.num_classes() {
            return Err(Error::LengthMismatch(format!(
                "{} logit gradients for {} queries",
                grad_logits.len(),
                tape.queries.len()
            )));
        }
        let (gf, _) = self.mlp.backward(&tape.mlp, grad_logits, false);
        let mut gp = vec![Vec3::ZERO; cloud.len()];
        let mut gi = vec![0.0; cloud.len()];
        let rho = self.radius;
        let inv_r2 = 1.0 / (rho * rho);
        for (qi, &q) in tape.queries.iter().enumerate() {
            let g = &gf[qi * SEG_FEATURES..(qi + 1) * SEG_FEATURES];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let p = cloud.positions[q];
            let (w, c, m) = (tape.mass[qi], tape.centroid[qi], tape.mean_int[qi]);
            let g_rel = Vec3::new(g[0], g[1], g[2]) / rho;
            gp[q] += g_rel;
            gp[q].z += g[3] * HEIGHT_SCALE;
            gi[q] += g[4];
            // rel = (p − S/W)/ρ, mass feature = ln(1+W)·s, mean = T/W.
            let g_c = -g_rel;
            let g_s = g_c / w;
            let g_t = g[6] / w;
            let g_w = -g_c.dot(c) / w - g[6] * m / w + g[5] * MASS_SCALE / (1.0 + w);
            for &(j, u) in &tape.neighbors[tape.offsets[qi]..tape.offsets[qi + 1]] {
                let j = j as usize;
                let pj = cloud.positions[j];
                let k = (1.0 - u) * (1.0 - u);
                gp[j] += g_s * k;
                gi[j] += g_t * k;
                let g_k = g_s.dot(pj) + g_t * cloud.intensity[j] + g_w;
                // dk/du = −2(1−u); du/dp_q = 2(p_q − p_j)/ρ².
                let a = g_k * -2.0 * (1.0 - u) * 2.0 * inv_r2;
                let d = (p - pj) * a;
                gp[q] += d;
                gp[j] -= d;
            }
        }
        Ok((gp, gi))
    }
}

pub fn argmax_rows(probs: &[f64], c: usize) -> Vec<ClassId> {
    probs
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as ClassId
        })
        .collect()
}

/// Settings for [`train_seg`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Points sampled per present class per scene and epoch.
    pub per_class: usize,
    /// Additional points sampled uniformly per scene and epoch.
    pub uniform: usize,
    /// Scenes whose gradients are summed before each Adam step.
    pub batch: usize,
    /// Global yaw rotation about the sensor and random mirror.
    pub standard_aug: bool,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self { epochs: 12, lr: 3e-3, seed: 0, per_class: 96, uniform: 192, batch: 4, standard_aug: true }
    }
}

/// Per-epoch summary of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    /// Scenes for which the augmentation hook found nothing to change.
    pub augment_skipped: usize,
}

/// Applies the standard geometric augmentation in place.
pub fn standard_augment(cloud: &mut PointCloud, sensor: Vec3, rng: &mut ChaCha8Rng) {
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let flip = rng.random_bool(0.5);
    cloud.transform(&RigidTransform::about(sensor, yaw));
    if flip {
        for p in &mut cloud.positions {
            p.y = 2.0 * sensor.y - p.y;
        }
    }
}

fn sample_queries(cloud: &PointCloud, n_classes: usize, per_class: usize, uniform: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in cloud.semantic.iter().enumerate() {
        if (c as usize) < n_classes {
            by_class[c as usize].push(i);
        }
    }
    let mut q = Vec::new();
    for members in &by_class {
        let take = per_class.min(members.len());
        if take > 0 {
            q.extend(sample(rng, members.len(), take).into_iter().map(|i| members[i]));
        }
    }
    if !cloud.is_empty() {
        for _ in 0..uniform {
            q.push(rng.random_range(0..cloud.len()));
        }
    }
    q
}

/// Cross-entropy (mean over rows) and its gradient w.r.t. the logits.
pub fn cross_entropy(probs: &[f64], labels: &[ClassId], c: usize) -> (f64, Vec<f64>, usize) {
    let n = labels.len().max(1) as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = probs.to_vec();
    for (r, &y) in labels.iter().enumerate() {
        let row = &probs[r * c..(r + 1) * c];
        loss -= row[y as usize].max(1e-12).ln();
        if argmax_rows(row, c)[0] == y {
            correct += 1;
        }
        grad[r * c + y as usize] -= 1.0;
    }
    for g in &mut grad {
        *g /= n;
    }
    (loss / n, grad, correct)
}

/// Trains a segmenter with Adam on class-stratified point samples.
///
/// Every scene and epoch gets its own random streams: one for the optional
/// augmentation hook, one for the standard augmentation and one for point
/// sampling. A hook that leaves the cloud unchanged therefore reproduces the
/// unaugmented run exactly.
pub fn train_seg(data: &Dataset, cfg: &SegTrainConfig, hook: Option<&dyn SceneAugment>) -> Result<(SegNet, TrainLog)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("batch must be >= 1 and lr > 0".into()));
    }
    let mut net = SegNet::new(data.classes.clone(), cfg.seed)?;
    let c = net.num_classes();
    let mut opt = Adam::new(net.mlp.params.len(), cfg.lr);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut seen, mut correct) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch) {
            let results: Vec<Result<(f64, usize, usize, Vec<f64>, bool)>> = batch
                .par_iter()
                .map(|&si| {
                    let s: &Sample = &data.samples[si];
                    let mut cloud = s.cloud.clone();
                    let mut skipped = false;
                    if let Some(h) = hook {
                        let mut rng = derive_rng(cfg.seed, STREAM_ADVERSARIAL, epoch, si);
                        skipped = !h.augment(s, &mut cloud, &mut rng);
                    }
                    if cfg.standard_aug {
                        let mut rng = derive_rng(cfg.seed, STREAM_STANDARD, epoch, si);
                        standard_augment(&mut cloud, data.sensor, &mut rng);
                    }
                    let mut rng = derive_rng(cfg.seed, STREAM_SAMPLING, epoch, si);
                    let q = sample_queries(&cloud, c, cfg.per_class, cfg.uniform, &mut rng);
                    let out = net.forward_queries(&cloud, &q);
                    let labels: Vec<ClassId> = q.iter().map(|&i| cloud.semantic[i]).collect();
                    let (loss, grad, ok) = cross_entropy(&out.probs, &labels, c);
                    if !loss.is_finite() {
                        return Err(Error::Numeric(format!("epoch {epoch}, scene {}: loss {loss}", s.id)));
                    }
                    let (_, gp) = net.mlp.backward(&out.tape.mlp, &grad, true);
                    Ok((loss, q.len(), ok, gp.expect("requested"), skipped))
                })
                .collect();
            let mut total = vec![0.0; net.mlp.params.len()];
            for r in results {
                let (loss, n, ok, gp, skipped) = r?;
                loss_sum += loss * n as f64;
                seen += n;
                correct += ok;
                log.augment_skipped += skipped as usize;
                for (t, g) in total.iter_mut().zip(&gp) {
                    *t += g / batch.len() as f64;
                }
            }
            opt.step(&mut net.mlp.params, &total);
            if net.mlp.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!("non-finite parameters after epoch {epoch} step {}", opt.steps())));
            }
        }
        let mean = loss_sum / seen.max(1) as f64;
        log::info!("seg epoch {epoch}: loss {mean:.4}, acc {:.3}", correct as f64 / seen.max(1) as f64);
        log.epoch_loss.push(mean);
        log.epoch_accuracy.push(correct as f64 / seen.max(1) as f64);
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = PointCloud::default();
        for _ in 0..n {
            c.push(
                Vec3::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)),
                rng.random_range(0.0..1.0),
                rng.random_range(0..5),
                0,
            );
        }
        c
    }

    fn scalar_loss(net: &SegNet, cloud: &PointCloud, q: &[usize], w: &[f64]) -> f64 {
        net.forward_queries(cloud, q).logits.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let net = SegNet::new(ClassTable::desk(), 4).unwrap();
        let cloud = random_cloud(1, 300);
        let q: Vec<usize> = (0..300).step_by(3).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..q.len() * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = net.forward_queries(&cloud, &q);
        let (gp, gi) = net.backward_inputs(&cloud, &out.tape, &w).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for i in (0..300).step_by(2) {
            for axis in 0..4 {
                let eval = |delta: f64| {
                    let mut c = cloud.clone();
                    match axis {
                        0 => c.positions[i].x += delta,
                        1 => c.positions[i].y += delta,
                        2 => c.positions[i].z += delta,
                        _ => c.intensity[i] += delta,
                    }
                    scalar_loss(&net, &c, &q, &w)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = match axis {
                    0 => gp[i].x,
                    1 => gp[i].y,
                    2 => gp[i].z,
                    _ => gi[i],
                };
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-2), "point {i} axis {axis}: fd {fd} vs {an}");
                checked += 1;
            }
        }
        assert!(checked >= 100);
    }

    #[test]
    fn zero_parameters_give_uniform_probabilities() {
        let net = SegNet::zeros(ClassTable::desk()).unwrap();
        let p = net.forward(&random_cloud(3, 50));
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn rows_sum_to_one_and_permutation_commutes() {
        let net = SegNet::new(ClassTable::desk(), 5).unwrap();
        let cloud = random_cloud(4, 200);
        let p = net.forward(&cloud);
        for row in p.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let perm: Vec<usize> = (0..200).rev().collect();
        let q = net.forward(&cloud.subset(&perm));
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..5 {
                assert!((q[k * 5 + c] - p[i * 5 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn horizontal_translation_keeps_logits() {
        let net = SegNet::new(ClassTable::desk(), 6).unwrap();
        let cloud = random_cloud(5, 200);
        let mut moved = cloud.clone();
        moved.transform(&RigidTransform::new(0.0, Vec3::new(6.0, -4.0, 0.0)));
        let all: Vec<usize> = (0..200).collect();
        let a = net.forward_queries(&cloud, &all).logits;
        let b = net.forward_queries(&moved, &all).logits;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_upstream_and_constant_model_give_zero_gradient() {
        let net = SegNet::new(ClassTable::desk(), 7).unwrap();
        let cloud = random_cloud(6, 100);
        let q: Vec<usize> = (0..100).collect();
        let out = net.forward_queries(&cloud, &q);
        let (gp, gi) = net.backward_inputs(&cloud, &out.tape, &vec![0.0; 500]).unwrap();
        assert!(gp.iter().all(|v| *v == Vec3::ZERO) && gi.iter().all(|&v| v == 0.0));

        let mut flat = net.clone();
        let n = flat.mlp.params.len();
        // Last layer: 64×5 weights then 5 biases.
        for p in &mut flat.mlp.params[n - 5 * 64 - 5..n - 5] {
            *p = 0.0;
        }
        let out = flat.forward_queries(&cloud, &q);
        let (gp, gi) = flat.backward_inputs(&cloud, &out.tape, &vec![1.0; 500]).unwrap();
        assert!(gp.iter().all(|v| *v == Vec3::ZERO) && gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let net = SegNet::new(ClassTable::desk(), 7).unwrap();
        let cloud = random_cloud(6, 100);
        let out = net.forward_queries(&cloud, &[0, 1]);
        assert!(net.backward_inputs(&random_cloud(1, 20), &out.tape, &[0.0; 10]).is_err());
        assert!(net.backward_inputs(&cloud, &SegTape::default(), &[]).is_err());
    }

    #[test]
    fn cross_entropy_matches_closed_form() {
        let (l, g, _) = cross_entropy(&[0.5, 0.25, 0.25], &[0], 3);
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert!((g[0] + 0.5).abs() < 1e-12 && (g[1] - 0.25).abs() < 1e-12);
    }
}
