//! Evaluation runs that write CSV reports plus a plain-text summary.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::attack::apply_bank;
use crate::cloud::ClassTable;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::intensity::{confusion, intensity_suite};
use crate::eval::metrics::{attack_success_rate, average_precision, distance_binned, Confusion, MiouReport, SceneDetections, BIN_WIDTH};
use crate::field::FieldBank;
use crate::geometry::OrientedBox;
use crate::victim::{DetHead, SegNet, Victim};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Miou,
    Ap,
    Asr,
    DistanceBins,
    IntensitySuite,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "miou" => Ok(Metric::Miou),
            "ap" => Ok(Metric::Ap),
            "asr" => Ok(Metric::Asr),
            "distance-bins" => Ok(Metric::DistanceBins),
            "intensity-suite" => Ok(Metric::IntensitySuite),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(Metric::parse).collect()
    }

    fn task(&self) -> &'static str {
        match self {
            Metric::Ap | Metric::Asr => "det",
            _ => "seg",
        }
    }
}

/// Detections at or below this confidence are dropped before AP / ASR.
pub const MIN_SCORE: f64 = 0.05;
/// Confidence a detection needs to count for ASR.
pub const ASR_SCORE: f64 = 0.5;
/// Ground truth with fewer points is ignored in AP.
pub const MIN_GT_POINTS: usize = 5;
pub const ASR_IOU: f64 = 0.7;

pub struct EvalOptions<'a> {
    pub metrics: Vec<Metric>,
    pub seed: u64,
    /// Bank applied for attacked rows and ASR.
    pub bank: Option<&'a FieldBank>,
    pub k: usize,
}

pub fn miou_csv(rows: &[(&str, &MiouReport)], classes: &ClassTable) -> String {
    let mut s = String::from("condition,class,iou\n");
    for (label, r) in rows {
        for (c, iou) in r.per_class.iter().enumerate() {
            let name = classes.name(c as u16).unwrap_or("?");
            let _ = writeln!(s, "{label},{name},{}", iou.map_or("nan".into(), |v| v.to_string()));
        }
        let _ = writeln!(s, "{label},mean,{}", r.mean.map_or("nan".into(), |v| v.to_string()));
    }
    s
}

/// Long format: one row per bin and class, plus the point count per bin.
pub fn distance_bins_csv(bins: &[Confusion], overflow: u64, classes: &ClassTable) -> String {
    let mut s = String::from("bin_start,bin_end,class,iou,points\n");
    for (b, conf) in bins.iter().enumerate() {
        let (lo, hi) = (b as f64 * BIN_WIDTH, (b + 1) as f64 * BIN_WIDTH);
        for c in 0..classes.len() {
            let iou = conf.iou(c).map_or("nan".into(), |v| v.to_string());
            let _ = writeln!(s, "{lo},{hi},{},{iou},{}", classes.name(c as u16).unwrap_or("?"), conf.total());
        }
    }
    let _ = writeln!(s, "# points beyond the last bin: {overflow}");
    s
}

/// Detections above [`MIN_SCORE`] with the scene's ground truth split by point support.
pub fn detection_scenes(head: &DetHead, data: &Dataset) -> Vec<SceneDetections> {
    data.samples
        .par_iter()
        .map(|s| {
            let dets = head.detect(&s.cloud, MIN_SCORE);
            let (mut gt, mut ignore) = (Vec::new(), Vec::new());
            for b in s.boxes_of(head.class) {
                if s.cloud.indices_in_box(&b.bbox).len() >= MIN_GT_POINTS {
                    gt.push(b.bbox);
                } else {
                    ignore.push(b.bbox);
                }
            }
            SceneDetections { detections: dets.iter().map(|d| (d.score, d.bbox)).collect(), gt, ignore }
        })
        .collect()
}

fn confident(scenes: &[SceneDetections]) -> Vec<Vec<OrientedBox>> {
    scenes.iter().map(|s| s.detections.iter().filter(|(sc, _)| *sc > ASR_SCORE).map(|(_, b)| *b).collect()).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Error::io(p, e))
}

/// Runs the requested metrics and writes `<metric>.csv` files and `summary.txt` into `out`.
pub fn run_eval(victim: &Victim, data: &Dataset, opts: &EvalOptions, out: &Path) -> Result<String> {
    for m in &opts.metrics {
        if m.task() != victim.task() {
            return Err(Error::InvalidArgument(format!("metric {m:?} needs a {} victim", m.task())));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let attacked = opts.bank.map(|b| apply_bank(data, b, opts.k)).transpose()?;
    let mut summary = String::new();
    let _ = writeln!(summary, "scenes: {}  domain: {}  task: {}", data.len(), data.domain, victim.task());
    match victim {
        Victim::Seg(net) => eval_seg(net, data, attacked.as_ref(), opts, out, &mut summary)?,
        Victim::Det(head) => eval_det(head, data, attacked.as_ref(), opts, out, &mut summary)?,
    }
    write(out, "summary.txt", &summary)?;
    Ok(summary)
}

fn eval_seg(net: &SegNet, data: &Dataset, attacked: Option<&Dataset>, opts: &EvalOptions, out: &Path, summary: &mut String) -> Result<()> {
    let classes = &data.classes;
    if opts.metrics.contains(&Metric::Miou) {
        let clean = confusion(net, data)?.miou(None);
        let mut rows = vec![("clean", &clean)];
        let adv = attacked.map(|a| confusion(net, a).map(|c| c.miou(None))).transpose()?;
        if let Some(a) = &adv {
            rows.push(("attacked", a));
        }
        write(out, "miou.csv", &miou_csv(&rows, classes))?;
        for (label, r) in &rows {
            let _ = writeln!(summary, "mIoU ({label}): {}", r.mean.map_or("n/a".into(), |v| format!("{:.4}", v)));
        }
    }
    if opts.metrics.contains(&Metric::DistanceBins) {
        let per_scene = data
            .samples
            .par_iter()
            .map(|s| distance_binned(&s.cloud.positions, &s.cloud.semantic, &net.predict(&s.cloud), data.sensor, classes.len()))
            .collect::<Result<Vec<_>>>()?;
        let mut bins = vec![Confusion::new(classes.len()); per_scene.first().map_or(0, |p| p.0.len())];
        let mut overflow = 0;
        for (b, o) in per_scene {
            bins.iter_mut().zip(&b).for_each(|(acc, x)| acc.merge(x));
            overflow += o;
        }
        write(out, "distance_bins.csv", &distance_bins_csv(&bins, overflow, classes))?;
    }
    if opts.metrics.contains(&Metric::IntensitySuite) {
        let rows = intensity_suite(net, data, opts.seed)?;
        let refs: Vec<(&str, &MiouReport)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
        write(out, "intensity_suite.csv", &miou_csv(&refs, classes))?;
        for (n, r) in &rows {
            let _ = writeln!(summary, "intensity {n}: mIoU {}", r.mean.map_or("n/a".into(), |v| format!("{:.4}", v)));
        }
    }
    Ok(())
}

fn eval_det(head: &DetHead, data: &Dataset, attacked: Option<&Dataset>, opts: &EvalOptions, out: &Path, summary: &mut String) -> Result<()> {
    let clean = detection_scenes(head, data);
    if opts.metrics.contains(&Metric::Ap) {
        let mut s = String::from("condition,iou_threshold,ap\n");
        let adv = attacked.map(|a| detection_scenes(head, a));
        for thr in [0.5, 0.7] {
            let ap = average_precision(&clean, thr);
            let _ = writeln!(s, "clean,{thr},{ap}");
            let _ = writeln!(summary, "AP@{thr} (clean): {ap:.4}");
            if let Some(a) = &adv {
                let ap = average_precision(a, thr);
                let _ = writeln!(s, "attacked,{thr},{ap}");
                let _ = writeln!(summary, "AP@{thr} (attacked): {ap:.4}");
            }
        }
        write(out, "ap.csv", &s)?;
    }
    if opts.metrics.contains(&Metric::Asr) {
        let a = attacked.ok_or_else(|| Error::InvalidArgument("ASR needs a bank to attack with".into()))?;
        let adv = detection_scenes(head, a);
        let gt: Vec<Vec<OrientedBox>> = clean.iter().map(|s| s.gt.clone()).collect();
        let asr = attack_success_rate(&gt, &confident(&clean), &confident(&adv), ASR_IOU)?;
        let text = asr.map_or("nan".into(), |v| v.to_string());
        write(out, "asr.csv", &format!("iou_threshold,asr_percent\n{ASR_IOU},{text}\n"))?;
        let _ = writeln!(summary, "ASR@{ASR_IOU}: {text}%");
    }
    Ok(())
}
