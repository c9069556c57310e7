//! Labeled scenes on disk and in memory.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! meta.txt              key = value header (classes, sensor origin, scene ids)
//! velodyne/000000.bin   x y z τ as little-endian f32
//! labels/000000.label   (instance << 16) | class, little-endian u32
//! boxes/000000.txt      one ground-truth box per row
//! ```

use std::path::Path;

use crate::cloud::{ClassId, ClassTable, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point3, Vec3};
use crate::io::{read_boxes, read_labeled, write_boxes, write_labeled, KeyValues, LabeledBox};

pub const DATASET_FORMAT: &str = "advfield-dataset";

/// One labeled sweep with its ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Scene seed (or any stable id).
    pub id: u64,
    pub cloud: PointCloud,
    pub boxes: Vec<LabeledBox>,
}

impl Sample {
    pub fn boxes_of(&self, class: ClassId) -> impl Iterator<Item = &LabeledBox> {
        self.boxes.iter().filter(move |b| b.class == class)
    }

    pub fn oriented_boxes_of(&self, class: ClassId) -> Vec<OrientedBox> {
        self.boxes_of(class).map(|b| b.bbox).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: ClassTable,
    pub sensor: Point3,
    /// Free-form tag such as `normal`, `rare` or `damaged`.
    pub domain: String,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Scenes at the given positions, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            sensor: self.sensor,
            domain: self.domain.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["velodyne", "labels", "boxes"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut meta = KeyValues::new();
        meta.set("format", DATASET_FORMAT);
        meta.set("classes", self.classes.names().join(","));
        meta.set("sensor", format!("{:?},{:?},{:?}", self.sensor.x, self.sensor.y, self.sensor.z));
        meta.set("domain", &self.domain);
        meta.set("scenes", self.samples.len());
        meta.set("ids", self.samples.iter().map(|s| s.id.to_string()).collect::<Vec<_>>().join(","));
        meta.write(&dir.join("meta.txt"))?;
        for (i, s) in self.samples.iter().enumerate() {
            let stem = format!("{i:06}");
            write_labeled(
                &s.cloud,
                &dir.join("velodyne").join(format!("{stem}.bin")),
                &dir.join("labels").join(format!("{stem}.label")),
            )?;
            write_boxes(&s.boxes, &self.classes, &dir.join("boxes").join(format!("{stem}.txt")))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Dataset> {
        let meta = KeyValues::read(&dir.join("meta.txt"))?;
        let format = meta.require("format")?;
        if format != DATASET_FORMAT {
            return Err(Error::Format(format!("{}: not a dataset (format `{format}`)", dir.display())));
        }
        let names: Vec<&str> = meta.require("classes")?.split(',').collect();
        let classes = ClassTable::new(&names)?;
        let sensor = parse_vec3(meta.require("sensor")?)?;
        let n: usize = meta.parse_key("scenes")?;
        let ids: Vec<u64> = match meta.get("ids") {
            Some(s) if !s.is_empty() => s
                .split(',')
                .map(|t| t.parse().map_err(|_| Error::Format(format!("bad scene id `{t}`"))))
                .collect::<Result<_>>()?,
            _ => (0..n as u64).collect(),
        };
        if ids.len() != n {
            return Err(Error::LengthMismatch(format!("{} scene ids for {n} scenes", ids.len())));
        }
        let mut samples = Vec::with_capacity(n);
        for (i, id) in ids.into_iter().enumerate() {
            let stem = format!("{i:06}");
            let cloud = read_labeled(
                &dir.join("velodyne").join(format!("{stem}.bin")),
                &dir.join("labels").join(format!("{stem}.label")),
            )?;
            cloud.validate(Some(&classes))?;
            let boxes = read_boxes(&dir.join("boxes").join(format!("{stem}.txt")), &classes)?;
            samples.push(Sample { id, cloud, boxes });
        }
        Ok(Dataset { classes, sensor, domain: meta.get("domain").unwrap_or("unknown").to_string(), samples })
    }
}

pub fn parse_vec3(s: &str) -> Result<Vec3> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad vector `{s}`"))))
        .collect::<Result<_>>()?;
    match v.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(Error::Format(format!("expected 3 components in `{s}`"))),
    }
}
