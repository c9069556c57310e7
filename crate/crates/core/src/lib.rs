//! Adversarial vector fields for LiDAR perception models.
//!
//! Pieces: geometry and I/O primitives, the vector-field deformation, rotation
//! grouping, a compact victim segmentation/detection model, the field attack,
//! point-wise baseline attacks, a synthetic scene generator, and adversarial
//! augmentation with evaluation.

pub mod attack;
pub mod baseline;
pub mod cloud;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod io;
pub mod registry;
pub mod rotation;
pub mod sim;
pub mod victim;
pub mod spatial;

pub use cloud::{AttackClasses, ClassId, ClassTable, PointCloud};
pub use error::{Error, Result};
pub use field::{AnchorMode, FieldBank, VectorField};
pub use geometry::{BoxDims, OrientedBox, Point3, RigidTransform, Vec3};
