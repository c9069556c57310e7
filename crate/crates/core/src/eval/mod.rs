//! Adversarial augmentation and evaluation.

pub mod augment;
pub mod fields;
pub mod intensity;
pub mod metrics;
pub mod report;
