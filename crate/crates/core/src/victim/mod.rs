//! Small attackable perception models: a per-point segmenter and an anchor-grid
//! car detector, both with exact input gradients.

pub mod checkpoint;
pub mod det;
pub mod mlp;
pub mod seg;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::dataset::Sample;

pub use checkpoint::{load_victim, save_victim};
pub use det::{DetHead, DetTrainConfig, Proposal};
pub use seg::{SegNet, SegTrainConfig, TrainLog};

/// A frozen model under attack.
#[derive(Debug, Clone, PartialEq)]
pub enum Victim {
    Seg(SegNet),
    Det(DetHead),
}

impl Victim {
    pub fn task(&self) -> &'static str {
        match self {
            Victim::Seg(_) => "seg",
            Victim::Det(_) => "det",
        }
    }

    pub fn as_seg(&self) -> Option<&SegNet> {
        match self {
            Victim::Seg(s) => Some(s),
            Victim::Det(_) => None,
        }
    }

    pub fn as_det(&self) -> Option<&DetHead> {
        match self {
            Victim::Det(d) => Some(d),
            Victim::Seg(_) => None,
        }
    }
}

/// Hook that may alter a training scene before the standard augmentation.
pub trait SceneAugment: Sync {
    /// Modifies `cloud` (a copy of `sample.cloud`). Returns false when nothing
    /// in the scene was eligible.
    fn augment(&self, sample: &Sample, cloud: &mut PointCloud, rng: &mut ChaCha8Rng) -> bool;
}

pub(crate) const STREAM_ADVERSARIAL: u64 = 11;
pub(crate) const STREAM_STANDARD: u64 = 12;
pub(crate) const STREAM_SAMPLING: u64 = 13;

/// Independent random stream for (seed, purpose, epoch, scene).
pub fn derive_rng(seed: u64, stream: u64, epoch: usize, scene: usize) -> ChaCha8Rng {
    let key = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
        .wrapping_add(scene as u64)
        .rotate_left(23);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng
}
