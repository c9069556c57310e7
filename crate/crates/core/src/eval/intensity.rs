//! Intensity corruptions for robustness evaluation. Positions are never touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::eval::metrics::{Confusion, MiouReport};
use crate::registry::{Named, Registry};
use crate::victim::SegNet;

pub trait IntensityTransform: Named + Send + Sync {
    /// Rewrites `tau` in place; the caller clips to [0, 1] afterwards.
    fn apply(&self, tau: &mut [f64], rng: &mut ChaCha8Rng);
}

macro_rules! transform {
    ($ty:ident, $name:literal, |$tau:ident, $rng:ident| $body:block) => {
        pub struct $ty;

        impl Named for $ty {
            fn name(&self) -> &str {
                $name
            }
        }

        impl IntensityTransform for $ty {
            #[allow(unused_variables)]
            fn apply(&self, $tau: &mut [f64], $rng: &mut ChaCha8Rng) $body
        }
    };
}

transform!(Identity, "none", |tau, rng| {});

transform!(AllZero, "all-0", |tau, rng| {
    tau.iter_mut().for_each(|t| *t = 0.0);
});

transform!(GaussianNoise, "gaussian-0.3", |tau, rng| {
    let n = Normal::new(0.0, 0.3).expect("valid std");
    tau.iter_mut().for_each(|t| *t += n.sample(rng));
});

transform!(UniformRandom, "uniform-0-1", |tau, rng| {
    tau.iter_mut().for_each(|t| *t = rng.random_range(0.0..1.0));
});

transform!(PositiveNoise, "noise-0-0.3", |tau, rng| {
    tau.iter_mut().for_each(|t| *t += rng.random_range(0.0..0.3));
});

transform!(SymmetricNoise, "noise-pm-0.3", |tau, rng| {
    tau.iter_mut().for_each(|t| *t += rng.random_range(-0.3..0.3));
});

// One constant per cloud, either -0.3 or +0.3.
transform!(RandomShift, "shift-pm-0.3", |tau, rng| {
    let s = if rng.random_bool(0.5) { 0.3 } else { -0.3 };
    tau.iter_mut().for_each(|t| *t += s);
});

/// The seven corruptions, by name.
pub fn intensity_transforms() -> Registry<dyn IntensityTransform> {
    let mut r: Registry<dyn IntensityTransform> = Registry::new("intensity transform");
    r.register(Box::new(Identity))
        .register(Box::new(AllZero))
        .register(Box::new(GaussianNoise))
        .register(Box::new(UniformRandom))
        .register(Box::new(PositiveNoise))
        .register(Box::new(SymmetricNoise))
        .register(Box::new(RandomShift));
    r
}

/// Row order of the suite's report.
pub const SUITE_ORDER: [&str; 7] = ["none", "all-0", "gaussian-0.3", "uniform-0-1", "noise-0-0.3", "noise-pm-0.3", "shift-pm-0.3"];

/// Applies `t` to a copy of every scene's intensities, deterministic in `(seed, scene)`.
pub fn corrupt(data: &Dataset, t: &dyn IntensityTransform, seed: u64) -> Dataset {
    let mut out = data.clone();
    out.samples.par_iter_mut().enumerate().for_each(|(i, s)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        t.apply(&mut s.cloud.intensity, &mut rng);
        s.cloud.intensity.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    });
    out
}

/// Confusion matrix of `net` over a dataset.
pub fn confusion(net: &SegNet, data: &Dataset) -> Result<Confusion> {
    let per_scene: Vec<Result<Confusion>> = data
        .samples
        .par_iter()
        .map(|s| {
            let mut c = Confusion::new(net.num_classes());
            c.add_all(&s.cloud.semantic, &net.predict(&s.cloud))?;
            Ok(c)
        })
        .collect();
    let mut total = Confusion::new(net.num_classes());
    for c in per_scene {
        total.merge(&c?);
    }
    Ok(total)
}

/// mIoU report of `net` under every transform, in [`SUITE_ORDER`].
pub fn intensity_suite(net: &SegNet, data: &Dataset, seed: u64) -> Result<Vec<(String, MiouReport)>> {
    let reg = intensity_transforms();
    SUITE_ORDER
        .iter()
        .map(|&name| {
            let t = reg.get(name)?;
            Ok((name.to_string(), confusion(net, &corrupt(data, t, seed))?.miou(None)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, Domain, SceneConfig};

    #[test]
    fn transforms_touch_only_intensity() {
        let data = generate_dataset(0..2, Domain::Normal, &SceneConfig::default()).unwrap();
        for t in intensity_transforms().iter() {
            let out = corrupt(&data, t, 4);
            for (a, b) in data.samples.iter().zip(&out.samples) {
                assert_eq!(a.cloud.positions, b.cloud.positions);
                assert_eq!(a.cloud.semantic, b.cloud.semantic);
                assert!(b.cloud.intensity.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            assert_eq!(out, corrupt(&data, t, 4), "{} is not deterministic", t.name());
        }
        let zero = corrupt(&data, &AllZero, 0);
        assert!(zero.samples.iter().all(|s| s.cloud.intensity.iter().all(|&v| v == 0.0)));
        assert_eq!(corrupt(&data, &Identity, 0), data);
    }

    #[test]
    fn shift_is_one_constant_per_cloud() {
        let mut tau = vec![0.5; 100];
        RandomShift.apply(&mut tau, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(tau.iter().all(|&v| v == tau[0]));
        assert!((tau[0] - 0.8).abs() < 1e-12 || (tau[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn suite_has_seven_rows() {
        assert_eq!(intensity_transforms().len(), 7);
        let reg = intensity_transforms();
        assert!(SUITE_ORDER.iter().all(|n| reg.contains(n)));
    }
}
