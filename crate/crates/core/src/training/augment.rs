use rand::Rng;

use crate::error::{Error, Result};

/// Time and frequency stripe masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpecAugment {
    pub time_masks: usize,
    pub freq_masks: usize,
    pub max_time: usize,
    pub max_freq: usize,
}

impl SpecAugment {
    pub fn is_identity(&self) -> bool {
        (self.time_masks == 0 || self.max_time == 0) && (self.freq_masks == 0 || self.max_freq == 0)
    }
}

/// Zeroes random stripes of a row-major `frames x dim` feature matrix in
/// place. Stripe widths are uniform on `0..=max`; starts are uniform over
/// the positions where the stripe fits.
pub fn spec_augment(
    features: &mut [f32],
    frames: usize,
    dim: usize,
    cfg: &SpecAugment,
    rng: &mut impl Rng,
) -> Result<()> {
    if features.len() != frames * dim {
        return Err(Error::dim(format!(
            "{} values for {frames} x {dim} features",
            features.len()
        )));
    }
    if (cfg.time_masks > 0 && cfg.max_time > frames) || (cfg.freq_masks > 0 && cfg.max_freq > dim) {
        return Err(Error::config(format!(
            "mask widths ({}, {}) exceed feature extent ({frames}, {dim})",
            cfg.max_time, cfg.max_freq
        )));
    }
    for _ in 0..cfg.time_masks {
        let w = rng.gen_range(0..=cfg.max_time);
        let t0 = rng.gen_range(0..=frames - w);
        features[t0 * dim..(t0 + w) * dim].fill(0.0);
    }
    for _ in 0..cfg.freq_masks {
        let w = rng.gen_range(0..=cfg.max_freq);
        let f0 = rng.gen_range(0..=dim - w);
        for row in features.chunks_mut(dim) {
            row[f0..f0 + w].fill(0.0);
        }
    }
    Ok(())
}
