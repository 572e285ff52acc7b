//! Visual masking: corrupting non-target images and assembling the
//! partially masked contexts for a focused decoding step.
//!
//! Noise families, each parameterized by the scale `lambda` in `[0, 1]`:
//!
//! * uniform: `v' = (1 - lambda) * v + lambda * u`, `u ~ U(0, 1)`
//! * gaussian: `v' = clamp((1 - lambda) * v + lambda * n, 0, 1)`, `n ~ N(0.5, 0.25^2)`
//! * impulse: with probability `lambda` the element becomes 0 or 1 (equally
//!   likely), otherwise it is kept
//!
//! The corrupted copy of slot `j` at decoding step `t` is drawn from the
//! substream keyed `(t, j)` and shared by every context of that step.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{RandomStream, Substream};
use crate::types::{ImageContext, ImageTensor, NoiseType};

const GAUSSIAN_MEAN: f64 = 0.5;
const GAUSSIAN_STD: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub noise_type: NoiseType,
    pub lambda: f64,
}

impl NoiseSpec {
    pub fn new(noise_type: NoiseType, lambda: f64) -> Result<Self> {
        let spec = Self { noise_type, lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "noise lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

pub fn apply_noise(image: &ImageTensor, spec: &NoiseSpec, rng: &mut Substream) -> Result<ImageTensor> {
    spec.validate()?;
    let lambda = spec.lambda;
    let keep = 1.0 - lambda;
    let out = match spec.noise_type {
        NoiseType::Uniform => image.map_clamped(|v| keep * f64::from(v) + lambda * rng.uniform()),
        NoiseType::Gaussian => {
            let normal = Normal::new(GAUSSIAN_MEAN, GAUSSIAN_STD).expect("valid normal parameters");
            image.map_clamped(|v| keep * f64::from(v) + lambda * normal.sample(rng))
        }
        NoiseType::Impulse => image.map_clamped(|v| {
            if rng.uniform() < lambda {
                if rng.uniform() < 0.5 {
                    0.0
                } else {
                    1.0
                }
            } else {
                f64::from(v)
            }
        }),
    };
    Ok(out)
}

/// Corrupted copies of every input image for one decoding step.
pub fn noised_images(
    images: &[Arc<ImageTensor>],
    spec: &NoiseSpec,
    rng: &RandomStream,
    step: u64,
) -> Result<Vec<Arc<ImageTensor>>> {
    images
        .iter()
        .enumerate()
        .map(|(slot, img)| {
            let mut sub = rng.substream(step, slot as u64);
            apply_noise(img, spec, &mut sub).map(Arc::new)
        })
        .collect()
}

/// The N focused contexts (slot `k` clean, all others masked) and the fully
/// masked reference context for one step.
#[derive(Clone, Debug)]
pub struct MaskedContexts {
    pub contexts: Vec<ImageContext>,
    pub noise_context: ImageContext,
}

pub fn build_masked_contexts(
    images: &[Arc<ImageTensor>],
    spec: &NoiseSpec,
    rng: &RandomStream,
    step: u64,
) -> Result<MaskedContexts> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("cannot mask an empty image list".into()));
    }
    let noised = noised_images(images, spec, rng, step)?;
    let n = images.len();
    let contexts = (0..n)
        .map(|k| {
            let slots = (0..n)
                .map(|j| if j == k { images[j].clone() } else { noised[j].clone() })
                .collect();
            let flags = (0..n).map(|j| j != k).collect();
            ImageContext::new(slots, flags)
        })
        .collect::<Result<Vec<_>>>()?;
    let noise_context = ImageContext::new(noised, vec![true; n])?;
    Ok(MaskedContexts {
        contexts,
        noise_context,
    })
}
