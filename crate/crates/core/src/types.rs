//! Domain values shared by every stage of the engine.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Row-major `H x W x C` image with elements in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} elements for {height}x{width}x{channels}, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage(format!(
                "element {pos} = {} outside [0, 1]",
                data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Builds a tensor of the same shape from a per-element map. Values are
    /// clamped to `[0, 1]`; NaN maps to 0.
    pub(crate) fn map_clamped(&self, mut f: impl FnMut(f32) -> f64) -> ImageTensor {
        let data = self
            .data
            .iter()
            .map(|&v| {
                let out = f(v);
                if out.is_nan() {
                    0.0
                } else {
                    out.clamp(0.0, 1.0) as f32
                }
            })
            .collect();
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }
}

/// Ordered image slots, each either clean or noise-masked.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageContext {
    slots: Vec<Arc<ImageTensor>>,
    mask_flags: Vec<bool>,
}

impl ImageContext {
    pub fn new(slots: Vec<Arc<ImageTensor>>, mask_flags: Vec<bool>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::InvalidArgument("image context needs at least one slot".into()));
        }
        if slots.len() != mask_flags.len() {
            return Err(Error::InvalidArgument(format!(
                "{} slots but {} mask flags",
                slots.len(),
                mask_flags.len()
            )));
        }
        Ok(Self { slots, mask_flags })
    }

    /// All slots clean.
    pub fn clean(images: &[Arc<ImageTensor>]) -> Result<Self> {
        Self::new(images.to_vec(), vec![false; images.len()])
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Arc<ImageTensor>] {
        &self.slots
    }

    pub fn mask_flags(&self) -> &[bool] {
        &self.mask_flags
    }
}

/// Dense next-token scores bound to a provider vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitVector {
    values: Vec<f64>,
    vocab_id: Arc<str>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>, vocab_id: impl Into<Arc<str>>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "logit {pos} is not finite ({})",
                values[pos]
            )));
        }
        Ok(Self {
            values,
            vocab_id: vocab_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vocab_id(&self) -> &str {
        &self.vocab_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_compatible(&self, other: &LogitVector) -> Result<()> {
        if self.vocab_id != other.vocab_id {
            return Err(Error::VocabMismatch {
                expected: self.vocab_id.to_string(),
                found: other.vocab_id.to_string(),
            });
        }
        if self.values.len() != other.values.len() {
            return Err(Error::VocabMismatch {
                expected: format!("{} ({} logits)", self.vocab_id, self.values.len()),
                found: format!("{} ({} logits)", other.vocab_id, other.values.len()),
            });
        }
        Ok(())
    }

    /// `self += scale * other`, element by element.
    pub fn add_scaled(&mut self, scale: f64, other: &LogitVector) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> LogitVector {
        LogitVector {
            values: vec![0.0; self.values.len()],
            vocab_id: self.vocab_id.clone(),
        }
    }

    /// Index of the largest value; lowest index wins ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((i, v)),
            }
        }
        best.map(|(i, _)| i)
    }

    /// Numerically stable `log softmax(values / temperature)`.
    pub fn log_softmax(&self, temperature: f64) -> Vec<f64> {
        let scaled: Vec<f64> = self.values.iter().map(|v| v / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        scaled.into_iter().map(|v| v - log_norm).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Baseline,
    Focus,
    #[serde(alias = "vcd")]
    VcdVariant,
}

impl Strategy {
    /// Forward passes per decoding step with `n_images` inputs.
    pub fn passes_per_step(self, n_images: usize) -> usize {
        match self {
            Strategy::Baseline => 1,
            Strategy::Focus => n_images + 1,
            Strategy::VcdVariant => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Focus => "focus",
            Strategy::VcdVariant => "vcd_variant",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Strategy::Baseline),
            "focus" => Ok(Strategy::Focus),
            "vcd" | "vcd_variant" => Ok(Strategy::VcdVariant),
            other => Err(Error::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseType {
    Uniform,
    Gaussian,
    Impulse,
}

impl NoiseType {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseType::Uniform => "uniform",
            NoiseType::Gaussian => "gaussian",
            NoiseType::Impulse => "impulse",
        }
    }
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(NoiseType::Uniform),
            "gaussian" => Ok(NoiseType::Gaussian),
            "impulse" => Ok(NoiseType::Impulse),
            other => Err(Error::InvalidConfig(format!("unknown noise type `{other}`"))),
        }
    }
}

/// Strategy and hyperparameters for one decoding run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub strategy: Strategy,
    /// Noise scale.
    pub lambda: f64,
    /// Contrastive weight on the noise reference.
    pub alpha: f64,
    /// Sampling temperature; 0 means greedy.
    pub temperature: f64,
    pub noise_type: NoiseType,
    pub seed: u64,
    pub max_tokens: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Focus,
            lambda: 0.3,
            alpha: 0.4,
            temperature: 0.2,
            noise_type: NoiseType::Uniform,
            seed: 0,
            max_tokens: 16,
        }
    }
}

impl DecodingConfig {
    pub fn baseline() -> Self {
        Self {
            strategy: Strategy::Baseline,
            ..Self::default()
        }
    }

    pub fn focus() -> Self {
        Self::default()
    }

    pub fn vcd_variant() -> Self {
        Self {
            strategy: Strategy::VcdVariant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidConfig("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Record of one autoregressive generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_step_logits: Option<Vec<LogitVector>>,
    pub forward_pass_count: usize,
    pub config: DecodingConfig,
    pub num_images: usize,
    /// False when a provider failure cut generation short.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationTrace {
    pub fn steps(&self) -> usize {
        self.tokens.len()
    }
}
