//! Deterministic synthetic vision-language model.
//!
//! Each image is summarized by a small feature vector (per-channel means
//! followed by a coarse intensity histogram). Every vocabulary token owns a
//! prototype in the same feature space: the features of a flat image painted
//! in the token's concept color. A query reads the (contaminated) features
//! of one slot and scores token `t` as
//!
//! ```text
//! logit(t) = sharpness * (<w_t, g> - |w_t|^2 / 2) - repetition_penalty * count(t in prefix)
//! ```
//!
//! which ranks tokens by distance between prototype and query features.
//!
//! Cross-image contamination mixes the features of other slots into the
//! queried slot with coefficient `beta`. With the clarity gate enabled, the
//! mixing weight between slots `k` and `j` is scaled by the clarity of both
//! images, where clarity is `exp(-roughness / clarity_scale)` and roughness is
//! the median absolute difference between neighbouring pixels. Rendered
//! content is piecewise flat (clarity 1); noise-masked images are rough
//! (clarity near 0), so a masked image neither leaks into, nor absorbs
//! leakage from, the other slots.
//!
//! # Prompt grammar
//!
//! The prompt is split at the first `Options:`. The part before it must
//! name the queried slot with `image K` (1-based) or `all images`, and may
//! carry `caption: <tokens>` (terminated by `?`, `.` or `;`). The part after
//! it binds option letters, separated by `;`:
//!
//! ```text
//! Which caption describes image 2? Options: A: c4; B: c9; C: c4 c9; Answer with a letter.
//! Across all images, which one shows caption: c4? Options: A: image 1; B: image 2;
//! ```
//!
//! A letter bound to a caption scores like a token whose prototype is the
//! mean of the caption's concept prototypes. A letter bound to `image K`
//! scores the cosine similarity between the query caption's prototype and
//! slot `K`'s features, like a contrastive image-text matcher.

use std::cmp::Ordering;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{LogitProvider, ProviderRequest, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::types::{ImageTensor, LogitVector, TokenId};

pub const OPTION_LETTERS: [&str; 3] = ["A", "B", "C"];
pub const STOP_TOKEN_NAME: &str = "<stop>";

/// Number of non-concept tokens at the end of the vocabulary.
const RESERVED_TOKENS: usize = OPTION_LETTERS.len() + 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelConfig {
    pub feature_dim: usize,
    pub vocab_size: usize,
    /// Inter-image mixing coefficient.
    pub beta: f64,
    /// Logit scale.
    pub sharpness: f64,
    pub repetition_penalty: f64,
    /// Seed for prototype initialization.
    pub seed: u64,
    /// Roughness scale of the clarity gate; `None` mixes every slot with
    /// full weight regardless of content.
    pub clarity_scale: Option<f64>,
    /// Logit bonus for the first listed option, a position prior that does
    /// not depend on the images.
    #[serde(default)]
    pub primacy_bias: f64,
}

impl Default for SyntheticModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            vocab_size: 32,
            beta: 0.4,
            sharpness: 10.0,
            repetition_penalty: 1.0,
            seed: 0,
            clarity_scale: Some(0.02),
            primacy_bias: 0.5,
        }
    }
}

impl SyntheticModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 4 {
            return Err(Error::InvalidConfig(format!(
                "feature_dim must be >= 4 (3 channel means + histogram), got {}",
                self.feature_dim
            )));
        }
        if self.vocab_size <= RESERVED_TOKENS {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must exceed {RESERVED_TOKENS}, got {}",
                self.vocab_size
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sharpness must be > 0, got {}",
                self.sharpness
            )));
        }
        if !self.repetition_penalty.is_finite() {
            return Err(Error::InvalidConfig("repetition_penalty must be finite".into()));
        }
        if !self.primacy_bias.is_finite() {
            return Err(Error::InvalidConfig("primacy_bias must be finite".into()));
        }
        if let Some(scale) = self.clarity_scale {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "clarity_scale must be > 0, got {scale}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_concepts(&self) -> usize {
        self.vocab_size - RESERVED_TOKENS
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    fn canonical_cmp(&self, other: &FeatureVector) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                non_eq => return non_eq,
            }
        }
        self.0.len().cmp(&other.0.len())
    }

    fn axpy(&mut self, scale: f64, other: &FeatureVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    fn scaled(&self, scale: f64) -> FeatureVector {
        FeatureVector(self.0.iter().map(|v| v * scale).collect())
    }
}

/// Per-channel means (grayscale images repeat their single channel) followed
/// by a `feature_dim - 3` bin histogram of per-pixel intensity.
pub fn image_features(image: &ImageTensor, feature_dim: usize) -> FeatureVector {
    assert!(feature_dim >= 4, "feature_dim must be >= 4");
    let bins = feature_dim - 3;
    let channels = image.channels();
    let pixels = image.height() * image.width();
    let mut sums = [0.0f64; 3];
    let mut hist = vec![0.0f64; bins];
    for px in image.data().chunks_exact(channels) {
        let mut intensity = 0.0;
        for (c, &v) in px.iter().enumerate() {
            sums[c] += f64::from(v);
            intensity += f64::from(v);
        }
        intensity /= channels as f64;
        let bin = ((intensity * bins as f64) as usize).min(bins - 1);
        hist[bin] += 1.0;
    }
    let mut out = Vec::with_capacity(feature_dim);
    for c in 0..3 {
        let src = if channels == 1 { 0 } else { c };
        out.push(sums[src] / pixels as f64);
    }
    out.extend(hist.into_iter().map(|h| h / pixels as f64));
    FeatureVector(out)
}

/// `exp(-roughness / scale)`, with roughness the median absolute difference
/// between horizontally and vertically adjacent elements of the same channel.
pub fn signal_clarity(image: &ImageTensor, scale: f64) -> f64 {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut diffs = Vec::with_capacity(2 * h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = image.get(y, x, ch);
                if x + 1 < w {
                    diffs.push((v - image.get(y, x + 1, ch)).abs());
                }
                if y + 1 < h {
                    diffs.push((v - image.get(y + 1, x, ch)).abs());
                }
            }
        }
    }
    if diffs.is_empty() {
        return 1.0;
    }
    let mid = (diffs.len() - 1) / 2;
    let (_, median, _) = diffs.select_nth_unstable_by(mid, f32::total_cmp);
    (-f64::from(*median) / scale).exp()
}

/// `g_k = (1 - beta) * f_k + beta * mean_{j != k} f_j`; `g_k = f_k` when
/// there is a single image.
pub fn contaminated_features(features: &[FeatureVector], target_slot: usize, beta: f64) -> Result<FeatureVector> {
    let ones = vec![1.0; features.len()];
    contaminated_features_gated(features, &ones, target_slot, beta)
}

/// Contamination with per-slot clarity gates: slot `j` contributes weight
/// `beta * c_k * c_j / (N - 1)` to slot `k`, which keeps the remainder.
/// With all clarities 1 this is [`contaminated_features`].
///
/// Contributions are summed in a canonical order (by feature value), so
/// permuting the other slots never changes the result.
pub fn contaminated_features_gated(
    features: &[FeatureVector],
    clarity: &[f64],
    target_slot: usize,
    beta: f64,
) -> Result<FeatureVector> {
    let n = features.len();
    if target_slot >= n {
        return Err(Error::InvalidArgument(format!(
            "target slot {target_slot} out of range for {n} image(s)"
        )));
    }
    if clarity.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} clarity values for {n} image(s)",
            clarity.len()
        )));
    }
    if n == 1 {
        return Ok(features[0].clone());
    }
    let mut others: Vec<(f64, &FeatureVector)> = (0..n)
        .filter(|&j| j != target_slot)
        .map(|j| (beta * clarity[target_slot] * clarity[j] / (n - 1) as f64, &features[j]))
        .collect();
    others.sort_by(|a, b| a.1.canonical_cmp(b.1).then(a.0.total_cmp(&b.0)));
    let leaked: f64 = others.iter().map(|(w, _)| w).sum();
    let mut out = features[target_slot].scaled(1.0 - leaked);
    for (w, f) in others {
        out.axpy(w, f);
    }
    Ok(out)
}

pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Option<f64> {
    let denom = (a.norm_sq() * b.norm_sq()).sqrt();
    if denom == 0.0 {
        None
    } else {
        Some((a.dot(b) / denom).clamp(-1.0, 1.0))
    }
}

fn canonical_mean(vectors: &[FeatureVector]) -> FeatureVector {
    let mut sorted: Vec<&FeatureVector> = vectors.iter().collect();
    sorted.sort_by(|a, b| a.canonical_cmp(b));
    let mut acc = FeatureVector(vec![0.0; sorted[0].len()]);
    for v in sorted {
        acc.axpy(1.0, v);
    }
    acc.scaled(1.0 / vectors.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
enum Target {
    Slot(usize),
    AllImages,
}

#[derive(Clone, Debug, PartialEq)]
enum Binding {
    Caption(Vec<TokenId>),
    Image(usize),
}

#[derive(Clone, Debug, PartialEq)]
struct Directive {
    target: Target,
    caption: Option<Vec<TokenId>>,
    options: Vec<(TokenId, Binding)>,
}

fn target_all_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\ball images\b").unwrap())
}

fn target_slot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bimage\s+(\d+)\b").unwrap())
}

fn caption_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bcaption:\s*([^?.;]+)").unwrap())
}

fn option_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[\s;])([A-Z]):\s*([^;]*)").unwrap())
}

fn parse_slot(digits: &str, prompt: &str) -> Result<usize> {
    match digits.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k - 1),
        _ => Err(Error::UnparseablePrompt(format!(
            "image index `{digits}` must be a positive integer in `{prompt}`"
        ))),
    }
}

fn tokenize_concepts(text: &str, vocab: &Vocabulary, num_concepts: usize) -> Result<Vec<TokenId>> {
    let tokens = vocab.tokenize(text)?;
    if tokens.is_empty() {
        return Err(Error::UnparseablePrompt("empty caption".into()));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= num_concepts) {
        return Err(Error::UnparseablePrompt(format!(
            "`{}` is not a concept token",
            vocab.name(t).unwrap_or("?")
        )));
    }
    Ok(tokens)
}

fn parse_directive(prompt: &str, vocab: &Vocabulary, num_concepts: usize) -> Result<Directive> {
    let (header, options_text) = match prompt.find("Options:") {
        Some(pos) => (&prompt[..pos], Some(&prompt[pos + "Options:".len()..])),
        None => (prompt, None),
    };
    let target = if target_all_re().is_match(header) {
        Target::AllImages
    } else if let Some(cap) = target_slot_re().captures(header) {
        Target::Slot(parse_slot(&cap[1], prompt)?)
    } else {
        return Err(Error::UnparseablePrompt(format!(
            "no `image K` or `all images` directive in `{prompt}`"
        )));
    };
    let caption = caption_re()
        .captures(header)
        .map(|cap| tokenize_concepts(cap[1].trim(), vocab, num_concepts))
        .transpose()?;
    let mut options = Vec::new();
    if let Some(text) = options_text {
        for cap in option_re().captures_iter(text) {
            let letter = vocab.id(&cap[1]).filter(|&t| {
                OPTION_LETTERS.contains(&vocab.name(t).unwrap_or_default())
            });
            let letter = letter.ok_or_else(|| {
                Error::UnparseablePrompt(format!("unknown option letter `{}`", &cap[1]))
            })?;
            if options.iter().any(|(l, _)| *l == letter) {
                return Err(Error::UnparseablePrompt(format!("option `{}` bound twice", &cap[1])));
            }
            let body = cap[2].trim();
            let binding = match target_slot_re().captures(body) {
                Some(slot) if slot.get(0).map(|m| m.as_str()) == Some(body) => {
                    Binding::Image(parse_slot(&slot[1], prompt)?)
                }
                _ => Binding::Caption(tokenize_concepts(body, vocab, num_concepts)?),
            };
            options.push((letter, binding));
        }
    }
    Ok(Directive {
        target,
        caption,
        options,
    })
}

/// The synthetic provider. Pure: logits depend only on the config and the
/// request.
#[derive(Clone, Debug)]
pub struct SyntheticModel {
    config: SyntheticModelConfig,
    colors: Vec<[f32; 3]>,
    prototypes: Vec<FeatureVector>,
    vocab: Vocabulary,
    vocab_id: String,
}

impl SyntheticModel {
    pub fn new(config: SyntheticModelConfig) -> Result<Self> {
        config.validate()?;
        let stream = RandomStream::new(config.seed).derive("prototypes");
        let colors: Vec<[f32; 3]> = (0..config.vocab_size)
            .map(|t| {
                let mut sub = stream.substream(t as u64, 0);
                [sub.uniform() as f32, sub.uniform() as f32, sub.uniform() as f32]
            })
            .collect();
        let prototypes = colors
            .iter()
            .map(|rgb| {
                let px = ImageTensor::new(1, 1, 3, rgb.to_vec()).expect("color in [0, 1)");
                image_features(&px, config.feature_dim)
            })
            .collect();
        let mut names: Vec<String> = (0..config.num_concepts()).map(|i| format!("c{i}")).collect();
        names.extend(OPTION_LETTERS.iter().map(|s| s.to_string()));
        names.push(STOP_TOKEN_NAME.to_string());
        let vocab = Vocabulary::new(names)?;
        let vocab_id = format!(
            "synthetic/v{}/d{}/s{}",
            config.vocab_size, config.feature_dim, config.seed
        );
        Ok(Self {
            config,
            colors,
            prototypes,
            vocab,
            vocab_id,
        })
    }

    pub fn config(&self) -> &SyntheticModelConfig {
        &self.config
    }

    pub fn vocab_id(&self) -> &str {
        &self.vocab_id
    }

    pub fn num_concepts(&self) -> usize {
        self.config.num_concepts()
    }

    /// Color a renderer should paint to depict `token`.
    pub fn concept_color(&self, token: TokenId) -> [f32; 3] {
        self.colors[token as usize]
    }

    pub fn prototype(&self, token: TokenId) -> &FeatureVector {
        &self.prototypes[token as usize]
    }

    pub fn letter_token(&self, letter: &str) -> Option<TokenId> {
        OPTION_LETTERS
            .contains(&letter)
            .then(|| self.vocab.id(letter))
            .flatten()
    }

    pub fn stop_token_id(&self) -> TokenId {
        (self.config.vocab_size - 1) as TokenId
    }

    pub fn features(&self, image: &ImageTensor) -> FeatureVector {
        image_features(image, self.config.feature_dim)
    }

    fn caption_prototype(&self, tokens: &[TokenId]) -> FeatureVector {
        let mut acc = FeatureVector(vec![0.0; self.config.feature_dim]);
        for &t in tokens {
            acc.axpy(1.0, &self.prototypes[t as usize]);
        }
        acc.scaled(1.0 / tokens.len() as f64)
    }

    /// Contaminated features of every slot.
    pub fn slot_representations(&self, images: &[std::sync::Arc<ImageTensor>]) -> Result<Vec<FeatureVector>> {
        let feats: Vec<FeatureVector> = images.iter().map(|img| self.features(img)).collect();
        let clarity: Vec<f64> = match self.config.clarity_scale {
            Some(scale) if self.config.beta > 0.0 => {
                images.iter().map(|img| signal_clarity(img, scale)).collect()
            }
            _ => vec![1.0; images.len()],
        };
        (0..feats.len())
            .map(|k| contaminated_features_gated(&feats, &clarity, k, self.config.beta))
            .collect()
    }

    pub fn synthetic_logits(&self, request: &ProviderRequest) -> Result<LogitVector> {
        let directive = parse_directive(request.prompt(), &self.vocab, self.num_concepts())?;
        let n = request.images().len();
        let check_slot = |k: usize| {
            if k < n {
                Ok(k)
            } else {
                Err(Error::UnparseablePrompt(format!(
                    "prompt refers to image {} but only {n} image(s) were given",
                    k + 1
                )))
            }
        };
        if let Target::Slot(k) = directive.target {
            check_slot(k)?;
        }
        for (_, binding) in &directive.options {
            if let Binding::Image(k) = binding {
                check_slot(*k)?;
                if directive.caption.is_none() {
                    return Err(Error::UnparseablePrompt(
                        "image options need a `caption:` to compare against".into(),
                    ));
                }
            }
        }

        let reps = self.slot_representations(request.images())?;
        let query = match directive.target {
            Target::Slot(k) => reps[k].clone(),
            Target::AllImages => canonical_mean(&reps),
        };
        let query_caption = directive.caption.as_ref().map(|c| self.caption_prototype(c));

        let sharpness = self.config.sharpness;
        let penalty = self.config.repetition_penalty;
        let prefix = request.prefix_tokens();
        let first_option = directive.options.first().map(|(letter, _)| *letter);
        let values = (0..self.config.vocab_size)
            .map(|t| {
                let token = t as TokenId;
                let binding = directive.options.iter().find(|(l, _)| *l == token).map(|(_, b)| b);
                let score = match binding {
                    None => {
                        let p = &self.prototypes[t];
                        query.dot(p) - 0.5 * p.norm_sq()
                    }
                    Some(Binding::Caption(tokens)) => {
                        let p = self.caption_prototype(tokens);
                        query.dot(&p) - 0.5 * p.norm_sq()
                    }
                    Some(Binding::Image(k)) => {
                        let p = query_caption.as_ref().expect("checked above");
                        cosine_similarity(p, &reps[*k]).unwrap_or(0.0)
                    }
                };
                let repeats = prefix.iter().filter(|&&p| p == token).count() as f64;
                let prior = if first_option == Some(token) { self.config.primacy_bias } else { 0.0 };
                sharpness * score + prior - penalty * repeats
            })
            .collect();
        LogitVector::new(values, self.vocab_id.as_str())
    }
}

impl LogitProvider for SyntheticModel {
    fn next_token_logits(&self, request: &ProviderRequest) -> Result<LogitVector> {
        self.synthetic_logits(request)
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        Some(&self.vocab)
    }

    fn stop_token(&self) -> Option<TokenId> {
        Some(self.stop_token_id())
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "synthetic", "config": self.config })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::types::ImageContext;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector(v.to_vec())
    }

    fn flat(rgb: [f32; 3]) -> Arc<ImageTensor> {
        let data = (0..16 * 16).flat_map(|_| rgb).collect();
        Arc::new(ImageTensor::new(16, 16, 3, data).unwrap())
    }

    fn model(beta: f64) -> SyntheticModel {
        SyntheticModel::new(SyntheticModelConfig {
            beta,
            ..Default::default()
        })
        .unwrap()
    }

    fn request(images: &[Arc<ImageTensor>], prompt: &str, prefix: Vec<TokenId>) -> ProviderRequest {
        ProviderRequest::new(ImageContext::clean(images).unwrap(), prompt, prefix).unwrap()
    }

    #[test]
    fn features_of_constant_images() {
        let zero = ImageTensor::filled(4, 4, 3, 0.0).unwrap();
        let f = image_features(&zero, 8);
        assert_eq!(f.as_slice(), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let one = ImageTensor::filled(4, 4, 3, 1.0).unwrap();
        let f = image_features(&one, 8);
        assert_eq!(f.as_slice(), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let gray = ImageTensor::filled(3, 3, 1, 0.5).unwrap();
        let f = image_features(&gray, 8);
        assert_eq!(&f.as_slice()[..3], &[0.5, 0.5, 0.5]);
        assert_eq!(f.as_slice()[5], 1.0);
    }

    #[test]
    fn contamination_formula() {
        let a = fv(&[1.0, 0.0]);
        let b = fv(&[0.0, 1.0]);
        let feats = [a.clone(), b.clone()];
        assert_eq!(contaminated_features(&feats, 0, 0.0).unwrap(), a);
        assert_eq!(contaminated_features(&feats, 0, 1.0).unwrap(), b);
        assert_eq!(contaminated_features(&feats, 0, 0.5).unwrap(), fv(&[0.5, 0.5]));
        assert_eq!(contaminated_features(std::slice::from_ref(&a), 0, 0.9).unwrap(), a);
        assert!(contaminated_features(&feats, 2, 0.5).is_err());
    }

    #[test]
    fn contamination_uses_mean_of_others() {
        let feats = [fv(&[1.0]), fv(&[0.0]), fv(&[0.5])];
        let g = contaminated_features(&feats, 0, 0.4).unwrap();
        // 0.6 * 1 + 0.4 * mean(0, 0.5)
        assert!((g.0[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn clarity_separates_flat_from_noisy() {
        use crate::noise::{apply_noise, NoiseSpec};
        use crate::types::NoiseType;
        let clean = flat([0.2, 0.5, 0.7]);
        assert_eq!(signal_clarity(&clean, 0.02), 1.0);
        let mut rng = RandomStream::new(1).substream(0, 0);
        let spec = NoiseSpec::new(NoiseType::Uniform, 0.3).unwrap();
        let noisy = apply_noise(&clean, &spec, &mut rng).unwrap();
        assert!(signal_clarity(&noisy, 0.02) < 0.05);
    }

    #[test]
    fn identical_requests_identical_logits() {
        let m = model(0.4);
        let imgs = [flat([0.1, 0.2, 0.3]), flat([0.9, 0.5, 0.1])];
        let r = request(&imgs, "Describe image 1.", vec![]);
        assert_eq!(m.synthetic_logits(&r).unwrap(), m.synthetic_logits(&r).unwrap());
    }

    #[test]
    fn beta_zero_is_slot_local() {
        let m = model(0.0);
        let a = [flat([0.1, 0.2, 0.3]), flat([0.9, 0.5, 0.1])];
        let b = [flat([0.1, 0.2, 0.3]), flat([0.3, 0.3, 0.8])];
        let la = m.synthetic_logits(&request(&a, "Describe image 1.", vec![])).unwrap();
        let lb = m.synthetic_logits(&request(&b, "Describe image 1.", vec![])).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn positive_beta_leaks() {
        let m = model(0.4);
        let a = [flat([0.1, 0.2, 0.3]), flat([0.9, 0.5, 0.1])];
        let b = [flat([0.1, 0.2, 0.3]), flat([0.3, 0.3, 0.8])];
        let la = m.synthetic_logits(&request(&a, "Describe image 1.", vec![])).unwrap();
        let lb = m.synthetic_logits(&request(&b, "Describe image 1.", vec![])).unwrap();
        assert_ne!(la, lb);
    }

    #[test]
    fn repetition_penalty_is_exact() {
        let m = model(0.4);
        let imgs = [flat([0.1, 0.2, 0.3])];
        let base = m.synthetic_logits(&request(&imgs, "image 1", vec![])).unwrap();
        let pen = m.synthetic_logits(&request(&imgs, "image 1", vec![5])).unwrap();
        for t in 0..base.len() {
            let expected = if t == 5 { base.values()[t] - 1.0 } else { base.values()[t] };
            assert_eq!(pen.values()[t], expected);
        }
    }

    #[test]
    fn identical_images_any_slot_same_logits() {
        let m = model(0.4);
        let imgs = [flat([0.4, 0.4, 0.1]), flat([0.4, 0.4, 0.1])];
        let l1 = m.synthetic_logits(&request(&imgs, "image 1", vec![])).unwrap();
        let l2 = m.synthetic_logits(&request(&imgs, "image 2", vec![])).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn argmax_is_nearest_prototype_without_mixing() {
        let m = model(0.0);
        let img = flat([0.6, 0.3, 0.2]);
        let feats = m.features(&img);
        // Brute force over every token's prototype.
        let nearest = (0..32u32)
            .min_by(|&a, &b| {
                let da: f64 = m.prototype(a).0.iter().zip(&feats.0).map(|(p, f)| (p - f).powi(2)).sum();
                let db: f64 = m.prototype(b).0.iter().zip(&feats.0).map(|(p, f)| (p - f).powi(2)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let logits = m.synthetic_logits(&request(&[img], "Describe image 1.", vec![])).unwrap();
        assert_eq!(logits.argmax(), Some(nearest as usize));
    }

    #[test]
    fn prompt_errors() {
        let m = model(0.4);
        let imgs = [flat([0.1, 0.2, 0.3])];
        let bad = |p: &str| m.synthetic_logits(&request(&imgs, p, vec![])).is_err();
        assert!(bad("Describe the picture."));
        assert!(bad("image 2"));
        assert!(bad("image 0"));
        assert!(bad("image 1 Options: A: nonsense;"));
        assert!(bad("image 1 Options: D: c1;"));
        assert!(bad("image 1 Options: A: c1; A: c2;"));
        assert!(bad("all images Options: A: image 1;"));
        assert!(!bad("image 1 Options: A: c1; B: c2 c3; Answer:"));
    }

    #[test]
    fn option_bindings_parse() {
        let m = model(0.4);
        let d = parse_directive(
            "Across all images, which shows caption: c4 c2? Options: A: image 1; B: image 2; Answer with a letter.",
            &m.vocab,
            m.num_concepts(),
        )
        .unwrap();
        assert_eq!(d.target, Target::AllImages);
        assert_eq!(d.caption, Some(vec![4, 2]));
        assert_eq!(d.options, vec![(28, Binding::Image(0)), (29, Binding::Image(1))]);
    }

    #[test]
    fn caption_letter_matches_caption_prototype() {
        let m = model(0.0);
        let c = m.concept_color(3);
        let imgs = [flat(c)];
        let prompt = "Which caption fits image 1? Options: A: c7; B: c3; C: c3 c7; Answer:";
        let logits = m.synthetic_logits(&request(&imgs, prompt, vec![])).unwrap();
        let v = logits.values();
        // The image is painted exactly in c3's color.
        assert!(v[29] > v[28] && v[29] > v[30]);
        assert_eq!(v[29], v[3]);
    }

    #[test]
    fn primacy_bias_goes_to_the_first_listed_option() {
        let m = model(0.0);
        let imgs = [flat(m.concept_color(3))];
        let prompt = "Which caption fits image 1? Options: B: c3; A: c7; Answer:";
        let v = m.synthetic_logits(&request(&imgs, prompt, vec![])).unwrap().values().to_vec();
        assert_eq!(v[29], v[3] + 0.5);
        assert_eq!(v[28], v[7]);

        let unbiased = SyntheticModel::new(SyntheticModelConfig {
            beta: 0.0,
            primacy_bias: 0.0,
            ..Default::default()
        })
        .unwrap();
        let u = unbiased.synthetic_logits(&request(&imgs, prompt, vec![])).unwrap();
        assert_eq!(u.values()[29], v[3]);
    }

    #[test]
    fn permuting_images_with_renamed_slot_is_bit_identical() {
        let m = model(0.4);
        let a = flat([0.1, 0.2, 0.3]);
        let b = flat([0.9, 0.5, 0.1]);
        let c = flat([0.4, 0.8, 0.6]);
        let l1 = m
            .synthetic_logits(&request(&[a.clone(), b.clone(), c.clone()], "image 1", vec![]))
            .unwrap();
        let l2 = m.synthetic_logits(&request(&[c, b, a], "image 3", vec![])).unwrap();
        assert_eq!(l1, l2);
    }
}
