//! Cross-image leakage probe based on merged captions.
//!
//! Each instance pairs a target image with a distractor image and offers
//! three captions: one for the target, one for the distractor, and a merged
//! caption combining both. The question is asked with the target image
//! alone and again with both images (the prompt names the target). How
//! often the merged caption wins in each condition gives `r_single` and
//! `r_multi`, and `c_score = r_multi - r_single` measures how much the
//! presence of the second image pulls answers toward the merged caption.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::eval::{read_jsonl_lines, write_jsonl, ImageRef, SCHEMA_VERSION};
use crate::provider::{cosine_similarity, image_features, LogitProvider, OPTION_LETTERS};
use crate::rng::RandomStream;
use crate::types::{DecodingConfig, ImageTensor, TokenId};

pub const DEFAULT_LEAKAGE_PROMPT: &str =
    "Which caption describes image {target}? Options: A: {A}; B: {B}; C: {C}; Answer with a letter.";

/// Feature size used for pair similarity.
const SIMILARITY_FEATURE_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionRole {
    Target,
    Distractor,
    Merged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Captions {
    pub target: String,
    pub distractor: String,
    pub merged: String,
}

impl Captions {
    pub fn get(&self, role: CaptionRole) -> &str {
        match role {
            CaptionRole::Target => &self.target,
            CaptionRole::Distractor => &self.distractor,
            CaptionRole::Merged => &self.merged,
        }
    }
}

/// Which caption each of the letters A, B, C stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionBinding {
    #[serde(rename = "A")]
    pub a: CaptionRole,
    #[serde(rename = "B")]
    pub b: CaptionRole,
    #[serde(rename = "C")]
    pub c: CaptionRole,
}

impl OptionBinding {
    pub fn new(roles: [CaptionRole; 3]) -> Result<Self> {
        let binding = Self {
            a: roles[0],
            b: roles[1],
            c: roles[2],
        };
        binding.validate()?;
        Ok(binding)
    }

    pub fn roles(&self) -> [CaptionRole; 3] {
        [self.a, self.b, self.c]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.roles();
        if r[0] == r[1] || r[0] == r[2] || r[1] == r[2] {
            return Err(Error::InvalidArgument(format!(
                "option binding must be a bijection, got {r:?}"
            )));
        }
        Ok(())
    }

    pub fn letter_of(&self, role: CaptionRole) -> &'static str {
        let idx = self.roles().iter().position(|r| *r == role).expect("bijection");
        OPTION_LETTERS[idx]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeakageInstance {
    pub id: String,
    pub image_pair: (Arc<ImageTensor>, Arc<ImageTensor>),
    /// 1 or 2.
    pub target_index: usize,
    pub captions: Captions,
    pub option_binding: OptionBinding,
}

impl LeakageInstance {
    pub fn validate(&self) -> Result<()> {
        if self.target_index != 1 && self.target_index != 2 {
            return Err(Error::InvalidArgument(format!(
                "target_index must be 1 or 2, got {}",
                self.target_index
            )));
        }
        let c = &self.captions;
        if c.target == c.distractor || c.target == c.merged || c.distractor == c.merged {
            return Err(Error::InvalidArgument("captions must be pairwise distinct".into()));
        }
        self.option_binding.validate()
    }

    pub fn target_image(&self) -> &Arc<ImageTensor> {
        if self.target_index == 1 {
            &self.image_pair.0
        } else {
            &self.image_pair.1
        }
    }

    /// Renders a prompt template: `{target}` is the 1-based slot of the
    /// target, `{A}`, `{B}`, `{C}` the bound captions.
    pub fn render_prompt(&self, template: &str, target_slot: usize) -> String {
        let roles = self.option_binding.roles();
        template
            .replace("{target}", &target_slot.to_string())
            .replace("{A}", self.captions.get(roles[0]))
            .replace("{B}", self.captions.get(roles[1]))
            .replace("{C}", self.captions.get(roles[2]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LeakageLine {
    schema_version: u32,
    id: String,
    images: Vec<ImageRef>,
    target_index: usize,
    captions: Captions,
    option_binding: OptionBinding,
}

pub fn save_leakage_instances(path: &Path, instances: &[LeakageInstance]) -> Result<()> {
    let lines = instances
        .iter()
        .map(|inst| {
            Ok(LeakageLine {
                schema_version: SCHEMA_VERSION,
                id: inst.id.clone(),
                images: vec![
                    ImageRef::inline(&inst.image_pair.0)?,
                    ImageRef::inline(&inst.image_pair.1)?,
                ],
                target_index: inst.target_index,
                captions: inst.captions.clone(),
                option_binding: inst.option_binding,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(path, &lines)
}

pub fn load_leakage_instances(path: &Path) -> Result<Vec<LeakageInstance>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (line_no, text) in read_jsonl_lines(path)? {
        let schema = |message: String| Error::Schema { line: line_no, message };
        let line: LeakageLine = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
        if line.schema_version != SCHEMA_VERSION {
            return Err(schema(format!("unsupported schema_version {}", line.schema_version)));
        }
        if line.images.len() != 2 {
            return Err(schema(format!("expected 2 images, got {}", line.images.len())));
        }
        let a = line.images[0].resolve(base)?;
        let b = line.images[1].resolve(base)?;
        let inst = LeakageInstance {
            id: line.id,
            image_pair: (a, b),
            target_index: line.target_index,
            captions: line.captions,
            option_binding: line.option_binding,
        };
        inst.validate().map_err(|e| schema(e.to_string()))?;
        out.push(inst);
    }
    if out.is_empty() {
        warn!("{} contains no leakage instances", path.display());
    }
    Ok(out)
}

/// Fraction of predictions equal to `merged`.
pub fn selection_ratio<T: PartialEq>(predictions: &[T], merged: &T) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("selection ratio of an empty prediction set".into()));
    }
    let hits = predictions.iter().filter(|p| *p == merged).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Cosine similarity of the two images' feature vectors. Stands in for
/// CLIP image similarity. A zero feature vector yields 0 with a warning.
pub fn feature_similarity(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let fa = image_features(a, SIMILARITY_FEATURE_DIM);
    let fb = image_features(b, SIMILARITY_FEATURE_DIM);
    cosine_similarity(&fa, &fb).unwrap_or_else(|| {
        warn!("zero-norm feature vector; similarity defined as 0");
        0.0
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageOptions {
    pub prompt_template: String,
    /// Token ids for A, B, C; resolved through the provider vocabulary
    /// when absent.
    pub option_tokens: Option<[TokenId; 3]>,
}

impl Default for LeakageOptions {
    fn default() -> Self {
        Self {
            prompt_template: DEFAULT_LEAKAGE_PROMPT.to_string(),
            option_tokens: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Single,
    Multi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub letter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<CaptionRole>,
    /// Scores for A, B, C.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub pass_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageRecord {
    pub schema_version: u32,
    pub id: String,
    pub target_index: usize,
    pub option_binding: OptionBinding,
    pub pair_similarity: f64,
    pub single: ConditionRecord,
    pub multi: ConditionRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub schema_version: u32,
    pub r_single: f64,
    pub r_multi: f64,
    pub c_score: f64,
    pub acc_single: f64,
    pub acc_multi: f64,
    pub mean_pair_similarity: f64,
    pub similarity_measure: String,
    pub n_single: usize,
    pub n_multi: usize,
    pub n_failed: usize,
    pub config: DecodingConfig,
    pub prompt_template: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeakageRun {
    pub report: LeakageReport,
    pub records: Vec<LeakageRecord>,
}

fn option_tokens(provider: &dyn LogitProvider, options: &LeakageOptions) -> Result<[TokenId; 3]> {
    if let Some(tokens) = options.option_tokens {
        return Ok(tokens);
    }
    let vocab = provider.vocabulary().ok_or(Error::NoTokenizer)?;
    let mut out = [0; 3];
    for (slot, letter) in out.iter_mut().zip(OPTION_LETTERS) {
        *slot = vocab.id(letter).ok_or_else(|| Error::UnknownToken(letter.to_string()))?;
    }
    Ok(out)
}

fn run_condition(
    decoder: &Decoder,
    provider: &dyn LogitProvider,
    inst: &LeakageInstance,
    condition: Condition,
    config: &DecodingConfig,
    options: &LeakageOptions,
    letters: &[Vec<TokenId>],
) -> ConditionRecord {
    let (images, slot) = match condition {
        Condition::Single => (vec![inst.target_image().clone()], 1),
        Condition::Multi => (
            vec![inst.image_pair.0.clone(), inst.image_pair.1.clone()],
            inst.target_index,
        ),
    };
    let tag = match condition {
        Condition::Single => "single",
        Condition::Multi => "multi",
    };
    let rng = RandomStream::new(config.seed).derive("leakage").derive(&inst.id).derive(tag);
    let prompt = inst.render_prompt(&options.prompt_template, slot);
    match decoder.score_candidates(provider, &images, &prompt, letters, config, &rng) {
        Ok(scored) => {
            let best = scored.best();
            ConditionRecord {
                letter: Some(OPTION_LETTERS[best].to_string()),
                role: Some(inst.option_binding.roles()[best]),
                scores: Some(scored.scores()),
                pass_count: scored.pass_count,
                error: None,
            }
        }
        Err(e) => ConditionRecord {
            letter: None,
            role: None,
            scores: None,
            pass_count: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Runs both conditions for every instance and aggregates the ratios.
/// Provider failures are recorded per instance and excluded from the
/// ratios of the affected condition.
pub fn run_leakage_experiment(
    instances: &[LeakageInstance],
    provider: &dyn LogitProvider,
    config: &DecodingConfig,
    decoder: &Decoder,
    options: &LeakageOptions,
) -> Result<LeakageRun> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::InvalidArgument("no leakage instances".into()));
    }
    for inst in instances {
        inst.validate()?;
    }
    let letters: Vec<Vec<TokenId>> = option_tokens(provider, options)?.iter().map(|&t| vec![t]).collect();

    let evaluate = |inst: &LeakageInstance| LeakageRecord {
        schema_version: SCHEMA_VERSION,
        id: inst.id.clone(),
        target_index: inst.target_index,
        option_binding: inst.option_binding,
        pair_similarity: feature_similarity(&inst.image_pair.0, &inst.image_pair.1),
        single: run_condition(decoder, provider, inst, Condition::Single, config, options, &letters),
        multi: run_condition(decoder, provider, inst, Condition::Multi, config, options, &letters),
    };
    let records = decoder.map_ordered(instances, evaluate);

    let single: Vec<CaptionRole> = records.iter().filter_map(|r| r.single.role).collect();
    let multi: Vec<CaptionRole> = records.iter().filter_map(|r| r.multi.role).collect();
    let n_failed = records
        .iter()
        .filter(|r| r.single.error.is_some() || r.multi.error.is_some())
        .count();
    let ratio = |preds: &[CaptionRole], role| {
        if preds.is_empty() {
            0.0
        } else {
            selection_ratio(preds, &role).expect("non-empty")
        }
    };
    let r_single = ratio(&single, CaptionRole::Merged);
    let r_multi = ratio(&multi, CaptionRole::Merged);
    // Pair similarity is summed in id order so the mean does not depend on
    // instance order.
    let by_id: BTreeMap<&str, f64> = records.iter().map(|r| (r.id.as_str(), r.pair_similarity)).collect();
    let mean_pair_similarity = by_id.values().sum::<f64>() / by_id.len() as f64;
    let report = LeakageReport {
        schema_version: SCHEMA_VERSION,
        r_single,
        r_multi,
        c_score: r_multi - r_single,
        acc_single: ratio(&single, CaptionRole::Target),
        acc_multi: ratio(&multi, CaptionRole::Target),
        mean_pair_similarity,
        similarity_measure: "cosine similarity of image features (substitute for CLIP image similarity)".into(),
        n_single: single.len(),
        n_multi: multi.len(),
        n_failed,
        config: config.clone(),
        prompt_template: options.prompt_template.clone(),
    };
    Ok(LeakageRun { report, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_ratio_examples() {
        use CaptionRole::*;
        assert!(selection_ratio::<CaptionRole>(&[], &Merged).is_err());
        assert_eq!(selection_ratio(&[Merged; 4], &Merged).unwrap(), 1.0);
        assert_eq!(selection_ratio(&[Target, Distractor, Merged, Target], &Merged).unwrap(), 0.25);
        let mut ten = vec![Target; 7];
        ten.extend([Merged; 3]);
        assert_eq!(selection_ratio(&ten, &Merged).unwrap(), 0.3);
    }

    #[test]
    fn similarity_of_constant_images() {
        let zero = ImageTensor::filled(4, 4, 3, 0.0).unwrap();
        let one = ImageTensor::filled(4, 4, 3, 1.0).unwrap();
        assert_eq!(feature_similarity(&zero, &zero), 1.0);
        // [0,0,0,1,0,0,0,0] . [1,1,1,0,0,0,0,1] = 0
        assert_eq!(feature_similarity(&zero, &one), 0.0);
        let gray = ImageTensor::filled(4, 4, 3, 0.5).unwrap();
        let s = feature_similarity(&one, &gray);
        // one: [1,1,1,0,0,0,0,1], gray: [.5,.5,.5,0,0,1,0,0]
        let expected = 1.5 / (2.0f64 * (0.75f64 + 1.0).sqrt());
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
    }

    #[test]
    fn binding_must_be_bijection() {
        use CaptionRole::*;
        assert!(OptionBinding::new([Target, Target, Merged]).is_err());
        let b = OptionBinding::new([Merged, Target, Distractor]).unwrap();
        assert_eq!(b.letter_of(Target), "B");
        let json = serde_json::to_value(b).unwrap();
        assert_eq!(json, serde_json::json!({"A": "merged", "B": "target", "C": "distractor"}));
    }

    #[test]
    fn prompt_rendering() {
        use CaptionRole::*;
        let img = Arc::new(ImageTensor::filled(2, 2, 3, 0.5).unwrap());
        let inst = LeakageInstance {
            id: "x".into(),
            image_pair: (img.clone(), img),
            target_index: 2,
            captions: Captions {
                target: "c1".into(),
                distractor: "c2".into(),
                merged: "c1 c2".into(),
            },
            option_binding: OptionBinding::new([Distractor, Merged, Target]).unwrap(),
        };
        assert_eq!(
            inst.render_prompt(DEFAULT_LEAKAGE_PROMPT, 2),
            "Which caption describes image 2? Options: A: c2; B: c1 c2; C: c1; Answer with a letter."
        );
        let mut bad = inst.clone();
        bad.captions.merged = "c1".into();
        assert!(bad.validate().is_err());
        let mut bad = inst;
        bad.target_index = 3;
        assert!(bad.validate().is_err());
    }
}
