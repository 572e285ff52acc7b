//! Benchmark harness: JSONL datasets, strategy runs, paired-group scores,
//! and a generator of synthetic minimal-pair datasets.
//!
//! A dataset line looks like
//!
//! ```json
//! {"schema_version": 1, "id": "g0-text-1", "group_id": "g0", "task_kind": "caption_choice",
//!  "images": [{"path": "img/g0-1.png"}], "prompt_template": "Which caption describes image 1? ...",
//!  "candidates": ["A", "B"], "gold": 0}
//! ```
//!
//! Images are PNG paths relative to the dataset file or inline
//! [`WireImage`]s. Candidates are token-name strings (resolved through the
//! provider vocabulary) or explicit token-id lists.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::leakage::{CaptionRole, Captions, LeakageInstance, OptionBinding};
use crate::provider::wire::{decode_png, ImageEncoding, WireImage};
use crate::provider::{LogitProvider, ProviderRequest, SyntheticModel, SyntheticModelConfig};
use crate::rng::{RandomStream, Substream};
use crate::types::{DecodingConfig, ImageContext, ImageTensor, TokenId};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Path {
        path: String,
    },
    Inline(WireImage),
}

impl ImageRef {
    /// Bit-exact inline encoding.
    pub fn inline(image: &ImageTensor) -> Result<Self> {
        Ok(Self::Inline(WireImage::encode(image, ImageEncoding::RawF32Base64)?))
    }

    /// Loads the image; relative paths are taken from `base`.
    pub fn resolve(&self, base: &Path) -> Result<Arc<ImageTensor>> {
        match self {
            Self::Inline(wire) => wire.decode().map(Arc::new),
            Self::Path { path } => {
                let full = base.join(path);
                let err = |message: String| Error::ImageReference {
                    path: full.display().to_string(),
                    message,
                };
                let bytes = fs::read(&full).map_err(|e| err(e.to_string()))?;
                decode_png(&bytes).map(Arc::new).map_err(|e| err(e.to_string()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CaptionChoice,
    ImageChoice,
    MultipleChoice,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidate {
    Tokens(Vec<TokenId>),
    Text(String),
}

impl Candidate {
    pub fn resolve(&self, provider: &dyn LogitProvider) -> Result<Vec<TokenId>> {
        match self {
            Self::Tokens(t) => Ok(t.clone()),
            Self::Text(s) => provider.vocabulary().ok_or(Error::NoTokenizer)?.tokenize(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalInstance {
    pub id: String,
    pub images: Vec<Arc<ImageTensor>>,
    pub task_kind: TaskKind,
    pub prompt_template: String,
    pub candidates: Vec<Candidate>,
    pub gold: usize,
    pub group_id: Option<String>,
}

impl EvalInstance {
    pub fn validate(&self) -> Result<()> {
        if self.gold >= self.candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "gold {} out of range for {} candidate(s)",
                self.gold,
                self.candidates.len()
            )));
        }
        if self.images.is_empty() {
            return Err(Error::InvalidArgument("instance has no images".into()));
        }
        let expected_images = match self.task_kind {
            TaskKind::CaptionChoice => Some(1),
            TaskKind::ImageChoice => Some(2),
            TaskKind::MultipleChoice => None,
        };
        if let Some(n) = expected_images {
            if self.images.len() != n || self.candidates.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "{:?} needs {n} image(s) and 2 candidates, got {} and {}",
                    self.task_kind,
                    self.images.len(),
                    self.candidates.len()
                )));
            }
        }
        Ok(())
    }

    /// The prompt sent to the provider. `{num_images}` expands to the
    /// image count.
    pub fn prompt(&self) -> String {
        self.prompt_template.replace("{num_images}", &self.images.len().to_string())
    }

    fn group_key(&self) -> &str {
        self.group_id.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EvalLine {
    schema_version: u32,
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_id: Option<String>,
    task_kind: TaskKind,
    images: Vec<ImageRef>,
    prompt_template: String,
    candidates: Vec<Candidate>,
    gold: usize,
}

/// Non-blank lines with their 1-based line numbers.
pub(crate) fn read_jsonl_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalInstance>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (line_no, text) in read_jsonl_lines(path)? {
        let schema = |message: String| Error::Schema { line: line_no, message };
        let line: EvalLine = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
        if line.schema_version != SCHEMA_VERSION {
            return Err(schema(format!("unsupported schema_version {}", line.schema_version)));
        }
        let images = line
            .images
            .iter()
            .map(|r| r.resolve(base))
            .collect::<Result<Vec<_>>>()?;
        let inst = EvalInstance {
            id: line.id,
            images,
            task_kind: line.task_kind,
            prompt_template: line.prompt_template,
            candidates: line.candidates,
            gold: line.gold,
            group_id: line.group_id,
        };
        inst.validate().map_err(|e| schema(e.to_string()))?;
        out.push(inst);
    }
    if out.is_empty() {
        warn!("{} contains no instances", path.display());
    }
    Ok(out)
}

/// Writes instances with inline raw-f32 images, so a reload is exact.
pub fn save_dataset(path: &Path, instances: &[EvalInstance]) -> Result<()> {
    let lines = instances
        .iter()
        .map(|inst| {
            Ok(EvalLine {
                schema_version: SCHEMA_VERSION,
                id: inst.id.clone(),
                group_id: inst.group_id.clone(),
                task_kind: inst.task_kind,
                images: inst.images.iter().map(|i| ImageRef::inline(i)).collect::<Result<_>>()?,
                prompt_template: inst.prompt_template.clone(),
                candidates: inst.candidates.clone(),
                gold: inst.gold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(path, &lines)
}

/// Splits off a validation set of roughly `fraction` of the groups.
/// Membership depends only on the seed and the group key, so it is stable
/// under reordering and under adding or removing other groups.
pub fn split_validation(instances: &[EvalInstance], fraction: f64, seed: u64) -> (Vec<EvalInstance>, Vec<EvalInstance>) {
    let root = RandomStream::new(seed).derive("split");
    instances
        .iter()
        .cloned()
        .partition(|inst| root.derive(inst.group_key()).substream(0, 0).uniform() < fraction)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub schema_version: u32,
    pub strategy: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    pub task_kind: TaskKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<usize>,
    pub gold: usize,
    pub correct: bool,
    /// Candidate scores in candidate order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub pass_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl InstanceRecord {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupResult {
    pub text_correct: bool,
    pub image_correct: bool,
    pub group_correct: bool,
}

impl GroupResult {
    pub fn new(text_correct: bool, image_correct: bool) -> Self {
        Self {
            text_correct,
            image_correct,
            group_correct: text_correct && image_correct,
        }
    }
}

/// Text, image and group scores on a 0 to 100 scale. All three are 0 when
/// there is no complete group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinogroundScores {
    pub text: f64,
    pub image: f64,
    pub group: f64,
    pub n_groups: usize,
    /// Groups without exactly two completed caption-choice and two
    /// completed image-choice records.
    pub incomplete_groups: Vec<String>,
}

/// Per-group results for complete groups, plus the ids of incomplete ones.
pub fn group_results(records: &[InstanceRecord]) -> (BTreeMap<String, GroupResult>, Vec<String>) {
    let mut groups: BTreeMap<&str, Vec<&InstanceRecord>> = BTreeMap::new();
    for r in records {
        if let Some(g) = &r.group_id {
            if r.task_kind != TaskKind::MultipleChoice {
                groups.entry(g).or_default().push(r);
            }
        }
    }
    let mut complete = BTreeMap::new();
    let mut incomplete = Vec::new();
    for (id, members) in groups {
        let of = |kind| members.iter().filter(|r| r.task_kind == kind).collect::<Vec<_>>();
        let (text, image) = (of(TaskKind::CaptionChoice), of(TaskKind::ImageChoice));
        if text.len() != 2 || image.len() != 2 || members.iter().any(|r| !r.completed()) {
            incomplete.push(id.to_string());
            continue;
        }
        let all = |rs: &[&&InstanceRecord]| rs.iter().all(|r| r.correct);
        complete.insert(id.to_string(), GroupResult::new(all(&text), all(&image)));
    }
    (complete, incomplete)
}

pub fn winoground_scores(records: &[InstanceRecord]) -> WinogroundScores {
    let (groups, incomplete_groups) = group_results(records);
    let n = groups.len();
    let pct = |f: fn(&GroupResult) -> bool| {
        if n == 0 {
            0.0
        } else {
            100.0 * groups.values().filter(|g| f(g)).count() as f64 / n as f64
        }
    };
    WinogroundScores {
        text: pct(|g| g.text_correct),
        image: pct(|g| g.image_correct),
        group: pct(|g| g.group_correct),
        n_groups: n,
        incomplete_groups,
    }
}

/// Fraction of completed records whose top candidate is gold.
pub fn accuracy(records: &[InstanceRecord]) -> Result<f64> {
    let done: Vec<_> = records.iter().filter(|r| r.completed()).collect();
    if done.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty result set".into()));
    }
    Ok(done.iter().filter(|r| r.correct).count() as f64 / done.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_instances: usize,
    pub n_completed: usize,
    pub n_failed: usize,
    pub accuracy: Option<f64>,
    pub accuracy_by_kind: BTreeMap<TaskKind, f64>,
    pub winoground: WinogroundScores,
    pub pass_count: usize,
}

impl Metrics {
    pub fn from_records(records: &[InstanceRecord]) -> Self {
        let n_completed = records.iter().filter(|r| r.completed()).count();
        let mut accuracy_by_kind = BTreeMap::new();
        for kind in [TaskKind::CaptionChoice, TaskKind::ImageChoice, TaskKind::MultipleChoice] {
            let subset: Vec<InstanceRecord> = records.iter().filter(|r| r.task_kind == kind).cloned().collect();
            if let Ok(acc) = accuracy(&subset) {
                accuracy_by_kind.insert(kind, acc);
            }
        }
        Self {
            n_instances: records.len(),
            n_completed,
            n_failed: records.len() - n_completed,
            accuracy: accuracy(records).ok(),
            accuracy_by_kind,
            winoground: winoground_scores(records),
            pass_count: records.iter().map(|r| r.pass_count).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub records: Vec<InstanceRecord>,
    pub metrics: Metrics,
}

/// Scores every instance with one strategy. The noise stream of an
/// instance is keyed by its id, so results do not depend on dataset order.
pub fn evaluate(
    instances: &[EvalInstance],
    provider: &dyn LogitProvider,
    config: &DecodingConfig,
    decoder: &Decoder,
    label: &str,
) -> Result<EvalRun> {
    config.validate()?;
    let mut resolved = Vec::with_capacity(instances.len());
    for inst in instances {
        inst.validate()?;
        let cands = inst
            .candidates
            .iter()
            .map(|c| c.resolve(provider))
            .collect::<Result<Vec<_>>>()?;
        resolved.push((inst, cands));
    }
    let root = RandomStream::new(config.seed).derive("eval");
    let records = decoder.map_ordered(&resolved, |(inst, cands)| {
        let rng = root.derive(&inst.id);
        let result = decoder.score_candidates(provider, &inst.images, &inst.prompt(), cands, config, &rng);
        let mut record = InstanceRecord {
            schema_version: SCHEMA_VERSION,
            strategy: label.to_string(),
            id: inst.id.clone(),
            group_id: inst.group_id.clone(),
            task_kind: inst.task_kind,
            predicted: None,
            gold: inst.gold,
            correct: false,
            scores: None,
            pass_count: 0,
            error: None,
        };
        match result {
            Ok(scored) => {
                record.predicted = Some(scored.best());
                record.correct = scored.best() == inst.gold;
                record.scores = Some(scored.scores());
                record.pass_count = scored.pass_count;
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        record
    });
    let metrics = Metrics::from_records(&records);
    Ok(EvalRun { records, metrics })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub label: String,
    pub config: DecodingConfig,
    pub metrics: Metrics,
    pub complete: bool,
    pub wall_clock_ms: u64,
}

/// `to - from` for each metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub from: String,
    pub to: String,
    pub accuracy: Option<f64>,
    pub text: f64,
    pub image: f64,
    pub group: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub n_instances: usize,
    pub strategies: Vec<StrategySummary>,
    pub deltas: Vec<MetricDelta>,
    pub total_pass_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRun {
    pub report: ComparisonReport,
    /// Records of every strategy, in config order.
    pub records: Vec<InstanceRecord>,
}

/// Labels are `<index>:<strategy>` in config order.
pub fn compare_strategies(
    instances: &[EvalInstance],
    provider: &dyn LogitProvider,
    configs: &[DecodingConfig],
    decoder: &Decoder,
) -> Result<ComparisonRun> {
    if configs.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one config".into()));
    }
    let mut strategies = Vec::with_capacity(configs.len());
    let mut records = Vec::new();
    for (i, config) in configs.iter().enumerate() {
        let label = format!("{i}:{}", config.strategy.as_str());
        let start = Instant::now();
        let run = evaluate(instances, provider, config, decoder, &label)?;
        let wall_clock_ms = start.elapsed().as_millis() as u64;
        strategies.push(StrategySummary {
            label,
            config: config.clone(),
            complete: run.metrics.n_failed == 0,
            metrics: run.metrics,
            wall_clock_ms,
        });
        records.extend(run.records);
    }
    let mut deltas = Vec::new();
    for (i, a) in strategies.iter().enumerate() {
        for b in &strategies[i + 1..] {
            let (wa, wb) = (&a.metrics.winoground, &b.metrics.winoground);
            deltas.push(MetricDelta {
                from: a.label.clone(),
                to: b.label.clone(),
                accuracy: a.metrics.accuracy.zip(b.metrics.accuracy).map(|(x, y)| y - x),
                text: wb.text - wa.text,
                image: wb.image - wa.image,
                group: wb.group - wa.group,
            });
        }
    }
    let report = ComparisonReport {
        schema_version: SCHEMA_VERSION,
        n_instances: instances.len(),
        total_pass_count: strategies.iter().map(|s| s.metrics.pass_count).sum(),
        strategies,
        deltas,
    };
    Ok(ComparisonRun { report, records })
}

/// Default edge length of generated images.
pub const SYNTH_IMAGE_SIZE: usize = 32;
/// Fraction of image rows given to per-image clutter.
const CLUTTER_FRACTION: f64 = 0.1;
/// Shared-band fraction at `similarity_level = 1`.
const MAX_SHARED_FRACTION: f64 = 0.6;
/// Redraws allowed per group before giving up on a well-posed pair.
const MAX_ATTEMPTS: u64 = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSuite {
    pub eval: Vec<EvalInstance>,
    pub leakage: Vec<LeakageInstance>,
}

fn random_color(rng: &mut Substream) -> [f32; 3] {
    [rng.uniform() as f32, rng.uniform() as f32, rng.uniform() as f32]
}

fn pick(rng: &mut Substream, n: usize) -> usize {
    ((rng.uniform() * n as f64) as usize).min(n - 1)
}

/// Horizontal bands of flat color, top to bottom.
fn render_bands(size: usize, bands: &[([f32; 3], usize)]) -> Arc<ImageTensor> {
    let mut data = Vec::with_capacity(size * size * 3);
    for &(rgb, rows) in bands {
        for _ in 0..rows * size {
            data.extend_from_slice(&rgb);
        }
    }
    Arc::new(ImageTensor::new(size, size, 3, data).expect("colors are in [0, 1)"))
}

struct Pair {
    concepts: [TokenId; 2],
    images: [Arc<ImageTensor>; 2],
}

fn draw_pair(model: &SyntheticModel, rng: &mut Substream, similarity_level: f64) -> Pair {
    let k = model.num_concepts();
    let x1 = pick(rng, k);
    let x2 = (x1 + 1 + pick(rng, k - 1)) % k;
    let shared = random_color(rng);
    let size = SYNTH_IMAGE_SIZE;
    let shared_rows = (MAX_SHARED_FRACTION * similarity_level * size as f64).round() as usize;
    let clutter_rows = (CLUTTER_FRACTION * size as f64).round() as usize;
    let concept_rows = size - shared_rows - clutter_rows;
    let image = |x: usize, rng: &mut Substream| {
        let clutter = random_color(rng);
        render_bands(
            size,
            &[
                (model.concept_color(x as TokenId), concept_rows),
                (shared, shared_rows),
                (clutter, clutter_rows),
            ],
        )
    };
    let i1 = image(x1, rng);
    let i2 = image(x2, rng);
    Pair {
        concepts: [x1 as TokenId, x2 as TokenId],
        images: [i1, i2],
    }
}

fn caption_prompt(a: TokenId, b: TokenId) -> String {
    format!("Which caption describes image 1? Options: A: c{a}; B: c{b}; Answer with a letter.")
}

fn image_prompt(caption: TokenId, a: usize, b: usize) -> String {
    format!("Across all images, which one shows caption: c{caption}? Options: A: image {a}; B: image {b}; Answer with a letter.")
}

fn letters() -> Vec<Candidate> {
    vec![Candidate::Text("A".into()), Candidate::Text("B".into())]
}

fn group_instances(g: usize, pair: &Pair, rng: &mut Substream) -> Vec<EvalInstance> {
    let gid = format!("g{g}");
    let mut out = Vec::with_capacity(4);
    for i in 0..2 {
        let (own, other) = (pair.concepts[i], pair.concepts[1 - i]);
        let gold = pick(rng, 2);
        let (a, b) = if gold == 0 { (own, other) } else { (other, own) };
        out.push(EvalInstance {
            id: format!("{gid}-text-{}", i + 1),
            images: vec![pair.images[i].clone()],
            task_kind: TaskKind::CaptionChoice,
            prompt_template: caption_prompt(a, b),
            candidates: letters(),
            gold,
            group_id: Some(gid.clone()),
        });
    }
    for i in 0..2 {
        let gold = pick(rng, 2);
        let (own, other) = (i + 1, 2 - i);
        let (a, b) = if gold == 0 { (own, other) } else { (other, own) };
        out.push(EvalInstance {
            id: format!("{gid}-image-{}", i + 1),
            images: vec![pair.images[0].clone(), pair.images[1].clone()],
            task_kind: TaskKind::ImageChoice,
            prompt_template: image_prompt(pair.concepts[i], a, b),
            candidates: letters(),
            gold,
            group_id: Some(gid.clone()),
        });
    }
    out
}

/// Every sub-question is answered correctly, with a strict margin, by the
/// same model without cross-image mixing.
fn well_posed(clean: &SyntheticModel, instances: &[EvalInstance]) -> Result<bool> {
    for inst in instances {
        let ctx = ImageContext::clean(&inst.images)?;
        let logits = clean.synthetic_logits(&ProviderRequest::new(ctx, inst.prompt(), vec![])?)?;
        let letter = |i: usize| clean.letter_token(["A", "B"][i]).expect("letter in vocabulary") as usize;
        let (gold, other) = (letter(inst.gold), letter(1 - inst.gold));
        if logits.values()[gold] <= logits.values()[other] {
            return Ok(false);
        }
    }
    Ok(true)
}

fn leakage_instances(g: usize, pair: &Pair, rng: &mut Substream) -> Vec<LeakageInstance> {
    use CaptionRole::*;
    const PERMUTATIONS: [[CaptionRole; 3]; 6] = [
        [Target, Distractor, Merged],
        [Target, Merged, Distractor],
        [Distractor, Target, Merged],
        [Distractor, Merged, Target],
        [Merged, Target, Distractor],
        [Merged, Distractor, Target],
    ];
    (0..2)
        .map(|i| {
            let (t, d) = (pair.concepts[i], pair.concepts[1 - i]);
            LeakageInstance {
                id: format!("g{g}-leak-{}", i + 1),
                image_pair: (pair.images[0].clone(), pair.images[1].clone()),
                target_index: i + 1,
                captions: Captions {
                    target: format!("c{t}"),
                    distractor: format!("c{d}"),
                    merged: format!("c{t} c{d}"),
                },
                option_binding: OptionBinding::new(PERMUTATIONS[pick(rng, 6)]).expect("permutation"),
            }
        })
        .collect()
}

/// Generates `count` groups. Each group renders two images, each made of a
/// band in its concept's color, a band in a color shared by both images
/// (its height grows with `similarity_level` in `[0, 1]`), and a small
/// band of per-image clutter. A group yields two caption-choice and two
/// image-choice eval instances, plus one leakage instance per target.
///
/// Pairs are redrawn until the mixing-free version of `model` answers all
/// four sub-questions correctly, so imperfect scores under mixing are due
/// to the mixing alone.
pub fn synthesize_minimal_pairs(
    seed: u64,
    count: usize,
    similarity_level: f64,
    model: &SyntheticModel,
) -> Result<SyntheticSuite> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&similarity_level) {
        return Err(Error::InvalidArgument(format!(
            "similarity_level must be in [0, 1], got {similarity_level}"
        )));
    }
    if model.num_concepts() < 2 {
        return Err(Error::InvalidArgument("model needs at least 2 concepts".into()));
    }
    let clean = SyntheticModel::new(SyntheticModelConfig {
        beta: 0.0,
        ..model.config().clone()
    })?;
    let root = RandomStream::new(seed).derive("synth");
    let mut suite = SyntheticSuite {
        eval: Vec::with_capacity(4 * count),
        leakage: Vec::with_capacity(2 * count),
    };
    for g in 0..count {
        let mut found = None;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = root.substream(g as u64, attempt);
            let pair = draw_pair(model, &mut rng, similarity_level);
            let eval = group_instances(g, &pair, &mut rng);
            if well_posed(&clean, &eval)? {
                let leakage = leakage_instances(g, &pair, &mut rng);
                found = Some((eval, leakage));
                break;
            }
        }
        let (eval, leakage) = found.ok_or_else(|| {
            Error::InvalidConfig(format!("no well-posed pair for group {g} after {MAX_ATTEMPTS} draws"))
        })?;
        suite.eval.extend(eval);
        suite.leakage.extend(leakage);
    }
    Ok(suite)
}
