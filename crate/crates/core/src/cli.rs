//! Command-line front end.
//!
//! Settings resolve as flags, then the `--config` TOML file, then defaults.
//! The remote endpoint additionally falls back to `FOCUS_ENDPOINT`. Every
//! command that takes `--out` writes `manifest.json` before any result and
//! publishes the directory with a rename, so a directory is either absent
//! or complete.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::eval::{
    compare_strategies, evaluate, load_dataset, save_dataset, split_validation, synthesize_minimal_pairs, write_jsonl,
    EvalInstance, Metrics, SCHEMA_VERSION,
};
use crate::leakage::{
    load_leakage_instances, run_leakage_experiment, save_leakage_instances, LeakageInstance, LeakageOptions,
    DEFAULT_LEAKAGE_PROMPT,
};
use crate::provider::wire::decode_png;
use crate::provider::{LogitProvider, RemoteConfig, RemoteProvider, SyntheticModel, SyntheticModelConfig};
use crate::types::{DecodingConfig, ImageTensor, NoiseType, Strategy, TokenId};

pub const ENDPOINT_ENV: &str = "FOCUS_ENDPOINT";

#[derive(Parser, Debug)]
#[command(name = "focus", version, about = "Image-focused contrastive decoding for multi-image VLMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decode a token sequence for a set of images.
    Generate(GenerateArgs),
    /// Score a JSONL dataset with one strategy.
    Eval(EvalArgs),
    /// Run the merged-caption leakage probe.
    Leakage(LeakageArgs),
    /// Score a dataset with several strategies on the same seeds.
    Compare(CompareArgs),
    /// Write a synthetic minimal-pair dataset and its leakage instances.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Synthetic,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitPart {
    All,
    Validation,
    Test,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML file with any of the flag names below as keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_parser = parse_noise)]
    pub noise: Option<NoiseType>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Base URL of a logit server (falls back to FOCUS_ENDPOINT).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Request timeout for the remote provider, in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Inter-image mixing of the synthetic provider.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// PNG input, repeatable; slot order follows flag order.
    #[arg(long = "image")]
    pub images: Vec<PathBuf>,
    /// Without --image, render this many flat concept-colored images.
    #[arg(long, default_value_t = 2)]
    pub num_images: usize,
    #[arg(long, default_value = "Describe image 1.")]
    pub prompt: String,
    /// Write the generation trace (to OUT/trace.json, or stdout).
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Which part of the group-level validation split to run.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitPart,
    #[arg(long, default_value_t = 0.1)]
    pub split_fraction: f64,
}

#[derive(Args, Debug)]
pub struct LeakageArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Leakage JSONL; without it, pairs are synthesized in memory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub level: f64,
    #[arg(long, default_value = DEFAULT_LEAKAGE_PROMPT)]
    pub prompt_template: String,
    /// Token ids of A,B,C for providers without a vocabulary.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub option_tokens: Option<Vec<TokenId>>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated strategies; all share the other settings.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, default_value = "baseline,focus")]
    pub strategies: Vec<Strategy>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 200)]
    pub pairs: usize,
    /// Shared-content level in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub level: f64,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

fn parse_noise(s: &str) -> Result<NoiseType, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub strategy: Option<String>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub temperature: Option<f64>,
    pub noise: Option<String>,
    pub seed: Option<u64>,
    pub max_tokens: Option<usize>,
    pub provider: Option<ProviderKind>,
    pub endpoint: Option<String>,
    pub timeout: Option<f64>,
    pub retries: Option<u32>,
    pub beta: Option<f64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Synthetic { config: SyntheticModelConfig },
    Remote { endpoint: String, timeout_secs: f64, retries: u32 },
}

/// Settings after applying flags, file and defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub decoding: DecodingConfig,
    pub provider: ProviderSpec,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub overwrite: bool,
}

impl CommonArgs {
    pub fn resolve(&self) -> anyhow::Result<Resolved> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let defaults = DecodingConfig::default();
        let file_strategy = file.strategy.as_deref().map(str::parse::<Strategy>).transpose()?;
        let file_noise = file.noise.as_deref().map(str::parse::<NoiseType>).transpose()?;
        let decoding = DecodingConfig {
            strategy: self.strategy.or(file_strategy).unwrap_or(defaults.strategy),
            lambda: self.lambda.or(file.lambda).unwrap_or(defaults.lambda),
            alpha: self.alpha.or(file.alpha).unwrap_or(defaults.alpha),
            temperature: self.temperature.or(file.temperature).unwrap_or(defaults.temperature),
            noise_type: self.noise.or(file_noise).unwrap_or(defaults.noise_type),
            seed: self.seed.or(file.seed).unwrap_or(defaults.seed),
            max_tokens: self.max_tokens.or(file.max_tokens).unwrap_or(defaults.max_tokens),
        };
        decoding.validate()?;
        let provider = match self.provider.or(file.provider).unwrap_or(ProviderKind::Synthetic) {
            ProviderKind::Synthetic => {
                let mut config = SyntheticModelConfig::default();
                if let Some(beta) = self.beta.or(file.beta) {
                    config.beta = beta;
                }
                config.validate()?;
                ProviderSpec::Synthetic { config }
            }
            ProviderKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .or(file.endpoint)
                    .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
                    .ok_or_else(|| anyhow!("remote provider needs --endpoint or {ENDPOINT_ENV}"))?;
                let timeout_secs = self.timeout.or(file.timeout).unwrap_or(30.0);
                if !(timeout_secs > 0.0 && timeout_secs.is_finite()) {
                    bail!("timeout must be > 0 seconds");
                }
                ProviderSpec::Remote {
                    endpoint,
                    timeout_secs,
                    retries: self.retries.or(file.retries).unwrap_or(3),
                }
            }
        };
        let jobs = self.jobs.or(file.jobs).unwrap_or(1);
        if jobs == 0 {
            bail!("--jobs must be >= 1");
        }
        Ok(Resolved {
            decoding,
            provider,
            jobs,
            out: self.out.clone().or(file.out),
            overwrite: self.overwrite,
        })
    }
}

impl ProviderSpec {
    pub fn build(&self) -> anyhow::Result<Arc<dyn LogitProvider>> {
        Ok(match self {
            ProviderSpec::Synthetic { config } => Arc::new(SyntheticModel::new(config.clone())?),
            ProviderSpec::Remote {
                endpoint,
                timeout_secs,
                retries,
            } => {
                let mut config = RemoteConfig::new(endpoint.clone());
                config.timeout = Duration::from_secs_f64(*timeout_secs);
                config.retries = *retries;
                Arc::new(RemoteProvider::new(config))
            }
        })
    }

    /// Synthetic config for rendering and synthesis; the default model when
    /// the provider is remote.
    fn synthetic_config(&self) -> SyntheticModelConfig {
        match self {
            ProviderSpec::Synthetic { config } => config.clone(),
            ProviderSpec::Remote { .. } => SyntheticModelConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config: DecodingConfig,
    pub provider: ProviderSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub output_dir: String,
    pub jobs: usize,
    /// Command-specific settings.
    pub parameters: serde_json::Value,
    pub timestamp: String,
    pub tool_version: String,
}

impl RunManifest {
    fn new(command: &str, resolved: &Resolved, dataset: Option<&Path>, out: &Path, parameters: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config: resolved.decoding.clone(),
            provider: resolved.provider.clone(),
            dataset: dataset.map(|p| p.display().to_string()),
            output_dir: out.display().to_string(),
            jobs: resolved.jobs,
            parameters,
            timestamp: chrono::Utc::now().to_rfc3339(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Output directory under construction. Files go to a sibling staging
/// directory that replaces the target on [`OutputDir::publish`].
struct OutputDir {
    target: PathBuf,
    staging: PathBuf,
}

impl OutputDir {
    fn create(target: &Path, overwrite: bool, manifest: &RunManifest) -> anyhow::Result<Self> {
        if target.exists() && !overwrite {
            bail!("{} already exists (use --overwrite to replace it)", target.display());
        }
        let name = target
            .file_name()
            .ok_or_else(|| anyhow!("invalid output directory {}", target.display()))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
        let dir = Self {
            target: target.to_path_buf(),
            staging,
        };
        dir.write_json("manifest.json", manifest)?;
        Ok(dir)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.staging.join(file)
    }

    fn write_json<T: Serialize>(&self, file: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(file), text).with_context(|| format!("writing {file}"))
    }

    fn publish(self) -> anyhow::Result<()> {
        let mut old = None;
        if self.target.exists() {
            let mut aside = self.target.clone().into_os_string();
            aside.push(format!(".old-{}", std::process::id()));
            let aside = PathBuf::from(aside);
            fs::rename(&self.target, &aside)?;
            old = Some(aside);
        }
        fs::rename(&self.staging, &self.target)
            .with_context(|| format!("publishing {}", self.target.display()))?;
        if let Some(old) = old {
            fs::remove_dir_all(old)?;
        }
        Ok(())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.staging.exists() {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// Instance failures reported at exit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub failed: usize,
    pub total: usize,
}

impl Outcome {
    fn ok() -> Self {
        Self { failed: 0, total: 0 }
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) if outcome.failed == 0 => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("error: {} of {} instance(s) failed", outcome.failed, outcome.total);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Leakage(args) => cmd_leakage(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn decoder(resolved: &Resolved) -> anyhow::Result<Decoder> {
    Ok(Decoder::with_jobs(resolved.jobs)?)
}

fn require_out(resolved: &Resolved, command: &str) -> anyhow::Result<PathBuf> {
    resolved
        .out
        .clone()
        .ok_or_else(|| anyhow!("`{command}` needs --out DIR"))
}

fn load_png(path: &Path) -> anyhow::Result<Arc<ImageTensor>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Arc::new(decode_png(&bytes).with_context(|| format!("decoding {}", path.display()))?))
}

fn concept_images(config: &SyntheticModelConfig, n: usize) -> anyhow::Result<Vec<Arc<ImageTensor>>> {
    let model = SyntheticModel::new(config.clone())?;
    if n == 0 || n > model.num_concepts() {
        bail!("--num-images must be in 1..={}", model.num_concepts());
    }
    (0..n)
        .map(|t| {
            let rgb = model.concept_color(t as TokenId);
            let data = (0..16 * 16).flat_map(|_| rgb).collect();
            Ok(Arc::new(ImageTensor::new(16, 16, 3, data)?))
        })
        .collect()
}

pub fn cmd_generate(args: GenerateArgs) -> anyhow::Result<Outcome> {
    let resolved = args.common.resolve()?;
    let provider = resolved.provider.build()?;
    let images = if args.images.is_empty() {
        concept_images(&resolved.provider.synthetic_config(), args.num_images)?
    } else {
        args.images.iter().map(|p| load_png(p)).collect::<anyhow::Result<_>>()?
    };
    let decoder = decoder(&resolved)?.keep_components(args.trace);
    let out = match &resolved.out {
        Some(dir) => {
            let params = serde_json::json!({
                "prompt": args.prompt,
                "images": args.images,
                "num_images": images.len(),
            });
            let manifest = RunManifest::new("generate", &resolved, None, dir, params);
            Some(OutputDir::create(dir, resolved.overwrite, &manifest)?)
        }
        None => None,
    };
    let trace = decoder.generate(provider.as_ref(), &images, &args.prompt, &resolved.decoding)?;
    let text = match provider.vocabulary() {
        Some(vocab) => vocab.detokenize(&trace.tokens),
        None => trace.tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "),
    };
    println!("{text}");
    if args.trace {
        match &out {
            Some(dir) => dir.write_json("trace.json", &trace)?,
            None => println!("{}", serde_json::to_string_pretty(&trace)?),
        }
    }
    if let Some(dir) = &out {
        dir.write_json("tokens.json", &serde_json::json!({ "tokens": trace.tokens, "text": text }))?;
    }
    if let Some(dir) = out {
        dir.publish()?;
    }
    if let Some(e) = &trace.error {
        eprintln!("generation stopped early: {e}");
    }
    Ok(Outcome {
        failed: usize::from(!trace.complete),
        total: 1,
    })
}

fn load_eval_dataset(path: &Path) -> anyhow::Result<Vec<EvalInstance>> {
    let instances = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    if instances.is_empty() {
        bail!("no instances in {}", path.display());
    }
    Ok(instances)
}

fn print_metrics(label: &str, m: &Metrics) {
    let acc = m.accuracy.map_or("-".to_string(), |a| format!("{:.4}", a));
    let w = &m.winoground;
    println!(
        "{label:<16} n={:<6} failed={:<4} acc={acc:<7} text={:>6.2} image={:>6.2} group={:>6.2} passes={}",
        m.n_instances, m.n_failed, w.text, w.image, w.group, m.pass_count
    );
}

pub fn cmd_eval(args: EvalArgs) -> anyhow::Result<Outcome> {
    let resolved = args.common.resolve()?;
    let out = require_out(&resolved, "eval")?;
    let mut instances = load_eval_dataset(&args.dataset)?;
    if args.split != SplitPart::All {
        if !(0.0..=1.0).contains(&args.split_fraction) {
            bail!("--split-fraction must be in [0, 1]");
        }
        let (validation, test) = split_validation(&instances, args.split_fraction, resolved.decoding.seed);
        instances = if args.split == SplitPart::Validation { validation } else { test };
        if instances.is_empty() {
            bail!("no instances in the selected split");
        }
    }
    let params = serde_json::json!({
        "split": format!("{:?}", args.split).to_lowercase(),
        "split_fraction": args.split_fraction,
    });
    let manifest = RunManifest::new("eval", &resolved, Some(&args.dataset), &out, params);
    let dir = OutputDir::create(&out, resolved.overwrite, &manifest)?;
    let provider = resolved.provider.build()?;
    let label = resolved.decoding.strategy.as_str();
    let run = evaluate(&instances, provider.as_ref(), &resolved.decoding, &decoder(&resolved)?, label)?;
    write_jsonl(&dir.path("records.jsonl"), &run.records)?;
    dir.write_json(
        "metrics.json",
        &serde_json::json!({ "schema_version": SCHEMA_VERSION, "strategy": label, "metrics": run.metrics }),
    )?;
    dir.publish()?;
    print_metrics(label, &run.metrics);
    Ok(Outcome {
        failed: run.metrics.n_failed,
        total: run.metrics.n_instances,
    })
}

pub fn cmd_compare(args: CompareArgs) -> anyhow::Result<Outcome> {
    let resolved = args.common.resolve()?;
    let out = require_out(&resolved, "compare")?;
    if args.strategies.is_empty() {
        bail!("--strategies needs at least one strategy");
    }
    let instances = load_eval_dataset(&args.dataset)?;
    let configs: Vec<DecodingConfig> = args
        .strategies
        .iter()
        .map(|&strategy| DecodingConfig {
            strategy,
            ..resolved.decoding.clone()
        })
        .collect();
    let params = serde_json::json!({ "strategies": args.strategies });
    let manifest = RunManifest::new("compare", &resolved, Some(&args.dataset), &out, params);
    let dir = OutputDir::create(&out, resolved.overwrite, &manifest)?;
    let provider = resolved.provider.build()?;
    let run = compare_strategies(&instances, provider.as_ref(), &configs, &decoder(&resolved)?)?;
    write_jsonl(&dir.path("records.jsonl"), &run.records)?;
    dir.write_json("report.json", &run.report)?;
    dir.publish()?;
    for s in &run.report.strategies {
        print_metrics(&s.label, &s.metrics);
    }
    for d in &run.report.deltas {
        println!(
            "{} -> {}: text {:+.2} image {:+.2} group {:+.2}",
            d.from, d.to, d.text, d.image, d.group
        );
    }
    let failed = run.report.strategies.iter().map(|s| s.metrics.n_failed).sum();
    Ok(Outcome {
        failed,
        total: run.records.len(),
    })
}

pub fn cmd_leakage(args: LeakageArgs) -> anyhow::Result<Outcome> {
    let resolved = args.common.resolve()?;
    let out = require_out(&resolved, "leakage")?;
    let instances: Vec<LeakageInstance> = match &args.dataset {
        Some(path) => load_leakage_instances(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let model = SyntheticModel::new(resolved.provider.synthetic_config())?;
            synthesize_minimal_pairs(resolved.decoding.seed, args.pairs, args.level, &model)?.leakage
        }
    };
    if instances.is_empty() {
        bail!("no instances");
    }
    let option_tokens = match &args.option_tokens {
        Some(t) => Some(<[TokenId; 3]>::try_from(t.as_slice()).map_err(|_| anyhow!("--option-tokens needs 3 ids"))?),
        None => None,
    };
    let options = LeakageOptions {
        prompt_template: args.prompt_template.clone(),
        option_tokens,
    };
    let params = serde_json::json!({
        "pairs": args.dataset.is_none().then_some(args.pairs),
        "level": args.dataset.is_none().then_some(args.level),
        "prompt_template": options.prompt_template,
        "option_tokens": options.option_tokens,
    });
    let manifest = RunManifest::new("leakage", &resolved, args.dataset.as_deref(), &out, params);
    let dir = OutputDir::create(&out, resolved.overwrite, &manifest)?;
    let provider = resolved.provider.build()?;
    let run = run_leakage_experiment(&instances, provider.as_ref(), &resolved.decoding, &decoder(&resolved)?, &options)?;
    write_jsonl(&dir.path("records.jsonl"), &run.records)?;
    dir.write_json("report.json", &run.report)?;
    dir.publish()?;
    let r = &run.report;
    println!(
        "{:<12} R_s={:.4} R_m={:.4} C={:+.4} acc_s={:.4} acc_m={:.4} sim={:.4} (n_s={}, n_m={}, failed={})",
        resolved.decoding.strategy.as_str(),
        r.r_single,
        r.r_multi,
        r.c_score,
        r.acc_single,
        r.acc_multi,
        r.mean_pair_similarity,
        r.n_single,
        r.n_multi,
        r.n_failed
    );
    Ok(Outcome {
        failed: r.n_failed,
        total: instances.len(),
    })
}

pub fn cmd_synth(args: SynthArgs) -> anyhow::Result<Outcome> {
    let resolved = args.common.resolve()?;
    let out = require_out(&resolved, "synth")?;
    let config = resolved.provider.synthetic_config();
    let model = SyntheticModel::new(config)?;
    let params = serde_json::json!({ "pairs": args.pairs, "level": args.level });
    let manifest = RunManifest::new("synth", &resolved, None, &out, params);
    let dir = OutputDir::create(&out, resolved.overwrite, &manifest)?;
    let suite = synthesize_minimal_pairs(resolved.decoding.seed, args.pairs, args.level, &model)?;
    save_dataset(&dir.path("eval.jsonl"), &suite.eval)?;
    save_leakage_instances(&dir.path("leakage.jsonl"), &suite.leakage)?;
    dir.publish()?;
    println!(
        "wrote {} eval and {} leakage instances to {}",
        suite.eval.len(),
        suite.leakage.len(),
        out.display()
    );
    Ok(Outcome::ok())
}
