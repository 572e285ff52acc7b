//! Decoding strategies, sampling, the autoregressive loop and candidate
//! scoring.
//!
//! Per step, with `N` input images:
//!
//! * baseline: one pass on the clean context.
//! * focus: `N` passes, pass `k` keeping only image `k` clean, plus one pass
//!   with every image masked; `f_final = sum_k (f_k - alpha * f_noise)`.
//! * VCD variant: the clean pass and the fully masked pass;
//!   `f_final = f_orig + alpha * (f_orig - f_noise)`.
//!
//! The passes of one step are independent and may run on a thread pool.
//! Aggregation always happens afterwards in slot order, and masking noise is
//! keyed by `(step, slot)`, so the result does not depend on scheduling.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{build_masked_contexts, noised_images, NoiseSpec};
use crate::provider::{LogitProvider, ProviderRequest};
use crate::rng::{RandomStream, Substream};
use crate::types::{
    DecodingConfig, GenerationTrace, ImageContext, ImageTensor, LogitVector, Strategy, TokenId,
};

/// Result of one decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub final_logits: LogitVector,
    /// `f_1..f_N, f_noise` for focus, `f_orig, f_noise` for the VCD variant,
    /// `f_orig` for baseline. Only kept when the decoder traces components.
    pub component_logits: Option<Vec<LogitVector>>,
    pub pass_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    /// Position in the input candidate list.
    pub index: usize,
    /// Sum of token log-probabilities under teacher forcing.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCandidates {
    /// Descending by score; exact ties keep input order.
    pub ranking: Vec<CandidateScore>,
    pub pass_count: usize,
}

impl ScoredCandidates {
    pub fn best(&self) -> usize {
        self.ranking[0].index
    }

    /// Scores in input order.
    pub fn scores(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ranking.len()];
        for c in &self.ranking {
            out[c.index] = c.score;
        }
        out
    }
}

/// `sum_k (f_k - alpha * f_noise)`, accumulated for `k = 1..N` in order.
pub fn aggregate_focus(focused: &[LogitVector], noise: &LogitVector, alpha: f64) -> Result<LogitVector> {
    let (first, rest) = focused
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("focus aggregation needs at least one pass".into()))?;
    let mut acc = first.clone();
    acc.add_scaled(-alpha, noise)?;
    for f in rest {
        acc.add_scaled(1.0, f)?;
        acc.add_scaled(-alpha, noise)?;
    }
    Ok(acc)
}

/// `f_orig + alpha * (f_orig - f_noise)`.
pub fn aggregate_vcd(original: &LogitVector, noise: &LogitVector, alpha: f64) -> Result<LogitVector> {
    let mut diff = original.clone();
    diff.add_scaled(-1.0, noise)?;
    let mut out = original.clone();
    out.add_scaled(alpha, &diff)?;
    Ok(out)
}

/// Draws from `softmax(logits / temperature)`; temperature 0 is argmax with
/// the lowest index winning ties.
pub fn sample_token(logits: &LogitVector, temperature: f64, rng: &mut Substream) -> TokenId {
    assert!(!logits.is_empty(), "cannot sample from empty logits");
    if temperature == 0.0 {
        return logits.argmax().expect("non-empty") as TokenId;
    }
    let probs: Vec<f64> = logits.log_softmax(temperature).into_iter().map(f64::exp).collect();
    debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let u = rng.uniform();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        cumulative += p;
        if u < cumulative {
            return i as TokenId;
        }
    }
    last_positive as TokenId
}

/// Runs decoding steps against a provider. Holds no per-call state; `jobs`
/// bounds how many passes of one step run at once.
#[derive(Clone)]
pub struct Decoder {
    pool: Option<Arc<rayon::ThreadPool>>,
    keep_components: bool,
}

impl std::fmt::Debug for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Decoder")
            .field("jobs", &self.jobs())
            .field("keep_components", &self.keep_components)
            .finish()
    }
}

impl Default for Decoder {
    fn default() -> Self {
        Self::serial()
    }
}

impl Decoder {
    pub fn serial() -> Self {
        Self {
            pool: None,
            keep_components: false,
        }
    }

    pub fn with_jobs(jobs: usize) -> Result<Self> {
        if jobs == 0 {
            return Err(Error::InvalidConfig("jobs must be >= 1".into()));
        }
        if jobs == 1 {
            return Ok(Self::serial());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start thread pool: {e}")))?;
        Ok(Self {
            pool: Some(Arc::new(pool)),
            keep_components: false,
        })
    }

    pub fn keep_components(mut self, keep: bool) -> Self {
        self.keep_components = keep;
        self
    }

    pub fn jobs(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Maps `f` over `items`, on the pool when there is one. Output order
    /// matches input order.
    pub fn map_ordered<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        match &self.pool {
            Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(f).collect(),
        }
    }

    /// One provider call per request, results in request order. Any failure
    /// fails the whole batch.
    fn run_passes(&self, provider: &dyn LogitProvider, requests: &[ProviderRequest]) -> Result<Vec<LogitVector>> {
        match &self.pool {
            Some(pool) if requests.len() > 1 => pool.install(|| {
                requests
                    .par_iter()
                    .map(|r| provider.next_token_logits(r))
                    .collect::<Vec<_>>()
                    .into_iter()
                    .collect()
            }),
            _ => requests.iter().map(|r| provider.next_token_logits(r)).collect(),
        }
    }

    fn components(&self, logits: Vec<LogitVector>) -> Option<Vec<LogitVector>> {
        self.keep_components.then_some(logits)
    }

    pub fn baseline_step(
        &self,
        provider: &dyn LogitProvider,
        images: &[Arc<ImageTensor>],
        prompt: &str,
        prefix: &[TokenId],
    ) -> Result<StepOutput> {
        let request = ProviderRequest::new(ImageContext::clean(images)?, prompt, prefix.to_vec())?;
        let logits = provider.next_token_logits(&request)?;
        Ok(StepOutput {
            component_logits: self.components(vec![logits.clone()]),
            final_logits: logits,
            pass_count: 1,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn focus_step(
        &self,
        provider: &dyn LogitProvider,
        images: &[Arc<ImageTensor>],
        prompt: &str,
        prefix: &[TokenId],
        config: &DecodingConfig,
        noise_rng: &RandomStream,
        step: u64,
    ) -> Result<StepOutput> {
        let spec = NoiseSpec::new(config.noise_type, config.lambda)?;
        let masked = build_masked_contexts(images, &spec, noise_rng, step)?;
        let requests = masked
            .contexts
            .into_iter()
            .chain(std::iter::once(masked.noise_context))
            .map(|ctx| ProviderRequest::new(ctx, prompt, prefix.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let mut logits = self.run_passes(provider, &requests)?;
        let pass_count = logits.len();
        let noise = logits.pop().expect("noise pass present");
        let final_logits = aggregate_focus(&logits, &noise, config.alpha)?;
        let component_logits = self.keep_components.then(|| {
            logits.push(noise);
            logits
        });
        Ok(StepOutput {
            final_logits,
            component_logits,
            pass_count,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn vcd_variant_step(
        &self,
        provider: &dyn LogitProvider,
        images: &[Arc<ImageTensor>],
        prompt: &str,
        prefix: &[TokenId],
        config: &DecodingConfig,
        noise_rng: &RandomStream,
        step: u64,
    ) -> Result<StepOutput> {
        let spec = NoiseSpec::new(config.noise_type, config.lambda)?;
        let noised = noised_images(images, &spec, noise_rng, step)?;
        let n = images.len();
        let requests = [
            ProviderRequest::new(ImageContext::clean(images)?, prompt, prefix.to_vec())?,
            ProviderRequest::new(ImageContext::new(noised, vec![true; n])?, prompt, prefix.to_vec())?,
        ];
        let logits = self.run_passes(provider, &requests)?;
        let final_logits = aggregate_vcd(&logits[0], &logits[1], config.alpha)?;
        Ok(StepOutput {
            final_logits,
            component_logits: self.components(logits),
            pass_count: 2,
        })
    }

    /// Dispatches on `config.strategy`.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        provider: &dyn LogitProvider,
        images: &[Arc<ImageTensor>],
        prompt: &str,
        prefix: &[TokenId],
        config: &DecodingConfig,
        noise_rng: &RandomStream,
        step: u64,
    ) -> Result<StepOutput> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("at least one image is required".into()));
        }
        match config.strategy {
            Strategy::Baseline => self.baseline_step(provider, images, prompt, prefix),
            Strategy::Focus => self.focus_step(provider, images, prompt, prefix, config, noise_rng, step),
            Strategy::VcdVariant => {
                self.vcd_variant_step(provider, images, prompt, prefix, config, noise_rng, step)
            }
        }
    }

    /// Samples tokens until the provider's stop token or `max_tokens`. A
    /// provider failure ends generation with an incomplete trace; invalid
    /// configuration is an error.
    pub fn generate(
        &self,
        provider: &dyn LogitProvider,
        images: &[Arc<ImageTensor>],
        prompt: &str,
        config: &DecodingConfig,
    ) -> Result<GenerationTrace> {
        config.validate()?;
        if images.is_empty() {
            return Err(Error::InvalidArgument("at least one image is required".into()));
        }
        let root = RandomStream::new(config.seed);
        let noise_rng = root.derive("noise");
        let sample_rng = root.derive("sample");
        let stop = provider.stop_token();

        let mut trace = GenerationTrace {
            tokens: Vec::with_capacity(config.max_tokens),
            per_step_logits: self.keep_components.then(Vec::new),
            forward_pass_count: 0,
            config: config.clone(),
            num_images: images.len(),
            complete: true,
            error: None,
        };
        for step in 0..config.max_tokens as u64 {
            let out = match self.step(provider, images, prompt, &trace.tokens, config, &noise_rng, step) {
                Ok(out) => out,
                Err(e) => {
                    trace.complete = false;
                    trace.error = Some(e.to_string());
                    break;
                }
            };
            let token = sample_token(&out.final_logits, config.temperature, &mut sample_rng.substream(step, 0));
            trace.forward_pass_count += out.pass_count;
            trace.tokens.push(token);
            if let Some(steps) = trace.per_step_logits.as_mut() {
                steps.push(out.final_logits);
            }
            if Some(token) == stop {
                break;
            }
        }
        Ok(trace)
    }

    /// Scores each candidate by `sum_i log softmax(f_final)[c_i]`, where step
    /// `i` sees the candidate's own first `i` tokens as prefix. Steps with
    /// the same prefix are evaluated once and shared between candidates.
    pub fn score_candidates(
        &self,
        provider: &dyn LogitProvider,
        images: &[Arc<ImageTensor>],
        prompt: &str,
        candidates: &[Vec<TokenId>],
        config: &DecodingConfig,
        noise_rng: &RandomStream,
    ) -> Result<ScoredCandidates> {
        config.validate()?;
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("no candidates to score".into()));
        }
        if let Some(i) = candidates.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!("candidate {i} is empty")));
        }
        let mut cache: HashMap<&[TokenId], Vec<f64>> = HashMap::new();
        let mut pass_count = 0;
        let mut ranking = Vec::with_capacity(candidates.len());
        for (index, candidate) in candidates.iter().enumerate() {
            let mut score = 0.0;
            for (i, &token) in candidate.iter().enumerate() {
                let prefix = &candidate[..i];
                if !cache.contains_key(prefix) {
                    let out = self.step(provider, images, prompt, prefix, config, noise_rng, i as u64)?;
                    pass_count += out.pass_count;
                    cache.insert(prefix, out.final_logits.log_softmax(1.0));
                }
                let log_probs = &cache[prefix];
                let lp = log_probs.get(token as usize).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "candidate token {token} outside vocabulary of {}",
                        log_probs.len()
                    ))
                })?;
                score += lp;
            }
            ranking.push(CandidateScore { index, score });
        }
        ranking.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(ScoredCandidates { ranking, pass_count })
    }
}
