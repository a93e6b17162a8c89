//! Sampled decoding from a next-token model.
//!
//! Every step runs the same pipeline over the model's next-token
//! distribution: temperature (on log-probabilities), top-k, top-p
//! (nucleus), renormalize, then one draw from a
//! `ChaCha8` stream seeded by [`SamplerConfig::seed`]. Decoding stops at EOS
//! (not emitted) or after `max_new_tokens`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{build_context, ContextError, FormatSpec, TokenId, Tokenizer};
use crate::corpus::Utterance;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("model contract violated: {0}")]
    ModelContract(String),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("model file: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// `None` disables top-k.
    pub top_k: Option<usize>,
    /// In `(0, 1]`; `1.0` disables nucleus filtering.
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
    pub max_new_tokens: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_k: None,
            top_p: 1.0,
            temperature: 1.0,
            seed: 0,
            max_new_tokens: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Dialogpt,
    Kogpt2,
    ConvaiMedium,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Dialogpt, Preset::Kogpt2, Preset::ConvaiMedium];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Dialogpt => "dialogpt",
            Preset::Kogpt2 => "kogpt2",
            Preset::ConvaiMedium => "convai-medium",
        }
    }

    pub fn config(self) -> SamplerConfig {
        let base = SamplerConfig::default();
        match self {
            Preset::Dialogpt => SamplerConfig { top_p: 0.7, temperature: 0.8, ..base },
            Preset::Kogpt2 => SamplerConfig {
                top_k: Some(70),
                top_p: 0.5,
                temperature: 1.2,
                ..base
            },
            Preset::ConvaiMedium => SamplerConfig { top_p: 0.5, temperature: 1.2, ..base },
        }
    }
}

impl FromStr for Preset {
    type Err = GenerationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| GenerationError::InvalidConfig(format!("unknown preset `{s}`")))
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(GenerationError::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenerationError::InvalidConfig(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.top_k == Some(0) {
            return Err(GenerationError::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(GenerationError::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// A next-token model: one probability per vocabulary id.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64>;
}

/// Non-negative, finite, right length, sums to 1 within
/// [`DISTRIBUTION_TOLERANCE`].
pub fn check_distribution(probs: &[f64], vocab: usize) -> Result<(), GenerationError> {
    if probs.len() != vocab {
        return Err(GenerationError::ModelContract(format!(
            "expected {vocab} probabilities, got {}",
            probs.len()
        )));
    }
    if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(GenerationError::ModelContract(format!("invalid probability {bad}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(GenerationError::ModelContract(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Softmax of `logits / temperature`, stabilized by the max logit.
/// `-inf` logits get probability zero.
pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>, GenerationError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(GenerationError::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GenerationError::InvalidConfig("logits must be finite".into()));
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(probs)
}

/// Keeps the `top_k` most likely tokens, then the smallest most-likely
/// prefix whose mass reaches `top_p`, and renormalizes. Ranking is by
/// probability, ties by lower id. Returns `probs` unchanged when nothing is
/// removed.
pub fn filter_top_k_top_p(probs: &[f64], top_k: Option<usize>, top_p: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    let support = order.len();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    if let Some(k) = top_k {
        order.truncate(k.max(1));
    }
    if top_p < 1.0 {
        let total: f64 = order.iter().map(|&i| probs[i]).sum();
        let mut cum = 0.0;
        let mut keep = order.len();
        for (n, &i) in order.iter().enumerate() {
            cum += probs[i];
            if cum >= top_p * total {
                keep = n + 1;
                break;
            }
        }
        order.truncate(keep);
    }
    if order.len() == support {
        return probs.to_vec();
    }
    let mass: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut out = vec![0.0; probs.len()];
    for i in order {
        out[i] = probs[i] / mass;
    }
    out
}

/// Inverse-CDF draw over ids in ascending order.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// The filtered distribution one decoding step draws from. At temperature
/// 1 the model distribution is used as is.
pub fn step_distribution(
    probs: &[f64],
    config: &SamplerConfig,
) -> Result<Vec<f64>, GenerationError> {
    let scaled = if config.temperature == 1.0 {
        probs.to_vec()
    } else {
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        apply_temperature(&logits, config.temperature)?
    };
    Ok(filter_top_k_top_p(&scaled, config.top_k, config.top_p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Eos,
    MaxTokens,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    /// Excludes the terminating EOS.
    pub token_ids: Vec<TokenId>,
    pub stop: StopReason,
}

/// Samples a continuation of `context` until `eos` or the token limit.
pub fn generate_utterance(
    lm: &dyn LanguageModel,
    context: &[TokenId],
    eos: TokenId,
    config: &SamplerConfig,
) -> Result<Generated, GenerationError> {
    config.validate()?;
    let vocab = lm.vocab_size();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut window = context.to_vec();
    let mut out = Vec::new();
    while out.len() < config.max_new_tokens {
        let dist = lm.next_distribution(&window);
        check_distribution(&dist, vocab)?;
        let probs = step_distribution(&dist, config)?;
        let next = sample_index(&probs, &mut rng) as TokenId;
        if next == eos {
            return Ok(Generated { token_ids: out, stop: StopReason::Eos });
        }
        out.push(next);
        window.push(next);
    }
    Ok(Generated { token_ids: out, stop: StopReason::MaxTokens })
}

/// Encodes `history` for `responder` and decodes a sampled reply.
pub fn generate_response(
    lm: &dyn LanguageModel,
    tok: &dyn Tokenizer,
    history: &[Utterance],
    responder: &str,
    spec: &FormatSpec,
    config: &SamplerConfig,
) -> Result<String, GenerationError> {
    if lm.vocab_size() != tok.vocab_size() {
        return Err(GenerationError::ModelContract(format!(
            "model vocabulary {} differs from tokenizer vocabulary {}",
            lm.vocab_size(),
            tok.vocab_size()
        )));
    }
    let encoded = build_context(history, responder, spec, tok)?;
    let generated = generate_utterance(lm, &encoded.token_ids, tok.eos_id(), config)?;
    Ok(tok.decode(&generated.token_ids))
}

/// Add-one smoothed bigram model. Each training sequence is read as if it
/// were preceded and followed by EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramLm {
    vocab_size: usize,
    eos: TokenId,
    #[serde(with = "pair_counts")]
    counts: HashMap<(TokenId, TokenId), u64>,
    row_totals: HashMap<TokenId, u64>,
}

mod pair_counts {
    use std::collections::HashMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::context::TokenId;

    pub fn serialize<S: Serializer>(
        map: &HashMap<(TokenId, TokenId), u64>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let mut rows: Vec<(TokenId, TokenId, u64)> =
            map.iter().map(|(&(a, b), &c)| (a, b, c)).collect();
        rows.sort_unstable();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<HashMap<(TokenId, TokenId), u64>, D::Error> {
        let rows: Vec<(TokenId, TokenId, u64)> = Vec::deserialize(d)?;
        Ok(rows.into_iter().map(|(a, b, c)| ((a, b), c)).collect())
    }
}

impl BigramLm {
    pub fn train<'a, I>(sequences: I, vocab_size: usize, eos: TokenId) -> Self
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        let mut lm = Self {
            vocab_size,
            eos,
            counts: HashMap::new(),
            row_totals: HashMap::new(),
        };
        for seq in sequences {
            let mut prev = eos;
            for &t in seq.iter().chain(std::iter::once(&eos)) {
                *lm.counts.entry((prev, t)).or_default() += 1;
                *lm.row_totals.entry(prev).or_default() += 1;
                prev = t;
            }
        }
        lm
    }

    /// Trains on every utterance text in `utterances`.
    pub fn train_on_texts<'a, I>(texts: I, tok: &dyn Tokenizer) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let seqs: Vec<Vec<TokenId>> = texts.into_iter().map(|t| tok.encode(t)).collect();
        Self::train(seqs.iter().map(Vec::as_slice), tok.vocab_size(), tok.eos_id())
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn prob(&self, prev: TokenId, next: TokenId) -> f64 {
        let c = self.counts.get(&(prev, next)).copied().unwrap_or(0) as f64;
        let row = self.row_totals.get(&prev).copied().unwrap_or(0) as f64;
        (c + 1.0) / (row + self.vocab_size as f64)
    }

    pub fn save<W: Write>(&self, out: W) -> Result<(), GenerationError> {
        serde_json::to_writer(out, self).map_err(|e| GenerationError::Model(e.to_string()))
    }

    pub fn load<R: Read>(input: R) -> Result<Self, GenerationError> {
        let lm: Self =
            serde_json::from_reader(input).map_err(|e| GenerationError::Model(e.to_string()))?;
        if lm.vocab_size == 0 || lm.eos as usize >= lm.vocab_size {
            return Err(GenerationError::Model("eos outside vocabulary".into()));
        }
        Ok(lm)
    }
}

impl LanguageModel for BigramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let prev = context.last().copied().unwrap_or(self.eos);
        (0..self.vocab_size as TokenId).map(|t| self.prob(prev, t)).collect()
    }
}
