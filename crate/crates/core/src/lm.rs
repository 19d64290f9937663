//! Vocabulary, sequences and the log-linear auto-regressive model family.
//!
//! A model scores the next symbol (an ordinary token or end-of-sequence) from
//! a fixed feature vector made of three blocks:
//!
//! ```text
//! [ hashed prompt bag (P) | one-hot of last k response tokens (k * (V+1)) | 1 ]
//! ```
//!
//! and turns the logits `z = W f` into a distribution with a tempered softmax.
//! The prompt block is constant across the positions of one response, so the
//! prompt contribution to the logits is computed once per prompt
//! ([`PromptState`]) and every position only adds `k` weight columns.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rng::{derive_seed, LabRng};

/// Token identifier. Ordinary tokens are `0..size`, end-of-sequence is `size`.
pub type TokenId = u32;

/// Default bound on the number of responses `enumerate_responses` may produce.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(LabError::InvalidArgument(format!(
                "vocabulary size must be at least 2, got {size}"
            )));
        }
        if size >= TokenId::MAX as usize {
            return Err(LabError::InvalidArgument(format!("vocabulary size {size} too large")));
        }
        Ok(Self { size })
    }

    /// Number of ordinary tokens.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos_id(&self) -> TokenId {
        self.size as TokenId
    }

    /// Ordinary tokens plus end-of-sequence.
    pub fn num_symbols(&self) -> usize {
        self.size + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Prompt,
    Response,
}

/// An ordered list of ordinary tokens. Never contains the end-of-sequence id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sequence {
    tokens: Vec<TokenId>,
    role: Role,
}

impl Sequence {
    pub fn prompt(tokens: Vec<TokenId>) -> Self {
        Self {
            tokens,
            role: Role::Prompt,
        }
    }

    pub fn response(tokens: Vec<TokenId>) -> Self {
        Self {
            tokens,
            role: Role::Response,
        }
    }

    pub fn empty_response() -> Self {
        Self::response(Vec::new())
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks token range and length.
    pub fn validate(&self, vocab: &Vocabulary, max_len: usize) -> Result<()> {
        if let Some(&bad) = self.tokens.iter().find(|&&t| t as usize >= vocab.size()) {
            return Err(LabError::InvalidArgument(format!(
                "token {bad} outside vocabulary of size {}",
                vocab.size()
            )));
        }
        if self.tokens.len() > max_len {
            return Err(LabError::InvalidArgument(format!(
                "{:?} of length {} exceeds maximum {max_len}",
                self.role,
                self.tokens.len()
            )));
        }
        Ok(())
    }
}

/// A probability vector over the vocabulary plus end-of-sequence (last entry).
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Wraps a probability vector, checking non-negativity and normalization.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(LabError::InvalidArgument("distribution needs at least 2 symbols".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(LabError::InvalidArgument("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(LabError::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Tempered softmax of raw logits, with max subtraction.
    pub fn from_logits(logits: &[f64], temperature: f64) -> Self {
        let mut probs = Vec::with_capacity(logits.len());
        softmax_into(logits, temperature, &mut probs);
        Self { probs }
    }

    pub fn uniform(num_symbols: usize) -> Self {
        Self {
            probs: vec![1.0 / num_symbols as f64; num_symbols],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of end-of-sequence.
    pub fn eos(&self) -> f64 {
        *self.probs.last().expect("non-empty distribution")
    }

    /// Index of the most likely symbol (first one on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Draws a symbol by inversion of the cumulative distribution.
    pub fn sample(&self, rng: &mut LabRng) -> usize {
        sample_index(&self.probs, rng)
    }
}

pub(crate) fn softmax_into(logits: &[f64], temperature: f64, out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(logits.iter().map(|&z| ((z - max) / temperature).exp()));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut LabRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` above the accumulated mass: take the last symbol with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Fixed random-sign hashing of prompt n-gram counts into `P` coordinates.
///
/// Order 1 hashes single tokens; order 2 additionally hashes adjacent token
/// pairs, which lifts the rank of the prompt features above the vocabulary size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptHasher {
    pub seed: u64,
    pub ngram_order: usize,
}

impl PromptHasher {
    pub fn new(seed: u64, ngram_order: usize) -> Self {
        Self {
            seed,
            ngram_order: ngram_order.max(1),
        }
    }

    fn bucket(&self, gram: &[TokenId], dim: usize) -> (usize, f64) {
        let path: Vec<u64> = std::iter::once(gram.len() as u64)
            .chain(gram.iter().map(|&t| t as u64))
            .collect();
        let h = derive_seed(self.seed, &path);
        let index = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        (index, sign)
    }

    /// Hashed bag of n-grams, scaled by `1/sqrt(#grams)`.
    pub fn features(&self, prompt: &[TokenId], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        if dim == 0 || prompt.is_empty() {
            return out;
        }
        let mut count = 0usize;
        for order in 1..=self.ngram_order {
            for gram in prompt.windows(order) {
                let (i, s) = self.bucket(gram, dim);
                out[i] += s;
                count += 1;
            }
        }
        let scale = 1.0 / (count as f64).sqrt();
        out.iter_mut().for_each(|v| *v *= scale);
        out
    }
}

impl Default for PromptHasher {
    fn default() -> Self {
        Self::new(0, 1)
    }
}

/// Architecture of a model: everything except the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab: Vocabulary,
    /// Number of trailing response tokens visible to the model.
    pub context_order: usize,
    pub prompt_feature_dim: usize,
    pub max_response_len: usize,
}

impl ModelShape {
    pub fn new(
        vocab: Vocabulary,
        context_order: usize,
        prompt_feature_dim: usize,
        max_response_len: usize,
    ) -> Result<Self> {
        if max_response_len == 0 {
            return Err(LabError::InvalidArgument("max_response_len must be >= 1".into()));
        }
        Ok(Self {
            vocab,
            context_order,
            prompt_feature_dim,
            max_response_len,
        })
    }

    /// `P + k (V + 1) + 1`.
    pub fn feature_dim(&self) -> usize {
        self.prompt_feature_dim + self.context_order * self.vocab.num_symbols() + 1
    }

    pub fn num_symbols(&self) -> usize {
        self.vocab.num_symbols()
    }

    pub fn num_params(&self) -> usize {
        self.num_symbols() * self.feature_dim()
    }

    fn bias_column(&self) -> usize {
        self.feature_dim() - 1
    }

    fn context_column(&self, slot: usize, token: TokenId) -> usize {
        self.prompt_feature_dim + slot * self.num_symbols() + token as usize
    }
}

/// Standard deviations for random weight initialisation, per feature block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitScales {
    pub prompt: f64,
    pub context: f64,
    pub bias: f64,
    /// Added to the end-of-sequence bias after sampling; controls mean length.
    pub eos_bias: f64,
    /// Context slot `j` (0 = most recent) uses `context * context_decay^j`.
    #[serde(default = "unit")]
    pub context_decay: f64,
}

fn unit() -> f64 {
    1.0
}

impl InitScales {
    pub fn zero() -> Self {
        Self {
            prompt: 0.0,
            context: 0.0,
            bias: 0.0,
            eos_bias: 0.0,
            context_decay: 1.0,
        }
    }
}

/// A log-linear context-order-k next-token model with temperature.
///
/// Immutable apart from explicit weight updates through [`AutoRegressiveLM::weights_mut`]
/// by the optimizer; safe to share across threads for reading.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoRegressiveLM {
    shape: ModelShape,
    hasher: PromptHasher,
    temperature: f64,
    /// Row-major `(V + 1) x feature_dim`.
    weights: Vec<f64>,
}

/// Prompt features and the prompt-plus-bias part of the logits.
#[derive(Clone, Debug)]
pub struct PromptState {
    pub features: Vec<f64>,
    pub base_logits: Vec<f64>,
}

impl AutoRegressiveLM {
    /// All-zero weights: the uniform model.
    pub fn zeros(shape: ModelShape, hasher: PromptHasher, temperature: f64) -> Result<Self> {
        Self::from_weights(shape, hasher, temperature, vec![0.0; shape.num_params()])
    }

    pub fn from_weights(
        shape: ModelShape,
        hasher: PromptHasher,
        temperature: f64,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(LabError::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if weights.len() != shape.num_params() {
            return Err(LabError::InvalidArgument(format!(
                "expected {} weights, got {}",
                shape.num_params(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(LabError::InvalidArgument("weights must be finite".into()));
        }
        Ok(Self {
            shape,
            hasher,
            temperature,
            weights,
        })
    }

    /// Gaussian random weights with per-block scales.
    pub fn random(
        shape: ModelShape,
        hasher: PromptHasher,
        temperature: f64,
        scales: &InitScales,
        rng: &mut LabRng,
    ) -> Result<Self> {
        let mut model = Self::zeros(shape, hasher, temperature)?;
        let f = shape.feature_dim();
        let p = shape.prompt_feature_dim;
        for row in 0..shape.num_symbols() {
            for col in 0..f {
                let sd = if col < p {
                    scales.prompt
                } else if col == f - 1 {
                    scales.bias
                } else {
                    let slot = (col - p) / shape.num_symbols();
                    scales.context * scales.context_decay.powi(slot as i32)
                };
                if sd > 0.0 {
                    let normal = Normal::new(0.0, sd).expect("positive sd");
                    model.weights[row * f + col] = normal.sample(rng);
                }
            }
        }
        let eos = shape.vocab.eos_id() as usize;
        model.weights[eos * f + f - 1] += scales.eos_bias;
        Ok(model)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.shape.vocab
    }

    pub fn hasher(&self) -> &PromptHasher {
        &self.hasher
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mutable access for optimizers. Callers must keep entries finite.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn max_response_len(&self) -> usize {
        self.shape.max_response_len
    }

    /// True when both models share the symbol set and response cap.
    pub fn compatible_with(&self, other: &AutoRegressiveLM) -> bool {
        self.shape.vocab == other.shape.vocab
            && self.shape.max_response_len == other.shape.max_response_len
    }

    /// Dense feature vector for the conditioning `(prompt, partial_response)`.
    pub fn featurize(&self, prompt: &Sequence, partial_response: &Sequence) -> Vec<f64> {
        let s = &self.shape;
        let mut f = self.hasher.features(prompt.tokens(), s.prompt_feature_dim);
        f.resize(s.feature_dim(), 0.0);
        for (slot, &tok) in partial_response.tokens().iter().rev().take(s.context_order).enumerate() {
            f[s.context_column(slot, tok)] = 1.0;
        }
        f[s.bias_column()] = 1.0;
        f
    }

    pub fn prompt_state(&self, prompt: &Sequence) -> PromptState {
        let s = &self.shape;
        let f = s.feature_dim();
        let features = self.hasher.features(prompt.tokens(), s.prompt_feature_dim);
        let base_logits = (0..s.num_symbols())
            .map(|r| {
                let row = &self.weights[r * f..(r + 1) * f];
                let dot: f64 = row[..s.prompt_feature_dim]
                    .iter()
                    .zip(&features)
                    .map(|(w, x)| w * x)
                    .sum();
                dot + row[f - 1]
            })
            .collect();
        PromptState {
            features,
            base_logits,
        }
    }

    /// Raw logits at the position following `partial` (the full response prefix).
    pub fn logits_into(&self, state: &PromptState, partial: &[TokenId], out: &mut Vec<f64>) {
        let s = &self.shape;
        let f = s.feature_dim();
        out.clear();
        out.extend_from_slice(&state.base_logits);
        for (slot, &tok) in partial.iter().rev().take(s.context_order).enumerate() {
            let col = s.context_column(slot, tok);
            for (r, z) in out.iter_mut().enumerate() {
                *z += self.weights[r * f + col];
            }
        }
    }

    /// Tempered next-symbol probabilities at the position following `partial`.
    pub fn probs_into(&self, state: &PromptState, partial: &[TokenId], logits: &mut Vec<f64>, out: &mut Vec<f64>) {
        self.logits_into(state, partial, logits);
        softmax_into(logits, self.temperature, out);
    }

    pub fn next_token_distribution(&self, prompt: &Sequence, partial_response: &Sequence) -> TokenDistribution {
        let state = self.prompt_state(prompt);
        let mut z = Vec::new();
        self.logits_into(&state, partial_response.tokens(), &mut z);
        TokenDistribution::from_logits(&z, self.temperature)
    }

    /// Samples a response; end-of-sequence is forced once `max_response_len` tokens are out.
    pub fn sample_response(&self, prompt: &Sequence, rng: &mut LabRng) -> Sequence {
        let state = self.prompt_state(prompt);
        self.sample_with_state(&state, rng)
    }

    pub fn sample_with_state(&self, state: &PromptState, rng: &mut LabRng) -> Sequence {
        let eos = self.shape.vocab.eos_id() as usize;
        let mut tokens = Vec::new();
        let mut z = Vec::with_capacity(self.shape.num_symbols());
        let mut p = Vec::with_capacity(self.shape.num_symbols());
        while tokens.len() < self.shape.max_response_len {
            self.probs_into(state, &tokens, &mut z, &mut p);
            let sym = sample_index(&p, rng);
            if sym == eos {
                break;
            }
            tokens.push(sym as TokenId);
        }
        Sequence::response(tokens)
    }

    /// Number of positions at which the model makes a choice for this response length:
    /// one per token plus the terminating end-of-sequence, which is forced (and not
    /// scored) at the length cap.
    pub fn scored_positions(&self, response_len: usize) -> usize {
        if response_len < self.shape.max_response_len {
            response_len + 1
        } else {
            response_len
        }
    }

    /// `log p(y | x)` in nats, including the end-of-sequence factor below the cap.
    pub fn sequence_log_prob(&self, prompt: &Sequence, response: &Sequence) -> Result<f64> {
        response.validate(self.vocab(), self.shape.max_response_len)?;
        let state = self.prompt_state(prompt);
        let eos = self.shape.vocab.eos_id() as usize;
        let tokens = response.tokens();
        let mut z = Vec::new();
        let mut p = Vec::new();
        let mut total = 0.0;
        for i in 0..self.scored_positions(tokens.len()) {
            self.probs_into(&state, &tokens[..i], &mut z, &mut p);
            let sym = tokens.get(i).map_or(eos, |&t| t as usize);
            if p[sym] == 0.0 {
                return Err(LabError::SupportViolation(format!(
                    "symbol {sym} has probability 0 at position {i}"
                )));
            }
            total += p[sym].ln();
        }
        Ok(total)
    }
}

/// All responses of length `0..=max_len`, shortest first, lexicographic within a length.
pub fn enumerate_responses(vocab: &Vocabulary, max_len: usize, cap: u128) -> Result<Vec<Sequence>> {
    let v = vocab.size() as u128;
    let top = v.checked_pow(max_len as u32).unwrap_or(u128::MAX);
    if top > cap {
        return Err(LabError::EnumerationCap { requested: top, cap });
    }
    let mut out = vec![Sequence::empty_response()];
    let mut frontier = vec![Vec::<TokenId>::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * vocab.size());
        for prefix in &frontier {
            for t in 0..vocab.size() as TokenId {
                let mut seq = prefix.clone();
                seq.push(t);
                next.push(seq);
            }
        }
        out.extend(next.iter().cloned().map(Sequence::response));
        frontier = next;
    }
    Ok(out)
}
