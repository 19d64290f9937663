//! Sequence-level divergences between two language models.
//!
//! `KL_seq(p, q) = E_x E_{y ~ p(.|x)} [ sum_i KL(p(.|x, y<i) || q(.|x, y<i)) ]`, where the
//! sum runs over every scored position of `y`, including the terminal one. By
//! the chain rule this equals the expected KL between the induced response
//! distributions, which is what [`exact_divergence`] computes by brute force.
//!
//! `JS_seq` draws one response from each model and averages the token-wise KLs
//! of each model to the token-level mixture along its own response. It is not
//! the Jensen-Shannon divergence of the response distributions.
//!
//! Monte Carlo estimators derive one random stream per prompt from the seed
//! and the prompt index, so results do not depend on how prompts are scheduled
//! across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lm::{enumerate_responses, AutoRegressiveLM, PromptState, Sequence, TokenId, DEFAULT_ENUMERATION_CAP};
use crate::losses::kl;
use crate::rng::{label, stream, LabRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DivergenceKind {
    ForwardKlSeq,
    ReverseKlSeq,
    JsSeq,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 3] = [
        DivergenceKind::ForwardKlSeq,
        DivergenceKind::ReverseKlSeq,
        DivergenceKind::JsSeq,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            DivergenceKind::ForwardKlSeq => "fwd_kl",
            DivergenceKind::ReverseKlSeq => "rev_kl",
            DivergenceKind::JsSeq => "js",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub num_samples: usize,
}

impl DivergenceEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            num_samples: n,
        }
    }
}

fn check_inputs(p: &AutoRegressiveLM, q: &AutoRegressiveLM, prompts: &[Sequence], samples: usize) -> Result<()> {
    if !p.compatible_with(q) {
        return Err(LabError::InvalidArgument("models do not share a vocabulary and length cap".into()));
    }
    if prompts.is_empty() {
        return Err(LabError::InsufficientData("no prompts to estimate on".into()));
    }
    if samples == 0 {
        return Err(LabError::InvalidArgument("samples_per_prompt must be >= 1".into()));
    }
    Ok(())
}

/// Scratch buffers for walking one response under two models.
#[derive(Default)]
struct Walk {
    z: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    m: Vec<f64>,
    tokens: Vec<TokenId>,
}

impl Walk {
    /// Samples `y ~ sampler` and returns `sum_i f(sampler_i, other_i)` along it.
    fn run(
        &mut self,
        sampler: &AutoRegressiveLM,
        s_state: &PromptState,
        other: &AutoRegressiveLM,
        o_state: &PromptState,
        rng: &mut LabRng,
        mut f: impl FnMut(&[f64], &[f64], &mut Vec<f64>) -> Result<f64>,
    ) -> Result<f64> {
        let eos = sampler.vocab().eos_id() as usize;
        self.tokens.clear();
        let mut total = 0.0;
        while self.tokens.len() < sampler.max_response_len() {
            sampler.probs_into(s_state, &self.tokens, &mut self.z, &mut self.p);
            other.probs_into(o_state, &self.tokens, &mut self.z, &mut self.q);
            total += f(&self.p, &self.q, &mut self.m)?;
            let sym = crate::lm::sample_index(&self.p, rng);
            if sym == eos {
                break;
            }
            self.tokens.push(sym as TokenId);
        }
        Ok(total)
    }
}

fn to_mixture_kl(own: &[f64], other: &[f64], m: &mut Vec<f64>) -> Result<f64> {
    m.clear();
    m.extend(own.iter().zip(other).map(|(a, b)| 0.5 * a + 0.5 * b));
    kl(own, m)
}

/// Runs `per_prompt` over prompts (in parallel when a pool is available) and
/// concatenates the per-sample values in prompt order.
fn collect_samples(
    prompts: &[Sequence],
    per_prompt: impl Fn(usize, &Sequence) -> Result<Vec<f64>> + Sync,
) -> Result<Vec<f64>> {
    let chunks: Vec<Result<Vec<f64>>> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, x)| per_prompt(i, x))
        .collect();
    let mut values = Vec::new();
    for c in chunks {
        values.extend(c?);
    }
    Ok(values)
}

/// Monte Carlo estimate of `KL_seq(p, q)` from responses sampled from `p`.
pub fn kl_seq_estimate(
    p_model: &AutoRegressiveLM,
    q_model: &AutoRegressiveLM,
    prompts: &[Sequence],
    samples_per_prompt: usize,
    seed: u64,
) -> Result<DivergenceEstimate> {
    check_inputs(p_model, q_model, prompts, samples_per_prompt)?;
    let values = collect_samples(prompts, |i, x| {
        let mut rng = stream(seed, &[i as u64]);
        let ps = p_model.prompt_state(x);
        let qs = q_model.prompt_state(x);
        let mut walk = Walk::default();
        (0..samples_per_prompt)
            .map(|_| walk.run(p_model, &ps, q_model, &qs, &mut rng, |a, b, _| kl(a, b)))
            .collect()
    })?;
    Ok(DivergenceEstimate::from_samples(&values))
}

/// Monte Carlo estimate of `JS_seq(p, q)`; responses from `p` use `p_seed`, those
/// from `q` use `q_seed`. Swapping both models and seeds gives bit-identical output.
pub fn js_seq_estimate_with_streams(
    p_model: &AutoRegressiveLM,
    q_model: &AutoRegressiveLM,
    prompts: &[Sequence],
    samples_per_prompt: usize,
    p_seed: u64,
    q_seed: u64,
) -> Result<DivergenceEstimate> {
    check_inputs(p_model, q_model, prompts, samples_per_prompt)?;
    let values = collect_samples(prompts, |i, x| {
        let mut p_rng = stream(p_seed, &[i as u64]);
        let mut q_rng = stream(q_seed, &[i as u64]);
        let ps = p_model.prompt_state(x);
        let qs = q_model.prompt_state(x);
        let mut walk = Walk::default();
        (0..samples_per_prompt)
            .map(|_| {
                let a = walk.run(p_model, &ps, q_model, &qs, &mut p_rng, to_mixture_kl)?;
                let b = walk.run(q_model, &qs, p_model, &ps, &mut q_rng, to_mixture_kl)?;
                Ok(0.5 * a + 0.5 * b)
            })
            .collect()
    })?;
    Ok(DivergenceEstimate::from_samples(&values))
}

/// `JS_seq(p, q)` with both sampling streams derived from one seed.
pub fn js_seq_estimate(
    p_model: &AutoRegressiveLM,
    q_model: &AutoRegressiveLM,
    prompts: &[Sequence],
    samples_per_prompt: usize,
    seed: u64,
) -> Result<DivergenceEstimate> {
    js_seq_estimate_with_streams(
        p_model,
        q_model,
        prompts,
        samples_per_prompt,
        seed,
        crate::rng::derive_seed(seed, &[label::SECOND]),
    )
}

/// Dispatches on `kind`: forward samples `p`, reverse samples `q`.
pub fn estimate(
    p_model: &AutoRegressiveLM,
    q_model: &AutoRegressiveLM,
    kind: DivergenceKind,
    prompts: &[Sequence],
    samples_per_prompt: usize,
    seed: u64,
) -> Result<DivergenceEstimate> {
    match kind {
        DivergenceKind::ForwardKlSeq => kl_seq_estimate(p_model, q_model, prompts, samples_per_prompt, seed),
        DivergenceKind::ReverseKlSeq => kl_seq_estimate(q_model, p_model, prompts, samples_per_prompt, seed),
        DivergenceKind::JsSeq => js_seq_estimate(p_model, q_model, prompts, samples_per_prompt, seed),
    }
}

fn log_prob_or_neg_inf(model: &AutoRegressiveLM, x: &Sequence, y: &Sequence) -> Result<f64> {
    match model.sequence_log_prob(x, y) {
        Ok(lp) => Ok(lp),
        Err(LabError::SupportViolation(_)) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// `sum_y p(y|x) (log p(y|x) - log q(y|x))`, averaged over prompts.
fn exact_sequence_kl(p: &AutoRegressiveLM, q: &AutoRegressiveLM, prompts: &[Sequence], all: &[Sequence]) -> Result<f64> {
    let mut total = 0.0;
    for x in prompts {
        for y in all {
            let lp = log_prob_or_neg_inf(p, x, y)?;
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let lq = log_prob_or_neg_inf(q, x, y)?;
            if lq == f64::NEG_INFINITY {
                return Err(LabError::SupportViolation(format!(
                    "response {:?} has positive mass under p but none under q",
                    y.tokens()
                )));
            }
            total += lp.exp() * (lp - lq);
        }
    }
    Ok(total / prompts.len() as f64)
}

/// Expected token-wise KL of `own` to the mixture along responses of `own`.
fn exact_mixture_term(own: &AutoRegressiveLM, other: &AutoRegressiveLM, prompts: &[Sequence], all: &[Sequence]) -> Result<f64> {
    let mut total = 0.0;
    let (mut z, mut a, mut b, mut m) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for x in prompts {
        let os = own.prompt_state(x);
        let ts = other.prompt_state(x);
        for y in all {
            let lp = log_prob_or_neg_inf(own, x, y)?;
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let tokens = y.tokens();
            let mut path = 0.0;
            for i in 0..own.scored_positions(tokens.len()) {
                own.probs_into(&os, &tokens[..i], &mut z, &mut a);
                other.probs_into(&ts, &tokens[..i], &mut z, &mut b);
                path += to_mixture_kl(&a, &b, &mut m)?;
            }
            total += lp.exp() * path;
        }
    }
    Ok(total / prompts.len() as f64)
}

/// Brute-force value of the divergence by enumerating every response up to `max_len`.
pub fn exact_divergence(
    p_model: &AutoRegressiveLM,
    q_model: &AutoRegressiveLM,
    prompts: &[Sequence],
    kind: DivergenceKind,
    max_len: usize,
) -> Result<f64> {
    check_inputs(p_model, q_model, prompts, 1)?;
    if max_len != p_model.max_response_len() {
        return Err(LabError::InvalidArgument(format!(
            "enumeration length {max_len} must equal the models' response cap {}",
            p_model.max_response_len()
        )));
    }
    let all = enumerate_responses(p_model.vocab(), max_len, DEFAULT_ENUMERATION_CAP)?;
    match kind {
        DivergenceKind::ForwardKlSeq => exact_sequence_kl(p_model, q_model, prompts, &all),
        DivergenceKind::ReverseKlSeq => exact_sequence_kl(q_model, p_model, prompts, &all),
        DivergenceKind::JsSeq => Ok(0.5 * exact_mixture_term(p_model, q_model, prompts, &all)?
            + 0.5 * exact_mixture_term(q_model, p_model, prompts, &all)?),
    }
}
