//! Token-level divergences with analytic logit gradients, and the two
//! sequence-level training objectives (supervised log-loss and soft
//! distillation).
//!
//! Conventions: `ForwardKL` is `KL(teacher || student)`, `ReverseKL` is
//! `KL(student || teacher)`, and `GeneralizedJS(beta)` is
//! `beta * KL(teacher || m) + (1 - beta) * KL(student || m)` with
//! `m = beta * teacher + (1 - beta) * student`. `0 * log 0 = 0` throughout.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{LabError, Result};
use crate::lm::{softmax_into, AutoRegressiveLM, TokenDistribution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenLossKind {
    ForwardKl,
    ReverseKl,
    GeneralizedJs { beta: f64 },
}

impl TokenLossKind {
    pub fn generalized_js(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(LabError::InvalidArgument(format!("beta must lie in (0, 1), got {beta}")));
        }
        Ok(TokenLossKind::GeneralizedJs { beta })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TokenLossKind::GeneralizedJs { beta } => Self::generalized_js(beta).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TokenLossKind::ForwardKl => "forward_kl".into(),
            TokenLossKind::ReverseKl => "reverse_kl".into(),
            TokenLossKind::GeneralizedJs { beta } => format!("generalized_js({beta})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValueAndGrad {
    pub value: f64,
    pub grad_student_logits: Vec<f64>,
}

/// A scalar objective and its gradient with respect to the student weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// `KL(p || q)`; errors when `q_i = 0 < p_i`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(LabError::SupportViolation(format!(
                    "symbol {i}: {pi} / 0 in KL ratio"
                )));
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total.max(0.0))
}

fn mixture_kl_pair(t: &[f64], s: &[f64], beta: f64) -> f64 {
    let mut first = 0.0;
    let mut second = 0.0;
    for (&ti, &si) in t.iter().zip(s) {
        if ti == si {
            // Both terms vanish; skipping avoids rounding in the mixture.
            continue;
        }
        let mi = beta * ti + (1.0 - beta) * si;
        if ti > 0.0 {
            first += ti * (ti / mi).ln();
        }
        if si > 0.0 {
            second += si * (si / mi).ln();
        }
    }
    (beta * first + (1.0 - beta) * second).max(0.0)
}

fn loss_value(student: &[f64], teacher: &[f64], kind: TokenLossKind) -> Result<f64> {
    match kind {
        TokenLossKind::ForwardKl => kl(teacher, student),
        TokenLossKind::ReverseKl => kl(student, teacher),
        TokenLossKind::GeneralizedJs { beta } => Ok(mixture_kl_pair(teacher, student, beta)),
    }
}

pub fn token_loss(student: &TokenDistribution, teacher: &TokenDistribution, kind: TokenLossKind) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(LabError::InvalidArgument("distributions over different symbol sets".into()));
    }
    kind.validate()?;
    loss_value(student.probs(), teacher.probs(), kind)
}

/// Loss at student probabilities `s` (already softmaxed at temperature `tau`) and
/// its gradient with respect to the pre-softmax logits, written into `grad`.
pub(crate) fn loss_and_logit_grad(
    s: &[f64],
    t: &[f64],
    kind: TokenLossKind,
    tau: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let value = loss_value(s, t, kind)?;
    match kind {
        TokenLossKind::ForwardKl => {
            for ((g, &si), &ti) in grad.iter_mut().zip(s).zip(t) {
                *g = (si - ti) / tau;
            }
        }
        TokenLossKind::ReverseKl => {
            // d/ds_j = log(s_j / t_j) + 1; the constant drops out through the softmax.
            for ((g, &si), &ti) in grad.iter_mut().zip(s).zip(t) {
                *g = if si > 0.0 { si * ((si / ti).ln() - value) / tau } else { 0.0 };
            }
        }
        TokenLossKind::GeneralizedJs { beta } => {
            // d/ds_j = (1 - beta) log(s_j / m_j).
            let mut mean = 0.0;
            for ((g, &si), &ti) in grad.iter_mut().zip(s).zip(t) {
                *g = if si > 0.0 {
                    let mi = beta * ti + (1.0 - beta) * si;
                    (1.0 - beta) * (si / mi).ln()
                } else {
                    0.0
                };
                mean += si * *g;
            }
            for (g, &si) in grad.iter_mut().zip(s) {
                *g = si * (*g - mean) / tau;
            }
        }
    }
    Ok(value)
}

/// Loss of `softmax(logits / tau)` against `teacher` and its exact logit gradient.
pub fn token_loss_grad(
    student_logits: &[f64],
    teacher: &TokenDistribution,
    kind: TokenLossKind,
    temperature: f64,
) -> Result<LossValueAndGrad> {
    if student_logits.len() != teacher.len() {
        return Err(LabError::InvalidArgument("logits and teacher have different lengths".into()));
    }
    if student_logits.iter().any(|z| !z.is_finite()) {
        return Err(LabError::InvalidArgument("logits must be finite".into()));
    }
    kind.validate()?;
    let mut s = Vec::new();
    softmax_into(student_logits, temperature, &mut s);
    let mut grad = vec![0.0; s.len()];
    let value = loss_and_logit_grad(&s, teacher.probs(), kind, temperature, &mut grad)?;
    Ok(LossValueAndGrad {
        value,
        grad_student_logits: grad,
    })
}

/// Adds `scale * dz` to the weight gradient at the positions of one example.
struct GradAccumulator<'a> {
    grad: &'a mut [f64],
    feature_dim: usize,
    prompt_dim: usize,
    num_symbols: usize,
    row_sum: Vec<f64>,
}

impl<'a> GradAccumulator<'a> {
    fn new(model: &AutoRegressiveLM, grad: &'a mut [f64]) -> Self {
        let s = model.shape();
        Self {
            grad,
            feature_dim: s.feature_dim(),
            prompt_dim: s.prompt_feature_dim,
            num_symbols: s.num_symbols(),
            row_sum: vec![0.0; s.num_symbols()],
        }
    }

    fn add_position(&mut self, model: &AutoRegressiveLM, partial: &[u32], dz: &[f64], scale: f64) {
        let k = model.shape().context_order;
        let v1 = self.num_symbols;
        for (slot, &tok) in partial.iter().rev().take(k).enumerate() {
            let col = self.prompt_dim + slot * v1 + tok as usize;
            for (r, &g) in dz.iter().enumerate() {
                self.grad[r * self.feature_dim + col] += scale * g;
            }
        }
        for (acc, &g) in self.row_sum.iter_mut().zip(dz) {
            *acc += scale * g;
        }
    }

    /// Flushes the prompt-block and bias contributions shared by all positions.
    fn finish_example(&mut self, prompt_features: &[f64]) {
        let f = self.feature_dim;
        for (r, acc) in self.row_sum.iter_mut().enumerate() {
            if *acc != 0.0 {
                let row = &mut self.grad[r * f..(r + 1) * f];
                for (w, &x) in row[..self.prompt_dim].iter_mut().zip(prompt_features) {
                    *w += *acc * x;
                }
                row[f - 1] += *acc;
            }
            *acc = 0.0;
        }
    }
}

/// Soft-distillation objective: per example, the mean token loss over its scored
/// positions (every token plus the terminal one below the cap), averaged over the batch.
pub fn distillation_loss(
    student: &AutoRegressiveLM,
    teacher: &AutoRegressiveLM,
    batch: &[Example],
    kind: TokenLossKind,
) -> Result<ObjectiveValue> {
    if batch.is_empty() {
        return Err(LabError::EmptyBatch);
    }
    if !student.compatible_with(teacher) {
        return Err(LabError::InvalidArgument("student and teacher vocabularies differ".into()));
    }
    kind.validate()?;
    let tau = student.temperature();
    let n = student.shape().num_symbols();
    let mut grad = vec![0.0; student.shape().num_params()];
    let mut acc = GradAccumulator::new(student, &mut grad);
    let (mut zs, mut ps, mut zt, mut pt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dz = vec![0.0; n];
    let mut total = 0.0;
    let batch_scale = 1.0 / batch.len() as f64;
    for ex in batch {
        ex.response.validate(student.vocab(), student.max_response_len())?;
        let s_state = student.prompt_state(&ex.prompt);
        let t_state = teacher.prompt_state(&ex.prompt);
        let tokens = ex.response.tokens();
        let positions = student.scored_positions(tokens.len());
        let scale = batch_scale / positions as f64;
        let mut example_loss = 0.0;
        for i in 0..positions {
            let partial = &tokens[..i];
            student.probs_into(&s_state, partial, &mut zs, &mut ps);
            teacher.probs_into(&t_state, partial, &mut zt, &mut pt);
            example_loss += loss_and_logit_grad(&ps, &pt, kind, tau, &mut dz)?;
            acc.add_position(student, partial, &dz, scale);
        }
        acc.finish_example(&s_state.features);
        total += example_loss / positions as f64;
    }
    Ok(ObjectiveValue {
        value: total * batch_scale,
        grad,
    })
}

/// Supervised log-loss, normalised per scored position and averaged over the batch.
pub fn sft_loss(model: &AutoRegressiveLM, batch: &[Example]) -> Result<ObjectiveValue> {
    if batch.is_empty() {
        return Err(LabError::EmptyBatch);
    }
    let tau = model.temperature();
    let eos = model.vocab().eos_id() as usize;
    let n = model.shape().num_symbols();
    let mut grad = vec![0.0; model.shape().num_params()];
    let mut acc = GradAccumulator::new(model, &mut grad);
    let (mut z, mut p) = (Vec::new(), Vec::new());
    let mut dz = vec![0.0; n];
    let mut total = 0.0;
    let batch_scale = 1.0 / batch.len() as f64;
    for ex in batch {
        ex.response.validate(model.vocab(), model.max_response_len())?;
        let state = model.prompt_state(&ex.prompt);
        let tokens = ex.response.tokens();
        let positions = model.scored_positions(tokens.len());
        let scale = batch_scale / positions as f64;
        let mut nll = 0.0;
        for i in 0..positions {
            let partial = &tokens[..i];
            model.probs_into(&state, partial, &mut z, &mut p);
            let target = tokens.get(i).map_or(eos, |&t| t as usize);
            if p[target] == 0.0 {
                return Err(LabError::SupportViolation(format!(
                    "response symbol {target} has probability 0 at position {i}"
                )));
            }
            nll -= p[target].ln();
            for (j, g) in dz.iter_mut().enumerate() {
                *g = (p[j] - if j == target { 1.0 } else { 0.0 }) / tau;
            }
            acc.add_position(model, partial, &dz, scale);
        }
        acc.finish_example(&state.features);
        total += nll / positions as f64;
    }
    Ok(ObjectiveValue {
        value: total * batch_scale,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ModelShape, PromptHasher, Sequence, Vocabulary};

    fn dist(p: &[f64]) -> TokenDistribution {
        TokenDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn identical_distributions_have_zero_loss() {
        let p = dist(&[0.2, 0.3, 0.5]);
        for kind in [
            TokenLossKind::ForwardKl,
            TokenLossKind::ReverseKl,
            TokenLossKind::GeneralizedJs { beta: 0.1 },
        ] {
            assert_eq!(token_loss(&p, &p, kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn forward_kl_two_point_value() {
        // 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75) = 0.5 ln(4/3)
        let v = token_loss(&dist(&[0.25, 0.75]), &dist(&[0.5, 0.5]), TokenLossKind::ForwardKl).unwrap();
        assert!((v - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((v - 0.14384).abs() < 5e-6);
    }

    #[test]
    fn support_violations() {
        let with_zero = dist(&[0.0, 1.0]);
        let full = dist(&[0.5, 0.5]);
        assert!(matches!(
            token_loss(&with_zero, &full, TokenLossKind::ForwardKl),
            Err(LabError::SupportViolation(_))
        ));
        assert!(matches!(
            token_loss(&full, &with_zero, TokenLossKind::ReverseKl),
            Err(LabError::SupportViolation(_))
        ));
        assert!(token_loss(&full, &with_zero, TokenLossKind::ForwardKl).is_ok());
        assert!(token_loss(&with_zero, &full, TokenLossKind::GeneralizedJs { beta: 0.5 }).is_ok());
    }

    #[test]
    fn beta_must_be_interior() {
        assert!(TokenLossKind::generalized_js(0.0).is_err());
        assert!(TokenLossKind::generalized_js(1.0).is_err());
        let p = dist(&[0.5, 0.5]);
        assert!(token_loss(&p, &p, TokenLossKind::GeneralizedJs { beta: 1.5 }).is_err());
    }

    #[test]
    fn gradient_vanishes_at_teacher() {
        let z = [0.3, -1.2, 2.0, 0.1];
        let t = TokenDistribution::from_logits(&z, 1.7);
        for kind in [
            TokenLossKind::ForwardKl,
            TokenLossKind::ReverseKl,
            TokenLossKind::GeneralizedJs { beta: 0.9 },
        ] {
            let out = token_loss_grad(&z, &t, kind, 1.7).unwrap();
            assert!(out.value.abs() < 1e-12);
            assert!(out.grad_student_logits.iter().all(|g| g.abs() < 1e-9));
        }
    }

    fn tiny_models() -> (AutoRegressiveLM, AutoRegressiveLM) {
        let v = Vocabulary::new(3).unwrap();
        let shape = ModelShape::new(v, 1, 2, 3).unwrap();
        let hasher = PromptHasher::new(5, 1);
        let w: Vec<f64> = (0..shape.num_params()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let a = AutoRegressiveLM::from_weights(shape, hasher, 1.0, w.clone()).unwrap();
        let w2: Vec<f64> = w.iter().enumerate().map(|(i, x)| x + 0.05 * ((i % 3) as f64 - 1.0)).collect();
        let b = AutoRegressiveLM::from_weights(shape, hasher, 1.0, w2).unwrap();
        (a, b)
    }

    fn batch() -> Vec<Example> {
        vec![
            Example::new(Sequence::prompt(vec![0, 1]), Sequence::response(vec![2, 0])),
            Example::new(Sequence::prompt(vec![2]), Sequence::response(vec![])),
            Example::new(Sequence::prompt(vec![1, 1, 0]), Sequence::response(vec![1, 1, 2])),
        ]
    }

    #[test]
    fn distillation_at_teacher_is_zero() {
        let (a, _) = tiny_models();
        let out = distillation_loss(&a, &a, &batch(), TokenLossKind::ForwardKl).unwrap();
        assert!(out.value.abs() < 1e-15);
        assert!(out.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn duplication_leaves_objectives_unchanged() {
        let (a, b) = tiny_models();
        let one = batch();
        let two: Vec<Example> = one.iter().chain(one.iter()).cloned().collect();
        let d1 = distillation_loss(&a, &b, &one, TokenLossKind::ReverseKl).unwrap();
        let d2 = distillation_loss(&a, &b, &two, TokenLossKind::ReverseKl).unwrap();
        assert!((d1.value - d2.value).abs() < 1e-14);
        let s1 = sft_loss(&a, &one).unwrap();
        let s2 = sft_loss(&a, &two).unwrap();
        assert!((s1.value - s2.value).abs() < 1e-14);
        for (g1, g2) in s1.grad.iter().zip(&s2.grad) {
            assert!((g1 - g2).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_batches_rejected() {
        let (a, b) = tiny_models();
        assert!(matches!(distillation_loss(&a, &b, &[], TokenLossKind::ForwardKl), Err(LabError::EmptyBatch)));
        assert!(matches!(sft_loss(&a, &[]), Err(LabError::EmptyBatch)));
    }

    #[test]
    fn sft_uniform_is_log_three_per_position() {
        let v = Vocabulary::new(2).unwrap();
        let shape = ModelShape::new(v, 1, 0, 3).unwrap();
        let m = AutoRegressiveLM::zeros(shape, PromptHasher::default(), 1.0).unwrap();
        let ex = Example::new(Sequence::prompt(vec![0]), Sequence::response(vec![0, 1]));
        let out = sft_loss(&m, &[ex]).unwrap();
        assert!((out.value - 3f64.ln()).abs() < 1e-14);
    }
}
