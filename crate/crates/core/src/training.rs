//! The two training stages: supervised fine-tuning on oracle data with
//! best-checkpoint selection, then distillation of the student against a
//! frozen teacher, logging proxy (student vs. teacher) and golden (student vs.
//! oracle) divergences on held-out prompts.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::gaussian_smooth;
use crate::data::{epoch_length, BatchSampler, DataSourceSpec, LabeledDataset, PromptDataset, SourceKind};
use crate::divergences::{js_seq_estimate, kl_seq_estimate, DivergenceEstimate, DivergenceKind};
use crate::error::{LabError, Result};
use crate::lm::{AutoRegressiveLM, ModelShape, PromptHasher, Sequence, Vocabulary};
use crate::losses::{distillation_loss, sft_loss, TokenLossKind};
use crate::rng::{derive_seed, label};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub warmup_steps: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            learning_rate: 3e-4,
            warmup_steps: 100,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(LabError::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let OptimizerKind::Adam { beta1, beta2, epsilon } = self.kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(LabError::InvalidArgument("adam needs betas in [0, 1) and epsilon > 0".into()));
            }
        }
        Ok(())
    }

    /// Learning rate for the `update`-th update (1-based): a linear ramp that
    /// reaches the full rate at `warmup_steps`.
    pub fn lr_at(&self, update: u64) -> f64 {
        if self.warmup_steps == 0 || update >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * update as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    updates: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        Self {
            config,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn step(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.updates += 1;
        let lr = self.config.lr_at(self.updates);
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (w, g) in weights.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let t = self.updates as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((w, &g), m), v) in weights.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                }
            }
        }
    }
}

/// A weight snapshot with its validation score `KL_seq(oracle, model)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: AutoRegressiveLM,
    pub step: u64,
    pub score: f64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let s = self.model.shape();
        let h = self.model.hasher();
        let mut out = format!(
            "checkpoint v1\nvocab_size {} context_order {} prompt_feature_dim {} max_response_len {} \
             ngram_order {} hash_seed {} temperature {} seed {} step {} score {}\n",
            s.vocab.size(),
            s.context_order,
            s.prompt_feature_dim,
            s.max_response_len,
            h.ngram_order,
            h.seed,
            self.model.temperature(),
            self.seed,
            self.step,
            self.score
        );
        for w in self.model.weights() {
            let _ = writeln!(out, "{w}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("checkpoint v1") {
            return Err(LabError::parse("checkpoint", "missing `checkpoint v1` magic line"));
        }
        let header = lines.next().ok_or_else(|| LabError::parse("checkpoint", "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 20 {
            return Err(LabError::parse("checkpoint header", format!("expected 10 key/value pairs: `{header}`")));
        }
        let get = |key: &str| -> Result<&str> {
            fields
                .chunks(2)
                .find(|kv| kv[0] == key)
                .map(|kv| kv[1])
                .ok_or_else(|| LabError::parse("checkpoint header", format!("missing `{key}`")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| LabError::parse("checkpoint header", format!("bad `{key}` value `{v}`")))
        }
        let vocab = Vocabulary::new(num(&"vocab_size", get("vocab_size")?)?)?;
        let shape = ModelShape::new(
            vocab,
            num("context_order", get("context_order")?)?,
            num("prompt_feature_dim", get("prompt_feature_dim")?)?,
            num("max_response_len", get("max_response_len")?)?,
        )?;
        let hasher = PromptHasher::new(num("hash_seed", get("hash_seed")?)?, num("ngram_order", get("ngram_order")?)?);
        let temperature: f64 = num("temperature", get("temperature")?)?;
        let weights = lines
            .enumerate()
            .map(|(i, l)| l.parse::<f64>().map_err(|_| LabError::parse("checkpoint weights", format!("line {}: `{l}`", i + 3))))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            model: AutoRegressiveLM::from_weights(shape, hasher, temperature, weights)?,
            step: num("step", get("step")?)?,
            score: num("score", get("score")?)?,
            seed: num("seed", get("seed")?)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Settings for divergence evaluation on validation prompts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub samples_per_prompt: usize,
    /// When true every evaluation reuses the same sampling streams, so differences
    /// between rows reflect only the change in the model.
    pub common_random_numbers: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            samples_per_prompt: 4,
            common_random_numbers: true,
        }
    }
}

fn eval_seed(base: u64, settings: &EvalSettings, row: u64, metric: u64) -> u64 {
    let row = if settings.common_random_numbers { 0 } else { row };
    derive_seed(base, &[label::EVAL, row, metric])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub eval_interval: u64,
    pub optimizer: OptimizerConfig,
}

/// Supervised fine-tuning from the all-zero model; returns the checkpoint with the
/// lowest validation `KL_seq(oracle, model)`.
#[allow(clippy::too_many_arguments)]
pub fn run_sft(
    settings: &SftSettings,
    shape: ModelShape,
    hasher: PromptHasher,
    temperature: f64,
    oracle: &AutoRegressiveLM,
    oracle_data: &Arc<LabeledDataset>,
    validation: &PromptDataset,
    eval: &EvalSettings,
    seed: u64,
) -> Result<Checkpoint> {
    settings.optimizer.validate()?;
    if settings.eval_interval == 0 {
        return Err(LabError::InvalidArgument("sft eval_interval must be >= 1".into()));
    }
    let mut model = AutoRegressiveLM::zeros(shape, hasher, temperature)?;
    if !model.compatible_with(oracle) {
        return Err(LabError::InvalidArgument("model and oracle vocabularies differ".into()));
    }
    let score = |m: &AutoRegressiveLM, row: u64| -> Result<f64> {
        Ok(kl_seq_estimate(oracle, m, &validation.prompts, eval.samples_per_prompt, eval_seed(seed, eval, row, 0))?.mean)
    };
    let mut best = Checkpoint {
        model: model.clone(),
        step: 0,
        score: score(&model, 0)?,
        seed,
    };
    let spec = DataSourceSpec {
        kind: SourceKind::Offline,
        offline: Some(oracle_data.clone()),
    };
    let dummy_prompts = PromptDataset {
        prompts: vec![Sequence::prompt(Vec::new())],
        split: crate::data::Split::Train,
        seed,
    };
    let mut sampler = BatchSampler::new(spec, 1, settings.batch_size, seed)?;
    let mut opt = Optimizer::new(settings.optimizer, shape.num_params());
    for step in 1..=settings.steps {
        let (batch, _) = sampler.next_batch(&dummy_prompts, &model, &model, step)?;
        let obj = sft_loss(&model, &batch)?;
        if !obj.value.is_finite() || obj.grad.iter().any(|g| !g.is_finite()) {
            return Err(LabError::Diverged { step, loss: obj.value });
        }
        opt.step(model.weights_mut(), &obj.grad);
        if model.weights().iter().any(|w| !w.is_finite()) {
            return Err(LabError::Diverged { step, loss: f64::NAN });
        }
        if step % settings.eval_interval == 0 || step == settings.steps {
            let s = score(&model, step).map_err(|e| diverged_on_support(e, step))?;
            if s < best.score {
                best = Checkpoint {
                    model: model.clone(),
                    step,
                    score: s,
                    seed,
                };
            }
        }
    }
    Ok(best)
}

/// One evaluation row. Proxy metrics compare student and teacher, golden metrics
/// compare student and oracle; forward KL samples the reference model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub epoch: f64,
    pub train_loss: f64,
    pub proxy: [DivergenceEstimate; 3],
    pub golden: [DivergenceEstimate; 3],
}

impl MetricRow {
    pub fn proxy(&self, kind: DivergenceKind) -> f64 {
        self.proxy[kind_index(kind)].mean
    }

    pub fn golden(&self, kind: DivergenceKind) -> f64 {
        self.golden[kind_index(kind)].mean
    }
}

pub(crate) fn kind_index(kind: DivergenceKind) -> usize {
    match kind {
        DivergenceKind::ForwardKlSeq => 0,
        DivergenceKind::ReverseKlSeq => 1,
        DivergenceKind::JsSeq => 2,
    }
}

pub const METRIC_COLUMNS: [&str; 15] = [
    "step",
    "epoch",
    "train_loss",
    "proxy_fwd_kl",
    "proxy_fwd_kl_se",
    "proxy_rev_kl",
    "proxy_rev_kl_se",
    "proxy_js",
    "proxy_js_se",
    "golden_fwd_kl",
    "golden_fwd_kl_se",
    "golden_rev_kl",
    "golden_rev_kl_se",
    "golden_js",
    "golden_js_se",
];

/// Per-evaluation record of a distillation run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricSeries {
    pub rows: Vec<MetricRow>,
    /// Number of evaluation samples behind each estimate.
    pub num_samples: usize,
}

impl MetricSeries {
    pub fn epochs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.epoch).collect()
    }

    pub fn proxy_series(&self, kind: DivergenceKind) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.epoch, r.proxy(kind))).collect()
    }

    pub fn golden_series(&self, kind: DivergenceKind) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.epoch, r.golden(kind))).collect()
    }

    pub fn train_loss_series(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.epoch, r.train_loss)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = METRIC_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.step, r.epoch, r.train_loss);
            for e in r.proxy.iter().chain(&r.golden) {
                let _ = write!(out, ",{},{}", e.mean, e.std_error);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| LabError::parse("metrics csv", "empty file"))?;
        if header != METRIC_COLUMNS.join(",") {
            return Err(LabError::SchemaIncompatible(format!("unexpected metrics header `{header}`")));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != METRIC_COLUMNS.len() {
                return Err(LabError::parse(format!("metrics row {}", n + 1), "wrong number of columns"));
            }
            let f = |i: usize| -> Result<f64> {
                cells[i]
                    .parse()
                    .map_err(|_| LabError::parse(format!("metrics row {}", n + 1), format!("bad number `{}`", cells[i])))
            };
            let est = |i: usize| -> Result<DivergenceEstimate> {
                Ok(DivergenceEstimate {
                    mean: f(i)?,
                    std_error: f(i + 1)?,
                    num_samples: 0,
                })
            };
            rows.push(MetricRow {
                step: cells[0]
                    .parse()
                    .map_err(|_| LabError::parse(format!("metrics row {}", n + 1), "bad step"))?,
                epoch: f(1)?,
                train_loss: f(2)?,
                proxy: [est(3)?, est(5)?, est(7)?],
                golden: [est(9)?, est(11)?, est(13)?],
            });
        }
        Ok(Self { rows, num_samples: 0 })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| LabError::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_csv(&text)
    }

    /// Row-wise mean of several runs with identical evaluation schedules.
    pub fn average(runs: &[MetricSeries]) -> Result<MetricSeries> {
        let first = runs.first().ok_or_else(|| LabError::InsufficientData("no runs to average".into()))?;
        if runs.iter().any(|r| r.rows.len() != first.rows.len()) {
            return Err(LabError::SchemaIncompatible("runs have different evaluation schedules".into()));
        }
        let n = runs.len() as f64;
        let rows = (0..first.rows.len())
            .map(|i| {
                let mean_est = |pick: &dyn Fn(&MetricRow) -> DivergenceEstimate| {
                    let mean = runs.iter().map(|r| pick(&r.rows[i]).mean).sum::<f64>() / n;
                    let var = runs.iter().map(|r| pick(&r.rows[i]).std_error.powi(2)).sum::<f64>() / (n * n);
                    DivergenceEstimate {
                        mean,
                        std_error: var.sqrt(),
                        num_samples: runs.iter().map(|r| pick(&r.rows[i]).num_samples).sum(),
                    }
                };
                let base = &first.rows[i];
                MetricRow {
                    step: base.step,
                    epoch: base.epoch,
                    train_loss: runs.iter().map(|r| r.rows[i].train_loss).sum::<f64>() / n,
                    proxy: [0, 1, 2].map(|k| mean_est(&|r: &MetricRow| r.proxy[k])),
                    golden: [0, 1, 2].map(|k| mean_est(&|r: &MetricRow| r.golden[k])),
                }
            })
            .collect();
        Ok(MetricSeries {
            rows,
            num_samples: first.num_samples * runs.len(),
        })
    }
}

/// Proxy and golden estimates for all three divergence kinds.
pub fn evaluate(
    student: &AutoRegressiveLM,
    teacher: &AutoRegressiveLM,
    oracle: &AutoRegressiveLM,
    validation: &[Sequence],
    settings: &EvalSettings,
    seed: u64,
    row: u64,
) -> Result<([DivergenceEstimate; 3], [DivergenceEstimate; 3])> {
    let n = settings.samples_per_prompt;
    let s = |m| eval_seed(seed, settings, row, m);
    let proxy = [
        kl_seq_estimate(teacher, student, validation, n, s(1))?,
        kl_seq_estimate(student, teacher, validation, n, s(2))?,
        js_seq_estimate(student, teacher, validation, n, s(3))?,
    ];
    let golden = [
        kl_seq_estimate(oracle, student, validation, n, s(4))?,
        kl_seq_estimate(student, oracle, validation, n, s(5))?,
        js_seq_estimate(student, oracle, validation, n, s(6))?,
    ];
    Ok((proxy, golden))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSettings {
    pub batch_size: usize,
    pub epochs: f64,
    pub loss: TokenLossKind,
    pub optimizer: OptimizerConfig,
    pub evals_per_epoch: usize,
}

impl DistillSettings {
    pub fn total_steps(&self, num_prompts: usize) -> u64 {
        (self.epochs * epoch_length(num_prompts, self.batch_size) as f64).round() as u64
    }

    pub fn eval_interval(&self, num_prompts: usize) -> u64 {
        (epoch_length(num_prompts, self.batch_size) / self.evals_per_epoch.max(1)).max(1) as u64
    }
}

/// Inputs shared by every distillation run of an experiment.
pub struct DistillInputs<'a> {
    pub teacher: &'a Checkpoint,
    pub oracle: &'a AutoRegressiveLM,
    pub train_prompts: &'a PromptDataset,
    pub validation: &'a PromptDataset,
    pub source: DataSourceSpec,
    pub eval: EvalSettings,
    pub data_seed: u64,
    pub eval_seed: u64,
}

/// Result of a distillation run.
#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub series: MetricSeries,
    pub student: AutoRegressiveLM,
    pub offline_fraction: f64,
}

/// Distils the teacher into the student; the teacher is never modified.
pub fn run_distillation(
    settings: &DistillSettings,
    student_init: &Checkpoint,
    inputs: &DistillInputs<'_>,
) -> Result<DistillOutcome> {
    run_distillation_with(settings, student_init, inputs, true)
}

/// As [`run_distillation`]; with `evaluate_rows = false` the metric rows are skipped
/// (used to check that evaluation does not perturb training).
pub fn run_distillation_with(
    settings: &DistillSettings,
    student_init: &Checkpoint,
    inputs: &DistillInputs<'_>,
    evaluate_rows: bool,
) -> Result<DistillOutcome> {
    settings.optimizer.validate()?;
    settings.loss.validate()?;
    let teacher = &inputs.teacher.model;
    let mut student = student_init.model.clone();
    if !student.compatible_with(teacher) || !student.compatible_with(inputs.oracle) {
        return Err(LabError::InvalidArgument("student, teacher and oracle must share a vocabulary".into()));
    }
    let n = inputs.train_prompts.len();
    let steps_per_epoch = epoch_length(n, settings.batch_size) as f64;
    let total = settings.total_steps(n);
    let interval = settings.eval_interval(n);
    let mut sampler = BatchSampler::new(inputs.source.clone(), n, settings.batch_size, inputs.data_seed)?;
    let mut opt = Optimizer::new(settings.optimizer, student.shape().num_params());
    let mut series = MetricSeries {
        rows: Vec::new(),
        num_samples: inputs.validation.len() * inputs.eval.samples_per_prompt,
    };
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut offline_batches = 0u64;
    let push_row = |series: &mut MetricSeries, student: &AutoRegressiveLM, step: u64, train_loss: f64| -> Result<()> {
        if !evaluate_rows {
            return Ok(());
        }
        let row = series.rows.len() as u64;
        let (proxy, golden) = evaluate(
            student,
            teacher,
            inputs.oracle,
            &inputs.validation.prompts,
            &inputs.eval,
            inputs.eval_seed,
            row,
        )?;
        series.rows.push(MetricRow {
            step,
            epoch: step as f64 / steps_per_epoch,
            train_loss,
            proxy,
            golden,
        });
        Ok(())
    };
    if total == 0 {
        // Nothing to train: report the initial loss on one batch without updating.
        let (batch, _) = sampler.next_batch(inputs.train_prompts, &student, teacher, 0)?;
        let obj = distillation_loss(&student, teacher, &batch, settings.loss)?;
        push_row(&mut series, &student, 0, obj.value)?;
    }
    for step in 0..total {
        let (batch, origin) = sampler.next_batch(inputs.train_prompts, &student, teacher, step)?;
        if origin == crate::data::BatchOrigin::Offline {
            offline_batches += 1;
        }
        let obj = distillation_loss(&student, teacher, &batch, settings.loss).map_err(|e| diverged_on_support(e, step))?;
        if !obj.value.is_finite() || obj.grad.iter().any(|g| !g.is_finite()) {
            return Err(LabError::Diverged { step, loss: obj.value });
        }
        if step == 0 {
            push_row(&mut series, &student, 0, obj.value)?;
        }
        opt.step(student.weights_mut(), &obj.grad);
        if student.weights().iter().any(|w| !w.is_finite()) {
            return Err(LabError::Diverged { step, loss: f64::NAN });
        }
        loss_sum += obj.value;
        loss_count += 1;
        let done = step + 1;
        if done % interval == 0 || done == total {
            push_row(&mut series, &student, done, loss_sum / loss_count as f64).map_err(|e| diverged_on_support(e, step))?;
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    Ok(DistillOutcome {
        series,
        student,
        offline_fraction: if total == 0 { 0.0 } else { offline_batches as f64 / total as f64 },
    })
}

/// A student whose probabilities underflowed to zero has diverged.
fn diverged_on_support(e: LabError, step: u64) -> LabError {
    match e {
        LabError::SupportViolation(_) => LabError::Diverged { step, loss: f64::INFINITY },
        e => e,
    }
}

/// Summary of one learning rate in a grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSummary {
    pub learning_rate: f64,
    /// Final Gaussian-smoothed proxy metric; `None` if the run diverged.
    pub final_smoothed_proxy: Option<f64>,
}

/// The proxy divergence that matches a token-level loss.
pub fn proxy_kind_for(loss: TokenLossKind) -> DivergenceKind {
    match loss {
        TokenLossKind::ForwardKl => DivergenceKind::ForwardKlSeq,
        TokenLossKind::ReverseKl => DivergenceKind::ReverseKlSeq,
        TokenLossKind::GeneralizedJs { .. } => DivergenceKind::JsSeq,
    }
}

/// Picks the learning rate with the lowest final smoothed proxy metric; ties go to
/// the smaller rate, and to the first occurrence among duplicates.
pub fn lr_grid_search(
    settings: &DistillSettings,
    grid: &[f64],
    bandwidth_fraction: f64,
    student_init: &Checkpoint,
    inputs: &DistillInputs<'_>,
) -> Result<(f64, Vec<LrSummary>)> {
    if grid.is_empty() {
        return Err(LabError::InvalidArgument("learning-rate grid is empty".into()));
    }
    let kind = proxy_kind_for(settings.loss);
    let mut summaries = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lr in grid {
        let mut s = *settings;
        s.optimizer.learning_rate = lr;
        let value = match run_distillation(&s, student_init, inputs) {
            Ok(out) => {
                let series = out.series.proxy_series(kind);
                let span = series.last().map_or(0.0, |l| l.0) - series.first().map_or(0.0, |f| f.0);
                let bw = (bandwidth_fraction * span).max(f64::MIN_POSITIVE);
                let smoothed = gaussian_smooth(&series, bw)?;
                smoothed.last().map(|p| p.1).filter(|v| v.is_finite())
            }
            Err(LabError::Diverged { .. }) => None,
            Err(e) => return Err(e),
        };
        summaries.push(LrSummary {
            learning_rate: lr,
            final_smoothed_proxy: value,
        });
        if let Some(v) = value {
            let better = match best {
                None => true,
                Some((blr, bv)) => v < bv || (v == bv && lr < blr),
            };
            if better {
                best = Some((lr, v));
            }
        }
    }
    best.map(|(lr, _)| (lr, summaries)).ok_or(LabError::AllDiverged)
}
