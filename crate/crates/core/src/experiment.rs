//! The full pipeline built from a configuration: prompt splits, the random oracle,
//! oracle labels, supervised fine-tuning of teacher and student, the teacher
//! dataset and the distillation run.

use std::sync::Arc;

use crate::config::ExperimentConfig;
use crate::data::{
    build_low_diversity, generate_labeled, generate_prompts, generate_prompts_excluding, prompt_contents, DataSourceSpec,
    Generator, LabeledDataset, PromptConfig, PromptDataset, Split,
};
use crate::error::{LabError, Result};
use crate::lm::AutoRegressiveLM;
use crate::rng::{label, stream};
use crate::training::{lr_grid_search, run_distillation, run_sft, Checkpoint, DistillInputs, DistillOutcome, LrSummary};

/// Training and validation prompts; the oracle labels the first `n_oracle`
/// training prompts.
pub struct PromptSplits {
    pub train: PromptDataset,
    pub validation: PromptDataset,
    pub oracle: PromptDataset,
}

pub fn prompt_config(cfg: &ExperimentConfig) -> Result<PromptConfig> {
    Ok(PromptConfig {
        vocab: cfg.vocab()?,
        min_len: cfg.prompts.min_len,
        max_len: cfg.prompts.max_len,
        zipf_exponent: cfg.prompts.zipf_exponent,
    })
}

pub fn generate_splits(cfg: &ExperimentConfig) -> Result<PromptSplits> {
    let pc = prompt_config(cfg)?;
    let seed = cfg.seeds().prompts;
    let n_train = cfg.prompts.n_train.max(cfg.prompts.n_oracle);
    let train = generate_prompts(&pc, n_train, Split::Train, seed)?;
    let validation = generate_prompts_excluding(
        &pc,
        cfg.prompts.n_validation,
        Split::Validation,
        seed.wrapping_add(1),
        &prompt_contents(&train),
    )?;
    let oracle = PromptDataset {
        prompts: train.prompts[..cfg.prompts.n_oracle].to_vec(),
        split: Split::Train,
        seed,
    };
    let train = PromptDataset {
        prompts: train.prompts[..cfg.prompts.n_train].to_vec(),
        ..train
    };
    Ok(PromptSplits {
        train,
        validation,
        oracle,
    })
}

pub fn build_oracle(cfg: &ExperimentConfig) -> Result<AutoRegressiveLM> {
    let shape = cfg.shape(&cfg.oracle)?;
    let mut rng = stream(cfg.seeds().oracle, &[label::INIT]);
    AutoRegressiveLM::random(shape, cfg.hasher(), cfg.temperature, &cfg.oracle.init, &mut rng)
}

pub fn oracle_dataset(cfg: &ExperimentConfig, oracle: &AutoRegressiveLM, prompts: &PromptDataset) -> Result<LabeledDataset> {
    generate_labeled(oracle, prompts, 1, cfg.seeds().oracle_data, Generator::Oracle)
}

pub enum SftTarget {
    Teacher,
    Student,
}

pub fn sft(
    cfg: &ExperimentConfig,
    target: SftTarget,
    oracle: &AutoRegressiveLM,
    oracle_data: &Arc<LabeledDataset>,
    validation: &PromptDataset,
) -> Result<Checkpoint> {
    let (section, settings, seed) = match target {
        SftTarget::Teacher => (&cfg.teacher, &cfg.sft_teacher, cfg.seeds().sft_teacher),
        SftTarget::Student => (&cfg.student, &cfg.sft_student, cfg.seeds().sft_student),
    };
    run_sft(
        settings,
        cfg.shape(section)?,
        cfg.hasher(),
        cfg.temperature,
        oracle,
        oracle_data,
        validation,
        &cfg.eval_settings(),
        seed,
    )
}

/// The fixed teacher dataset for sources that read offline data, respecting the
/// diversity and budget knobs; `None` for purely online sources.
pub fn teacher_dataset(cfg: &ExperimentConfig, teacher: &AutoRegressiveLM, train: &PromptDataset) -> Result<Option<LabeledDataset>> {
    if !cfg.distill.source.needs_offline() {
        return Ok(None);
    }
    let seed = cfg.seeds().teacher_data;
    let ds = if cfg.distill.diversity_k > 1 {
        build_low_diversity(train, teacher, cfg.distill.diversity_k, seed)?
    } else {
        generate_labeled(teacher, train, cfg.distill.budget_m, seed, Generator::Teacher)?
    };
    Ok(Some(ds))
}

/// Everything the distillation stage consumes.
pub struct Prepared {
    pub splits: PromptSplits,
    pub oracle: AutoRegressiveLM,
    pub oracle_data: Arc<LabeledDataset>,
    pub teacher: Checkpoint,
    pub student: Checkpoint,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let splits = generate_splits(cfg)?;
    let oracle = build_oracle(cfg)?;
    let oracle_data = Arc::new(oracle_dataset(cfg, &oracle, &splits.oracle)?);
    let teacher = sft(cfg, SftTarget::Teacher, &oracle, &oracle_data, &splits.validation)?;
    let student = sft(cfg, SftTarget::Student, &oracle, &oracle_data, &splits.validation)?;
    Ok(Prepared {
        splits,
        oracle,
        oracle_data,
        teacher,
        student,
    })
}

/// Result of the distillation stage, including the learning-rate search if any.
pub struct DistillStage {
    pub outcome: DistillOutcome,
    pub learning_rate: f64,
    pub lr_search: Vec<LrSummary>,
}

pub fn distill(cfg: &ExperimentConfig, prepared: &Prepared, offline: Option<Arc<LabeledDataset>>) -> Result<DistillStage> {
    let source = DataSourceSpec {
        kind: cfg.distill.source,
        offline,
    };
    source.validate()?;
    let seeds = cfg.seeds();
    let inputs = DistillInputs {
        teacher: &prepared.teacher,
        oracle: &prepared.oracle,
        train_prompts: &prepared.splits.train,
        validation: &prepared.splits.validation,
        source,
        eval: cfg.eval_settings(),
        data_seed: seeds.distill,
        eval_seed: seeds.eval,
    };
    let mut settings = cfg.distill_settings();
    let (learning_rate, lr_search) = if cfg.distill.lr_grid.is_empty() {
        (settings.optimizer.learning_rate, Vec::new())
    } else {
        let mut short = settings;
        short.epochs = cfg.distill.lr_search_epochs;
        lr_grid_search(
            &short,
            &cfg.distill.lr_grid,
            cfg.analysis.bandwidth_fraction,
            &prepared.student,
            &inputs,
        )?
    };
    settings.optimizer.learning_rate = learning_rate;
    let outcome = run_distillation(&settings, &prepared.student, &inputs)?;
    if outcome.series.rows.is_empty() {
        return Err(LabError::InsufficientData("distillation produced no metric rows".into()));
    }
    Ok(DistillStage {
        outcome,
        learning_rate,
        lr_search,
    })
}

/// Prepares and distils in one call, for programmatic use.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<(Prepared, DistillStage)> {
    let prepared = prepare(cfg)?;
    let offline = teacher_dataset(cfg, &prepared.teacher.model, &prepared.splits.train)?.map(Arc::new);
    let stage = distill(cfg, &prepared, offline)?;
    Ok((prepared, stage))
}
