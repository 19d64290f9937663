//! Experiment configuration: a TOML tree with a default for every field, its
//! validation, and the shipped presets.

use serde::{Deserialize, Serialize};

use crate::analysis::HackingParams;
use crate::data::SourceKind;
use crate::error::{LabError, Result};
use crate::lm::{InitScales, ModelShape, PromptHasher, Vocabulary};
use crate::losses::TokenLossKind;
use crate::rng::derive_seed;
use crate::training::{DistillSettings, EvalSettings, OptimizerConfig, OptimizerKind, SftSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    /// Training prompts N for distillation.
    pub n_train: usize,
    /// Held-out prompts for every divergence estimate.
    pub n_validation: usize,
    /// Prompts labelled by the oracle for supervised fine-tuning (N_oracle).
    pub n_oracle: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf_exponent: f64,
    /// 1 hashes unigrams, 2 adds bigrams.
    pub ngram_order: usize,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            n_train: 1024,
            n_validation: 128,
            n_oracle: 1024,
            min_len: 2,
            max_len: 8,
            zipf_exponent: 1.0,
            ngram_order: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub context_order: usize,
    pub prompt_feature_dim: usize,
    /// Only read for the oracle, whose weights are drawn at random.
    pub init: InitScales,
}

impl ModelSection {
    fn with(context_order: usize, prompt_feature_dim: usize) -> Self {
        Self {
            context_order,
            prompt_feature_dim,
            init: InitScales::zero(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self::with(1, 32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub batch_size: usize,
    pub epochs: f64,
    pub loss: TokenLossKind,
    pub optimizer: OptimizerConfig,
    pub source: SourceKind,
    /// Prompt diversity knob: ceil(N / k) prompts with k teacher responses each.
    pub diversity_k: usize,
    /// Generation budget knob: m teacher responses for every prompt.
    pub budget_m: usize,
    /// Learning rates tried before the main run; empty skips the search.
    pub lr_grid: Vec<f64>,
    /// Epochs of each grid-search run.
    pub lr_search_epochs: f64,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50.0,
            loss: TokenLossKind::ForwardKl,
            optimizer: OptimizerConfig {
                learning_rate: 2e-2,
                ..OptimizerConfig::default()
            },
            source: SourceKind::Offline,
            diversity_k: 1,
            budget_m: 1,
            lr_grid: Vec::new(),
            lr_search_epochs: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub samples_per_prompt: usize,
    pub evals_per_epoch: usize,
    /// Reuse the same sampling streams at every evaluation row.
    pub common_random_numbers: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalSettings::default();
        Self {
            samples_per_prompt: e.samples_per_prompt,
            evals_per_epoch: 2,
            common_random_numbers: e.common_random_numbers,
        }
    }
}

/// Optional per-stage seed overrides; unset stages derive from the root seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedOverrides {
    pub prompts: Option<u64>,
    pub oracle: Option<u64>,
    pub oracle_data: Option<u64>,
    pub sft_teacher: Option<u64>,
    pub sft_student: Option<u64>,
    pub teacher_data: Option<u64>,
    pub distill: Option<u64>,
    pub eval: Option<u64>,
}

/// Resolved seeds, one per pipeline stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub prompts: u64,
    pub hash: u64,
    pub oracle: u64,
    pub oracle_data: u64,
    pub sft_teacher: u64,
    pub sft_student: u64,
    pub teacher_data: u64,
    pub distill: u64,
    pub eval: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub vocab_size: usize,
    pub max_response_len: usize,
    pub temperature: f64,
    /// Permit a student larger than the teacher or a teacher larger than the oracle.
    pub allow_capacity_override: bool,
    pub prompts: PromptSection,
    pub oracle: ModelSection,
    pub teacher: ModelSection,
    pub student: ModelSection,
    pub sft_teacher: SftSettings,
    pub sft_student: SftSettings,
    pub distill: DistillSection,
    pub eval: EvalSection,
    pub analysis: HackingParams,
    pub seeds: SeedOverrides,
}

impl Default for SftSettings {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 32,
            eval_interval: 100,
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    epsilon: 1e-8,
                },
                learning_rate: 3e-2,
                warmup_steps: 100,
            },
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 1,
            vocab_size: 16,
            max_response_len: 16,
            temperature: 1.0,
            allow_capacity_override: false,
            prompts: PromptSection::default(),
            oracle: ModelSection {
                context_order: 3,
                prompt_feature_dim: 1024,
                init: InitScales {
                    prompt: 1.0,
                    context: 1.5,
                    bias: 0.5,
                    eos_bias: -1.0,
                    context_decay: 1.0,
                },
            },
            teacher: ModelSection::with(2, 1024),
            student: ModelSection::with(1, 1024),
            sft_teacher: SftSettings::default(),
            sft_student: SftSettings {
                steps: 5,
                ..SftSettings::default()
            },
            distill: DistillSection::default(),
            eval: EvalSection::default(),
            analysis: HackingParams::default(),
            seeds: SeedOverrides::default(),
        }
    }
}

mod stage {
    pub const PROMPTS: u64 = 1;
    pub const HASH: u64 = 2;
    pub const ORACLE: u64 = 3;
    pub const ORACLE_DATA: u64 = 4;
    pub const SFT_TEACHER: u64 = 5;
    pub const SFT_STUDENT: u64 = 6;
    pub const TEACHER_DATA: u64 = 7;
    pub const DISTILL: u64 = 8;
    pub const EVAL: u64 = 9;
}

fn check(ok: bool, field: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(LabError::config(field, message))
    }
}

fn check_optimizer(opt: &OptimizerConfig, field: &str) -> Result<()> {
    check(
        opt.learning_rate > 0.0 && opt.learning_rate.is_finite(),
        &format!("{field}.learning_rate"),
        "must be a positive number",
    )?;
    opt.validate().map_err(|e| LabError::config(format!("{field}.kind"), e.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::config("<toml>", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        check(!self.name.is_empty(), "name", "must not be empty")?;
        check(self.vocab_size >= 2, "vocab_size", "must be at least 2")?;
        check(self.max_response_len >= 1, "max_response_len", "must be at least 1")?;
        check(
            self.temperature > 0.0 && self.temperature.is_finite(),
            "temperature",
            "must be positive",
        )?;
        let p = &self.prompts;
        check(p.n_train >= 1, "prompts.n_train", "must be at least 1")?;
        check(p.n_validation >= 1, "prompts.n_validation", "must be at least 1")?;
        check(p.n_oracle >= 1, "prompts.n_oracle", "must be at least 1")?;
        check(p.min_len <= p.max_len, "prompts.min_len", "must not exceed prompts.max_len")?;
        check(p.zipf_exponent >= 0.0, "prompts.zipf_exponent", "must be non-negative")?;
        check(p.ngram_order >= 1, "prompts.ngram_order", "must be at least 1")?;
        let init = &self.oracle.init;
        check(
            [init.prompt, init.context, init.bias].iter().all(|s| *s >= 0.0) && init.eos_bias.is_finite(),
            "oracle.init",
            "scales must be non-negative",
        )?;
        if !self.allow_capacity_override {
            let (s, t, o) = (
                self.shape(&self.student)?.num_params(),
                self.shape(&self.teacher)?.num_params(),
                self.shape(&self.oracle)?.num_params(),
            );
            check(
                s <= t,
                "student",
                format!("student has {s} parameters, more than the teacher's {t}; set allow_capacity_override"),
            )?;
            check(
                t <= o,
                "teacher",
                format!("teacher has {t} parameters, more than the oracle's {o}; set allow_capacity_override"),
            )?;
        }
        for (name, sft) in [("sft_teacher", &self.sft_teacher), ("sft_student", &self.sft_student)] {
            check(sft.batch_size >= 1, &format!("{name}.batch_size"), "must be at least 1")?;
            check(sft.eval_interval >= 1, &format!("{name}.eval_interval"), "must be at least 1")?;
            check_optimizer(&sft.optimizer, &format!("{name}.optimizer"))?;
        }
        let d = &self.distill;
        check(d.batch_size >= 1, "distill.batch_size", "must be at least 1")?;
        check(d.epochs >= 0.0 && d.epochs.is_finite(), "distill.epochs", "must be non-negative")?;
        d.loss
            .validate()
            .map_err(|e| LabError::config("distill.loss.beta", e.to_string()))?;
        check_optimizer(&d.optimizer, "distill.optimizer")?;
        if let SourceKind::Mixture { alpha } = d.source {
            check((0.0..=1.0).contains(&alpha), "distill.source.alpha", "must lie in [0, 1]")?;
        }
        check(d.diversity_k >= 1, "distill.diversity_k", "must be at least 1")?;
        check(d.diversity_k <= p.n_train, "distill.diversity_k", "must not exceed prompts.n_train")?;
        check(d.budget_m >= 1, "distill.budget_m", "must be at least 1")?;
        check(
            d.diversity_k == 1 || d.budget_m == 1,
            "distill.budget_m",
            "cannot be combined with diversity_k > 1",
        )?;
        check(
            d.lr_grid.iter().all(|lr| *lr > 0.0 && lr.is_finite()),
            "distill.lr_grid",
            "entries must be positive",
        )?;
        check(d.lr_search_epochs > 0.0, "distill.lr_search_epochs", "must be positive")?;
        check(self.eval.samples_per_prompt >= 1, "eval.samples_per_prompt", "must be at least 1")?;
        check(self.eval.evals_per_epoch >= 1, "eval.evals_per_epoch", "must be at least 1")?;
        self.analysis
            .validate()
            .map_err(|e| LabError::config("analysis", e.to_string()))?;
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.vocab_size)
    }

    pub fn shape(&self, m: &ModelSection) -> Result<ModelShape> {
        ModelShape::new(self.vocab()?, m.context_order, m.prompt_feature_dim, self.max_response_len)
    }

    pub fn seeds(&self) -> StageSeeds {
        let d = |o: Option<u64>, l: u64| o.unwrap_or_else(|| derive_seed(self.seed, &[l]));
        let s = &self.seeds;
        StageSeeds {
            prompts: d(s.prompts, stage::PROMPTS),
            hash: derive_seed(self.seed, &[stage::HASH]),
            oracle: d(s.oracle, stage::ORACLE),
            oracle_data: d(s.oracle_data, stage::ORACLE_DATA),
            sft_teacher: d(s.sft_teacher, stage::SFT_TEACHER),
            sft_student: d(s.sft_student, stage::SFT_STUDENT),
            teacher_data: d(s.teacher_data, stage::TEACHER_DATA),
            distill: d(s.distill, stage::DISTILL),
            eval: d(s.eval, stage::EVAL),
        }
    }

    pub fn hasher(&self) -> PromptHasher {
        PromptHasher::new(self.seeds().hash, self.prompts.ngram_order)
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            samples_per_prompt: self.eval.samples_per_prompt,
            common_random_numbers: self.eval.common_random_numbers,
        }
    }

    pub fn distill_settings(&self) -> DistillSettings {
        DistillSettings {
            batch_size: self.distill.batch_size,
            epochs: self.distill.epochs,
            loss: self.distill.loss,
            optimizer: self.distill.optimizer,
            evals_per_epoch: self.eval.evals_per_epoch,
        }
    }

    /// Same experiment under another root seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Names of the shipped presets.
pub const PRESETS: [&str; 18] = [
    "offline-fwd-kl",
    "offline-rev-kl",
    "offline-gjs",
    "online-teacher-fwd-kl",
    "online-teacher-rev-kl",
    "online-teacher-gjs",
    "online-student-fwd-kl",
    "online-student-rev-kl",
    "online-student-gjs",
    "diversity-k1",
    "diversity-k2",
    "diversity-k5",
    "budget-m1",
    "budget-m2",
    "budget-m3",
    "mixture-a0.1",
    "mixture-a0.5",
    "mixture-a0.9",
];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let mut c = ExperimentConfig {
        name: name.to_string(),
        ..ExperimentConfig::default()
    };
    let loss = |suffix: &str| match suffix {
        "fwd-kl" => Some(TokenLossKind::ForwardKl),
        "rev-kl" => Some(TokenLossKind::ReverseKl),
        "gjs" => Some(TokenLossKind::GeneralizedJs { beta: 0.5 }),
        _ => None,
    };
    if let Some(rest) = name.strip_prefix("offline-") {
        c.distill.loss = loss(rest)?;
    } else if let Some(rest) = name.strip_prefix("online-teacher-") {
        c.distill.loss = loss(rest)?;
        c.distill.source = SourceKind::OnlineTeacher;
    } else if let Some(rest) = name.strip_prefix("online-student-") {
        c.distill.loss = loss(rest)?;
        c.distill.source = SourceKind::OnlineStudent;
    } else if let Some(k) = name.strip_prefix("diversity-k") {
        c.distill.diversity_k = match k {
            "1" | "2" | "5" => k.parse().ok()?,
            _ => return None,
        };
    } else if let Some(m) = name.strip_prefix("budget-m") {
        c.distill.budget_m = match m {
            "1" | "2" | "3" => m.parse().ok()?,
            _ => return None,
        };
    } else if let Some(a) = name.strip_prefix("mixture-a") {
        let alpha = match a {
            "0.1" | "0.5" | "0.9" => a.parse().ok()?,
            _ => return None,
        };
        c.distill.source = SourceKind::Mixture { alpha };
    } else {
        return None;
    }
    Some(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_preset_is_valid() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.name, name);
            assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
        assert!(preset("diversity-k3").is_none());
        assert!(preset("nonsense").is_none());
    }

    #[test]
    fn zero_batch_size_names_field() {
        let err = ExperimentConfig::from_toml("[distill]\nbatch_size = 0\n").unwrap_err();
        match err {
            LabError::Config { field, .. } => assert_eq!(field, "distill.batch_size"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = ExperimentConfig::from_toml("[distill]\nbatchsize = 3\n").unwrap_err();
        assert!(err.to_string().contains("batchsize"), "{err}");
    }

    #[test]
    fn capacity_ordering_enforced() {
        let mut c = ExperimentConfig::default();
        c.student.context_order = 3;
        assert!(matches!(c.validate(), Err(LabError::Config { field, .. }) if field == "student"));
        c.allow_capacity_override = true;
        c.validate().unwrap();
    }

    #[test]
    fn seeds_differ_across_stages_and_respect_overrides() {
        let mut c = ExperimentConfig::default();
        let s = c.seeds();
        let all = [s.prompts, s.hash, s.oracle, s.oracle_data, s.sft_teacher, s.sft_student, s.teacher_data, s.distill, s.eval];
        let set: std::collections::HashSet<u64> = all.iter().copied().collect();
        assert_eq!(set.len(), all.len());
        c.seeds.distill = Some(7);
        assert_eq!(c.seeds().distill, 7);
        assert_eq!(c.seeds().eval, s.eval);
    }
}
