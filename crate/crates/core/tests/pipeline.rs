use std::sync::Arc;

use distill_lab::config::ExperimentConfig;
use distill_lab::data::{DataSourceSpec, SourceKind};
use distill_lab::experiment::{prepare, run_in_memory, teacher_dataset, Prepared};
use distill_lab::losses::TokenLossKind;
use distill_lab::training::{run_distillation, run_distillation_with, DistillInputs, DistillSettings};
use distill_lab::LabError;

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.name = "tiny".into();
    cfg.vocab_size = 4;
    cfg.max_response_len = 5;
    cfg.prompts.n_train = 48;
    cfg.prompts.n_validation = 16;
    cfg.prompts.n_oracle = 48;
    cfg.prompts.max_len = 4;
    for m in [&mut cfg.oracle, &mut cfg.teacher, &mut cfg.student] {
        m.prompt_feature_dim = 16;
    }
    for s in [&mut cfg.sft_teacher, &mut cfg.sft_student] {
        s.steps = 40;
        s.eval_interval = 20;
        s.batch_size = 8;
    }
    cfg.distill.batch_size = 8;
    cfg.distill.epochs = 3.0;
    cfg.distill.optimizer.learning_rate = 1e-2;
    cfg.distill.optimizer.warmup_steps = 5;
    cfg.eval.samples_per_prompt = 2;
    cfg.eval.evals_per_epoch = 2;
    cfg
}

fn inputs<'a>(cfg: &ExperimentConfig, p: &'a Prepared, source: DataSourceSpec) -> DistillInputs<'a> {
    let seeds = cfg.seeds();
    DistillInputs {
        teacher: &p.teacher,
        oracle: &p.oracle,
        train_prompts: &p.splits.train,
        validation: &p.splits.validation,
        source,
        eval: cfg.eval_settings(),
        data_seed: seeds.distill,
        eval_seed: seeds.eval,
    }
}

#[test]
fn reruns_are_byte_identical() {
    for source in [SourceKind::Offline, SourceKind::OnlineStudent, SourceKind::Mixture { alpha: 0.5 }] {
        let mut cfg = tiny_config();
        cfg.distill.source = source;
        let (_, a) = run_in_memory(&cfg).unwrap();
        let (_, b) = run_in_memory(&cfg).unwrap();
        assert_eq!(a.outcome.series.to_csv(), b.outcome.series.to_csv());
        assert_eq!(a.outcome.student.weights(), b.outcome.student.weights());
    }
}

#[test]
fn different_seeds_differ() {
    let cfg = tiny_config();
    let (_, a) = run_in_memory(&cfg).unwrap();
    let (_, b) = run_in_memory(&cfg.with_seed(cfg.seed + 1)).unwrap();
    assert_ne!(a.outcome.series.to_csv(), b.outcome.series.to_csv());
}

#[test]
fn distillation_leaves_teacher_untouched() {
    let cfg = tiny_config();
    let p = prepare(&cfg).unwrap();
    let before = p.teacher.model.weights().to_vec();
    let data = teacher_dataset(&cfg, &p.teacher.model, &p.splits.train).unwrap().map(Arc::new);
    let spec = DataSourceSpec {
        kind: SourceKind::Offline,
        offline: data,
    };
    run_distillation(&cfg.distill_settings(), &p.student, &inputs(&cfg, &p, spec)).unwrap();
    assert_eq!(p.teacher.model.weights(), &before[..]);
}

#[test]
fn evaluation_does_not_perturb_training() {
    let cfg = tiny_config();
    let p = prepare(&cfg).unwrap();
    let spec = DataSourceSpec {
        kind: SourceKind::OnlineStudent,
        offline: None,
    };
    let settings = cfg.distill_settings();
    let with = run_distillation_with(&settings, &p.student, &inputs(&cfg, &p, spec.clone()), true).unwrap();
    let without = run_distillation_with(&settings, &p.student, &inputs(&cfg, &p, spec), false).unwrap();
    assert_eq!(with.student.weights(), without.student.weights());
    assert!(without.series.rows.is_empty());
}

#[test]
fn zero_epochs_gives_single_initial_row() {
    let mut cfg = tiny_config();
    cfg.distill.epochs = 0.0;
    cfg.distill.source = SourceKind::OnlineTeacher;
    let (p, stage) = run_in_memory(&cfg).unwrap();
    let rows = &stage.outcome.series.rows;
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].step, 0);
    assert_eq!(stage.outcome.student.weights(), p.student.model.weights());
}

#[test]
fn student_equal_to_teacher_has_zero_loss() {
    let cfg = tiny_config();
    let p = prepare(&cfg).unwrap();
    for loss in [TokenLossKind::ForwardKl, TokenLossKind::ReverseKl, TokenLossKind::GeneralizedJs { beta: 0.5 }] {
        let spec = DataSourceSpec {
            kind: SourceKind::OnlineTeacher,
            offline: None,
        };
        let settings = DistillSettings {
            loss,
            ..cfg.distill_settings()
        };
        let out = run_distillation(&settings, &p.teacher, &inputs(&cfg, &p, spec)).unwrap();
        for row in &out.series.rows {
            assert_eq!(row.train_loss, 0.0);
            assert!(row.proxy.iter().all(|e| e.mean == 0.0));
        }
        assert_eq!(out.student.weights(), p.teacher.model.weights());
    }
}

#[test]
fn offline_source_without_dataset_is_rejected() {
    let cfg = tiny_config();
    let p = prepare(&cfg).unwrap();
    let spec = DataSourceSpec {
        kind: SourceKind::Offline,
        offline: None,
    };
    let err = run_distillation(&cfg.distill_settings(), &p.student, &inputs(&cfg, &p, spec)).unwrap_err();
    assert!(matches!(err, LabError::MissingOfflineDataset(_)), "{err}");
}

#[test]
fn huge_learning_rate_reports_divergence_or_finite_metrics() {
    let mut cfg = tiny_config();
    cfg.distill.optimizer.learning_rate = 1e6;
    cfg.distill.source = SourceKind::OnlineTeacher;
    match run_in_memory(&cfg) {
        Ok((_, stage)) => assert!(stage.outcome.series.rows.iter().all(|r| r.golden.iter().all(|g| g.mean.is_finite()))),
        Err(LabError::Diverged { .. }) => {}
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn grid_search_prefers_a_working_rate() {
    let mut cfg = tiny_config();
    cfg.distill.source = SourceKind::OnlineTeacher;
    cfg.distill.lr_grid = vec![1e-6, 1e-2];
    cfg.distill.lr_search_epochs = 1.0;
    let (_, stage) = run_in_memory(&cfg).unwrap();
    assert_eq!(stage.lr_search.len(), 2);
    assert_eq!(stage.learning_rate, 1e-2);
}

#[test]
fn sft_improves_on_uniform_model() {
    let cfg = tiny_config();
    let p = prepare(&cfg).unwrap();
    let uniform = distill_lab::lm::AutoRegressiveLM::zeros(*p.teacher.model.shape(), *p.teacher.model.hasher(), cfg.temperature).unwrap();
    let init = distill_lab::divergences::kl_seq_estimate(&p.oracle, &uniform, &p.splits.validation.prompts, 4, 1).unwrap();
    assert!(p.teacher.score < init.mean, "{} vs {}", p.teacher.score, init.mean);
}
