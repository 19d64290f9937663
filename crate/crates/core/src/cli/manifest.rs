//! Resumable, checksummed execution of the pipeline stages.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::plot::{self, Line, Panel};
use super::CliError;
use crate::analysis::{build_proxy_golden_curve, detect_hacking, HackingVerdict};
use crate::config::{ExperimentConfig, StageSeeds};
use crate::data::{LabeledDataset, PromptDataset};
use crate::divergences::DivergenceKind;
use crate::experiment::{self, PromptSplits, SftTarget};
use crate::error::LabError;
use crate::training::{proxy_kind_for, Checkpoint, MetricSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenPrompts,
    GenOracleData,
    SftTeacher,
    SftStudent,
    Distill,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::GenPrompts,
        Stage::GenOracleData,
        Stage::SftTeacher,
        Stage::SftStudent,
        Stage::Distill,
        Stage::Analyze,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenPrompts => "gen-prompts",
            Stage::GenOracleData => "gen-oracle-data",
            Stage::SftTeacher => "sft-teacher",
            Stage::SftStudent => "sft-student",
            Stage::Distill => "distill",
            Stage::Analyze => "analyze",
        }
    }
}

/// One output file, relative to the run directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub outputs: Vec<Artifact>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    /// SHA-256 of the resolved configuration TOML.
    pub config_hash: String,
    pub seeds: StageSeeds,
    pub stages: Vec<StageRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "distill/metrics.csv";

impl RunManifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Lab(LabError::parse(path.display().to_string(), e.to_string())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub svg: bool,
}

/// Layout of a run directory.
fn outputs_for(stage: Stage, cfg: &ExperimentConfig, opts: RunOptions) -> Vec<&'static str> {
    match stage {
        Stage::GenPrompts => vec!["prompts/train.txt", "prompts/validation.txt", "prompts/oracle.txt"],
        Stage::GenOracleData => vec!["oracle/oracle.ckpt", "oracle/data.txt"],
        Stage::SftTeacher => vec!["teacher/teacher.ckpt"],
        Stage::SftStudent => vec!["student/init.ckpt"],
        Stage::Distill => {
            let mut v = vec![METRICS_FILE, "distill/student.ckpt", "distill/lr_search.json"];
            if cfg.distill.source.needs_offline() {
                v.insert(0, "distill/teacher_data.txt");
            }
            v
        }
        Stage::Analyze => {
            let mut v = vec!["analysis/verdict.json", "analysis/proxy_golden.csv"];
            if opts.svg {
                v.extend(["analysis/proxy_golden.svg", "analysis/curves.svg"]);
            }
            v
        }
    }
}

struct Runner<'a> {
    dir: &'a Path,
    cfg: &'a ExperimentConfig,
    opts: RunOptions,
    previous: Option<RunManifest>,
    manifest: RunManifest,
}

enum Status {
    Reusable,
    Missing,
}

impl Runner<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn status(&self, stage: Stage) -> Result<Status, CliError> {
        let expected = outputs_for(stage, self.cfg, self.opts);
        let Some(rec) = self.previous.as_ref().and_then(|m| m.stage(stage)) else {
            return Ok(Status::Missing);
        };
        let recorded: Vec<&str> = rec.outputs.iter().map(|a| a.path.as_str()).collect();
        if recorded != expected {
            return Ok(Status::Missing);
        }
        for a in &rec.outputs {
            let path = self.path(&a.path);
            let Ok(bytes) = fs::read(&path) else {
                return Ok(Status::Missing);
            };
            let actual = sha256_hex(&bytes);
            if actual != a.sha256 {
                return Err(CliError::ChecksumMismatch {
                    path,
                    expected: a.sha256.clone(),
                    actual,
                });
            }
        }
        Ok(Status::Reusable)
    }

    fn write(&self, rel: &str, contents: &str) -> Result<(), LabError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| LabError::io(&path, e))
    }

    fn record(&mut self, stage: Stage) -> Result<(), CliError> {
        let mut outputs = Vec::new();
        for rel in outputs_for(stage, self.cfg, self.opts) {
            let path = self.path(rel);
            let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
            outputs.push(Artifact {
                path: rel.to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        self.manifest.stages.retain(|r| r.stage != stage);
        self.manifest.stages.push(StageRecord { stage, outputs });
        self.write(MANIFEST_FILE, &self.manifest.to_json())?;
        Ok(())
    }

    /// Loads the stage's outputs if they are intact, otherwise computes and records them.
    fn stage<T>(
        &mut self,
        stage: Stage,
        compute: impl FnOnce(&Self) -> crate::Result<T>,
        load: impl FnOnce(&Self) -> crate::Result<T>,
    ) -> Result<T, CliError> {
        let wrap = |source| CliError::Stage { stage: stage.name(), source };
        let value = match self.status(stage)? {
            Status::Reusable => load(self).map_err(wrap)?,
            Status::Missing => compute(self).map_err(wrap)?,
        };
        self.record(stage)?;
        Ok(value)
    }
}

fn read(dir: &Path, rel: &str) -> crate::Result<String> {
    let path = dir.join(rel);
    fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))
}

/// Runs (or resumes) every stage of `cfg` inside `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, opts: RunOptions) -> Result<RunManifest, CliError> {
    cfg.validate().map_err(CliError::Config)?;
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let config_text = cfg.to_toml();
    let config_hash = sha256_hex(config_text.as_bytes());
    let manifest_path = dir.join(MANIFEST_FILE);
    let previous = if manifest_path.exists() {
        Some(RunManifest::load(&manifest_path)?).filter(|m| m.config_hash == config_hash)
    } else {
        None
    };
    let mut r = Runner {
        dir,
        cfg,
        opts,
        previous,
        manifest: RunManifest {
            name: cfg.name.clone(),
            config_hash,
            seeds: cfg.seeds(),
            stages: Vec::new(),
        },
    };
    r.write(CONFIG_FILE, &config_text)?;
    let vocab_size = cfg.vocab_size;

    let splits = r.stage(
        Stage::GenPrompts,
        |r| {
            let s = experiment::generate_splits(cfg)?;
            r.write("prompts/train.txt", &s.train.to_text())?;
            r.write("prompts/validation.txt", &s.validation.to_text())?;
            r.write("prompts/oracle.txt", &s.oracle.to_text())?;
            Ok(s)
        },
        |r| {
            let train = PromptDataset::from_text(&read(r.dir, "prompts/train.txt")?, vocab_size)?;
            let validation = PromptDataset::from_text(&read(r.dir, "prompts/validation.txt")?, vocab_size)?;
            let oracle = PromptDataset::from_text(&read(r.dir, "prompts/oracle.txt")?, vocab_size)?;
            Ok(PromptSplits {
                train,
                validation,
                oracle,
            })
        },
    )?;

    let (oracle, oracle_data) = r.stage(
        Stage::GenOracleData,
        |r| {
            let oracle = experiment::build_oracle(cfg)?;
            let data = experiment::oracle_dataset(cfg, &oracle, &splits.oracle)?;
            let ck = Checkpoint {
                model: oracle.clone(),
                step: 0,
                score: 0.0,
                seed: cfg.seeds().oracle,
            };
            r.write("oracle/oracle.ckpt", &ck.to_text())?;
            r.write("oracle/data.txt", &data.to_text())?;
            Ok((oracle, data))
        },
        |r| {
            let ck = Checkpoint::from_text(&read(r.dir, "oracle/oracle.ckpt")?)?;
            let data = LabeledDataset::from_text(&read(r.dir, "oracle/data.txt")?)?;
            Ok((ck.model, data))
        },
    )?;
    let oracle_data = Arc::new(oracle_data);

    let mut checkpoints = Vec::new();
    for (stage, target, rel) in [
        (Stage::SftTeacher, SftTarget::Teacher, "teacher/teacher.ckpt"),
        (Stage::SftStudent, SftTarget::Student, "student/init.ckpt"),
    ] {
        let ck = r.stage(
            stage,
            |r| {
                let ck = experiment::sft(cfg, target, &oracle, &oracle_data, &splits.validation)?;
                r.write(rel, &ck.to_text())?;
                Ok(ck)
            },
            |r| Checkpoint::from_text(&read(r.dir, rel)?),
        )?;
        checkpoints.push(ck);
    }
    let student = checkpoints.pop().expect("student checkpoint");
    let teacher = checkpoints.pop().expect("teacher checkpoint");
    let prepared = experiment::Prepared {
        splits,
        oracle,
        oracle_data,
        teacher,
        student,
    };

    let series = r.stage(
        Stage::Distill,
        |r| {
            let offline = experiment::teacher_dataset(cfg, &prepared.teacher.model, &prepared.splits.train)?;
            if let Some(d) = &offline {
                r.write("distill/teacher_data.txt", &d.to_text())?;
            }
            let result = experiment::distill(cfg, &prepared, offline.map(Arc::new))?;
            r.write(METRICS_FILE, &result.outcome.series.to_csv())?;
            let ck = Checkpoint {
                model: result.outcome.student.clone(),
                step: result.outcome.series.rows.last().map_or(0, |row| row.step),
                score: result.outcome.series.rows.last().map_or(0.0, |row| row.golden[0].mean),
                seed: cfg.seeds().distill,
            };
            r.write("distill/student.ckpt", &ck.to_text())?;
            let search = serde_json::json!({
                "learning_rate": result.learning_rate,
                "grid": result.lr_search,
            });
            r.write("distill/lr_search.json", &(serde_json::to_string_pretty(&search).expect("json") + "\n"))?;
            Ok(result.outcome.series)
        },
        |r| MetricSeries::from_csv(&read(r.dir, METRICS_FILE)?),
    )?;

    r.stage(
        Stage::Analyze,
        |r| {
            let outputs = analyze(cfg, &series, opts.svg)?;
            r.write("analysis/verdict.json", &outputs.verdict.to_json())?;
            r.write("analysis/proxy_golden.csv", &outputs.curve_csv)?;
            if let Some((curve, curves)) = &outputs.svgs {
                r.write("analysis/proxy_golden.svg", curve)?;
                r.write("analysis/curves.svg", curves)?;
            }
            Ok(())
        },
        |_| Ok(()),
    )?;
    Ok(r.manifest)
}

pub struct AnalysisOutputs {
    pub verdict: HackingVerdict,
    pub curve_csv: String,
    /// Proxy-golden curve and the three-panel epoch plot.
    pub svgs: Option<(String, String)>,
}

/// Verdict, proxy-golden curve and plots for one metric series.
pub fn analyze(cfg: &ExperimentConfig, series: &MetricSeries, svg: bool) -> crate::Result<AnalysisOutputs> {
    let kind = proxy_kind_for(cfg.distill.loss);
    analyze_series(series, kind, &cfg.analysis, &cfg.name, svg)
}

pub fn analyze_series(
    series: &MetricSeries,
    kind: DivergenceKind,
    params: &crate::analysis::HackingParams,
    name: &str,
    svg: bool,
) -> crate::Result<AnalysisOutputs> {
    let verdict = detect_hacking(series, kind, params)?;
    let curve = build_proxy_golden_curve(series, kind, kind, params.bandwidth_fraction)?;
    let svgs = svg.then(|| {
        let label = kind.short_name();
        let pg = Panel {
            title: format!("{name}: proxy vs golden ({label})"),
            x_label: "proxy".into(),
            y_label: "golden".into(),
            log_x: false,
            log_y: false,
            lines: vec![
                Line::new("raw", curve.points.iter().map(|p| (p.proxy, p.golden)).collect()).dashed(),
                Line::new("smoothed", curve.smoothed.iter().map(|p| (p.proxy, p.golden)).collect()),
            ],
        };
        let epochs = epoch_panels(&[(name.to_string(), series)], kind);
        (plot::render(&[pg]), plot::render(&epochs))
    });
    Ok(AnalysisOutputs {
        verdict,
        curve_csv: curve.to_csv(),
        svgs,
    })
}

/// Train loss, proxy and golden against epochs on log-log axes, one line per run.
pub fn epoch_panels(runs: &[(String, &MetricSeries)], kind: DivergenceKind) -> Vec<Panel> {
    let label = kind.short_name();
    let panel = |title: String, f: &dyn Fn(&MetricSeries) -> Vec<(f64, f64)>| Panel {
        title,
        x_label: "epoch".into(),
        y_label: "nats".into(),
        log_x: true,
        log_y: true,
        lines: runs.iter().map(|(n, s)| Line::new(n.clone(), f(s))).collect(),
    };
    vec![
        panel("train loss".into(), &|s| s.train_loss_series()),
        panel(format!("proxy {label}"), &|s| s.proxy_series(kind)),
        panel(format!("golden {label}"), &|s| s.golden_series(kind)),
    ]
}
