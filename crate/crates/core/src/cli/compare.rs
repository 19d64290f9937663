//! Side-by-side comparison of finished runs.

use std::collections::BTreeSet;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::manifest::{epoch_panels, RunManifest, Stage, METRICS_FILE};
use super::{plot, CliError};
use crate::divergences::DivergenceKind;
use crate::error::LabError;
use crate::training::MetricSeries;

pub struct ComparisonReport {
    pub runs: Vec<String>,
    pub csv_path: PathBuf,
    pub svg_path: Option<PathBuf>,
}

fn unique_names(names: Vec<String>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    names
        .into_iter()
        .map(|n| {
            let count = seen.iter().filter(|s| **s == n).count();
            seen.push(n.clone());
            if count == 0 {
                n
            } else {
                format!("{n}#{}", count + 1)
            }
        })
        .collect()
}

/// Aligns series on the union of their epochs; absent values stay empty.
pub fn aligned_csv(runs: &[(String, &MetricSeries)], kind: DivergenceKind) -> String {
    let label = kind.short_name();
    let mut out = String::from("epoch");
    for (name, _) in runs {
        let _ = write!(out, ",{name}_train_loss,{name}_proxy_{label},{name}_golden_{label}");
    }
    out.push('\n');
    let epochs: BTreeSet<u64> = runs.iter().flat_map(|(_, s)| s.epochs()).map(f64::to_bits).collect();
    let mut epochs: Vec<f64> = epochs.into_iter().map(f64::from_bits).collect();
    epochs.sort_by(f64::total_cmp);
    for e in epochs {
        let _ = write!(out, "{e}");
        for (_, s) in runs {
            match s.rows.iter().find(|r| r.epoch == e) {
                Some(r) => {
                    let _ = write!(out, ",{},{},{}", r.train_loss, r.proxy(kind), r.golden(kind));
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `comparison.csv` (and `comparison.svg`) for the runs behind `manifests`.
pub fn compare_runs(manifests: &[PathBuf], out_dir: &Path, kind: DivergenceKind, svg: bool) -> Result<ComparisonReport, CliError> {
    if manifests.len() < 2 {
        return Err(CliError::Usage("compare needs at least two manifests".into()));
    }
    let mut names = Vec::new();
    let mut series = Vec::new();
    for path in manifests {
        let m = RunManifest::load(path)?;
        if m.stage(Stage::Distill).is_none() {
            return Err(LabError::SchemaIncompatible(format!("{} has no distill stage", path.display())).into());
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        series.push(MetricSeries::load_csv(&dir.join(METRICS_FILE))?);
        names.push(m.name);
    }
    let names = unique_names(names);
    let runs: Vec<(String, &MetricSeries)> = names.iter().cloned().zip(series.iter()).collect();
    std::fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let csv_path = out_dir.join("comparison.csv");
    std::fs::write(&csv_path, aligned_csv(&runs, kind)).map_err(|e| LabError::io(&csv_path, e))?;
    let svg_path = if svg {
        let p = out_dir.join("comparison.svg");
        std::fs::write(&p, plot::render(&epoch_panels(&runs, kind))).map_err(|e| LabError::io(&p, e))?;
        Some(p)
    } else {
        None
    };
    Ok(ComparisonReport {
        runs: names,
        csv_path,
        svg_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_get_suffixes() {
        let n = unique_names(vec!["a".into(), "b".into(), "a".into(), "a".into()]);
        assert_eq!(n, ["a", "b", "a#2", "a#3"]);
    }
}
