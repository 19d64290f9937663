//! Post-hoc analysis of metric series: kernel smoothing, log-log power-law fits,
//! the teacher-hacking verdict and the proxy-golden curve.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::divergences::DivergenceKind;
use crate::error::{LabError, Result};
use crate::training::MetricSeries;

/// Smallest residual scale used by the deviation test, so that an exact fit does
/// not flag floating-point noise.
const RESIDUAL_FLOOR: f64 = 1e-12;

/// Nadaraya-Watson smoothing with a Gaussian kernel. Output positions equal the
/// input positions.
pub fn gaussian_smooth(series: &[(f64, f64)], bandwidth: f64) -> Result<Vec<(f64, f64)>> {
    if !(bandwidth > 0.0) {
        return Err(LabError::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    Ok(series
        .iter()
        .map(|&(x, _)| {
            let mut num = 0.0;
            let mut den = 0.0;
            for &(xi, yi) in series {
                let w = (-(xi - x) * (xi - x) * inv).exp();
                num += w * yi;
                den += w;
            }
            (x, num / den)
        })
        .collect())
}

/// Least-squares line of `ln(metric)` against `ln(epoch)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// ln of the prefactor.
    pub intercept: f64,
    pub slope: f64,
    pub window: (f64, f64),
    pub residual_rms: f64,
}

impl PowerLawFit {
    pub fn predict_log(&self, epoch: f64) -> f64 {
        self.intercept + self.slope * epoch.ln()
    }

    pub fn predict(&self, epoch: f64) -> f64 {
        self.predict_log(epoch).exp()
    }
}

/// Fits `metric = exp(a) * epoch^b` over the points whose epoch lies in `window`
/// (inclusive).
pub fn fit_power_law(series: &[(f64, f64)], window: (f64, f64)) -> Result<PowerLawFit> {
    let points: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(x, _)| x >= window.0 && x <= window.1)
        .collect();
    for (i, &(x, y)) in points.iter().enumerate() {
        if !(x > 0.0) {
            return Err(LabError::NonPositiveValue { index: i, value: x });
        }
        if !(y > 0.0) {
            return Err(LabError::NonPositiveValue { index: i, value: y });
        }
    }
    if points.len() < 3 {
        return Err(LabError::InsufficientData(format!(
            "power-law fit needs at least 3 points in window, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(LabError::InsufficientData("power-law fit needs at least two distinct epochs".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(PowerLawFit {
        intercept,
        slope,
        window,
        residual_rms: (rss / n).sqrt(),
    })
}

/// Thresholds of the hacking verdict.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HackingParams {
    /// Kernel bandwidth as a fraction of the epoch span.
    pub bandwidth_fraction: f64,
    /// Final smoothed golden over its minimum needed to declare hacking.
    pub rise_threshold: f64,
    /// Deviation from the early power law, in units of its residual RMS.
    pub deviation_threshold: f64,
    /// Fraction of the epoch span used for the early power-law fit.
    pub early_fraction: f64,
}

impl Default for HackingParams {
    fn default() -> Self {
        Self {
            bandwidth_fraction: 0.05,
            rise_threshold: 1.10,
            deviation_threshold: 3.0,
            early_fraction: 1.0 / 3.0,
        }
    }
}

impl HackingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_fraction > 0.0) || !(self.rise_threshold > 0.0) || !(self.deviation_threshold > 0.0) {
            return Err(LabError::InvalidArgument("hacking thresholds must be positive".into()));
        }
        if !(self.early_fraction > 0.0 && self.early_fraction <= 1.0) {
            return Err(LabError::InvalidArgument("early_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Verdict components for one divergence kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindVerdict {
    pub kind: DivergenceKind,
    pub hacked: bool,
    pub golden_min_epoch: f64,
    pub golden_min: f64,
    pub golden_final: f64,
    pub golden_rise_ratio: f64,
    pub proxy_at_golden_min: f64,
    pub proxy_final: f64,
    pub early_fit: Option<PowerLawFit>,
    pub proxy_deviation_epoch: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HackingVerdict {
    pub kind: DivergenceKind,
    pub hacked: bool,
    pub golden_min_epoch: f64,
    pub golden_rise_ratio: f64,
    pub proxy_deviation_epoch: Option<f64>,
    pub params: HackingParams,
    pub details: Vec<KindVerdict>,
}

impl HackingVerdict {
    pub fn detail(&self, kind: DivergenceKind) -> &KindVerdict {
        self.details
            .iter()
            .find(|d| d.kind == kind)
            .expect("verdict carries every divergence kind")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("verdict serializes");
        s.push('\n');
        s
    }
}

fn span(points: &[(f64, f64)]) -> f64 {
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

fn bandwidth_for(points: &[(f64, f64)], fraction: f64) -> f64 {
    (fraction * span(points)).max(f64::MIN_POSITIVE)
}

/// First epoch after the early window at which the log proxy leaves the early
/// power-law fit by more than `threshold` residual RMS.
pub fn proxy_deviation(proxy: &[(f64, f64)], early_fraction: f64, threshold: f64) -> (Option<PowerLawFit>, Option<f64>) {
    let last = proxy.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let end = last * early_fraction;
    let fit = match fit_power_law(proxy, (f64::MIN_POSITIVE, end)) {
        Ok(f) => f,
        Err(_) => return (None, None),
    };
    let scale = fit.residual_rms.max(RESIDUAL_FLOOR);
    let epoch = proxy
        .iter()
        .filter(|&&(x, _)| x > end)
        .find(|&&(x, y)| !(y > 0.0) || (y.ln() - fit.predict_log(x)).abs() > threshold * scale)
        .map(|p| p.0);
    (Some(fit), epoch)
}

fn kind_verdict(series: &MetricSeries, kind: DivergenceKind, params: &HackingParams) -> Result<KindVerdict> {
    let golden = series.golden_series(kind);
    let proxy = series.proxy_series(kind);
    let bw = bandwidth_for(&golden, params.bandwidth_fraction);
    let g = gaussian_smooth(&golden, bw)?;
    let p = gaussian_smooth(&proxy, bw)?;
    let (imin, &(golden_min_epoch, golden_min)) = g
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty series");
    let golden_final = g.last().expect("non-empty").1;
    let proxy_final = p.last().expect("non-empty").1;
    let proxy_at_golden_min = p[imin].1;
    let golden_rise_ratio = golden_final / golden_min;
    let hacked = golden_final >= params.rise_threshold * golden_min && proxy_final <= proxy_at_golden_min;
    let (early_fit, proxy_deviation_epoch) = proxy_deviation(&proxy, params.early_fraction, params.deviation_threshold);
    Ok(KindVerdict {
        kind,
        hacked,
        golden_min_epoch,
        golden_min,
        golden_final,
        golden_rise_ratio,
        proxy_at_golden_min,
        proxy_final,
        early_fit,
        proxy_deviation_epoch,
    })
}

/// Applies the hacking criterion to `kind` and reports all kinds in `details`.
pub fn detect_hacking(series: &MetricSeries, kind: DivergenceKind, params: &HackingParams) -> Result<HackingVerdict> {
    params.validate()?;
    if series.rows.len() < 10 {
        return Err(LabError::InsufficientData(format!(
            "hacking detection needs at least 10 evaluation rows, got {}",
            series.rows.len()
        )));
    }
    let details = DivergenceKind::ALL
        .iter()
        .map(|&k| kind_verdict(series, k, params))
        .collect::<Result<Vec<_>>>()?;
    let main = details.iter().find(|d| d.kind == kind).expect("all kinds present").clone();
    Ok(HackingVerdict {
        kind,
        hacked: main.hacked,
        golden_min_epoch: main.golden_min_epoch,
        golden_rise_ratio: main.golden_rise_ratio,
        proxy_deviation_epoch: main.proxy_deviation_epoch,
        params: *params,
        details,
    })
}

/// One point of the proxy-golden curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub proxy: f64,
    pub golden: f64,
    pub epoch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyGoldenCurve {
    pub proxy_kind: DivergenceKind,
    pub golden_kind: DivergenceKind,
    pub points: Vec<CurvePoint>,
    pub smoothed: Vec<CurvePoint>,
}

impl ProxyGoldenCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,proxy,golden,proxy_smoothed,golden_smoothed\n");
        for (r, s) in self.points.iter().zip(&self.smoothed) {
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.proxy, r.golden, s.proxy, s.golden);
        }
        out
    }

    /// True if the smoothed golden metric has a minimum strictly inside the curve.
    pub fn has_interior_minimum(&self) -> bool {
        let Some((i, _)) = self
            .smoothed
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.golden.total_cmp(&b.1.golden))
        else {
            return false;
        };
        i > 0 && i + 1 < self.smoothed.len()
    }
}

pub fn build_proxy_golden_curve(
    series: &MetricSeries,
    proxy_kind: DivergenceKind,
    golden_kind: DivergenceKind,
    bandwidth_fraction: f64,
) -> Result<ProxyGoldenCurve> {
    if series.rows.is_empty() {
        return Err(LabError::InsufficientData("empty metric series".into()));
    }
    let proxy = series.proxy_series(proxy_kind);
    let golden = series.golden_series(golden_kind);
    let points: Vec<CurvePoint> = proxy
        .iter()
        .zip(&golden)
        .map(|(p, g)| CurvePoint {
            proxy: p.1,
            golden: g.1,
            epoch: p.0,
        })
        .collect();
    let smoothed = if points.len() == 1 {
        points.clone()
    } else {
        let bw = bandwidth_for(&proxy, bandwidth_fraction);
        let sp = gaussian_smooth(&proxy, bw)?;
        let sg = gaussian_smooth(&golden, bw)?;
        sp.iter()
            .zip(&sg)
            .map(|(p, g)| CurvePoint {
                proxy: p.1,
                golden: g.1,
                epoch: p.0,
            })
            .collect()
    };
    Ok(ProxyGoldenCurve {
        proxy_kind,
        golden_kind,
        points,
        smoothed,
    })
}
