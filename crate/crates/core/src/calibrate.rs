//! Fitting device coefficients from per-configuration energy statistics.
//!
//! Calibration runs in two stages. For each `ofm`, the mean energies of
//! the convolution configs are regressed through the origin against their
//! load, giving one slope per `ofm`. Those slopes are then fitted to
//! `a_c / ofm + b_c` with the closed-form least-squares estimators:
//!
//! ```text
//! a_c = (Σ y/x − (1/N) Σ 1/x · Σ y) / (Σ 1/x² − (1/N) (Σ 1/x)²)
//! b_c = (Σ y − a_c Σ 1/x) / N
//! ```
//!
//! Fully connected configs get a single through-origin slope, `a_f`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::arch::{LayerShape, LayerSpec};
use crate::error::{Error, Result};
use crate::profile::DeviceProfile;
use crate::trace::{ConfigEnergyStats, TraceManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMeaning {
    /// x is `ofm`, y the energy-per-MAC slope.
    OfmVsSlope,
    /// x is a MAC count, y a mean energy in joules.
    LoadVsEnergy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDataset {
    pub points: Vec<(f64, f64)>,
    pub meaning: FitMeaning,
}

impl FitDataset {
    pub fn new(points: Vec<(f64, f64)>, meaning: FitMeaning) -> Result<Self> {
        if let Some((x, y)) = points.iter().find(|(x, y)| !(x.is_finite() && *x > 0.0 && y.is_finite())) {
            return Err(Error::InvalidInput(format!("fit point ({x}, {y}) must have finite y and positive x")));
        }
        Ok(FitDataset { points, meaning })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    /// Uncentered coefficient of determination, `1 − SSres / Σy²`.
    pub r2: f64,
    pub mse: f64,
    pub n: usize,
}

/// Least-squares slope of `y = slope · x`.
pub fn fit_slope_through_origin(data: &FitDataset) -> Result<LineFit> {
    let n = data.points.len();
    if n < 2 {
        return Err(Error::DegenerateDesign(format!("through-origin fit needs at least 2 points, got {n}")));
    }
    let sxx: f64 = data.points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = data.points.iter().map(|(x, y)| x * y).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateDesign("all x are zero".into()));
    }
    let slope = sxy / sxx;
    let ss_res: f64 = data.points.iter().map(|(x, y)| (y - slope * x).powi(2)).sum();
    let syy: f64 = data.points.iter().map(|(_, y)| y * y).sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(LineFit { slope, r2, mse: ss_res / n as f64, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeSample {
    pub ofm: u64,
    #[serde(rename = "slope")]
    pub slope_j_per_mac: f64,
    pub r2: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedGroup {
    pub ofm: u64,
    pub n_points: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlopeReport {
    pub samples: Vec<SlopeSample>,
    pub skipped: Vec<SkippedGroup>,
}

/// One through-origin slope of mean energy against load per `ofm` group.
/// Groups with fewer than two distinct loads are reported as skipped.
pub fn per_ofm_slopes(groups: &BTreeMap<u64, Vec<ConfigEnergyStats>>) -> Result<SlopeReport> {
    let mut report = SlopeReport::default();
    for (&ofm, stats) in groups {
        let mut loads: Vec<u64> = stats.iter().map(|s| s.computational_load).collect();
        loads.sort_unstable();
        loads.dedup();
        if loads.len() < 2 {
            report.skipped.push(SkippedGroup {
                ofm,
                n_points: stats.len(),
                reason: format!("needs at least 2 distinct loads, found {}", loads.len()),
            });
            continue;
        }
        let points = stats.iter().map(|s| (s.computational_load as f64, s.mean_energy_j)).collect();
        let fit = fit_slope_through_origin(&FitDataset::new(points, FitMeaning::LoadVsEnergy)?)?;
        report.samples.push(SlopeSample { ofm, slope_j_per_mac: fit.slope, r2: fit.r2, n_points: fit.n });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperbolicFit {
    pub a_c: f64,
    pub b_c: f64,
    pub mse: f64,
    pub n: usize,
}

impl HyperbolicFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a_c / x + self.b_c
    }
}

/// Closed-form least-squares fit of `y = a / x + b`.
pub fn fit_hyperbolic_points(points: &[(f64, f64)]) -> Result<HyperbolicFit> {
    let n = points.len();
    if n < 2 {
        return Err(Error::DegenerateDesign(format!("hyperbolic fit needs at least 2 points, got {n}")));
    }
    if let Some((x, y)) = points.iter().find(|(x, y)| !(x.is_finite() && *x > 0.0 && y.is_finite())) {
        return Err(Error::InvalidInput(format!("fit point ({x}, {y}) must have finite y and positive x")));
    }
    let first_x = points[0].0;
    if points.iter().all(|(x, _)| *x == first_x) {
        return Err(Error::DegenerateDesign(format!("all {n} samples share x = {first_x}")));
    }

    let nf = n as f64;
    let s_inv: f64 = points.iter().map(|(x, _)| 1.0 / x).sum();
    let s_inv2: f64 = points.iter().map(|(x, _)| 1.0 / (x * x)).sum();
    let s_y: f64 = points.iter().map(|(_, y)| y).sum();
    let s_y_inv: f64 = points.iter().map(|(x, y)| y / x).sum();

    let denom = s_inv2 - s_inv * s_inv / nf;
    if !(denom.is_finite() && denom > 0.0) {
        return Err(Error::DegenerateDesign(format!("singular normal equations (denominator {denom})")));
    }
    let a_c = (s_y_inv - s_inv * s_y / nf) / denom;
    let b_c = (s_y - a_c * s_inv) / nf;

    let mse = points.iter().map(|(x, y)| (a_c / x + b_c - y).powi(2)).sum::<f64>() / nf;
    Ok(HyperbolicFit { a_c, b_c, mse, n })
}

/// Fits `slope(ofm) = a_c / ofm + b_c` over the per-ofm slope samples.
pub fn fit_hyperbolic(samples: &[SlopeSample]) -> Result<HyperbolicFit> {
    let points: Vec<_> = samples.iter().map(|s| (s.ofm as f64, s.slope_j_per_mac)).collect();
    fit_hyperbolic_points(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FcFit {
    pub a_f: f64,
    pub mse: f64,
    pub n: usize,
}

/// Through-origin slope of mean energy against `clf` over FC configs.
pub fn fit_fc(stats: &[ConfigEnergyStats]) -> Result<FcFit> {
    let points = stats.iter().map(|s| (s.computational_load as f64, s.mean_energy_j)).collect();
    let fit = fit_slope_through_origin(&FitDataset::new(points, FitMeaning::LoadVsEnergy)?)?;
    Ok(FcFit { a_f: fit.slope, mse: fit.mse, n: fit.n })
}

pub fn build_profile(hfit: &HyperbolicFit, ffit: Option<&FcFit>, device_id: &str) -> Result<DeviceProfile> {
    DeviceProfile::new(device_id, hfit.a_c, hfit.b_c, ffit.map(|f| f.a_f))
}

/// Conv stats keyed by `ofm`, and the FC stats, looked up through the manifest.
#[derive(Debug, Clone, Default)]
pub struct GroupedStats {
    pub conv_by_ofm: BTreeMap<u64, Vec<ConfigEnergyStats>>,
    pub fc: Vec<ConfigEnergyStats>,
}

pub fn group_stats(stats: &[ConfigEnergyStats], manifest: &TraceManifest) -> Result<GroupedStats> {
    let mut grouped = GroupedStats::default();
    for s in stats {
        match manifest.config(&s.config_id)? {
            LayerSpec { shape: LayerShape::Conv2d(conv), .. } => {
                grouped.conv_by_ofm.entry(conv.ofm).or_default().push(s.clone())
            }
            LayerSpec { shape: LayerShape::Fc(_), .. } => grouped.fc.push(s.clone()),
            LayerSpec { shape: LayerShape::Skipped { kind }, .. } => {
                return Err(Error::InvalidInput(format!("config `{}` has unsupported kind `{kind}`", s.config_id)))
            }
        }
    }
    Ok(grouped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub device_id: String,
    pub a_c: f64,
    pub b_c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_f: Option<f64>,
    pub mse_hyperbolic: f64,
    pub per_ofm: Vec<SlopeSample>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fc: Option<FcFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub profile: DeviceProfile,
    pub report: FitReport,
    /// Non-fatal conditions: skipped ofm groups, missing FC data.
    pub warnings: Vec<String>,
}

/// Full calibration from aggregated stats. FC calibration is optional and
/// only attempted when the manifest has FC configs.
pub fn calibrate(stats: &[ConfigEnergyStats], manifest: &TraceManifest, device_id: &str) -> Result<Calibration> {
    let grouped = group_stats(stats, manifest)?;
    let slopes = per_ofm_slopes(&grouped.conv_by_ofm)?;
    let mut warnings: Vec<String> =
        slopes.skipped.iter().map(|g| format!("skipped ofm={} ({} points): {}", g.ofm, g.n_points, g.reason)).collect();
    let hfit = fit_hyperbolic(&slopes.samples)?;
    let ffit = match grouped.fc.len() {
        0 => {
            warnings.push("no fc configs in campaign; a_f not calibrated".into());
            None
        }
        _ => Some(fit_fc(&grouped.fc)?),
    };
    let profile = build_profile(&hfit, ffit.as_ref(), device_id)?;
    let report = FitReport {
        device_id: device_id.to_owned(),
        a_c: hfit.a_c,
        b_c: hfit.b_c,
        a_f: ffit.map(|f| f.a_f),
        mse_hyperbolic: hfit.mse,
        per_ofm: slopes.samples,
        fc: ffit,
    };
    Ok(Calibration { profile, report, warnings })
}
