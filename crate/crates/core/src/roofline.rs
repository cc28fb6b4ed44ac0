//! Roofline latency prediction and ridge-point fitting.
//!
//! A block takes `max(macs, bytes * ridge_point) / peak` seconds and a network
//! takes the sum over its blocks. The ridge point is in MACs per byte; zero
//! means infinite memory bandwidth.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostReport, DtypeWidths};
use crate::stats::{spearman, StatsError};

/// Ridge points swept by default, MACs/byte.
pub const DEFAULT_SWEEP: [f64; 7] = [0.0, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0];

/// Upper end of the ridge-point fit grid, MACs/byte.
pub const FIT_MAX_RP: f64 = 500.0;
/// Fit grid spacing, MACs/byte.
pub const FIT_STEP: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RooflineError {
    #[error("need at least 3 measured models, got {0}")]
    InsufficientData(usize),
    #[error("{reports} cost reports but {measured} measurements")]
    LengthMismatch { reports: usize, measured: usize },
    #[error("measured latencies must be finite and > 0")]
    NonPositiveLatency,
    #[error("ridge points must be finite and >= 0, and at least one is required")]
    BadRidgePoints,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareTarget {
    pub name: String,
    /// MACs per byte at which a block stops being memory bound.
    pub ridge_point: f64,
    pub peak_macs_per_sec: f64,
    #[serde(default)]
    pub dtype_widths: DtypeWidths,
}

impl HardwareTarget {
    pub fn new(name: impl Into<String>, ridge_point: f64, peak_macs_per_sec: f64) -> Self {
        assert!(
            ridge_point >= 0.0 && ridge_point.is_finite(),
            "ridge point must be >= 0"
        );
        assert!(peak_macs_per_sec > 0.0, "peak throughput must be > 0");
        Self {
            name: name.into(),
            ridge_point,
            peak_macs_per_sec,
            dtype_widths: DtypeWidths::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyPrediction {
    pub per_block_s: Vec<f64>,
    pub total_s: f64,
}

/// Unit-peak roofline work for one block: `max(macs, bytes * rp)`.
fn block_work(macs: u64, bytes: u64, rp: f64) -> f64 {
    (macs as f64).max(bytes as f64 * rp)
}

fn network_work(report: &CostReport, rp: f64) -> f64 {
    report.per_block.iter().map(|b| block_work(b.macs, b.bytes(), rp)).sum()
}

/// Roofline latency of every block and of the whole network. Byte counts come
/// from the report, so its dtype widths are the ones that apply.
pub fn predict_latency(report: &CostReport, target: &HardwareTarget) -> LatencyPrediction {
    let per_block_s: Vec<f64> = report
        .per_block
        .iter()
        .map(|b| block_work(b.macs, b.bytes(), target.ridge_point) / target.peak_macs_per_sec)
        .collect();
    let total_s = per_block_s.iter().sum();
    LatencyPrediction { per_block_s, total_s }
}

/// Predicted latencies, `latency_s[model][rp]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub models: Vec<String>,
    pub ridge_points: Vec<f64>,
    pub peak_macs_per_sec: f64,
    pub latency_s: Vec<Vec<f64>>,
}

impl SweepTable {
    /// One row per model, one `rp_<value>` column per ridge point, in ms.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["model".to_string()];
        header.extend(self.ridge_points.iter().map(|rp| format!("rp_{rp}")));
        w.write_record(&header)?;
        for (model, row) in self.models.iter().zip(&self.latency_s) {
            let mut rec = vec![model.clone()];
            rec.extend(row.iter().map(|s| format!("{:.9}", s * 1e3)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn sweep_ridge_points(
    reports: &[CostReport],
    rps: &[f64],
    peak_macs_per_sec: f64,
) -> Result<SweepTable, RooflineError> {
    if rps.is_empty() || rps.iter().any(|rp| !(rp.is_finite() && *rp >= 0.0)) {
        return Err(RooflineError::BadRidgePoints);
    }
    let latency_s = reports
        .iter()
        .map(|r| rps.iter().map(|&rp| network_work(r, rp) / peak_macs_per_sec).collect())
        .collect();
    Ok(SweepTable {
        models: reports.iter().map(|r| r.network.clone()).collect(),
        ridge_points: rps.to_vec(),
        peak_macs_per_sec,
        latency_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RidgeFit {
    /// Best ridge point on the fit grid, MACs/byte.
    pub ridge_point: f64,
    /// Fitted peak throughput, MACs/s.
    pub scale: f64,
    /// Rank correlation of roofline predictions with measurements.
    pub spearman: f64,
    /// Rank correlation of raw MAC counts with measurements.
    pub spearman_macs: f64,
    /// Mean squared log-space residual at the fitted scale.
    pub log_residual: f64,
}

#[derive(Debug, Clone, Copy)]
struct GridPoint {
    rp: f64,
    spearman: f64,
    log_peak: f64,
    residual: f64,
}

/// Candidate ridge points `0, 0.1, ..., 500`.
pub fn fit_grid() -> Vec<f64> {
    let n = (FIT_MAX_RP / FIT_STEP).round() as usize;
    (0..=n).map(|i| i as f64 / 10.0).collect()
}

fn evaluate(works: &[f64], log_measured: &[f64], measured: &[f64], rp: f64) -> GridPoint {
    let rs = spearman(works, measured).unwrap_or(f64::NEG_INFINITY);
    let diffs: Vec<f64> = works.iter().zip(log_measured).map(|(w, lm)| w.ln() - lm).collect();
    let log_peak = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let residual = diffs.iter().map(|d| (d - log_peak).powi(2)).sum::<f64>() / diffs.len() as f64;
    GridPoint {
        rp,
        spearman: rs,
        log_peak,
        residual,
    }
}

/// `a` is a strictly better fit than `b`: higher rank correlation, then lower
/// log residual, then smaller ridge point.
fn better(a: &GridPoint, b: &GridPoint) -> bool {
    const EPS: f64 = 1e-12;
    if (a.spearman - b.spearman).abs() > EPS {
        return a.spearman > b.spearman;
    }
    if (a.residual - b.residual).abs() > EPS * b.residual.abs().max(1e-300) {
        return a.residual < b.residual;
    }
    a.rp < b.rp
}

/// Fit a ridge point and peak throughput to measured network latencies.
///
/// `measured_ms[i]` is the latency of `reports[i]` in milliseconds.
pub fn fit_ridge_point(reports: &[CostReport], measured_ms: &[f64]) -> Result<RidgeFit, RooflineError> {
    if reports.len() != measured_ms.len() {
        return Err(RooflineError::LengthMismatch {
            reports: reports.len(),
            measured: measured_ms.len(),
        });
    }
    if reports.len() < 3 {
        return Err(RooflineError::InsufficientData(reports.len()));
    }
    if measured_ms.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(RooflineError::NonPositiveLatency);
    }
    let measured_s: Vec<f64> = measured_ms.iter().map(|ms| ms / 1e3).collect();
    let log_measured: Vec<f64> = measured_s.iter().map(|s| s.ln()).collect();
    let macs: Vec<f64> = reports.iter().map(|r| r.total_macs as f64).collect();
    let spearman_macs = spearman(&macs, &measured_s)?;

    let points: Vec<GridPoint> = fit_grid()
        .into_par_iter()
        .map(|rp| {
            let works: Vec<f64> = reports.iter().map(|r| network_work(r, rp)).collect();
            evaluate(&works, &log_measured, &measured_s, rp)
        })
        .collect();
    // sequential reduction in grid order keeps the result independent of
    // how rayon scheduled the evaluations
    let best = points
        .iter()
        .skip(1)
        .fold(points[0], |acc, p| if better(p, &acc) { *p } else { acc });
    if best.spearman == f64::NEG_INFINITY {
        return Err(RooflineError::Stats(StatsError::DegenerateInput));
    }
    Ok(RidgeFit {
        ridge_point: best.rp,
        scale: best.log_peak.exp(),
        spearman: best.spearman,
        spearman_macs,
        log_residual: best.residual,
    })
}
