//! ROC curves, posterior-expected FDR, observed-vs-nominal FDR and signed scores.

use std::io::Write;

use serde::Serialize;

use crate::baselines::{adjust_pvalues, PAdjust};
use crate::error::{MimosaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// Descending; the first entry is `+∞` (nothing called).
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdrCurve {
    pub nominal: Vec<f64>,
    pub observed: Vec<f64>,
    pub n_called: Vec<usize>,
}

/// One step of the posterior-expected FDR mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdrStep {
    /// Subjects with responsibility at or above this value are called.
    pub threshold: f64,
    pub expected_fdr: f64,
    pub n_called: usize,
}

/// Nominal levels 0.01, 0.02, ..., 0.50.
pub fn nominal_grid() -> Vec<f64> {
    (1..=50).map(|k| k as f64 / 100.0).collect()
}

/// Larger scores mean "more likely responder". Ties move together, so the
/// trapezoidal area equals the Mann-Whitney statistic with ties counted half.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(MimosaError::domain("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MimosaError::domain("scores must not be NaN"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MimosaError::domain("ROC analysis needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = RocCurve { thresholds: vec![f64::INFINITY], fpr: vec![0.0], tpr: vec![0.0], auc: 0.0 };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x, y) = (fp as f64 / negatives as f64, tp as f64 / positives as f64);
        let (x0, y0) = (curve.fpr[curve.fpr.len() - 1], curve.tpr[curve.tpr.len() - 1]);
        curve.auc += (x - x0) * (y + y0) / 2.0;
        curve.thresholds.push(t);
        curve.fpr.push(x);
        curve.tpr.push(y);
    }
    Ok(curve)
}

/// TPR of a curve at `x`, interpolating linearly inside tied blocks and taking
/// the top of vertical jumps.
pub fn tpr_at(curve: &RocCurve, x: f64) -> f64 {
    let mut best = 0.0f64;
    for k in 1..curve.fpr.len() {
        let (x0, x1) = (curve.fpr[k - 1], curve.fpr[k]);
        if x0 <= x && x <= x1 {
            let y = if x1 > x0 {
                curve.tpr[k - 1] + (curve.tpr[k] - curve.tpr[k - 1]) * (x - x0) / (x1 - x0)
            } else {
                curve.tpr[k]
            };
            best = best.max(y);
        }
    }
    best
}

/// TPR averaged across curves on a fixed FPR grid `0, 0.01, ..., 1`.
pub fn average_roc(curves: &[RocCurve]) -> (Vec<f64>, Vec<f64>) {
    let grid: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let mean = grid
        .iter()
        .map(|&x| curves.iter().map(|c| tpr_at(c, x)).sum::<f64>() / curves.len().max(1) as f64)
        .collect();
    (grid, mean)
}

fn check_probabilities(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(MimosaError::domain(format!("responsibilities must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Expected FDR of calling every subject with responsibility at or above each
/// distinct value, `Σ_{called} (1 − z̃) / |called|`. Steps are ordered by
/// decreasing threshold, along which the expected FDR never decreases.
pub fn posterior_fdr(responsibilities: &[f64]) -> Result<Vec<FdrStep>> {
    check_probabilities(responsibilities)?;
    let mut sorted = responsibilities.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut steps = Vec::new();
    let mut false_mass = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i];
        while i < sorted.len() && sorted[i] == t {
            false_mass += 1.0 - sorted[i];
            i += 1;
        }
        steps.push(FdrStep { threshold: t, expected_fdr: false_mass / i as f64, n_called: i });
    }
    Ok(steps)
}

/// Largest call set whose posterior-expected FDR does not exceed `level`.
pub fn posterior_calls(responsibilities: &[f64], level: f64) -> Result<Vec<bool>> {
    let steps = posterior_fdr(responsibilities)?;
    // 1e-12 absorbs rounding in the running sum at exact boundaries
    let cut = steps.iter().take_while(|s| s.expected_fdr <= level + 1e-12).last().map(|s| s.threshold);
    Ok(responsibilities.iter().map(|&z| cut.is_some_and(|t| z >= t)).collect())
}

/// Benjamini-Hochberg calls at `level`.
pub fn bh_calls(pvalues: &[f64], level: f64) -> Result<Vec<bool>> {
    Ok(adjust_pvalues(pvalues, PAdjust::BenjaminiHochberg)?.iter().map(|&q| q <= level).collect())
}

/// Observed FDR `#{called, label 0} / #called` (0 when nothing is called) at
/// each nominal level.
pub fn observed_vs_nominal(calls: &[(f64, Vec<bool>)], labels: &[bool]) -> Result<FdrCurve> {
    let mut curve = FdrCurve { nominal: Vec::new(), observed: Vec::new(), n_called: Vec::new() };
    for (level, called) in calls {
        if called.len() != labels.len() {
            return Err(MimosaError::domain("calls and labels differ in length"));
        }
        let n = called.iter().filter(|&&c| c).count();
        let false_calls = called.iter().zip(labels).filter(|(&c, &l)| c && !l).count();
        curve.nominal.push(*level);
        curve.observed.push(if n == 0 { 0.0 } else { false_calls as f64 / n as f64 });
        curve.n_called.push(n);
    }
    Ok(curve)
}

/// Observed-vs-nominal curve for a mixture fit over `levels`.
pub fn posterior_fdr_curve(responsibilities: &[f64], labels: &[bool], levels: &[f64]) -> Result<FdrCurve> {
    let calls = levels.iter().map(|&l| Ok((l, posterior_calls(responsibilities, l)?))).collect::<Result<Vec<_>>>()?;
    observed_vs_nominal(&calls, labels)
}

/// Observed-vs-nominal curve for BH-adjusted p-values over `levels`.
pub fn bh_fdr_curve(pvalues: &[f64], labels: &[bool], levels: &[f64]) -> Result<FdrCurve> {
    let calls = levels.iter().map(|&l| Ok((l, bh_calls(pvalues, l)?))).collect::<Result<Vec<_>>>()?;
    observed_vs_nominal(&calls, labels)
}

/// `z̃ × sign(mean_p_s − mean_p_u)`; no change in proportion keeps the positive sign.
pub fn signed_score(responsibilities: &[f64], mean_diffs: &[f64]) -> Result<Vec<f64>> {
    check_probabilities(responsibilities)?;
    if responsibilities.len() != mean_diffs.len() {
        return Err(MimosaError::domain("responsibilities and differences differ in length"));
    }
    Ok(responsibilities.iter().zip(mean_diffs).map(|(&z, &d)| if d < 0.0 { -z } else { z }).collect())
}

pub fn write_roc_csv<W: Write>(curve: &RocCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for ((t, x), y) in curve.thresholds.iter().zip(&curve.fpr).zip(&curve.tpr) {
        w.write_record([t.to_string(), x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fdr_csv<W: Write>(curve: &FdrCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["nominal", "observed", "n_called"])?;
    for ((a, o), n) in curve.nominal.iter().zip(&curve.observed).zip(&curve.n_called) {
        w.write_record([a.to_string(), o.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
