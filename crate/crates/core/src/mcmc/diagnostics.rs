//! Convergence diagnostics: split-chain potential scale reduction,
//! autocorrelation-based effective sample size, and the pass/fail gate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

use super::store::PosteriorSamples;

/// Split every chain in half so slow drift within a chain shows up as
/// between-chain variance.
fn split_halves(traces: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(traces.len() * 2);
    for t in traces {
        let half = t.len() / 2;
        out.push(t[..half].to_vec());
        out.push(t[t.len() - half..].to_vec());
    }
    out
}

fn within_between(split: &[Vec<f64>]) -> (f64, f64, f64) {
    let m = split.len() as f64;
    let n = split[0].len() as f64;
    let means: Vec<f64> = split.iter().map(|c| stats::mean(c)).collect();
    let grand = stats::mean(&means);
    let b = n / (m - 1.0)
        * means
            .iter()
            .map(|&cm| (cm - grand) * (cm - grand))
            .sum::<f64>();
    let w = split
        .iter()
        .map(|c| stats::sample_variance(c))
        .sum::<f64>()
        / m;
    (w, b, n)
}

/// Split-chain potential scale reduction factor.
pub fn rhat(traces: &[&[f64]]) -> Result<f64> {
    if traces.len() < 2 {
        return Err(Error::DegenerateDiagnostic(
            "need at least 2 chains".into(),
        ));
    }
    if traces.iter().any(|t| t.len() < 4) {
        return Err(Error::DegenerateDiagnostic(
            "need at least 4 retained draws per chain".into(),
        ));
    }
    let split = split_halves(traces);
    let (w, b, n) = within_between(&split);
    if w <= 0.0 {
        return Err(Error::DegenerateDiagnostic(
            "zero within-chain variance".into(),
        ));
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    // The raw estimator can dip just under 1 when chains agree closely
    // (var+/W >= (n-1)/n); floor at the theoretical minimum.
    Ok((var_plus / w).sqrt().max(1.0))
}

/// Effective sample size from combined-chain autocorrelations with the
/// initial-positive-pair-sum truncation.
pub fn effective_sample_size(traces: &[&[f64]]) -> Result<f64> {
    if traces.len() < 2 {
        return Err(Error::DegenerateDiagnostic(
            "need at least 2 chains".into(),
        ));
    }
    if traces.iter().any(|t| t.len() < 4) {
        return Err(Error::DegenerateDiagnostic(
            "need at least 4 retained draws per chain".into(),
        ));
    }
    let split = split_halves(traces);
    let (w, b, n_f) = within_between(&split);
    if w <= 0.0 {
        return Err(Error::DegenerateDiagnostic(
            "zero within-chain variance".into(),
        ));
    }
    let var_plus = (n_f - 1.0) / n_f * w + b / n_f;
    let m = split.len();
    let n = split[0].len();
    let means: Vec<f64> = split.iter().map(|c| stats::mean(c)).collect();

    // Combined autocorrelation: rho_t = 1 - (W - mean autocovariance_t)/var+.
    let acov = |lag: usize| -> f64 {
        let mut total = 0.0;
        for (c, chain) in split.iter().enumerate() {
            let cm = means[c];
            let mut s = 0.0;
            for t in 0..(n - lag) {
                s += (chain[t] - cm) * (chain[t + lag] - cm);
            }
            total += s / (n as f64 - 1.0);
        }
        total / m as f64
    };

    let mut tau = 1.0; // rho_0 contributes 1; pairs add from lag 1
    let mut lag = 1;
    while lag + 1 < n {
        let rho_a = 1.0 - (w - acov(lag)) / var_plus;
        let rho_b = 1.0 - (w - acov(lag + 1)) / var_plus;
        let pair = rho_a + rho_b;
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    let total_draws: usize = traces.iter().map(|t| t.len()).sum();
    Ok(total_draws as f64 / tau.max(1e-12))
}

/// Sample autocorrelation of one trace at lags 0..=max_lag. Lag 0 is exactly
/// 1; the lag-k cross term averages over the n-k available products.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n < max_lag + 1 {
        return Err(Error::Invalid(format!(
            "need at least {} draws for {} lags, got {n}",
            max_lag + 1,
            max_lag
        )));
    }
    let mean = stats::mean(series);
    let denom = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if denom <= 0.0 {
        return Err(Error::DegenerateDiagnostic(
            "zero variance in autocorrelation input".into(),
        ));
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let mut s = 0.0;
        for t in 0..(n - lag) {
            s += (series[t] - mean) * (series[t + lag] - mean);
        }
        out.push(s / (n - lag) as f64 / denom);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GateThresholds {
    pub max_rhat: f64,
    pub min_ess_ratio: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            max_rhat: 1.06,
            min_ess_ratio: 0.004,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
    pub ess_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub pass: bool,
    pub thresholds: GateThresholds,
    pub n_checked: usize,
    /// Parameters constant across all draws (e.g. pinned by configuration).
    pub n_skipped_constant: usize,
    pub max_rhat: f64,
    pub min_ess_ratio: f64,
    /// Worst parameters by R-hat then by ESS ratio.
    pub worst: Vec<ParamDiagnostic>,
    pub n_failing: usize,
}

/// Evaluate the convergence gate over every scalar parameter.
pub fn convergence_report(
    samples: &PosteriorSamples,
    thresholds: &GateThresholds,
) -> ConvergenceReport {
    let mut diags: Vec<ParamDiagnostic> = Vec::new();
    let mut skipped = 0usize;
    for p in 0..samples.n_params() {
        let traces = samples.chain_traces(p);
        let pooled = samples.pooled(p);
        let var = stats::sample_variance(&pooled);
        if var <= 0.0 {
            skipped += 1;
            continue;
        }
        let r = rhat(&traces).unwrap_or(f64::INFINITY);
        let ess = effective_sample_size(&traces).unwrap_or(0.0);
        diags.push(ParamDiagnostic {
            name: samples.param_names[p].clone(),
            rhat: r,
            ess,
            ess_ratio: ess / samples.total_draws() as f64,
        });
    }
    let max_rhat = diags.iter().map(|d| d.rhat).fold(f64::NEG_INFINITY, f64::max);
    let min_ess_ratio = diags.iter().map(|d| d.ess_ratio).fold(f64::INFINITY, f64::min);
    let n_failing = diags
        .iter()
        .filter(|d| d.rhat >= thresholds.max_rhat || d.ess_ratio <= thresholds.min_ess_ratio)
        .count();
    let pass = !diags.is_empty() && n_failing == 0;
    let mut worst = diags;
    worst.sort_by(|a, b| {
        let ka = (a.rhat, -a.ess_ratio);
        let kb = (b.rhat, -b.ess_ratio);
        kb.partial_cmp(&ka).unwrap_or(std::cmp::Ordering::Equal)
    });
    worst.truncate(10);
    ConvergenceReport {
        schema_version: 1,
        pass,
        thresholds: thresholds.clone(),
        n_checked: samples.n_params() - skipped,
        n_skipped_constant: skipped,
        max_rhat,
        min_ess_ratio,
        worst,
        n_failing,
    }
}
