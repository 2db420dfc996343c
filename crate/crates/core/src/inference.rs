//! Posterior summaries and comparison against the count-per-year estimator:
//! point rates, multiplicative credible intervals, SD ratios with
//! equivalent-years, and cumulative-data trajectories.

use serde::{Deserialize, Serialize};

use crate::bayes::{ModelSpec, Priors};
use crate::empirical;
use crate::error::{Error, Result};
use crate::features::CovariateVector;
use crate::ingest::CountMatrix;
use crate::kernels::{simdiag, KernelSet};
use crate::mcmc::{self, ChainConfig, PosteriorSamples};
use crate::seeding;
use crate::stats;

/// Per-line posterior point estimate with the multiplicative 95% interval
/// [mean/kappa, mean*kappa].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateEstimate {
    pub line_id: String,
    pub posterior_mean: f64,
    pub posterior_sd: f64,
    pub kappa: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Posterior mean and SD per line, pooled across chains.
pub fn posterior_point(samples: &PosteriorSamples) -> Result<Vec<(f64, f64)>> {
    if samples.n_retained() == 0 {
        return Err(Error::Invalid("no retained draws".into()));
    }
    let mut out = Vec::with_capacity(samples.n_lines);
    for i in 0..samples.n_lines {
        let draws = samples.pooled(samples.lambda_index(i));
        out.push((stats::mean(&draws), stats::sample_sd(&draws)));
    }
    Ok(out)
}

/// Smallest kappa >= 1 such that at least `level` of the draws fall inside
/// [mean/kappa, mean*kappa], located by bisection over the sorted draws.
pub fn credible_kappa(draws: &[f64], level: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Invalid("no draws".into()));
    }
    if draws.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Invalid("credible factor needs positive draws".into()));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Invalid(format!("level {level} outside [0,1]")));
    }
    let center = stats::mean(draws);
    if !(center > 0.0) {
        return Err(Error::Invalid("nonpositive point estimate".into()));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    // Endpoint slack of a few ulps so a degenerate (constant) sample counts
    // as covered at kappa = 1; far below the 1e-6 bisection tolerance.
    let frac_within = |kappa: f64| -> f64 {
        let lo = center / kappa * (1.0 - 1e-12);
        let hi = center * kappa * (1.0 + 1e-12);
        let upper = sorted.partition_point(|&x| x <= hi);
        let lower = sorted.partition_point(|&x| x < lo);
        (upper - lower) as f64 / n
    };
    if frac_within(1.0) >= level {
        return Ok(1.0);
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while frac_within(hi) < level {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Invalid("credible factor did not bracket".into()));
        }
    }
    while (hi - lo) / hi > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if frac_within(mid) >= level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Full per-line estimates at the given credible level.
pub fn rate_estimates(samples: &PosteriorSamples, level: f64) -> Result<Vec<RateEstimate>> {
    let points = posterior_point(samples)?;
    let mut out = Vec::with_capacity(points.len());
    for (i, (mean, sd)) in points.into_iter().enumerate() {
        let draws = samples.pooled(samples.lambda_index(i));
        let kappa = credible_kappa(&draws, level)?;
        let name = samples.param_names[samples.lambda_index(i)]
            .trim_start_matches("lambda[")
            .trim_end_matches(']')
            .to_string();
        out.push(RateEstimate {
            line_id: name,
            posterior_mean: mean,
            posterior_sd: sd,
            kappa,
            ci_low: mean / kappa,
            ci_high: mean * kappa,
        });
    }
    Ok(out)
}

/// The count-per-year estimator: mean N/t, SD of the mean s/sqrt(t). A single
/// observed year leaves the SD undefined.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConventionalEstimate {
    pub line_id: String,
    pub mean: f64,
    pub sd: Option<f64>,
    pub zero_count: bool,
}

pub fn conventional(cm: &CountMatrix) -> Vec<ConventionalEstimate> {
    (0..cm.n_lines())
        .map(|i| {
            let row: Vec<f64> = cm.row(i).iter().map(|&c| c as f64).collect();
            let t = cm.exposure(i);
            let sd = if row.len() >= 2 {
                Some(stats::sample_sd(&row) / t.sqrt())
            } else {
                None
            };
            ConventionalEstimate {
                line_id: cm.line_ids()[i].clone(),
                mean: cm.total(i) as f64 / t,
                sd,
                zero_count: cm.total(i) == 0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdRatioEntry {
    pub line_id: String,
    pub bayes_sd: f64,
    pub conventional_sd: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub per_line: Vec<SdRatioEntry>,
    pub median_ratio: f64,
    pub n_years: f64,
    /// n_years / median_ratio^2: years of data the conventional estimator
    /// would need for the same SD.
    pub equivalent_years: f64,
    /// Lines excluded because the conventional SD is zero or undefined.
    pub n_excluded: usize,
    /// Smoothed density of the per-line ratios, for plotting.
    pub histogram: Vec<(f64, f64)>,
}

/// Per-line Bayes/conventional SD ratio report. `conventional_sds` may come
/// from the closed form (real data) or a Monte Carlo oracle (synthetic runs).
pub fn sd_ratio_report(
    estimates: &[RateEstimate],
    conventional_sds: &[(String, Option<f64>)],
    n_years: f64,
) -> Result<ComparisonReport> {
    if estimates.len() != conventional_sds.len() {
        return Err(Error::Invalid(format!(
            "line sets disagree: {} estimates vs {} conventional",
            estimates.len(),
            conventional_sds.len()
        )));
    }
    let mut per_line = Vec::with_capacity(estimates.len());
    let mut ratios = Vec::new();
    let mut excluded = 0usize;
    for (est, (line_id, conv_sd)) in estimates.iter().zip(conventional_sds) {
        if est.line_id != *line_id {
            return Err(Error::Invalid(format!(
                "line order mismatch: {} vs {line_id}",
                est.line_id
            )));
        }
        let ratio = match conv_sd {
            Some(sd) if *sd > 0.0 => Some(est.posterior_sd / sd),
            _ => {
                excluded += 1;
                None
            }
        };
        if let Some(r) = ratio {
            ratios.push(r);
        }
        per_line.push(SdRatioEntry {
            line_id: line_id.clone(),
            bayes_sd: est.posterior_sd,
            conventional_sd: *conv_sd,
            ratio,
        });
    }
    if ratios.is_empty() {
        return Err(Error::Invalid(
            "no line has a defined conventional SD".into(),
        ));
    }
    let median_ratio = stats::median(&ratios);
    Ok(ComparisonReport {
        per_line,
        median_ratio,
        n_years,
        equivalent_years: n_years / (median_ratio * median_ratio),
        n_excluded: excluded,
        histogram: stats::smoothed_histogram(&ratios, 200),
    })
}

/// Build the posterior model for a count matrix over the full line set.
pub fn build_model_spec(
    cm: &CountMatrix,
    covariates: &CovariateVector,
    sim: crate::kernels::SimDiag,
    priors: Priors,
) -> Result<ModelSpec> {
    ModelSpec::new(
        cm.line_ids().to_vec(),
        (0..cm.n_lines()).map(|i| cm.total(i)).collect(),
        (0..cm.n_lines()).map(|i| cm.exposure(i)).collect(),
        covariates.x_l.clone(),
        covariates.x_v.clone(),
        sim,
        priors,
    )
}

/// Empirical pre-fit on the positive-count lines (kernels restricted to that
/// subset). Returns None when too few lines have outages to fit.
pub fn prefit(
    cm: &CountMatrix,
    covariates: &CovariateVector,
    kernels: &KernelSet,
) -> Option<empirical::EmpiricalFit> {
    let rv = empirical::response_vector(cm).ok()?;
    if rv.fitted_idx.len() < 4 {
        return None;
    }
    let sub = kernels.select(&rv.fitted_idx);
    let sub_sim = simdiag(&sub.sigma1, &sub.sigma2).ok()?;
    let cov = covariates.select(&rv.fitted_idx);
    empirical::fit_mle(&rv.y, &cov.x_l, &cov.x_v, &sub_sim).ok()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub cutoff_years: usize,
    pub lambda_hat: f64,
    pub posterior_sd: f64,
    /// Monte Carlo standard error of the posterior mean.
    pub mcse: f64,
}

/// Posterior-mean rate of one line re-estimated on each data prefix. The
/// empirical pre-fit is redone per cutoff; each cutoff gets its own seed
/// stream derived from the base seed.
pub fn trajectory(
    cm: &CountMatrix,
    covariates: &CovariateVector,
    kernels: &KernelSet,
    priors: &Priors,
    cfg: &ChainConfig,
    line_id: &str,
    cutoffs: &[usize],
) -> Result<Vec<TrajectoryPoint>> {
    let line = cm
        .index_of(line_id)
        .ok_or_else(|| Error::Invalid(format!("unknown line id {line_id}")))?;
    let sim_full = simdiag(&kernels.sigma1, &kernels.sigma2)?;
    let mut out = Vec::with_capacity(cutoffs.len());
    for &k in cutoffs {
        let cmk = cm.truncate_years(k)?;
        let fit = prefit(&cmk, covariates, kernels);
        let spec = build_model_spec(&cmk, covariates, sim_full.clone(), priors.clone())?;
        let cfg_k = ChainConfig {
            seed: seeding::replicate_seed(cfg.seed, k as u64),
            ..cfg.clone()
        };
        let samples = mcmc::run_chains(&spec, &cfg_k, fit.as_ref())?;
        let draws = samples.pooled(samples.lambda_index(line));
        let mean = stats::mean(&draws);
        let sd = stats::sample_sd(&draws);
        let traces = samples.chain_traces(samples.lambda_index(line));
        let ess = mcmc::effective_sample_size(&traces).unwrap_or(draws.len() as f64);
        out.push(TrajectoryPoint {
            cutoff_years: k,
            lambda_hat: mean,
            posterior_sd: sd,
            mcse: sd / ess.sqrt(),
        });
    }
    Ok(out)
}

/// Estimates CSV: one row per line with both estimators side by side.
pub fn write_estimates_csv<W: std::io::Write>(
    w: W,
    estimates: &[RateEstimate],
    conventional: &[ConventionalEstimate],
    ratios: &ComparisonReport,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "line_id",
        "posterior_mean",
        "posterior_sd",
        "kappa",
        "ci_low",
        "ci_high",
        "conventional_mean",
        "conventional_sd",
        "sd_ratio",
    ])?;
    for ((est, conv), entry) in estimates.iter().zip(conventional).zip(&ratios.per_line) {
        wtr.write_record([
            est.line_id.as_str(),
            &est.posterior_mean.to_string(),
            &est.posterior_sd.to_string(),
            &est.kappa.to_string(),
            &est.ci_low.to_string(),
            &est.ci_high.to_string(),
            &conv.mean.to_string(),
            &conv.sd.map_or(String::new(), |s| s.to_string()),
            &entry.ratio.map_or(String::new(), |r| r.to_string()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Plot series in display order: lines sorted by point estimate, with the
/// interval bounds alongside.
pub fn ordered_rate_series(estimates: &[RateEstimate]) -> Vec<RateEstimate> {
    let mut sorted = estimates.to_vec();
    sorted.sort_by(|a, b| a.posterior_mean.partial_cmp(&b.posterior_mean).unwrap());
    sorted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::store::PosteriorSamples as PS;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, LogNormal};

    fn samples_from_lambda(draws_per_line: Vec<Vec<f64>>) -> PS {
        let n = draws_per_line.len();
        let labels: Vec<String> = (0..n).map(|i| format!("L{i}")).collect();
        let names = PS::names_for(&labels);
        let len = draws_per_line[0].len();
        let half = len / 2;
        let chains: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|c| {
                names
                    .iter()
                    .enumerate()
                    .map(|(p, _)| {
                        if p >= 6 + n {
                            let line = p - 6 - n;
                            let src = &draws_per_line[line];
                            if c == 0 {
                                src[..half].to_vec()
                            } else {
                                src[half..].to_vec()
                            }
                        } else {
                            vec![0.5; half]
                        }
                    })
                    .collect()
            })
            .collect();
        PS::new(names, n, chains, 0, Vec::new(), Vec::new())
    }

    #[test]
    fn constant_draws_give_exact_point_and_unit_kappa() {
        let s = samples_from_lambda(vec![vec![0.7; 100]]);
        let pts = posterior_point(&s).unwrap();
        assert_relative_eq!(pts[0].0, 0.7, epsilon = 1e-12);
        assert!(pts[0].1 < 1e-12, "sd {} for constant draws", pts[0].1);
        let kappa = credible_kappa(&s.pooled(s.lambda_index(0)), 0.95).unwrap();
        assert_eq!(kappa, 1.0);
    }

    #[test]
    fn kappa_level_zero_is_one() {
        let draws: Vec<f64> = (1..100).map(|k| k as f64 * 0.01).collect();
        assert_eq!(credible_kappa(&draws, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn kappa_matches_lognormal_closed_form() {
        // Draws log-normal around a center: kappa for 95% is close to
        // exp(1.96 s) when s is small.
        let s = 0.2f64;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist: LogNormal<f64> = LogNormal::new(-0.5, s).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
        let kappa = credible_kappa(&draws, 0.95).unwrap();
        let expect = (1.96 * s).exp();
        assert!(
            (kappa - expect).abs() / expect < 0.02,
            "kappa {kappa} vs {expect}"
        );
    }

    #[test]
    fn kappa_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dist: LogNormal<f64> = LogNormal::new(0.0, 0.4).unwrap();
        let draws: Vec<f64> = (0..20_000).map(|_| dist.sample(&mut rng)).collect();
        let k1 = credible_kappa(&draws, 0.95).unwrap();
        let scaled: Vec<f64> = draws.iter().map(|x| x * 7.5).collect();
        let k2 = credible_kappa(&scaled, 0.95).unwrap();
        assert_relative_eq!(k1, k2, epsilon = 1e-9);
    }

    #[test]
    fn conventional_zero_and_single_year() {
        let cm = CountMatrix::new(
            vec!["a".into(), "b".into()],
            vec![1, 2, 3, 4],
            vec![0, 0, 0, 0, 1, 2, 4, 2],
        )
        .unwrap();
        let conv = conventional(&cm);
        assert_eq!(conv[0].mean, 0.0);
        assert_eq!(conv[0].sd, Some(0.0));
        assert!(conv[0].zero_count);
        assert!(!conv[1].zero_count);

        let single = CountMatrix::new(vec!["a".into()], vec![1], vec![3]).unwrap();
        let conv = conventional(&single);
        assert_eq!(conv[0].mean, 3.0);
        assert_eq!(conv[0].sd, None, "single year leaves the SD undefined");
    }

    #[test]
    fn conventional_table1_line8() {
        let counts: Vec<u32> = vec![1, 2, 4, 2, 1, 2, 2, 2, 2, 1, 3, 8, 6, 2];
        let cm = CountMatrix::new(vec!["8".into()], (0..14).collect(), counts.clone()).unwrap();
        let conv = conventional(&cm);
        assert_relative_eq!(conv[0].mean, 38.0 / 14.0, epsilon = 1e-12);
        // Direct formula: s/sqrt(n).
        let row: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let expect = stats::sample_sd(&row) / (14.0f64).sqrt();
        assert_relative_eq!(conv[0].sd.unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn sd_ratio_medians_and_equivalent_years() {
        // Median 0.66 at 1 year -> 2.30 equivalent years; 0.93 at 14 years
        // -> 16.2 years.
        let mk = |ratios: &[f64], years: f64| {
            let estimates: Vec<RateEstimate> = ratios
                .iter()
                .enumerate()
                .map(|(i, &r)| RateEstimate {
                    line_id: format!("L{i}"),
                    posterior_mean: 1.0,
                    posterior_sd: r,
                    kappa: 1.5,
                    ci_low: 1.0 / 1.5,
                    ci_high: 1.5,
                })
                .collect();
            let conv: Vec<(String, Option<f64>)> = (0..ratios.len())
                .map(|i| (format!("L{i}"), Some(1.0)))
                .collect();
            sd_ratio_report(&estimates, &conv, years).unwrap()
        };
        let rep = mk(&[0.5, 0.66, 0.9], 1.0);
        assert_relative_eq!(rep.median_ratio, 0.66, epsilon = 1e-12);
        assert!((rep.equivalent_years - 2.2957).abs() < 1e-3);

        let rep = mk(&[0.93, 0.93, 0.93], 14.0);
        assert!((rep.equivalent_years - 16.185).abs() < 0.01);
    }

    #[test]
    fn sd_ratio_identical_sds_gives_unit_ratios() {
        let estimates: Vec<RateEstimate> = (0..5)
            .map(|i| RateEstimate {
                line_id: format!("L{i}"),
                posterior_mean: 0.5,
                posterior_sd: 0.3,
                kappa: 2.0,
                ci_low: 0.25,
                ci_high: 1.0,
            })
            .collect();
        let conv: Vec<(String, Option<f64>)> =
            (0..5).map(|i| (format!("L{i}"), Some(0.3))).collect();
        let rep = sd_ratio_report(&estimates, &conv, 5.0).unwrap();
        assert_relative_eq!(rep.median_ratio, 1.0, epsilon = 1e-12);
        assert_relative_eq!(rep.equivalent_years, 5.0, epsilon = 1e-12);
        assert_eq!(rep.n_excluded, 0);
    }

    #[test]
    fn sd_ratio_median_invariant_under_reordering() {
        let mut estimates: Vec<RateEstimate> = [0.4, 0.9, 0.6, 0.7]
            .iter()
            .enumerate()
            .map(|(i, &r)| RateEstimate {
                line_id: format!("L{i}"),
                posterior_mean: 1.0,
                posterior_sd: r,
                kappa: 1.2,
                ci_low: 1.0 / 1.2,
                ci_high: 1.2,
            })
            .collect();
        let mut conv: Vec<(String, Option<f64>)> =
            (0..4).map(|i| (format!("L{i}"), Some(1.0))).collect();
        let r1 = sd_ratio_report(&estimates, &conv, 3.0).unwrap().median_ratio;
        estimates.reverse();
        conv.reverse();
        let r2 = sd_ratio_report(&estimates, &conv, 3.0).unwrap().median_ratio;
        assert_relative_eq!(r1, r2, epsilon = 1e-12);
    }

    #[test]
    fn ordered_series_sorts_by_point_estimate() {
        let estimates: Vec<RateEstimate> = [0.9, 0.1, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &m)| RateEstimate {
                line_id: format!("L{i}"),
                posterior_mean: m,
                posterior_sd: 0.1,
                kappa: 1.2,
                ci_low: m / 1.2,
                ci_high: m * 1.2,
            })
            .collect();
        let sorted = ordered_rate_series(&estimates);
        assert!(sorted.windows(2).all(|w| w[0].posterior_mean <= w[1].posterior_mean));
    }
}
