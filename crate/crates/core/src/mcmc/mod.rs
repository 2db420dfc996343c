//! Posterior sampling: a Gibbs step for every per-line rate (its conditional
//! is an exact Gamma) interleaved with adaptive random-walk Metropolis blocks
//! for the whitened intercepts, the variance hyperparameters, and the mean
//! parameters.
//!
//! Chains are independent, each with its own deterministic generator stream
//! derived from the run seed, and run concurrently. Adaptation freezes at the
//! end of burn-in.

pub mod adapt;
pub mod diagnostics;
pub mod store;

pub use diagnostics::{
    acf, convergence_report, effective_sample_size, rhat, ConvergenceReport, GateThresholds,
};
pub use store::{ChainAcceptStats, PosteriorSamples, SamplesSidecar, SCALAR_PARAMS};

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bayes::{lambda_conditional_from_mu, ModelSpec};
use crate::empirical::EmpiricalFit;
use crate::error::{Error, Result};
use crate::seeding;

use adapt::{accept_log_ratio, AdaptiveBlock, AdaptiveSitewise};

/// Parameters pinned to fixed values instead of being sampled. Used by the
/// conjugacy and quadrature test harnesses and for what-if runs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixedParams {
    pub alpha: Option<f64>,
    pub sigma_sq: Option<f64>,
    pub w: Option<f64>,
    pub m: Option<f64>,
    pub beta_l: Option<f64>,
    pub beta_v: Option<f64>,
    /// Pin the whitened intercepts (skips the sitewise sweep).
    pub z: Option<Vec<f64>>,
}

impl FixedParams {
    fn sw_free_mask(&self) -> [bool; 2] {
        [self.sigma_sq.is_none(), self.w.is_none()]
    }

    fn mean_free_mask(&self) -> [bool; 3] {
        [self.m.is_none(), self.beta_l.is_none(), self.beta_v.is_none()]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_chains: usize,
    /// Total iterations per chain, burn-in included.
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub seed: u64,
    /// Proposal-scale adaptation window, in iterations.
    pub adaptation_window: usize,
    /// Target acceptance for single-coordinate moves.
    pub target_accept_scalar: f64,
    /// Target acceptance for joint block moves.
    pub target_accept_block: f64,
    /// Extra sweeps of the two small blocks per iteration; the rates and
    /// intercepts dominate the cost, so re-hitting the hyperparameters is
    /// nearly free mixing.
    pub hyper_repeats: usize,
    #[serde(default)]
    pub fixed: FixedParams,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_chains: 2,
            n_iterations: 2000,
            n_burnin: 1000,
            seed: 0,
            adaptation_window: 50,
            target_accept_scalar: 0.44,
            target_accept_block: 0.30,
            hyper_repeats: 6,
            fixed: FixedParams::default(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self, n_lines: usize) -> Result<()> {
        if self.n_chains < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 chains for diagnostics, got {}",
                self.n_chains
            )));
        }
        if self.n_burnin >= self.n_iterations {
            return Err(Error::Invalid(format!(
                "burn-in {} must be less than total iterations {}",
                self.n_burnin, self.n_iterations
            )));
        }
        if self.adaptation_window == 0 || self.hyper_repeats == 0 {
            return Err(Error::Invalid(
                "adaptation window and hyper repeats must be at least 1".into(),
            ));
        }
        for t in [self.target_accept_scalar, self.target_accept_block] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Invalid(format!("target acceptance {t} outside (0,1)")));
            }
        }
        if let Some(z) = &self.fixed.z {
            if z.len() != n_lines {
                return Err(Error::Invalid(format!(
                    "fixed z has length {}, model has {n_lines} lines",
                    z.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        self.n_iterations - self.n_burnin
    }
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    accept: ChainAcceptStats,
    warnings: Vec<String>,
}

/// Run all chains and collect retained draws. Deterministic for a given seed:
/// chain c uses its own generator stream regardless of scheduling.
pub fn run_chains(
    spec: &ModelSpec,
    cfg: &ChainConfig,
    init: Option<&EmpiricalFit>,
) -> Result<PosteriorSamples> {
    cfg.validate(spec.n())?;
    let outputs: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_chains)
            .map(|c| scope.spawn(move || run_one_chain(spec, cfg, init, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });

    let mut chains = Vec::with_capacity(cfg.n_chains);
    let mut accept_stats = Vec::with_capacity(cfg.n_chains);
    let mut warnings = Vec::new();
    for out in outputs {
        let out = out?;
        chains.push(out.draws);
        accept_stats.push(out.accept);
        warnings.extend(out.warnings);
    }
    Ok(PosteriorSamples::new(
        PosteriorSamples::names_for(&spec.labels),
        spec.n(),
        chains,
        cfg.seed,
        accept_stats,
        warnings,
    ))
}

fn run_one_chain(
    spec: &ModelSpec,
    cfg: &ChainConfig,
    init: Option<&EmpiricalFit>,
    chain_idx: usize,
) -> Result<ChainOutput> {
    let mut runner = ChainRunner::init(spec, cfg, init, chain_idx);
    runner.run()
}

struct ChainRunner<'a> {
    spec: &'a ModelSpec,
    cfg: &'a ChainConfig,
    chain_idx: usize,
    rng: ChaCha8Rng,

    alpha: f64,
    beta_l: f64,
    beta_v: f64,
    m: f64,
    sigma_sq: f64,
    w: f64,
    z: DVector<f64>,
    lambda: DVector<f64>,

    // Caches, kept consistent with the state above. The intercept deviation
    // Q^-T (z .* s) is always lin - base, never stored separately.
    s: DVector<f64>,    // whitening scale factors
    base: DVector<f64>, // m + beta_l x_L + beta_v x_V
    lin: DVector<f64>,  // ln mu
    eneg: DVector<f64>, // exp(-lin) = 1/mu
    /// Sum over lines of the count marginal terms at the current means.
    nbsum: f64,
    /// Q' applied to the intercept-design columns (ones, x_L, x_V), for the
    /// predictor-holding mean move.
    qt_design: [DVector<f64>; 3],

    z_adapt: AdaptiveSitewise,
    alpha_adapt: AdaptiveBlock,
    /// Variance pair in the whitened (non-centered) parameterization.
    sw_adapt: AdaptiveBlock,
    /// Variance pair in the intercept-holding (centered) parameterization;
    /// interleaving both sides keeps the pair mixing whether the intercepts
    /// or the data dominate.
    centered_adapt: AdaptiveBlock,
    mean_adapt: AdaptiveBlock,
    /// Mean parameters in the predictor-holding parameterization.
    centered_mean_adapt: AdaptiveBlock,

    // Scratch for single-site proposals.
    lin_new: DVector<f64>,
    eneg_new: DVector<f64>,
}

impl<'a> ChainRunner<'a> {
    fn init(
        spec: &'a ModelSpec,
        cfg: &'a ChainConfig,
        init: Option<&EmpiricalFit>,
        chain_idx: usize,
    ) -> Self {
        let n = spec.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::replicate_seed(cfg.seed, chain_idx as u64));
        let fixed = &cfg.fixed;
        let gauss = |sd: f64, rng: &mut ChaCha8Rng| sd * rng.sample::<f64, _>(StandardNormal);

        // Overdispersed starts around the empirical fit (or the prior means).
        let m = fixed
            .m
            .unwrap_or_else(|| init.map_or(spec.priors.m.mean, |f| f.m) + gauss(0.2, &mut rng));
        let beta_l = fixed.beta_l.unwrap_or_else(|| {
            init.map_or(spec.priors.beta_l.mean, |f| f.beta_l) + gauss(0.2, &mut rng)
        });
        let beta_v = fixed.beta_v.unwrap_or_else(|| {
            init.map_or(spec.priors.beta_v.mean, |f| f.beta_v) + gauss(0.2, &mut rng)
        });
        let alpha = fixed
            .alpha
            .unwrap_or_else(|| (gauss(0.3, &mut rng)).exp());
        let sigma_sq = fixed
            .sigma_sq
            .unwrap_or_else(|| 0.5 * (gauss(0.3, &mut rng)).exp());
        let w = fixed.w.unwrap_or_else(|| {
            let logit = gauss(0.3, &mut rng);
            1.0 / (1.0 + (-logit).exp())
        });
        // Rates start at a pooled-shrunk count rate so the rate layer is
        // coherent from the first iteration; a cold start (rates at the raw
        // data, intercepts at zero) leaves a large initial mismatch that the
        // blockwise kernel repairs by inflating the intercept variance, a
        // quasi-stable region it then escapes only very slowly.
        let total_counts: f64 = spec.counts.iter().map(|&c| c as f64).sum();
        let total_exposure: f64 = spec.exposure.iter().sum();
        let pooled = if total_exposure > 0.0 {
            (total_counts / total_exposure).max(0.02)
        } else {
            0.05
        };
        let lambda = DVector::from_fn(n, |i, _| {
            let smoothed = if spec.exposure[i] > 0.0 {
                (spec.counts[i] as f64 + pooled) / (spec.exposure[i] + 1.0)
            } else {
                pooled
            };
            smoothed.max(1e-4) * (gauss(0.1, &mut rng)).exp()
        });

        // Whitened intercepts start at the values that reproduce the initial
        // rates, clamped and jittered per chain.
        let z = match &fixed.z {
            Some(zf) => DVector::from_vec(zf.clone()),
            None => {
                let resid = DVector::from_fn(n, |i, _| {
                    lambda[i].ln() - (m + beta_l * spec.x_l[i] + beta_v * spec.x_v[i])
                });
                let u0 = spec.sim.q.transpose() * resid;
                DVector::from_fn(n, |i, _| {
                    let si = (sigma_sq * (w + (1.0 - w) * spec.sim.lambda[i])).sqrt();
                    (u0[i] / si).clamp(-3.0, 3.0) + gauss(0.2, &mut rng)
                })
            }
        };

        let mut runner = ChainRunner {
            spec,
            cfg,
            chain_idx,
            rng,
            alpha,
            beta_l,
            beta_v,
            m,
            sigma_sq,
            w,
            z,
            lambda,
            s: DVector::zeros(n),
            base: DVector::zeros(n),
            lin: DVector::zeros(n),
            eneg: DVector::zeros(n),
            nbsum: 0.0,
            qt_design: {
                let qt = spec.sim.q.transpose();
                [
                    &qt * DVector::from_element(n, 1.0),
                    &qt * &spec.x_l,
                    &qt * &spec.x_v,
                ]
            },
            z_adapt: AdaptiveSitewise::new(
                n,
                0.5,
                cfg.target_accept_scalar,
                cfg.adaptation_window,
            ),
            alpha_adapt: AdaptiveBlock::new(
                usize::from(fixed.alpha.is_none()),
                cfg.target_accept_scalar,
                cfg.adaptation_window,
            ),
            sw_adapt: AdaptiveBlock::new(
                fixed.sw_free_mask().iter().filter(|b| **b).count(),
                cfg.target_accept_block,
                cfg.adaptation_window,
            ),
            centered_adapt: AdaptiveBlock::new(
                fixed.sw_free_mask().iter().filter(|b| **b).count(),
                cfg.target_accept_block,
                cfg.adaptation_window,
            ),
            mean_adapt: AdaptiveBlock::new(
                fixed.mean_free_mask().iter().filter(|b| **b).count(),
                cfg.target_accept_block,
                cfg.adaptation_window,
            ),
            centered_mean_adapt: AdaptiveBlock::new(
                fixed.mean_free_mask().iter().filter(|b| **b).count(),
                cfg.target_accept_block,
                cfg.adaptation_window,
            ),
            lin_new: DVector::zeros(n),
            eneg_new: DVector::zeros(n),
        };
        runner.rebuild_caches();
        runner
    }

    /// Count marginal term for one line at linear predictor `lin_j`: the
    /// rate integrated out against its Gamma layer leaves a negative-binomial
    /// likelihood in the mean. Every mean-moving block targets these terms,
    /// so no block conditions on the current rates and the rates are drawn
    /// fresh from their exact conditional at the end of each iteration.
    #[inline]
    fn nb_term(&self, alpha: f64, count: u64, exposure: f64, lin_j: f64, eneg_j: f64) -> f64 {
        let nf = count as f64;
        -alpha * lin_j - (nf + alpha) * (alpha * eneg_j + exposure).ln()
    }

    fn nb_total(&self, alpha: f64, lin: &DVector<f64>, eneg: &DVector<f64>) -> f64 {
        (0..self.spec.n())
            .map(|j| {
                self.nb_term(
                    alpha,
                    self.spec.counts[j],
                    self.spec.exposure[j],
                    lin[j],
                    eneg[j],
                )
            })
            .sum()
    }

    fn rebuild_caches(&mut self) {
        let n = self.spec.n();
        self.s = self.spec.scale_factors(self.sigma_sq, self.w);
        let u = DVector::from_fn(n, |i, _| self.z[i] * self.s[i]);
        let v = &self.spec.sim.q_inv_t * u;
        self.base = DVector::from_fn(n, |i, _| {
            self.m + self.beta_l * self.spec.x_l[i] + self.beta_v * self.spec.x_v[i]
        });
        self.lin = &v + &self.base;
        self.eneg = self.lin.map(|x| (-x).exp());
        self.nbsum = self.nb_total(self.alpha, &self.lin, &self.eneg);
    }

    /// Exact conjugate draw of every rate given the current means.
    fn gibbs_lambda(&mut self) {
        for i in 0..self.spec.n() {
            let c = lambda_conditional_from_mu(
                self.alpha,
                self.spec.counts[i],
                self.spec.exposure[i],
                1.0 / self.eneg[i],
            );
            let dist = GammaDist::new(c.shape, 1.0 / c.rate).expect("valid Gamma parameters");
            self.lambda[i] = dist.sample(&mut self.rng).max(f64::MIN_POSITIVE);
        }
    }

    /// One single-site Metropolis sweep over the whitened intercepts, against
    /// the count marginal.
    fn sweep_z(&mut self) {
        let n = self.spec.n();
        for i in 0..n {
            let step = self.z_adapt.scales[i] * self.rng.sample::<f64, _>(StandardNormal);
            let z_new = self.z[i] + step;
            let du = self.s[i] * step;
            let col = self.spec.sim.q_inv_t.column(i);
            let mut nbsum_new = 0.0;
            for j in 0..n {
                let lj = self.lin[j] + du * col[j];
                let ej = (-lj).exp();
                self.lin_new[j] = lj;
                self.eneg_new[j] = ej;
                nbsum_new += self.nb_term(
                    self.alpha,
                    self.spec.counts[j],
                    self.spec.exposure[j],
                    lj,
                    ej,
                );
            }
            let log_ratio =
                -0.5 * (z_new * z_new - self.z[i] * self.z[i]) + nbsum_new - self.nbsum;
            let accepted = accept_log_ratio(&mut self.rng, log_ratio);
            if accepted {
                self.z[i] = z_new;
                std::mem::swap(&mut self.lin, &mut self.lin_new);
                std::mem::swap(&mut self.eneg, &mut self.eneg_new);
                self.nbsum = nbsum_new;
            }
            self.z_adapt.record(i, accepted);
        }
        self.z_adapt.end_sweep();
    }

    /// Shape-parameter target with the rates integrated out analytically.
    /// Conditioning on the current rates instead would pin the shape's
    /// conditional mode at its own value and make it creep.
    fn alpha_marginal_target(&self, alpha: f64) -> f64 {
        if !alpha.is_finite() || alpha <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let lga = ln_gamma(alpha);
        let ln_alpha = alpha.ln();
        let mut t = self.spec.priors.alpha.logpdf(alpha) + ln_alpha;
        for i in 0..self.spec.n() {
            let nf = self.spec.counts[i] as f64;
            let a_over_mu = alpha * self.eneg[i];
            t += ln_gamma(nf + alpha) - lga + alpha * (ln_alpha - self.lin[i])
                - (nf + alpha) * (a_over_mu + self.spec.exposure[i]).ln();
        }
        t
    }

    fn update_alpha_collapsed(&mut self) {
        if self.cfg.fixed.alpha.is_some() {
            return;
        }
        let coords = [self.alpha.ln()];
        let proposal = self.alpha_adapt.propose(&mut self.rng, &coords);
        let alpha_new = proposal[0].exp();
        let log_ratio =
            self.alpha_marginal_target(alpha_new) - self.alpha_marginal_target(self.alpha);
        let accepted = accept_log_ratio(&mut self.rng, log_ratio);
        if accepted {
            self.alpha = alpha_new;
            self.nbsum = self.nb_total(self.alpha, &self.lin, &self.eneg);
        }
        self.alpha_adapt.record(&[self.alpha.ln()], accepted);
    }

    /// Prior and transform-Jacobian terms for the variance pair.
    fn sw_prior_terms(&self, sigma_sq: f64, w: f64) -> f64 {
        if !sigma_sq.is_finite() || sigma_sq <= 0.0 || !(w > 0.0 && w < 1.0) {
            return f64::NEG_INFINITY;
        }
        let p = &self.spec.priors;
        p.sigma_sq.logpdf(sigma_sq) + sigma_sq.ln() + p.w.logpdf(w) + w.ln() + (1.0 - w).ln()
    }

    fn propose_sw(&mut self, adapt: &AdaptiveBlock) -> Option<(f64, f64)> {
        let free = self.cfg.fixed.sw_free_mask();
        let mut coords = Vec::with_capacity(2);
        if free[0] {
            coords.push(self.sigma_sq.ln());
        }
        if free[1] {
            coords.push((self.w / (1.0 - self.w)).ln());
        }
        if coords.is_empty() {
            return None;
        }
        let proposal = adapt.propose(&mut self.rng, &coords);
        let mut it = proposal.iter();
        let sigma_new = if free[0] { it.next().unwrap().exp() } else { self.sigma_sq };
        let w_new = if free[1] {
            let l = *it.next().unwrap();
            1.0 / (1.0 + (-l).exp())
        } else {
            self.w
        };
        Some((sigma_new, w_new))
    }

    fn sw_coords(&self) -> Vec<f64> {
        let free = self.cfg.fixed.sw_free_mask();
        let mut c = Vec::with_capacity(2);
        if free[0] {
            c.push(self.sigma_sq.ln());
        }
        if free[1] {
            c.push((self.w / (1.0 - self.w)).ln());
        }
        c
    }

    /// Variance-pair move in the whitened parameterization: z stays put, the
    /// implied intercepts (and so the rate-layer means) move.
    fn update_sw_noncentered(&mut self) {
        let mut adapt = std::mem::replace(&mut self.sw_adapt, AdaptiveBlock::new(0, 0.3, 1));
        let outcome = self.propose_sw(&adapt);
        if let Some((sigma_new, w_new)) = outcome {
            let n = self.spec.n();
            let current = self.nbsum + self.sw_prior_terms(self.sigma_sq, self.w);
            let mut candidate = self.sw_prior_terms(sigma_new, w_new);
            let mut stage = None;
            if candidate > f64::NEG_INFINITY {
                let s = self.spec.scale_factors(sigma_new, w_new);
                let u = DVector::from_fn(n, |i, _| self.z[i] * s[i]);
                let v = &self.spec.sim.q_inv_t * u;
                let lin = &v + &self.base;
                let eneg = lin.map(|x: f64| (-x).exp());
                let nbsum = self.nb_total(self.alpha, &lin, &eneg);
                candidate += nbsum;
                stage = Some((s, lin, eneg, nbsum));
            }
            let accepted = accept_log_ratio(&mut self.rng, candidate - current);
            if accepted {
                let (s, lin, eneg, nbsum) = stage.expect("finite candidate");
                self.sigma_sq = sigma_new;
                self.w = w_new;
                self.s = s;
                self.lin = lin;
                self.eneg = eneg;
                self.nbsum = nbsum;
            }
            adapt.record(&self.sw_coords(), accepted);
        }
        self.sw_adapt = adapt;
    }

    /// Variance-pair move holding the implied intercepts fixed: the whitened
    /// coordinates are rescaled afterward, the rate layer is untouched, and
    /// the pair is informed by all the intercepts at once.
    fn update_sw_centered(&mut self) {
        let mut adapt = std::mem::replace(&mut self.centered_adapt, AdaptiveBlock::new(0, 0.3, 1));
        let outcome = self.propose_sw(&adapt);
        if let Some((sigma_new, w_new)) = outcome {
            let n = self.spec.n();
            // u_i = z_i s_i is held fixed; its density under (sigma, w) is
            // independent Normal(0, sigma^2 (w + (1-w) L_i)).
            let u_density = |sigma_sq: f64, w: f64| -> f64 {
                if !sigma_sq.is_finite() || sigma_sq <= 0.0 || !(w > 0.0 && w < 1.0) {
                    return f64::NEG_INFINITY;
                }
                let mut t = 0.0;
                for i in 0..n {
                    let vi = sigma_sq * (w + (1.0 - w) * self.spec.sim.lambda[i]);
                    let ui = self.z[i] * self.s[i];
                    t += -0.5 * (vi.ln() + ui * ui / vi);
                }
                t
            };
            let current = u_density(self.sigma_sq, self.w) + self.sw_prior_terms(self.sigma_sq, self.w);
            let candidate = u_density(sigma_new, w_new) + self.sw_prior_terms(sigma_new, w_new);
            let accepted = accept_log_ratio(&mut self.rng, candidate - current);
            if accepted {
                let s_new = self.spec.scale_factors(sigma_new, w_new);
                for i in 0..n {
                    self.z[i] = self.z[i] * self.s[i] / s_new[i];
                }
                self.s = s_new;
                self.sigma_sq = sigma_new;
                self.w = w_new;
                // v, lin, eneg, and all sums are unchanged by construction.
            }
            adapt.record(&self.sw_coords(), accepted);
        }
        self.centered_adapt = adapt;
    }

    fn mean_prior_terms(&self, m: f64, beta_l: f64, beta_v: f64) -> f64 {
        let p = &self.spec.priors;
        p.m.logpdf(m) + p.beta_l.logpdf(beta_l) + p.beta_v.logpdf(beta_v)
    }

    fn update_mean_block(&mut self) {
        let free = self.cfg.fixed.mean_free_mask();
        let dim = free.iter().filter(|b| **b).count();
        if dim == 0 {
            return;
        }
        let mut coords = Vec::with_capacity(dim);
        if free[0] {
            coords.push(self.m);
        }
        if free[1] {
            coords.push(self.beta_l);
        }
        if free[2] {
            coords.push(self.beta_v);
        }
        let proposal = self.mean_adapt.propose(&mut self.rng, &coords);
        let mut it = proposal.iter();
        let m_new = if free[0] { *it.next().unwrap() } else { self.m };
        let bl_new = if free[1] { *it.next().unwrap() } else { self.beta_l };
        let bv_new = if free[2] { *it.next().unwrap() } else { self.beta_v };

        let n = self.spec.n();
        let mut nbsum_new = 0.0;
        for j in 0..n {
            // Intercept deviation is lin - base, which stays current across
            // the z sweep and variance moves.
            let lj = self.lin[j] - self.base[j] + m_new
                + bl_new * self.spec.x_l[j]
                + bv_new * self.spec.x_v[j];
            let ej = (-lj).exp();
            self.lin_new[j] = lj;
            self.eneg_new[j] = ej;
            nbsum_new += self.nb_term(
                self.alpha,
                self.spec.counts[j],
                self.spec.exposure[j],
                lj,
                ej,
            );
        }
        let current = self.nbsum + self.mean_prior_terms(self.m, self.beta_l, self.beta_v);
        let candidate = nbsum_new + self.mean_prior_terms(m_new, bl_new, bv_new);
        let accepted = accept_log_ratio(&mut self.rng, candidate - current);
        if accepted {
            self.m = m_new;
            self.beta_l = bl_new;
            self.beta_v = bv_new;
            self.base = DVector::from_fn(n, |i, _| {
                m_new + bl_new * self.spec.x_l[i] + bv_new * self.spec.x_v[i]
            });
            std::mem::swap(&mut self.lin, &mut self.lin_new);
            std::mem::swap(&mut self.eneg, &mut self.eneg_new);
            self.nbsum = nbsum_new;
        }
        let now: Vec<f64> = {
            let mut c = Vec::with_capacity(dim);
            if free[0] {
                c.push(self.m);
            }
            if free[1] {
                c.push(self.beta_l);
            }
            if free[2] {
                c.push(self.beta_v);
            }
            c
        };
        self.mean_adapt.record(&now, accepted);
    }

    /// Mean-parameter move holding the whole linear predictor fixed: the
    /// whitened intercepts absorb the shift, so the count marginal is
    /// untouched and the move is informed by the intercept prior instead.
    /// Interleaved with the predictor-moving block above, this traverses the
    /// ridge between the mean parameters and the intercept field.
    fn update_mean_centered(&mut self) {
        if self.cfg.fixed.z.is_some() {
            return;
        }
        let free = self.cfg.fixed.mean_free_mask();
        let dim = free.iter().filter(|b| **b).count();
        if dim == 0 {
            return;
        }
        let mut coords = Vec::with_capacity(dim);
        if free[0] {
            coords.push(self.m);
        }
        if free[1] {
            coords.push(self.beta_l);
        }
        if free[2] {
            coords.push(self.beta_v);
        }
        let proposal = self.centered_mean_adapt.propose(&mut self.rng, &coords);
        let mut it = proposal.iter();
        let m_new = if free[0] { *it.next().unwrap() } else { self.m };
        let bl_new = if free[1] { *it.next().unwrap() } else { self.beta_l };
        let bv_new = if free[2] { *it.next().unwrap() } else { self.beta_v };

        let n = self.spec.n();
        let dm = self.m - m_new;
        let dbl = self.beta_l - bl_new;
        let dbv = self.beta_v - bv_new;
        // z'_i = (u_i + (Q' delta-base)_i) / s_i with u_i = z_i s_i.
        let mut quad_new = 0.0;
        for i in 0..n {
            let shift =
                self.qt_design[0][i] * dm + self.qt_design[1][i] * dbl + self.qt_design[2][i] * dbv;
            let zi = self.z[i] + shift / self.s[i];
            self.lin_new[i] = zi; // reused as z scratch here
            quad_new += zi * zi;
        }
        let quad_cur: f64 = self.z.iter().map(|z| z * z).sum();
        let current = -0.5 * quad_cur + self.mean_prior_terms(self.m, self.beta_l, self.beta_v);
        let candidate = -0.5 * quad_new + self.mean_prior_terms(m_new, bl_new, bv_new);
        let accepted = accept_log_ratio(&mut self.rng, candidate - current);
        if accepted {
            for i in 0..n {
                self.z[i] = self.lin_new[i];
            }
            self.m = m_new;
            self.beta_l = bl_new;
            self.beta_v = bv_new;
            self.base = DVector::from_fn(n, |i, _| {
                m_new + bl_new * self.spec.x_l[i] + bv_new * self.spec.x_v[i]
            });
            // lin, eneg, and the count marginal are unchanged by construction.
        }
        let now: Vec<f64> = {
            let mut c = Vec::with_capacity(dim);
            if free[0] {
                c.push(self.m);
            }
            if free[1] {
                c.push(self.beta_l);
            }
            if free[2] {
                c.push(self.beta_v);
            }
            c
        };
        self.centered_mean_adapt.record(&now, accepted);
    }

    fn snapshot(&self, draws: &mut [Vec<f64>]) {
        let n = self.spec.n();
        draws[0].push(self.alpha);
        draws[1].push(self.sigma_sq);
        draws[2].push(self.w);
        draws[3].push(self.m);
        draws[4].push(self.beta_l);
        draws[5].push(self.beta_v);
        for i in 0..n {
            draws[6 + i].push(self.z[i]);
        }
        for i in 0..n {
            draws[6 + n + i].push(self.lambda[i]);
        }
    }

    fn run(&mut self) -> Result<ChainOutput> {
        let n = self.spec.n();
        let n_params = 6 + 2 * n;
        let mut draws: Vec<Vec<f64>> =
            (0..n_params).map(|_| Vec::with_capacity(self.cfg.n_retained())).collect();

        for iter in 0..self.cfg.n_iterations {
            if !self.nbsum.is_finite() {
                return Err(Error::ChainAbort {
                    chain: self.chain_idx,
                    iteration: iter,
                    msg: "count marginal became non-finite".into(),
                });
            }
            if iter == self.cfg.n_burnin {
                self.z_adapt.freeze();
                self.alpha_adapt.freeze();
                self.sw_adapt.freeze();
                self.centered_adapt.freeze();
                self.mean_adapt.freeze();
                self.centered_mean_adapt.freeze();
            }
            // Every block targets the rate-marginalized posterior, so the
            // exact conditional draw of the rates comes last and the
            // snapshot sees a coherent joint state.
            for _ in 0..self.cfg.hyper_repeats {
                self.update_alpha_collapsed();
                self.update_sw_noncentered();
                self.update_sw_centered();
                self.update_mean_block();
                self.update_mean_centered();
            }
            if self.cfg.fixed.z.is_none() {
                self.sweep_z();
            }
            self.gibbs_lambda();
            if iter >= self.cfg.n_burnin {
                self.snapshot(&mut draws);
            }
        }

        let mut warnings = Vec::new();
        for (name, stuck) in [
            ("intercept sweep", self.z_adapt.stuck_windows),
            ("shape update", self.alpha_adapt.stuck_windows),
            ("variance-pair update", self.sw_adapt.stuck_windows),
            ("centered variance-pair update", self.centered_adapt.stuck_windows),
            ("mean block", self.mean_adapt.stuck_windows),
            ("centered mean block", self.centered_mean_adapt.stuck_windows),
        ] {
            if stuck > 0 {
                warnings.push(format!(
                    "chain {}: {name} rejected everything in {stuck} adaptation window(s)",
                    self.chain_idx
                ));
            }
        }
        Ok(ChainOutput {
            draws,
            accept: ChainAcceptStats {
                chain: self.chain_idx,
                z: self.z_adapt.acceptance_rate(),
                alpha: self.alpha_adapt.acceptance_rate(),
                variance_pair: self.sw_adapt.acceptance_rate(),
                variance_pair_centered: self.centered_adapt.acceptance_rate(),
                mean_block: self.mean_adapt.acceptance_rate(),
            },
            warnings,
        })
    }
}
