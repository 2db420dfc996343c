//! Frequentist pre-fit: a linear model for log average outage counts with
//! correlated intercepts, estimated by profile maximum likelihood.
//!
//! In the diagonalized basis the model is y' ~ Normal(X'b, s1*I + s2*diag(L)),
//! so for fixed variance components the mean parameters solve a weighted least
//! squares in closed form, and the two variances are found by a bounded
//! derivative-free search. The fit seeds the sampler initialization and the
//! residual diagnostics; zero-count lines are excluded here (their log is
//! undefined) but stay in the Bayesian model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CountMatrix;
use crate::kernels::SimDiag;
use crate::stats;

/// Variance box for the (s1, s2) search.
const VAR_LO: f64 = 0.0;
const VAR_HI: f64 = 10.0;
const OBJ_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 400;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalFit {
    pub m: f64,
    pub beta_l: f64,
    pub beta_v: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    /// Kernel weight sigma1^2 / (sigma1^2 + sigma2^2).
    pub w: f64,
    /// Total intercept variance sigma1^2 + sigma2^2.
    pub sigma_sq: f64,
    /// Log-likelihood at the optimum, constants included.
    pub log_likelihood: f64,
    /// Set when the profile likelihood is flat along sigma1^2 + sigma2^2 =
    /// const, i.e. the two components are not separately identified.
    pub flat_direction_warning: bool,
    pub n_fitted: usize,
}

/// Response vector y = ln(N/t) over lines with at least one outage, plus the
/// index sets of fitted and excluded (zero-count) lines.
pub struct ResponseVector {
    pub y: DVector<f64>,
    pub fitted_idx: Vec<usize>,
    pub excluded_idx: Vec<usize>,
}

pub fn response_vector(cm: &CountMatrix) -> Result<ResponseVector> {
    let mut y = Vec::new();
    let mut fitted_idx = Vec::new();
    let mut excluded_idx = Vec::new();
    for i in 0..cm.n_lines() {
        let n = cm.total(i);
        let t = cm.exposure(i);
        if !(t > 0.0) {
            return Err(Error::Invalid(format!("line {i} has zero exposure")));
        }
        if n >= 1 {
            y.push((n as f64 / t).ln());
            fitted_idx.push(i);
        } else {
            excluded_idx.push(i);
        }
    }
    if fitted_idx.is_empty() {
        return Err(Error::Invalid(
            "every line has zero outages; nothing to fit".into(),
        ));
    }
    Ok(ResponseVector {
        y: DVector::from_vec(y),
        fitted_idx,
        excluded_idx,
    })
}

/// Design matrix [1 | x_L | x_V].
fn design(x_l: &DVector<f64>, x_v: &DVector<f64>) -> DMatrix<f64> {
    let n = x_l.len();
    DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => x_l[i],
        _ => x_v[i],
    })
}

struct Transformed {
    yt: DVector<f64>,
    xt: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl Transformed {
    fn new(y: &DVector<f64>, x_l: &DVector<f64>, x_v: &DVector<f64>, sim: &SimDiag) -> Self {
        let qt = sim.q.transpose();
        Transformed {
            yt: &qt * y,
            xt: &qt * design(x_l, x_v),
            lambda: sim.lambda.clone(),
        }
    }

    /// Profile log-likelihood at (s1, s2): the mean parameters are solved in
    /// closed form by weighted least squares under variances s1 + s2*L_i.
    fn profile(&self, s1: f64, s2: f64) -> (f64, DVector<f64>) {
        let n = self.yt.len();
        let mut xtwx = DMatrix::zeros(3, 3);
        let mut xtwy = DVector::zeros(3);
        for i in 0..n {
            let d = s1 + s2 * self.lambda[i];
            if !(d > 1e-300) {
                return (f64::NEG_INFINITY, DVector::zeros(3));
            }
            let wi = 1.0 / d;
            let row = self.xt.row(i);
            for a in 0..3 {
                xtwy[a] += row[a] * wi * self.yt[i];
                for b in 0..3 {
                    xtwx[(a, b)] += row[a] * wi * row[b];
                }
            }
        }
        let b = match xtwx.clone().lu().solve(&xtwy) {
            Some(b) => b,
            None => return (f64::NEG_INFINITY, DVector::zeros(3)),
        };
        let mut ll = 0.0;
        for i in 0..n {
            let d = s1 + s2 * self.lambda[i];
            let r = self.yt[i] - self.xt.row(i).transpose().dot(&b);
            ll += -0.5 * ((2.0 * std::f64::consts::PI * d).ln() + r * r / d);
        }
        (ll, b)
    }
}

/// Golden-section maximization of a slice over [lo, hi].
fn golden_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Fit the correlated-intercept regression by profile maximum likelihood.
///
/// The variance search is a coarse grid over the box followed by coordinate
/// golden-section descent; deterministic for identical inputs.
pub fn fit_mle(
    y: &DVector<f64>,
    x_l: &DVector<f64>,
    x_v: &DVector<f64>,
    sim: &SimDiag,
) -> Result<EmpiricalFit> {
    let n = y.len();
    if x_l.len() != n || x_v.len() != n || sim.n() != n {
        return Err(Error::Invalid(format!(
            "dimension mismatch: y {}, x_L {}, x_V {}, kernels {}",
            n,
            x_l.len(),
            x_v.len(),
            sim.n()
        )));
    }
    if n < 4 {
        return Err(Error::Invalid(format!(
            "too few fitted lines ({n}) for a 5-parameter fit"
        )));
    }
    let t = Transformed::new(y, x_l, x_v, sim);

    // Coarse grid: 0 plus log-spaced values up to the box edge, per axis.
    let mut grid = vec![0.0];
    let mut v = 0.01;
    while v < VAR_HI {
        grid.push(v);
        v *= 1.6;
    }
    grid.push(VAR_HI);
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut best = f64::NEG_INFINITY;
    for &a in &grid {
        for &b in &grid {
            let (ll, _) = t.profile(a, b);
            if ll > best {
                best = ll;
                s1 = a;
                s2 = b;
            }
        }
    }
    if !best.is_finite() {
        return Err(Error::Invalid(
            "profile likelihood is degenerate everywhere on the grid".into(),
        ));
    }

    // Coordinate descent with golden-section line searches.
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let prev = best;
        let (new_s1, _) = golden_max(|a| t.profile(a, s2).0, VAR_LO, VAR_HI, 60);
        if t.profile(new_s1, s2).0 >= best {
            s1 = new_s1;
        }
        let (new_s2, _) = golden_max(|b| t.profile(s1, b).0, VAR_LO, VAR_HI, 60);
        if t.profile(s1, new_s2).0 >= best {
            s2 = new_s2;
        }
        best = t.profile(s1, s2).0;
        if (best - prev).abs() < OBJ_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iters: MAX_SWEEPS,
            best,
        });
    }

    let (ll, b) = t.profile(s1, s2);
    let total = s1 + s2;

    // Flat-direction probe along s1 + s2 = const.
    let mut flat = false;
    if total > 0.0 {
        let mut max_change = 0.0f64;
        for frac in [-0.05, -0.01, 0.01, 0.05] {
            let shift = frac * total;
            let (p1, p2) = (s1 + shift, s2 - shift);
            if (VAR_LO..=VAR_HI).contains(&p1) && (VAR_LO..=VAR_HI).contains(&p2) {
                let (lp, _) = t.profile(p1, p2);
                max_change = max_change.max((ll - lp).abs());
            }
        }
        flat = max_change < 1e-6;
    }

    Ok(EmpiricalFit {
        m: b[0],
        beta_l: b[1],
        beta_v: b[2],
        sigma1_sq: s1,
        sigma2_sq: s2,
        w: if total > 0.0 { s1 / total } else { f64::NAN },
        sigma_sq: total,
        log_likelihood: ll,
        flat_direction_warning: flat,
        n_fitted: n,
    })
}

/// Raw and standardized residuals in the decorrelated basis, plus QQ pairs
/// against the standard normal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub raw: Vec<f64>,
    pub pearson: Vec<f64>,
    /// Fitted means in the transformed basis, aligned with the residuals.
    pub fitted: Vec<f64>,
    /// (theoretical standard normal quantile, ordered Pearson residual)
    pub qq: Vec<(f64, f64)>,
}

pub fn pearson_residuals(
    fit: &EmpiricalFit,
    y: &DVector<f64>,
    x_l: &DVector<f64>,
    x_v: &DVector<f64>,
    sim: &SimDiag,
) -> Result<ResidualReport> {
    let n = y.len();
    let qt = sim.q.transpose();
    let b = DVector::from_vec(vec![fit.m, fit.beta_l, fit.beta_v]);
    let mean = design(x_l, x_v) * b;
    let fitted_t = &qt * mean;
    let yt = &qt * y;
    let mut raw = Vec::with_capacity(n);
    let mut pearson = Vec::with_capacity(n);
    for i in 0..n {
        let d = fit.sigma1_sq + fit.sigma2_sq * sim.lambda[i];
        if !(d > 0.0) {
            return Err(Error::Invalid(format!(
                "zero residual variance at coordinate {i}"
            )));
        }
        let e = yt[i] - fitted_t[i];
        raw.push(e);
        pearson.push(e / d.sqrt());
    }
    let mut ordered = pearson.clone();
    ordered.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let qq = ordered
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let p = (k as f64 + 0.5) / n as f64;
            (stats::standard_normal_quantile(p), e)
        })
        .collect();
    Ok(ResidualReport {
        raw,
        pearson,
        fitted: fitted_t.iter().cloned().collect(),
        qq,
    })
}
