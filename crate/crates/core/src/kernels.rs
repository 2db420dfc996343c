//! Line-dependency kernels and their simultaneous diagonalization.
//!
//! Two correlation kernels are combined: a district kernel built from
//! district-membership overlap, and a network kernel that decays exponentially
//! with midpoint distance. A single basis change Q renders the district kernel
//! the identity and the network kernel diagonal, which decouples the
//! correlated intercepts for every mixture weight at once and makes the
//! multivariate normal layer O(n) per evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DistrictFeatures;
use crate::network::DistanceMatrix;

/// The two component kernels, both symmetric with unit diagonal.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
}

/// Kernel configuration: decay rate and distance unit for the network kernel.
/// The entry for lines at distance d is exp(-rate * d / distance_unit_miles).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub rate: f64,
    pub distance_unit_miles: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            rate: 2.0,
            distance_unit_miles: 1.0,
        }
    }
}

/// District kernel: exp(-||phi_i - phi_j||^2 - [i != j]). The indicator makes
/// every line strictly most similar to itself; the diagonal is exactly one.
pub fn district_kernel(features: &DistrictFeatures) -> DMatrix<f64> {
    let n = features.n_lines();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = (-features.sq_distance(i, j) - 1.0).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Network kernel: exp(-rate * d_ij / unit) with unit diagonal. Infinite
/// distances (different islands) map to zero correlation.
pub fn network_kernel(dm: &DistanceMatrix, config: &KernelConfig) -> Result<DMatrix<f64>> {
    if !(config.rate > 0.0) || !(config.distance_unit_miles > 0.0) {
        return Err(Error::Invalid(format!(
            "kernel rate and distance unit must be positive, got {} and {}",
            config.rate, config.distance_unit_miles
        )));
    }
    let n = dm.n_lines();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let d = dm.get(i, j);
            if d < 0.0 {
                return Err(Error::Invalid(format!(
                    "negative distance {d} between lines {i} and {j}"
                )));
            }
            let v = if d.is_infinite() {
                0.0
            } else {
                (-config.rate * d / config.distance_unit_miles).exp()
            };
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

impl KernelSet {
    pub fn build(
        features: &DistrictFeatures,
        dm: &DistanceMatrix,
        config: &KernelConfig,
    ) -> Result<Self> {
        let set = Self {
            sigma1: district_kernel(features),
            sigma2: network_kernel(dm, config)?,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.sigma1.nrows()
    }

    /// Check the correlation-matrix invariants: symmetry, unit diagonal,
    /// entries in [0, 1], and numerical positive semidefiniteness of the
    /// district kernel.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.sigma2.nrows() != n || self.sigma1.ncols() != n || self.sigma2.ncols() != n {
            return Err(Error::Invalid("kernel shape mismatch".into()));
        }
        for (name, m) in [("district", &self.sigma1), ("network", &self.sigma2)] {
            for i in 0..n {
                if m[(i, i)] != 1.0 {
                    return Err(Error::Invalid(format!("{name} kernel diagonal not 1 at {i}")));
                }
                for j in 0..n {
                    let v = m[(i, j)];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Invalid(format!(
                            "{name} kernel entry ({i},{j}) = {v} outside [0,1]"
                        )));
                    }
                    if (v - m[(j, i)]).abs() > 1e-12 {
                        return Err(Error::Invalid(format!("{name} kernel asymmetric at ({i},{j})")));
                    }
                }
            }
        }
        let min_eig = min_eigenvalue(&self.sigma1);
        if min_eig < -1e-8 * n as f64 {
            return Err(Error::LinAlg(format!(
                "district kernel has eigenvalue {min_eig}, not PSD"
            )));
        }
        Ok(())
    }

    /// Mean absolute off-diagonal entry of the network kernel; near zero means
    /// the kernel has degenerated to the identity for this dataset.
    pub fn network_offdiag_mass(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += self.sigma2[(i, j)].abs();
                }
            }
        }
        s / (n * (n - 1)) as f64
    }

    pub fn select(&self, idx: &[usize]) -> KernelSet {
        KernelSet {
            sigma1: subset(&self.sigma1, idx),
            sigma2: subset(&self.sigma2, idx),
        }
    }
}

/// Rows and columns of a square matrix restricted to `idx`, in order.
pub fn subset(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Convex combination w * sigma1 + (1-w) * sigma2. The weight must be interior.
pub fn combine(set: &KernelSet, w: f64) -> Result<DMatrix<f64>> {
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::Invalid(format!("mixture weight {w} outside (0,1)")));
    }
    Ok(&set.sigma1 * w + &set.sigma2 * (1.0 - w))
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Simultaneous diagonalization of the kernel pair: Q' sigma1 Q = I and
/// Q' sigma2 Q = diag(lambda). Also carries Q^-T (the map from whitened
/// coordinates back to intercepts) and log|det Q|.
#[derive(Debug, Clone)]
pub struct SimDiag {
    pub q: DMatrix<f64>,
    pub q_inv_t: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub log_abs_det_q: f64,
}

const RESIDUAL_TOL: f64 = 1e-8;

/// Compute the diagonalizing basis via Cholesky of sigma1 and a symmetric
/// eigendecomposition. sigma1 must be positive definite; a tiny escalating
/// jitter is added if its Cholesky fails outright.
///
/// Ordering is deterministic: eigenvalues ascend, and each eigenvector's first
/// component of nonnegligible magnitude is made positive.
/// Cholesky with an escalating diagonal jitter (1e-10 up to 1e-6), for
/// matrices that are positive definite in exact arithmetic but marginal in
/// floating point.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    let mut jitter = 0.0;
    loop {
        let cand = if jitter == 0.0 {
            m.clone()
        } else {
            m + DMatrix::identity(n, n) * jitter
        };
        match nalgebra::Cholesky::new(cand) {
            Some(c) => return Ok(c),
            None => {
                jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
                if jitter > 1e-6 {
                    return Err(Error::LinAlg(
                        "matrix is numerically singular even with jitter up to 1e-6".into(),
                    ));
                }
            }
        }
    }
}

pub fn simdiag(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>) -> Result<SimDiag> {
    let n = sigma1.nrows();
    if sigma2.nrows() != n || sigma1.ncols() != n || sigma2.ncols() != n {
        return Err(Error::Invalid("kernel shape mismatch".into()));
    }

    let chol = cholesky_jittered(sigma1)?;
    let l = chol.l();

    // M = L^-1 sigma2 L^-T, forced symmetric before the eigensolve.
    let a = l
        .solve_lower_triangular(sigma2)
        .ok_or_else(|| Error::LinAlg("triangular solve failed".into()))?;
    let m = l
        .solve_lower_triangular(&a.transpose())
        .ok_or_else(|| Error::LinAlg("triangular solve failed".into()))?
        .transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(m);

    // Ascending eigenvalue order; deterministic sign convention per column.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut u = DMatrix::zeros(n, n);
    let mut lambda = DVector::zeros(n);
    for (col, &k) in order.iter().enumerate() {
        lambda[col] = eig.eigenvalues[k].max(0.0);
        let src = eig.eigenvectors.column(k);
        let flip = src
            .iter()
            .find(|v| v.abs() > 1e-12)
            .map_or(1.0, |v| if *v < 0.0 { -1.0 } else { 1.0 });
        for r in 0..n {
            u[(r, col)] = src[r] * flip;
        }
    }

    // Q = L^-T U, so Q^-T = L U; both reuse the triangular factor.
    let q = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::LinAlg("triangular solve failed".into()))?;
    let q_inv_t = &l * &u;
    let log_abs_det_q = -(0..n).map(|i| l[(i, i)].ln()).sum::<f64>();

    let sd = SimDiag {
        q,
        q_inv_t,
        lambda,
        log_abs_det_q,
    };
    let (r1, r2) = sd.residuals(sigma1, sigma2);
    if r1 > RESIDUAL_TOL || r2 > RESIDUAL_TOL {
        return Err(Error::LinAlg(format!(
            "diagonalization residuals {r1:.3e} / {r2:.3e} exceed {RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(sd)
}

impl SimDiag {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// Max-norm residuals of the two defining identities.
    pub fn residuals(&self, sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>) -> (f64, f64) {
        let n = self.n();
        let t1 = self.q.transpose() * sigma1 * &self.q;
        let t2 = self.q.transpose() * sigma2 * &self.q;
        let mut r1 = 0.0f64;
        let mut r2 = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let e1 = (t1[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs();
                let e2 = (t2[(i, j)] - if i == j { self.lambda[i] } else { 0.0 }).abs();
                r1 = r1.max(e1);
                r2 = r2.max(e2);
            }
        }
        (r1, r2)
    }

    /// Reconstruct sigma1 as Q^-T Q^-1.
    pub fn reconstruct_sigma1(&self) -> DMatrix<f64> {
        &self.q_inv_t * self.q_inv_t.transpose()
    }

    /// Reconstruct sigma2 as Q^-T diag(lambda) Q^-1.
    pub fn reconstruct_sigma2(&self) -> DMatrix<f64> {
        let mut scaled = self.q_inv_t.clone();
        for j in 0..self.n() {
            for i in 0..self.n() {
                scaled[(i, j)] *= self.lambda[j];
            }
        }
        scaled * self.q_inv_t.transpose()
    }
}
