//! Adaptive random-walk Metropolis building blocks.
//!
//! Adaptation is diminishing and freezes at the end of burn-in, so the
//! post-burn-in kernel is a fixed (valid) Metropolis kernel. Joint blocks
//! carry a diagonal preconditioner learned from the visited states; the
//! sitewise variant keeps one scale per coordinate for single-site sweeps.

use rand::Rng;
use rand_distr::StandardNormal;

/// Metropolis accept decision from a log density ratio. NaN never accepts.
pub fn accept_log_ratio<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    rng.random::<f64>().ln() < log_ratio
}

/// Joint random-walk proposal on a small block with a global step size and a
/// per-coordinate diagonal preconditioner.
#[derive(Debug, Clone)]
pub struct AdaptiveBlock {
    pub step: f64,
    pub sds: Vec<f64>,
    target: f64,
    window: usize,
    window_accepts: usize,
    window_proposals: usize,
    total_accepts: u64,
    total_proposals: u64,
    adaptations: usize,
    frozen: bool,
    // Welford accumulators over visited states, for the preconditioner.
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    pub stuck_windows: usize,
}

impl AdaptiveBlock {
    pub fn new(dim: usize, target: f64, window: usize) -> Self {
        Self {
            step: 2.38 / (dim.max(1) as f64).sqrt(),
            sds: vec![1.0; dim],
            target,
            window: window.max(1),
            window_accepts: 0,
            window_proposals: 0,
            total_accepts: 0,
            total_proposals: 0,
            adaptations: 0,
            frozen: false,
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            stuck_windows: 0,
        }
    }

    pub fn propose<R: Rng>(&self, rng: &mut R, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.sds)
            .map(|(&xi, &sd)| xi + self.step * sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Record the outcome of one proposal and the state after the move.
    pub fn record(&mut self, current: &[f64], accepted: bool) {
        self.window_proposals += 1;
        self.total_proposals += 1;
        if accepted {
            self.window_accepts += 1;
            self.total_accepts += 1;
        }
        if !self.frozen {
            self.count += 1;
            for (k, &xk) in current.iter().enumerate() {
                let d = xk - self.mean[k];
                self.mean[k] += d / self.count as f64;
                self.m2[k] += d * (xk - self.mean[k]);
            }
        }
        if self.window_proposals >= self.window {
            if !self.frozen {
                let rate = self.window_accepts as f64 / self.window_proposals as f64;
                if self.window_accepts == 0 {
                    self.stuck_windows += 1;
                }
                self.adaptations += 1;
                // Bracket aggressively while acceptance is extreme (a badly
                // scaled start would otherwise outlast burn-in), then settle
                // into diminishing Robbins-Monro moves.
                if rate < 0.05 {
                    self.step = (self.step / 3.0).max(1e-6);
                } else if rate > 0.8 {
                    self.step = (self.step * 3.0).min(1e3);
                } else {
                    let gain = (self.adaptations as f64).powf(-0.6).max(0.05);
                    self.step =
                        (self.step * ((rate - self.target) * gain).exp()).clamp(1e-6, 1e3);
                }
                self.update_preconditioner();
            }
            self.window_accepts = 0;
            self.window_proposals = 0;
        }
    }

    fn update_preconditioner(&mut self) {
        if self.count < 2 * self.window as u64 {
            return;
        }
        let vars: Vec<f64> = self
            .m2
            .iter()
            .map(|&m2| (m2 / (self.count - 1) as f64).max(1e-12))
            .collect();
        let log_gmean = vars.iter().map(|v| v.ln()).sum::<f64>() / vars.len() as f64 / 2.0;
        let gmean = log_gmean.exp();
        for (sd, v) in self.sds.iter_mut().zip(&vars) {
            // Normalize so the overall magnitude stays in `step`.
            *sd = (v.sqrt() / gmean).clamp(0.1, 10.0);
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        if self.total_proposals == 0 {
            None
        } else {
            Some(self.total_accepts as f64 / self.total_proposals as f64)
        }
    }
}

/// One adaptive scale per coordinate, for single-site update sweeps.
#[derive(Debug, Clone)]
pub struct AdaptiveSitewise {
    pub scales: Vec<f64>,
    window_accepts: Vec<u32>,
    sweeps_in_window: u32,
    total_accepts: u64,
    total_proposals: u64,
    target: f64,
    window: u32,
    adaptations: usize,
    frozen: bool,
    pub stuck_windows: usize,
}

impl AdaptiveSitewise {
    pub fn new(dim: usize, initial_scale: f64, target: f64, window: usize) -> Self {
        Self {
            scales: vec![initial_scale; dim],
            window_accepts: vec![0; dim],
            sweeps_in_window: 0,
            total_accepts: 0,
            total_proposals: 0,
            target,
            window: window.max(1) as u32,
            adaptations: 0,
            frozen: false,
            stuck_windows: 0,
        }
    }

    pub fn record(&mut self, coord: usize, accepted: bool) {
        self.total_proposals += 1;
        if accepted {
            self.total_accepts += 1;
            self.window_accepts[coord] += 1;
        }
    }

    /// Call once per completed sweep over all coordinates.
    pub fn end_sweep(&mut self) {
        self.sweeps_in_window += 1;
        if self.sweeps_in_window < self.window {
            return;
        }
        if !self.frozen {
            self.adaptations += 1;
            let gain = (self.adaptations as f64).powf(-0.6).max(0.05);
            let mut all_stuck = true;
            for (scale, acc) in self.scales.iter_mut().zip(&mut self.window_accepts) {
                let rate = *acc as f64 / self.window as f64;
                if *acc > 0 {
                    all_stuck = false;
                }
                if rate < 0.05 {
                    *scale = (*scale / 3.0).max(1e-6);
                } else if rate > 0.8 {
                    *scale = (*scale * 3.0).min(1e3);
                } else {
                    *scale = (*scale * ((rate - self.target) * gain).exp()).clamp(1e-6, 1e3);
                }
            }
            if all_stuck && !self.scales.is_empty() {
                self.stuck_windows += 1;
            }
        }
        self.window_accepts.iter_mut().for_each(|a| *a = 0);
        self.sweeps_in_window = 0;
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        if self.total_proposals == 0 {
            None
        } else {
            Some(self.total_accepts as f64 / self.total_proposals as f64)
        }
    }
}
