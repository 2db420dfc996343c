//! Generative model for synthetic outage data with known ground truth, the
//! Monte Carlo oracle for the conventional estimator's sampling SD, the
//! variance-mean calibration, and the estimator evaluation harness.
//!
//! One dataset is produced by a single draw of log rates from the correlated
//! normal, a single shared Gamma multiplier, and then independent Poisson
//! counts per line and year. The shared multiplier is drawn once per dataset,
//! so annual counts are conditionally iid given the rates and the multiplier.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CovariateVector, DistrictFeatures};
use crate::ingest::{CountMatrix, LineAttributes, LineTable};
use crate::kernels::{cholesky_jittered, simdiag, KernelConfig, KernelSet, SimDiag};
use crate::network::{build_graph, distance_matrix};
use crate::seeding;
use crate::stats;

/// First calendar year label of generated count matrices.
pub const FIRST_YEAR: i32 = 2001;

/// Parameters of the generative model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerativeConfig {
    pub m: f64,
    pub beta_l: f64,
    pub beta_v: f64,
    /// Weight of the district kernel in the mixing covariance.
    pub weight_sigma1: f64,
    /// Shape of the shared Gamma multiplier; smaller means more
    /// overdispersion.
    pub overdispersion_a: f64,
    pub n_years: usize,
    pub seed: u64,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        Self {
            m: -1.5,
            beta_l: 0.13,
            beta_v: 0.12,
            weight_sigma1: 0.52,
            overdispersion_a: 1.0,
            n_years: 5,
            seed: 0,
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overdispersion_a > 0.0) {
            return Err(Error::Invalid(format!(
                "overdispersion shape must be positive, got {}",
                self.overdispersion_a
            )));
        }
        if !(self.weight_sigma1 > 0.0 && self.weight_sigma1 < 1.0) {
            return Err(Error::Invalid(format!(
                "kernel weight {} outside (0,1)",
                self.weight_sigma1
            )));
        }
        if self.n_years == 0 {
            return Err(Error::Invalid("need at least one year".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub config: GenerativeConfig,
    pub n_lines: usize,
    pub realized_g: f64,
}

/// A generated dataset: true rates, the realized shared multiplier, and the
/// counts. Regenerable bit-exactly from config plus the same line inventory.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub truth: Vec<f64>,
    pub shared_g: f64,
    pub counts: CountMatrix,
    pub provenance: Provenance,
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("positive Poisson mean");
    let draw: f64 = p.sample(rng);
    draw as u32
}

/// Draw one dataset: log rates from the correlated normal (once), the shared
/// multiplier (once), then counts per line and year.
pub fn generate(
    config: &GenerativeConfig,
    labels: &[String],
    covariates: &CovariateVector,
    kernels: &KernelSet,
) -> Result<SyntheticDataset> {
    config.validate()?;
    let n = labels.len();
    if covariates.len() != n || kernels.n() != n {
        return Err(Error::Invalid(format!(
            "dimension mismatch: {n} labels, {} covariates, {} kernel rows",
            covariates.len(),
            kernels.n()
        )));
    }
    let sigma = &kernels.sigma1 * config.weight_sigma1
        + &kernels.sigma2 * (1.0 - config.weight_sigma1);
    let chol = cholesky_jittered(&sigma)
        .map_err(|_| Error::LinAlg("mixing covariance is not positive definite".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Draw order is fixed: (1) rates, (2) shared multiplier, (3) counts.
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let correlated = chol.l() * noise;
    let truth: Vec<f64> = (0..n)
        .map(|i| {
            (config.m
                + config.beta_l * covariates.x_l[i]
                + config.beta_v * covariates.x_v[i]
                + correlated[i])
                .exp()
        })
        .collect();
    let g_dist = GammaDist::new(config.overdispersion_a, 1.0 / config.overdispersion_a).unwrap();
    let shared_g: f64 = g_dist.sample(&mut rng);

    let mut counts = Vec::with_capacity(n * config.n_years);
    for &lam in &truth {
        for _ in 0..config.n_years {
            counts.push(poisson_count(&mut rng, lam * shared_g));
        }
    }
    // Calendar-style year labels so a synthesized event file round-trips
    // through ingestion with identical headers.
    let years: Vec<i32> = (0..config.n_years as i32).map(|k| FIRST_YEAR + k).collect();
    let counts = CountMatrix::new(labels.to_vec(), years, counts)?;
    Ok(SyntheticDataset {
        provenance: Provenance {
            schema_version: 1,
            config: config.clone(),
            n_lines: n,
            realized_g: shared_g,
        },
        truth,
        shared_g,
        counts,
    })
}

/// Ordinary least squares of per-line count variance on (1, mean, mean^2).
pub fn variance_mean_fit(cm: &CountMatrix) -> Result<(f64, f64, f64)> {
    if cm.n_years() < 2 {
        return Err(Error::Invalid(
            "variance-mean fit needs at least two years".into(),
        ));
    }
    let mut means = Vec::with_capacity(cm.n_lines());
    let mut vars = Vec::with_capacity(cm.n_lines());
    for i in 0..cm.n_lines() {
        let row: Vec<f64> = cm.row(i).iter().map(|&c| c as f64).collect();
        means.push(stats::mean(&row));
        vars.push(stats::sample_variance(&row));
    }
    let distinct: BTreeSet<u64> = means.iter().map(|m| m.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(Error::Invalid(format!(
            "need at least 3 distinct per-line means, got {}",
            distinct.len()
        )));
    }
    let x = DMatrix::from_fn(means.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => means[i],
        _ => means[i] * means[i],
    });
    let y = DVector::from_vec(vars);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let coef = xtx
        .lu()
        .solve(&xty)
        .ok_or_else(|| Error::LinAlg("rank-deficient variance-mean design".into()))?;
    Ok((coef[0], coef[1], coef[2]))
}

/// How the shared multiplier is handled across oracle replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OracleGMode {
    /// Redraw the multiplier per replicate dataset (full generative
    /// variation, including the dataset-level Gamma floor).
    PerReplicate,
    /// Condition on one multiplier value (count-only variation, matching a
    /// single realized dataset).
    Fixed(f64),
}

/// Monte Carlo sampling SD of the conventional estimator at fixed true rates:
/// B replicate datasets, the count-per-year estimate on each, and the per-line
/// SD across replicates.
pub fn conventional_sd_oracle(
    config: &GenerativeConfig,
    truth: &[f64],
    replicates: usize,
    mode: OracleGMode,
    seed: u64,
) -> Result<Vec<f64>> {
    config.validate()?;
    if replicates < 2 {
        return Err(Error::Invalid("need at least 2 replicates".into()));
    }
    let n = truth.len();
    let mut estimates: Vec<Vec<f64>> = vec![Vec::with_capacity(replicates); n];
    let g_dist = GammaDist::new(config.overdispersion_a, 1.0 / config.overdispersion_a).unwrap();
    for rep in 0..replicates {
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::replicate_seed(seed, rep as u64));
        let g = match mode {
            OracleGMode::PerReplicate => g_dist.sample(&mut rng),
            OracleGMode::Fixed(g) => g,
        };
        for (i, &lam) in truth.iter().enumerate() {
            let mut total = 0u64;
            for _ in 0..config.n_years {
                total += poisson_count(&mut rng, lam * g) as u64;
            }
            estimates[i].push(total as f64 / config.n_years as f64);
        }
    }
    Ok(estimates.iter().map(|e| stats::sample_sd(e)).collect())
}

/// Point-estimate evaluation against known truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub n: usize,
    pub bias: f64,
    pub error_sd: f64,
    /// Fraction of true rates inside the supplied intervals, when given.
    pub coverage: Option<f64>,
    pub histogram: Vec<(f64, f64)>,
    pub per_line_error: Vec<f64>,
}

pub fn evaluate(
    estimates: &[f64],
    intervals: Option<&[(f64, f64)]>,
    truth: &[f64],
) -> Result<EvalReport> {
    if estimates.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "line sets disagree: {} estimates vs {} truths",
            estimates.len(),
            truth.len()
        )));
    }
    if let Some(iv) = intervals {
        if iv.len() != truth.len() {
            return Err(Error::Invalid("interval count mismatch".into()));
        }
    }
    let errors: Vec<f64> = estimates.iter().zip(truth).map(|(e, t)| e - t).collect();
    let coverage = intervals.map(|iv| {
        iv.iter()
            .zip(truth)
            .filter(|((lo, hi), t)| **t >= *lo && **t <= *hi)
            .count() as f64
            / truth.len() as f64
    });
    Ok(EvalReport {
        schema_version: 1,
        n: truth.len(),
        bias: stats::mean(&errors),
        error_sd: stats::sample_sd(&errors),
        coverage,
        histogram: stats::smoothed_histogram(&errors, 200),
        per_line_error: errors,
    })
}

/// Deterministic synthetic line inventory: a random recursive tree over the
/// buses plus chord edges, log-normal lengths, standard voltage classes, and
/// contiguous districts grown from random seeds.
pub fn bundled_inventory(n_lines: usize, n_districts: usize, seed: u64) -> LineTable {
    assert!(n_lines >= 2 && n_districts >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_buses = (n_lines * 4 / 5).max(3);

    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n_lines);
    for k in 1..n_buses {
        let parent = rng.random_range(0..k);
        edges.push((parent, k));
    }
    while edges.len() < n_lines {
        let a = rng.random_range(0..n_buses);
        let b = rng.random_range(0..n_buses);
        if a != b {
            edges.push((a.min(b), a.max(b)));
        }
    }

    // Contiguous districts: multi-source BFS over the bus graph.
    let mut adj = vec![Vec::new(); n_buses];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut district = vec![usize::MAX; n_buses];
    let mut queue = std::collections::VecDeque::new();
    for d in 0..n_districts.min(n_buses) {
        loop {
            let root = rng.random_range(0..n_buses);
            if district[root] == usize::MAX {
                district[root] = d;
                queue.push_back(root);
                break;
            }
        }
    }
    while let Some(b) = queue.pop_front() {
        for &nb in &adj[b] {
            if district[nb] == usize::MAX {
                district[nb] = district[b];
                queue.push_back(nb);
            }
        }
    }
    for d in district.iter_mut() {
        if *d == usize::MAX {
            *d = 0;
        }
    }

    let length_dist: LogNormal<f64> = LogNormal::new(15.0f64.ln(), 1.0).unwrap();
    let voltage_classes = [69.0, 115.0, 230.0, 345.0, 500.0];
    let voltage_weights = [0.15, 0.25, 0.30, 0.15, 0.15];
    let pick_voltage = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (v, w) in voltage_classes.iter().zip(voltage_weights) {
            acc += w;
            if u <= acc {
                return *v;
            }
        }
        *voltage_classes.last().unwrap()
    };

    let width = (n_lines as f64).log10().ceil() as usize + 1;
    let lines: Vec<LineAttributes> = edges
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let mut districts: BTreeSet<String> = BTreeSet::new();
            districts.insert(format!("D{:02}", district[a]));
            districts.insert(format!("D{:02}", district[b]));
            LineAttributes {
                line_id: format!("L{k:0width$}"),
                from_bus: format!("B{a:0width$}"),
                to_bus: format!("B{b:0width$}"),
                voltage_kv: pick_voltage(&mut rng),
                length_miles: length_dist.sample(&mut rng).clamp(0.5, 400.0),
                districts,
            }
        })
        .collect();
    LineTable::new(lines).expect("generated ids are unique")
}

/// The default inventory used when no line table is supplied.
pub fn default_bundled_inventory() -> LineTable {
    bundled_inventory(500, 12, 20_210_614)
}

/// Covariates, kernels, and the diagonalizing basis for a line inventory.
pub struct SyntheticWorld {
    pub table: LineTable,
    pub labels: Vec<String>,
    pub covariates: CovariateVector,
    pub kernels: KernelSet,
    pub sim: SimDiag,
}

pub fn build_world(table: LineTable, kernel_config: &KernelConfig) -> Result<SyntheticWorld> {
    let covariates = CovariateVector::from_line_table(&table)?;
    let features = DistrictFeatures::from_line_table(&table)?;
    let graph = build_graph(&table)?;
    let dm = distance_matrix(&graph);
    let kernels = KernelSet::build(&features, &dm, kernel_config)?;
    let sim = simdiag(&kernels.sigma1, &kernels.sigma2)?;
    Ok(SyntheticWorld {
        labels: table.line_ids(),
        covariates,
        kernels,
        sim,
        table,
    })
}

/// Write the dataset bundle: counts CSV, truth CSV, provenance JSON.
pub fn write_bundle(dataset: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    dataset.counts.write_csv_path(&dir.join("counts.csv"))?;
    let mut wtr = csv::Writer::from_writer(std::fs::File::create(dir.join("truth.csv"))?);
    wtr.write_record(["line_id", "lambda"])?;
    for (id, lam) in dataset.counts.line_ids().iter().zip(&dataset.truth) {
        wtr.write_record([id.as_str(), &lam.to_string()])?;
    }
    wtr.flush()?;
    let mut f = std::fs::File::create(dir.join("provenance.json"))?;
    f.write_all(serde_json::to_string_pretty(&dataset.provenance)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_reader(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let rec = row?;
        let lam: f64 = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Row {
                row: idx + 1,
                msg: "bad lambda".into(),
            })?;
        out.push((rec.get(0).unwrap_or("").to_string(), lam));
    }
    Ok(out)
}
