//! Command implementations. Every command reads and writes plain files so
//! stages compose through the filesystem, and all randomness derives from the
//! one run seed.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use linerates::empirical;
use linerates::features::{CovariateVector, DistrictFeatures};
use linerates::inference;
use linerates::ingest::{self, CountMatrix, LineTable};
use linerates::kernels::{simdiag, KernelSet, SimDiag};
use linerates::mcmc::{self, PosteriorSamples, SamplesSidecar};
use linerates::network;
use linerates::seeding::stage_seed;
use linerates::synthetic;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub enum Outcome {
    Done,
    GateFailed,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Covariates, kernels, and diagonalization for a line table plus a saved
/// distance matrix.
fn build_world_from_files(
    lines: &Path,
    distances: &Path,
    config: &RunConfig,
) -> Result<(LineTable, CovariateVector, KernelSet, SimDiag)> {
    let table = ingest::read_line_table_path(lines)
        .with_context(|| format!("reading line table {}", lines.display()))?;
    let dm = network::load_distances(distances)
        .with_context(|| format!("reading distance matrix {}", distances.display()))?;
    if dm.line_ids() != table.line_ids().as_slice() {
        bail!("distance matrix lines do not match the line table");
    }
    let covariates = CovariateVector::from_line_table(&table)?;
    let features = DistrictFeatures::from_line_table(&table)?;
    let kernels = KernelSet::build(&features, &dm, &config.kernel)?;
    let sim = simdiag(&kernels.sigma1, &kernels.sigma2)?;
    Ok((table, covariates, kernels, sim))
}

fn check_alignment(cm: &CountMatrix, table: &LineTable) -> Result<()> {
    if cm.line_ids() != table.line_ids().as_slice() {
        bail!(
            "count matrix lines ({}) do not match the line table ({})",
            cm.n_lines(),
            table.len()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

pub fn cmd_ingest(
    input: &Path,
    inventory: Option<&Path>,
    out: &Path,
    config: &RunConfig,
) -> Result<Outcome> {
    ensure_out(out)?;
    let records = ingest::parse_records_path(input)
        .with_context(|| format!("parsing {}", input.display()))?;
    if records.is_empty() {
        bail!("{} contains no outage records", input.display());
    }
    let parsed = records.len();
    let filtered = ingest::filter_records(records, &config.filter);
    let deduped = ingest::dedup_daily(filtered.kept, &config.day_boundary);
    if deduped.kept.is_empty() {
        bail!("no records survive filtering");
    }
    let mut table = LineTable::from_records(&deduped.kept)?;
    if let Some(path) = inventory {
        let extra = ingest::read_line_table_path(path)
            .with_context(|| format!("reading inventory {}", path.display()))?;
        let known: BTreeSet<String> = table.line_ids().into_iter().collect();
        let mut lines = table.lines().to_vec();
        for l in extra.lines() {
            if !known.contains(&l.line_id) {
                lines.push(l.clone());
            }
        }
        table = LineTable::new(lines)?;
    }

    let years: Vec<i32> = deduped
        .kept
        .iter()
        .map(|r| config.day_boundary.year_of(r.start))
        .collect();
    let (y0, y1) = (
        *years.iter().min().expect("nonempty"),
        *years.iter().max().expect("nonempty"),
    );
    let mut counts = ingest::annual_counts(&deduped.kept, (y0, y1), &config.day_boundary)?;
    counts.add_zero_lines(table.line_ids());

    let pooled = ingest::pooled_statistics(&counts)?;
    let report = ingest::IngestReport {
        schema_version: 1,
        parsed,
        filter: filtered.stats,
        dedup_removed: deduped.removed,
        attribute_conflicts: deduped.attribute_conflicts,
        surviving: deduped.kept.len(),
        n_lines: table.len(),
        pooled,
    };

    counts.write_csv_path(&out.join("counts.csv"))?;
    ingest::write_line_table_path(&table, &out.join("line_table.csv"))?;
    write_json(&out.join("ingest_report.json"), &report)?;
    println!(
        "ingested {} records -> {} after cleaning; {} lines, {} years ({y0}..{y1})",
        report.parsed,
        report.surviving,
        report.n_lines,
        counts.n_years()
    );
    Ok(Outcome::Done)
}

// ---------------------------------------------------------------------------
// network
// ---------------------------------------------------------------------------

pub fn cmd_network(lines: &Path, out: &Path) -> Result<Outcome> {
    ensure_out(out)?;
    let table = ingest::read_line_table_path(lines)?;
    let graph = network::build_graph(&table)?;
    let dm = network::distance_matrix(&graph);
    graph.write_edge_list(std::fs::File::create(out.join("edges.csv"))?)?;
    network::save_distances(&dm, &out.join("distances.bin"))?;
    dm.write_csv(std::fs::File::create(out.join("distances.csv"))?)?;
    let report = network::NetworkReport {
        schema_version: 1,
        n_buses: graph.n_buses(),
        n_lines: graph.n_lines(),
        n_components: graph.n_components(),
        n_disconnected_line_pairs: dm.n_disconnected_pairs(),
    };
    write_json(&out.join("network_report.json"), &report)?;
    println!(
        "network: {} buses, {} lines, {} component(s), {} disconnected line pair(s)",
        report.n_buses, report.n_lines, report.n_components, report.n_disconnected_line_pairs
    );
    Ok(Outcome::Done)
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub fit: empirical::EmpiricalFit,
    pub excluded_line_ids: Vec<String>,
    pub network_kernel_offdiag_mass: f64,
    /// Pearson correlation of raw and transformed length/voltage covariates.
    pub covariate_correlation: linerates::features::CorrelationReport,
}

pub fn cmd_fit(
    counts: &Path,
    lines: &Path,
    distances: &Path,
    out: &Path,
    emit_kernels: bool,
    config: &RunConfig,
) -> Result<Outcome> {
    ensure_out(out)?;
    let cm = CountMatrix::read_csv_path(counts)?;
    let (table, covariates, kernels, sim) = build_world_from_files(lines, distances, config)?;
    check_alignment(&cm, &table)?;
    if emit_kernels {
        let ids = table.line_ids();
        linerates::matfile::save_labeled_matrix(&out.join("sigma1.bin"), &ids, &kernels.sigma1)?;
        linerates::matfile::save_labeled_matrix(&out.join("sigma2.bin"), &ids, &kernels.sigma2)?;
        linerates::matfile::save_labeled_matrix(&out.join("simdiag_q.bin"), &ids, &sim.q)?;
        linerates::matfile::write_matrix_csv(
            std::fs::File::create(out.join("sigma1.csv"))?,
            &ids,
            &kernels.sigma1,
        )?;
        linerates::matfile::write_matrix_csv(
            std::fs::File::create(out.join("sigma2.csv"))?,
            &ids,
            &kernels.sigma2,
        )?;
        let mut wtr =
            csv::Writer::from_writer(std::fs::File::create(out.join("simdiag_lambda.csv"))?);
        wtr.write_record(["index", "lambda"])?;
        for (k, v) in sim.lambda.iter().enumerate() {
            wtr.write_record([k.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
    }

    let rv = empirical::response_vector(&cm)?;
    let sub = kernels.select(&rv.fitted_idx);
    let sub_sim = simdiag(&sub.sigma1, &sub.sigma2)?;
    let cov = covariates.select(&rv.fitted_idx);
    let fit = empirical::fit_mle(&rv.y, &cov.x_l, &cov.x_v, &sub_sim)?;
    let residuals = empirical::pearson_residuals(&fit, &rv.y, &cov.x_l, &cov.x_v, &sub_sim)?;

    let artifact = FitArtifact {
        schema_version: 1,
        fit,
        excluded_line_ids: rv
            .excluded_idx
            .iter()
            .map(|&i| cm.line_ids()[i].clone())
            .collect(),
        network_kernel_offdiag_mass: kernels.network_offdiag_mass(),
        covariate_correlation: linerates::features::correlation_report(
            &table.lengths(),
            &table.voltages(),
            &covariates.x_l,
            &covariates.x_v,
        ),
    };
    write_json(&out.join("empirical_fit.json"), &artifact)?;

    let mut wtr = csv::Writer::from_writer(std::fs::File::create(out.join("residuals.csv"))?);
    wtr.write_record(["coordinate", "fitted", "raw_residual", "pearson_residual"])?;
    for k in 0..residuals.raw.len() {
        wtr.write_record([
            k.to_string(),
            residuals.fitted[k].to_string(),
            residuals.raw[k].to_string(),
            residuals.pearson[k].to_string(),
        ])?;
    }
    wtr.flush()?;
    let mut wtr = csv::Writer::from_writer(std::fs::File::create(out.join("qq.csv"))?);
    wtr.write_record(["theoretical", "empirical"])?;
    for (t, e) in &residuals.qq {
        wtr.write_record([t.to_string(), e.to_string()])?;
    }
    wtr.flush()?;

    let f = &artifact.fit;
    println!(
        "fit over {} lines ({} zero-count excluded): m {:.3}, beta_L {:.3}, beta_V {:.3}, \
         sigma1^2 {:.3}, sigma2^2 {:.3}, w {:.3}{}",
        f.n_fitted,
        artifact.excluded_line_ids.len(),
        f.m,
        f.beta_l,
        f.beta_v,
        f.sigma1_sq,
        f.sigma2_sq,
        f.w,
        if f.flat_direction_warning {
            " [flat-direction warning: components not separately identified]"
        } else {
            ""
        }
    );
    Ok(Outcome::Done)
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

pub fn cmd_sample(
    counts: &Path,
    lines: &Path,
    distances: &Path,
    fit: Option<&Path>,
    out: &Path,
    no_gate: bool,
    config: &RunConfig,
) -> Result<Outcome> {
    ensure_out(out)?;
    let cm = CountMatrix::read_csv_path(counts)?;
    let (table, covariates, kernels, sim) = build_world_from_files(lines, distances, config)?;
    check_alignment(&cm, &table)?;

    let init = match fit {
        Some(path) => {
            let artifact: FitArtifact = serde_json::from_reader(
                std::fs::File::open(path)
                    .with_context(|| format!("reading fit {}", path.display()))?,
            )?;
            Some(artifact.fit)
        }
        None => inference::prefit(&cm, &covariates, &kernels),
    };

    let spec = inference::build_model_spec(&cm, &covariates, sim, config.priors.clone())?;
    let chain_cfg = config
        .chains
        .to_chain_config(stage_seed(config.seed, "sample"));
    let samples = mcmc::run_chains(&spec, &chain_cfg, init.as_ref())?;
    samples.save(&out.join("samples.bin"))?;

    let sidecar = SamplesSidecar {
        schema_version: 1,
        build: env!("CARGO_PKG_VERSION").to_string(),
        seed: chain_cfg.seed,
        n_chains: chain_cfg.n_chains,
        n_iterations: chain_cfg.n_iterations,
        n_burnin: chain_cfg.n_burnin,
        accept_stats: samples.accept_stats.clone(),
        warnings: samples.warnings.clone(),
        model: spec.provenance(),
        created_unix_secs: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    write_json(&out.join("samples_meta.json"), &sidecar)?;

    let report = mcmc::convergence_report(&samples, &config.gate);
    write_json(&out.join("convergence.json"), &report)?;
    for warning in &samples.warnings {
        eprintln!("warning: {warning}");
    }
    println!(
        "sampled {} chains x {} retained draws over {} parameters; max rhat {:.4}, min ESS ratio {:.4} -> {}",
        samples.n_chains(),
        samples.n_retained(),
        samples.n_params(),
        report.max_rhat,
        report.min_ess_ratio,
        if report.pass { "converged" } else { "NOT CONVERGED" }
    );
    if !report.pass && !no_gate {
        eprintln!("convergence gate failed (rerun with --no-gate to keep going)");
        return Ok(Outcome::GateFailed);
    }
    Ok(Outcome::Done)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_report(
    samples_path: &Path,
    counts: &Path,
    out: &Path,
    line_id: Option<&str>,
    years: Option<&[usize]>,
    lines: Option<&Path>,
    distances: Option<&Path>,
    config: &RunConfig,
) -> Result<Outcome> {
    ensure_out(out)?;
    let samples = PosteriorSamples::load(samples_path)?;
    let cm = CountMatrix::read_csv_path(counts)?;
    if samples.n_lines != cm.n_lines() {
        bail!(
            "samples cover {} lines, counts {}",
            samples.n_lines,
            cm.n_lines()
        );
    }

    let estimates = inference::rate_estimates(&samples, config.credible_level)?;
    let conventional = inference::conventional(&cm);
    let conv_sds: Vec<(String, Option<f64>)> = conventional
        .iter()
        .map(|c| (c.line_id.clone(), c.sd))
        .collect();
    let ratios = inference::sd_ratio_report(&estimates, &conv_sds, cm.n_years() as f64)?;

    inference::write_estimates_csv(
        std::fs::File::create(out.join("estimates.csv"))?,
        &estimates,
        &conventional,
        &ratios,
    )?;
    let mut wtr = csv::Writer::from_writer(std::fs::File::create(out.join("sd_ratio_hist.csv"))?);
    wtr.write_record(["ratio", "density"])?;
    for (x, d) in &ratios.histogram {
        wtr.write_record([x.to_string(), d.to_string()])?;
    }
    wtr.flush()?;

    // Interval plot series, lines ordered by point estimate.
    let ordered = inference::ordered_rate_series(&estimates);
    let mut wtr = csv::Writer::from_writer(std::fs::File::create(out.join("rate_series.csv"))?);
    wtr.write_record(["rank", "line_id", "posterior_mean", "ci_low", "ci_high"])?;
    for (rank, est) in ordered.iter().enumerate() {
        wtr.write_record([
            rank.to_string(),
            est.line_id.clone(),
            est.posterior_mean.to_string(),
            est.ci_low.to_string(),
            est.ci_high.to_string(),
        ])?;
    }
    wtr.flush()?;

    println!(
        "median SD ratio (posterior/conventional) {:.3} over {} years -> equivalent {:.2} years; {} line(s) without a conventional SD",
        ratios.median_ratio, ratios.n_years, ratios.equivalent_years, ratios.n_excluded
    );

    if let (Some(line), Some(cutoffs)) = (line_id, years) {
        let (lines, distances) = match (lines, distances) {
            (Some(l), Some(d)) => (l, d),
            _ => bail!("trajectory runs need --lines and --distances"),
        };
        let (table, covariates, kernels, _) = build_world_from_files(lines, distances, config)?;
        check_alignment(&cm, &table)?;
        let chain_cfg = config
            .chains
            .to_chain_config(stage_seed(config.seed, "trajectory"));
        let traj = inference::trajectory(
            &cm,
            &covariates,
            &kernels,
            &config.priors,
            &chain_cfg,
            line,
            cutoffs,
        )?;
        let mut wtr =
            csv::Writer::from_writer(std::fs::File::create(out.join("trajectory.csv"))?);
        wtr.write_record(["cutoff_years", "lambda_hat", "posterior_sd", "mcse"])?;
        for p in &traj {
            wtr.write_record([
                p.cutoff_years.to_string(),
                p.lambda_hat.to_string(),
                p.posterior_sd.to_string(),
                p.mcse.to_string(),
            ])?;
        }
        wtr.flush()?;
        println!(
            "trajectory for {line}: {}",
            traj.iter()
                .map(|p| format!("{}y={:.3}", p.cutoff_years, p.lambda_hat))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    Ok(Outcome::Done)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Synthesize an event file in the ingest schema from an annual count matrix:
/// one forced two-hour outage per counted event, spread over distinct days.
fn write_records_csv(path: &Path, table: &LineTable, counts: &CountMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(std::fs::File::create(path)?);
    wtr.write_record(ingest::CSV_COLUMNS)?;
    for (i, line) in table.lines().iter().enumerate() {
        for (y_idx, &year) in counts.years().iter().enumerate() {
            let c = counts.count(i, y_idx) as usize;
            if c > 365 {
                bail!("cannot place {c} events in distinct days of one year");
            }
            for k in 0..c {
                let ordinal = 1 + (k * 331) % 365;
                let date = NaiveDate::from_yo_opt(year, ordinal as u32)
                    .expect("ordinal within year");
                let start = format!("{date}T08:00:00Z");
                let end = format!("{date}T10:00:00Z");
                let districts: Vec<&str> = line.districts.iter().map(|d| d.as_str()).collect();
                wtr.write_record([
                    line.line_id.as_str(),
                    line.from_bus.as_str(),
                    line.to_bus.as_str(),
                    &start,
                    &end,
                    "forced",
                    "synthetic",
                    &line.voltage_kv.to_string(),
                    &line.length_miles.to_string(),
                    &districts.join(";"),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn cmd_synth(
    lines: Option<&Path>,
    out: &Path,
    years: Option<usize>,
    records: bool,
    config: &RunConfig,
) -> Result<Outcome> {
    ensure_out(out)?;
    let table = match lines {
        Some(path) => ingest::read_line_table_path(path)?,
        None => synthetic::default_bundled_inventory(),
    };
    let world = synthetic::build_world(table, &config.kernel)?;
    let mut gen_cfg = config.generative.clone();
    if let Some(ny) = years {
        gen_cfg.n_years = ny;
    }
    gen_cfg.seed = stage_seed(config.seed, "synth");
    let dataset = synthetic::generate(&gen_cfg, &world.labels, &world.covariates, &world.kernels)?;
    synthetic::write_bundle(&dataset, out)?;
    ingest::write_line_table_path(&world.table, &out.join("line_table.csv"))?;
    if records {
        write_records_csv(&out.join("outages.csv"), &world.table, &dataset.counts)?;
    }
    println!(
        "generated {} lines x {} years (shared multiplier {:.3}); mean true rate {:.3}",
        dataset.counts.n_lines(),
        dataset.counts.n_years(),
        dataset.shared_g,
        dataset.truth.iter().sum::<f64>() / dataset.truth.len() as f64
    );
    Ok(Outcome::Done)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EvalArtifact {
    schema_version: u32,
    bayes: synthetic::EvalReport,
    conventional: synthetic::EvalReport,
}

pub fn cmd_eval(estimates: &Path, truth: &Path, out: &Path) -> Result<Outcome> {
    ensure_out(out)?;
    let truth_rows = synthetic::read_truth_csv(truth)?;
    let mut rdr = csv::Reader::from_reader(std::fs::File::open(estimates)?);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("estimates file lacks column {name}"))
    };
    let (c_id, c_mean, c_lo, c_hi, c_conv) = (
        col("line_id")?,
        col("posterior_mean")?,
        col("ci_low")?,
        col("ci_high")?,
        col("conventional_mean")?,
    );
    let mut bayes = Vec::new();
    let mut intervals = Vec::new();
    let mut conventional = Vec::new();
    for (row, truth_row) in rdr.records().zip(&truth_rows) {
        let rec = row?;
        if rec.get(c_id) != Some(truth_row.0.as_str()) {
            bail!(
                "line order mismatch between estimates and truth at {}",
                truth_row.0
            );
        }
        let parse = |idx: usize| -> Result<f64> {
            rec.get(idx)
                .unwrap_or("")
                .parse()
                .with_context(|| format!("bad number in estimates column {idx}"))
        };
        bayes.push(parse(c_mean)?);
        intervals.push((parse(c_lo)?, parse(c_hi)?));
        conventional.push(parse(c_conv)?);
    }
    if bayes.len() != truth_rows.len() {
        bail!("estimates and truth cover different line sets");
    }
    let truth_vals: Vec<f64> = truth_rows.iter().map(|(_, l)| *l).collect();
    let bayes_report = synthetic::evaluate(&bayes, Some(&intervals), &truth_vals)?;
    let conv_report = synthetic::evaluate(&conventional, None, &truth_vals)?;

    for (name, report) in [
        ("bayes_error_hist.csv", &bayes_report),
        ("conventional_error_hist.csv", &conv_report),
    ] {
        let mut wtr = csv::Writer::from_writer(std::fs::File::create(out.join(name))?);
        wtr.write_record(["error", "density"])?;
        for (x, d) in &report.histogram {
            wtr.write_record([x.to_string(), d.to_string()])?;
        }
        wtr.flush()?;
    }
    println!(
        "errors vs truth: posterior bias {:.4}, SD {:.4}, interval coverage {:.3}; conventional bias {:.4}, SD {:.4}",
        bayes_report.bias,
        bayes_report.error_sd,
        bayes_report.coverage.unwrap_or(f64::NAN),
        conv_report.bias,
        conv_report.error_sd
    );
    write_json(
        &out.join("evaluation.json"),
        &EvalArtifact {
            schema_version: 1,
            bayes: bayes_report,
            conventional: conv_report,
        },
    )?;
    Ok(Outcome::Done)
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

pub fn cmd_diagnose(
    samples_path: &Path,
    out: &Path,
    params: Option<&[String]>,
    max_lag: usize,
    export_csv: bool,
    config: &RunConfig,
) -> Result<Outcome> {
    ensure_out(out)?;
    let samples = PosteriorSamples::load(samples_path)?;
    let report = mcmc::convergence_report(&samples, &config.gate);
    write_json(&out.join("convergence.json"), &report)?;
    if export_csv {
        samples.export_csv(std::fs::File::create(out.join("samples.csv"))?)?;
    }

    let selected: Vec<String> = match params {
        Some(list) => list.to_vec(),
        None => mcmc::SCALAR_PARAMS.iter().map(|s| s.to_string()).collect(),
    };
    let mut indices = Vec::new();
    for name in &selected {
        let idx = samples
            .param_index(name)
            .with_context(|| format!("unknown parameter '{name}'"))?;
        indices.push(idx);
    }

    let mut wtr = csv::Writer::from_writer(std::fs::File::create(out.join("traces.csv"))?);
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(selected.iter().cloned());
    wtr.write_record(&header)?;
    for c in 0..samples.n_chains() {
        for d in 0..samples.n_retained() {
            let mut rec = vec![c.to_string(), d.to_string()];
            rec.extend(indices.iter().map(|&p| samples.trace(c, p)[d].to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;

    let mut wtr = csv::Writer::from_writer(std::fs::File::create(out.join("acf.csv"))?);
    wtr.write_record(["parameter", "chain", "lag", "acf"])?;
    for (name, &p) in selected.iter().zip(&indices) {
        for c in 0..samples.n_chains() {
            let trace = samples.trace(c, p);
            let lags = max_lag.min(trace.len().saturating_sub(1));
            if let Ok(rho) = mcmc::acf(trace, lags) {
                for (lag, value) in rho.iter().enumerate() {
                    wtr.write_record([
                        name.clone(),
                        c.to_string(),
                        lag.to_string(),
                        value.to_string(),
                    ])?;
                }
            }
        }
    }
    wtr.flush()?;

    println!(
        "{} parameters checked ({} constant skipped): max rhat {:.4}, min ESS ratio {:.4} -> {}",
        report.n_checked,
        report.n_skipped_constant,
        report.max_rhat,
        report.min_ess_ratio,
        if report.pass { "pass" } else { "FAIL" }
    );
    for p in report.worst.iter().take(5) {
        println!(
            "  {}: rhat {:.4}, ESS {:.0} ({:.4} of draws)",
            p.name, p.rhat, p.ess, p.ess_ratio
        );
    }
    Ok(Outcome::Done)
}
