mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "linerates",
    version,
    about = "Bayesian estimation of per-line transmission outage rates from sparse outage records"
)]
struct Cli {
    /// Configuration file (TOML or JSON); omitted fields use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; overrides the config file. Every stage derives its own
    /// stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter, and deduplicate an outage event file into the annual
    /// count matrix and the line attribute table.
    Ingest {
        /// Outage events CSV (see README for the schema).
        #[arg(long)]
        input: PathBuf,
        /// Optional full line inventory; lines absent from the events get
        /// explicit zero-count rows.
        #[arg(long)]
        inventory: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the grid graph from a line table and export midpoint distances.
    Network {
        #[arg(long)]
        lines: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the correlated-intercept regression on log count rates.
    Fit {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        lines: PathBuf,
        /// Distance matrix produced by `network` (distances.bin).
        #[arg(long)]
        distances: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also export the kernels and the diagonalizing basis (binary
        /// containers plus CSV).
        #[arg(long)]
        emit_kernels: bool,
    },
    /// Sample the posterior and evaluate the convergence gate.
    Sample {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        lines: PathBuf,
        #[arg(long)]
        distances: PathBuf,
        /// Empirical fit artifact for chain initialization (empirical_fit.json).
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep exit code 0 even when the convergence gate fails.
        #[arg(long)]
        no_gate: bool,
    },
    /// Summarize posterior samples: rate estimates, credible intervals, and
    /// the comparison against the count-per-year estimator.
    Report {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Line to re-estimate on cumulative data prefixes (needs --years,
        /// --lines, and --distances).
        #[arg(long)]
        line_id: Option<String>,
        /// Cumulative-year cutoffs for the trajectory, e.g. 1,7,14.
        #[arg(long, value_delimiter = ',')]
        years: Option<Vec<usize>>,
        #[arg(long)]
        lines: Option<PathBuf>,
        #[arg(long)]
        distances: Option<PathBuf>,
    },
    /// Generate a synthetic dataset bundle with known true rates.
    Synth {
        /// Line table to generate for; the built-in 500-line inventory is
        /// used when omitted.
        #[arg(long)]
        lines: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of observation years (overrides the config).
        #[arg(long)]
        years: Option<usize>,
        /// Also synthesize an outage event file in the ingest schema.
        #[arg(long)]
        records: bool,
    },
    /// Compare estimates against known true rates.
    Eval {
        /// estimates.csv from `report`.
        #[arg(long)]
        estimates: PathBuf,
        /// truth.csv from `synth`.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence diagnostics, traces, and autocorrelations for a samples
    /// file.
    Diagnose {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parameters to export (default: the six hyperparameters).
        #[arg(long, value_delimiter = ',')]
        params: Option<Vec<String>>,
        #[arg(long, default_value_t = 40)]
        max_lag: usize,
        /// Also export every retained draw as CSV.
        #[arg(long)]
        export_csv: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match &cli.command {
        Command::Ingest {
            input,
            inventory,
            out,
        } => commands::cmd_ingest(input, inventory.as_deref(), out, &config),
        Command::Network { lines, out } => commands::cmd_network(lines, out),
        Command::Fit {
            counts,
            lines,
            distances,
            out,
            emit_kernels,
        } => commands::cmd_fit(counts, lines, distances, out, *emit_kernels, &config),
        Command::Sample {
            counts,
            lines,
            distances,
            fit,
            out,
            no_gate,
        } => commands::cmd_sample(counts, lines, distances, fit.as_deref(), out, *no_gate, &config),
        Command::Report {
            samples,
            counts,
            out,
            line_id,
            years,
            lines,
            distances,
        } => commands::cmd_report(
            samples,
            counts,
            out,
            line_id.as_deref(),
            years.as_deref(),
            lines.as_deref(),
            distances.as_deref(),
            &config,
        ),
        Command::Synth {
            lines,
            out,
            years,
            records,
        } => commands::cmd_synth(lines.as_deref(), out, *years, *records, &config),
        Command::Eval {
            estimates,
            truth,
            out,
        } => commands::cmd_eval(estimates, truth, out),
        Command::Diagnose {
            samples,
            out,
            params,
            max_lag,
            export_csv,
        } => commands::cmd_diagnose(
            samples,
            out,
            params.as_deref(),
            *max_lag,
            *export_csv,
            &config,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::GateFailed) => ExitCode::from(3),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
