//! Command-line driver for the expfam predictors and rate experiments.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use expfam::bayes::QuadratureGrid;
use expfam::family::{parse_family_spec, FiniteExpFamily};
use expfam::fit;
use expfam::harness::{
    self, ConvergenceSeries, PredictorSpec, RateKind, ReportFormat, SequenceSpec,
};

#[derive(Parser)]
#[command(
    name = "expfam",
    about = "Sequential predictors on finite exponential families: ML, SNML, weighted SNML, \
             Bayesian, and their convergence-rate experiments",
    long_about = None,
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Family spec: `bernoulli` | `categorical:K` | `custom:<path to JSON>`
    #[arg(long)]
    family: String,
    /// Sequence spec: `iid:theta=<v,...>:seed=<n>` | `periodic:<symbols>` | `file:<path>`
    #[arg(long)]
    seq: String,
    /// Gauss-Legendre nodes per axis for quadrature-backed predictors
    #[arg(long, default_value_t = 200)]
    nodes: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Print one predictive distribution as JSON.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Predictor: `ml` | `snml` | `snml-expansion` | `wsnml[:prior]` |
        /// `mixture[:prior]` | `expansion[:prior]` | `bayes[-exact][:prior]` |
        /// `bayes-quad[:prior]`.
        /// wsnml weights candidates by the squared density of the prior
        /// w.r.t. Jeffreys, the weight the mixture construction calls for.
        #[arg(long)]
        predictor: String,
        /// Default prior when the predictor spec does not name one:
        /// `jeffreys` | `uniform` | `beta:a,b` | `dirichlet:a1,...`
        #[arg(long)]
        prior: Option<String>,
        /// Condition on the first t symbols.
        #[arg(long)]
        t: u64,
    },
    /// Pairwise sup-distance series between predictors over a time grid.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated predictor specs (at least two).
        #[arg(long)]
        predictors: String,
        #[arg(long)]
        prior: Option<String>,
        /// Time grid: `dyadic:<lo>..<hi>` or `t1,t2,...`
        #[arg(long = "t-grid", default_value = "dyadic:4..12")]
        t_grid: String,
        #[arg(long)]
        out: PathBuf,
        /// csv | json
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Cumulative log-loss regret of a predictor against the hindsight
    /// ML plug-in; written as JSON.
    Regret {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        predictor: String,
        #[arg(long)]
        prior: Option<String>,
        /// Sequence length.
        #[arg(long = "T")]
        t_total: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior-center shift residual series ||measured - V/t|| under
    /// the Jeffreys prior.
    Shift {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "t-grid", default_value = "dyadic:4..12")]
        t_grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Named discrepancy series that are not predictor pairs:
    /// `ml-update` | `snml-z` | `posterior-mean:<f>:<prior>` | `shift` | `shift-coord`.
    Rates {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        kind: String,
        #[arg(long = "t-grid", default_value = "dyadic:4..12")]
        t_grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

fn load_inputs(common: &CommonArgs, length: usize) -> Result<(FiniteExpFamily, Vec<usize>)> {
    let family = parse_family_spec(&common.family)
        .with_context(|| format!("parsing --family {}", common.family))?;
    let spec = SequenceSpec::parse(&common.seq, length)
        .with_context(|| format!("parsing --seq {}", common.seq))?;
    let seq = harness::generate(&family, &spec).context("generating the sequence")?;
    Ok((family, seq))
}

fn parse_prior_arg(prior: &Option<String>) -> Result<Option<expfam::bayes::Prior>> {
    Ok(match prior {
        Some(p) => Some(expfam::bayes::Prior::parse(p)?),
        None => None,
    })
}

fn write_series(label: String, series: ConvergenceSeries, format: &str, out: &Path) -> Result<()> {
    let format = ReportFormat::parse(format)?;
    harness::emit_report(&[(label, series)], format, out)?;
    Ok(())
}

fn summarize_series(series: &ConvergenceSeries) -> String {
    match (series.slope(), series.r2()) {
        (Some(s), Some(r)) => format!(
            "{} points, slope {s:.4}, r2 {r:.4}{}",
            series.points.len(),
            if series.skipped_t.is_empty() {
                String::new()
            } else {
                format!(", skipped {:?}", series.skipped_t)
            }
        ),
        _ => format!("{} points, unfittable (floor rule)", series.points.len()),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Predict {
            common,
            predictor,
            prior,
            t,
        } => {
            let (family, seq) = load_inputs(&common, t as usize)?;
            if seq.len() < t as usize {
                bail!("sequence shorter than --t");
            }
            let default_prior = parse_prior_arg(&prior)?;
            let spec = PredictorSpec::parse(&predictor, default_prior.as_ref())?;
            let summary = fit::summarize(&family, &seq[..t as usize])?;
            let dist = spec.predict(&family, &summary, &QuadratureGrid::new(common.nodes))?;
            println!("{}", serde_json::to_string_pretty(&dist)?);
        }
        Command::Compare {
            common,
            predictors,
            prior,
            t_grid,
            out,
            format,
        } => {
            let grid = harness::parse_t_grid(&t_grid)?;
            let (family, seq) = load_inputs(&common, *grid.last().unwrap() as usize)?;
            let default_prior = parse_prior_arg(&prior)?;
            let specs: Vec<PredictorSpec> = predictors
                .split(',')
                .map(|s| PredictorSpec::parse(s.trim(), default_prior.as_ref()))
                .collect::<expfam::Result<_>>()?;
            let pairs = harness::run_comparison(
                &family,
                &seq,
                &specs,
                &grid,
                &QuadratureGrid::new(common.nodes),
            )?;
            let labeled: Vec<(String, ConvergenceSeries)> = pairs
                .into_iter()
                .map(|p| (format!("{} vs {}", p.a, p.b), p.series))
                .collect();
            for (label, series) in &labeled {
                println!("{label}: {}", summarize_series(series));
            }
            harness::emit_report(&labeled, ReportFormat::parse(&format)?, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Regret {
            common,
            predictor,
            prior,
            t_total,
            out,
        } => {
            let (family, seq) = load_inputs(&common, t_total as usize)?;
            let default_prior = parse_prior_arg(&prior)?;
            let spec = PredictorSpec::parse(&predictor, default_prior.as_ref())?;
            let record = harness::regret(&family, &seq, &spec, &QuadratureGrid::new(common.nodes))?;
            println!(
                "{}: loss {:.6}, hindsight {:.6}, regret {:.6}",
                record.predictor, record.cumulative_loss, record.hindsight_loss, record.regret
            );
            std::fs::write(&out, serde_json::to_string_pretty(&record)?)?;
            println!("wrote {}", out.display());
        }
        Command::Shift {
            common,
            t_grid,
            out,
            format,
        } => {
            let grid = harness::parse_t_grid(&t_grid)?;
            let (family, seq) = load_inputs(&common, *grid.last().unwrap() as usize)?;
            let series = harness::rate_series(
                &family,
                &seq,
                &RateKind::ShiftResidual,
                &grid,
                &QuadratureGrid::new(common.nodes),
            )?;
            println!("shift: {}", summarize_series(&series));
            write_series("shift".into(), series, &format, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Rates {
            common,
            kind,
            t_grid,
            out,
            format,
        } => {
            let grid = harness::parse_t_grid(&t_grid)?;
            let rate = RateKind::parse(&kind)?;
            let needs_next = matches!(rate, RateKind::MlUpdateStep);
            let length = *grid.last().unwrap() as usize + usize::from(needs_next);
            let (family, seq) = load_inputs(&common, length)?;
            let series = harness::rate_series(
                &family,
                &seq,
                &rate,
                &grid,
                &QuadratureGrid::new(common.nodes),
            )?;
            println!("{}: {}", rate.name(), summarize_series(&series));
            write_series(rate.name(), series, &format, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
