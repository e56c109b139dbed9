//! `optclean`: batch cleaning of recorded European option quotes.
//!
//! Exit status: 0 on success, 1 when the input fails validation or cannot be
//! processed, 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use optclean::ingest::{self, IngestError, InvalidRows, ReadOptions};
use optclean::model::{
    CleaningConfig, MarketContext, OptionQuote, DEFAULT_ALPHA, DEFAULT_DAY_COUNT,
    DEFAULT_MIN_GROUP_SIZE, DEFAULT_POLY_DEGREE,
};
use optclean::pipeline::{self, CleaningOutcome, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "optclean", version, about = "Clean recorded European option price datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full pipeline: arbitrage bounds, smile outliers, duplicates
    Clean {
        #[command(flatten)]
        io: QuoteIo,
        #[command(flatten)]
        market: MarketArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        days: DayCount,
    },
    /// No-arbitrage bound filter only
    Bounds {
        #[command(flatten)]
        io: QuoteIo,
        #[command(flatten)]
        market: MarketArgs,
        #[command(flatten)]
        days: DayCount,
    },
    /// Smile-regression outlier removal only
    Outliers {
        #[command(flatten)]
        io: QuoteIo,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Duplicate resolution only
    Dedup {
        #[command(flatten)]
        io: QuoteIo,
    },
    /// Log-returns of a price history (`price` or `close` column, optional `date`)
    Returns {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
    },
}

#[derive(Debug, Args)]
struct QuoteIo {
    /// Quote table with header type,strike,maturity_days,price,open_interest
    #[arg(long)]
    input: PathBuf,
    /// Where to write the kept quotes (same schema as the input)
    #[arg(long)]
    output: PathBuf,
    /// JSON report with counts and every removal
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Skip malformed rows instead of failing
    #[arg(long)]
    skip_invalid: bool,
}

#[derive(Debug, Args)]
struct MarketArgs {
    /// Spot price of the underlying
    #[arg(long, required_unless_present = "context", value_parser = positive_f64)]
    spot: Option<f64>,
    /// Continuously compounded annual risk-free rate, e.g. 0.0015
    #[arg(long, required_unless_present = "context", allow_hyphen_values = true)]
    rate: Option<f64>,
    /// JSON file with `spot` and `rate` instead of the two flags
    #[arg(long, conflicts_with_all = ["spot", "rate"])]
    context: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Probability that a clean group has at least one flagged quote
    #[arg(long, default_value_t = DEFAULT_ALPHA, value_parser = probability)]
    alpha: f64,
    /// Smallest maturity group that gets a smile fit
    #[arg(long, default_value_t = DEFAULT_MIN_GROUP_SIZE, value_parser = group_size)]
    min_group_size: usize,
    /// Directory for per-group plot data (strike, price, fitted, residual, c_hat)
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

impl Default for FitArgs {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            plot_data: None,
        }
    }
}

#[derive(Debug, Args)]
struct DayCount {
    /// Days per year used to annualise maturities
    #[arg(long, default_value_t = DEFAULT_DAY_COUNT, value_parser = positive_f64)]
    day_count: f64,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("expected a positive number, got {s}"))
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("expected a value in (0, 1), got {s}"))
    }
}

fn group_size(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    let min = DEFAULT_POLY_DEGREE + 2;
    if v >= min {
        Ok(v)
    } else {
        Err(format!("must be at least {min}"))
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("delimiter must be a single ASCII character, got `{0}`")]
    Delimiter(char),
}

fn delimiter_byte(c: char) -> Result<u8, CliError> {
    if c.is_ascii() {
        Ok(c as u8)
    } else {
        Err(CliError::Delimiter(c))
    }
}

fn config(fit: &FitArgs, day_count: f64) -> CleaningConfig {
    CleaningConfig {
        alpha: fit.alpha,
        poly_degree: DEFAULT_POLY_DEGREE,
        min_group_size: fit.min_group_size,
        day_count,
    }
}

fn market(args: &MarketArgs) -> Result<MarketContext, CliError> {
    match (&args.context, args.spot, args.rate) {
        (Some(path), _, _) => Ok(ingest::read_market_context(path)?),
        (None, Some(spot), Some(rate)) => {
            Ok(MarketContext::new(spot, rate).map_err(PipelineError::from)?)
        }
        _ => unreachable!("clap enforces --spot/--rate or --context"),
    }
}

fn read_input(io: &QuoteIo) -> Result<Vec<OptionQuote>, CliError> {
    let opts = ReadOptions {
        delimiter: delimiter_byte(io.delimiter)?,
        invalid_rows: if io.skip_invalid {
            InvalidRows::Skip
        } else {
            InvalidRows::FailFast
        },
    };
    let table = ingest::read_quotes(&io.input, &opts)?;
    for r in &table.rejected {
        log::warn!(
            "{}: skipped line {} ({}): {}",
            io.input.display(),
            r.line,
            r.column.as_deref().unwrap_or("-"),
            r.message
        );
    }
    Ok(table.quotes)
}

fn write_outputs(io: &QuoteIo, outcome: &CleaningOutcome, plot_dir: Option<&Path>) -> Result<(), CliError> {
    ingest::write_clean(&io.output, &outcome.clean, delimiter_byte(io.delimiter)?)?;
    if let Some(path) = &io.report {
        ingest::write_report(path, &outcome.report, &outcome.removals)?;
    }
    if let Some(dir) = plot_dir {
        ingest::write_plot_data(dir, outcome.diagnostics())?;
    }
    for line in outcome.report.summary_lines() {
        println!("{line}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Clean { io, market: m, fit, days } => {
            let ctx = market(&m)?;
            let quotes = read_input(&io)?;
            let outcome = pipeline::run_pipeline(&quotes, &ctx, &config(&fit, days.day_count))?;
            write_outputs(&io, &outcome, fit.plot_data.as_deref())
        }
        Command::Bounds { io, market: m, days } => {
            let ctx = market(&m)?;
            let quotes = read_input(&io)?;
            let cfg = config(&FitArgs::default(), days.day_count);
            let outcome = pipeline::run_bounds(&quotes, &ctx, &cfg)?;
            write_outputs(&io, &outcome, None)
        }
        Command::Outliers { io, fit } => {
            let quotes = read_input(&io)?;
            let outcome = pipeline::run_outliers(&quotes, &config(&fit, DEFAULT_DAY_COUNT))?;
            write_outputs(&io, &outcome, fit.plot_data.as_deref())
        }
        Command::Dedup { io } => {
            let quotes = read_input(&io)?;
            let cfg = config(&FitArgs::default(), DEFAULT_DAY_COUNT);
            let outcome = pipeline::run_dedup(&quotes, &cfg)?;
            write_outputs(&io, &outcome, None)
        }
        Command::Returns {
            input,
            output,
            delimiter,
        } => {
            let series = ingest::read_price_series(&input, delimiter_byte(delimiter)?)?;
            let returns =
                ingest::compute_log_returns(&series.prices).map_err(IngestError::from)?;
            ingest::write_returns(&output, &series, &returns)?;
            println!("{} log-returns written to {}", returns.len(), output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Delimiter(c)) => {
            eprintln!("error: delimiter must be a single ASCII character, got `{c}`");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
