//! File formats: quote tables, market context, cleaning reports, plot data
//! and price series.
//!
//! Quote tables are delimited UTF-8 text with the header
//! `type,strike,maturity_days,price,open_interest` (columns may appear in any
//! order). Data rows are numbered from 0 in file order and that number
//! becomes the quote id.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    validate_quote, CleaningConfig, MarketContext, ModelError, OptionQuote, OptionType,
    RemovalDetail, RemovalRecord, Stage,
};
use crate::outlier_detector::{GroupDiagnostics, SkippedGroup};
use crate::pipeline::{CleaningReport, StageTotals, TypeCounts};

pub const QUOTE_COLUMNS: [&str; 5] = ["type", "strike", "maturity_days", "price", "open_interest"];
pub const PLOT_COLUMNS: [&str; 5] = ["strike", "price", "fitted", "residual", "c_hat"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(&'static str),
    #[error("line {line}, column `{column}`: {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },
    #[error("{} invalid row(s); first at line {}: {}", .rows.len(), .rows[0].line, .rows[0].message)]
    Validation { rows: Vec<RowError> },
    #[error("market context: {0}")]
    Context(#[source] ModelError),
    #[error(transparent)]
    Returns(#[from] LogReturnError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A rejected data row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub column: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InvalidRows {
    #[default]
    FailFast,
    /// Skip bad rows and list them in [`QuoteTable::rejected`].
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    pub delimiter: u8,
    pub invalid_rows: InvalidRows,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            invalid_rows: InvalidRows::FailFast,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuoteTable {
    pub quotes: Vec<OptionQuote>,
    pub rejected: Vec<RowError>,
}

pub fn read_quotes(path: &Path, opts: &ReadOptions) -> Result<QuoteTable, IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_quotes_from(file, opts)
}

enum RowFailure {
    Parse(RowError),
    Invalid(RowError),
}

pub fn read_quotes_from<R: Read>(reader: R, opts: &ReadOptions) -> Result<QuoteTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; 5];
    for (slot, name) in index.iter_mut().zip(QUOTE_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or(IngestError::MissingColumn(name))?;
    }

    let mut table = QuoteTable::default();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(row_no as u64 + 2, |p| p.line());
        match parse_row(&record, &index, row_no, line) {
            Ok(q) => table.quotes.push(q),
            Err(fail) => match (opts.invalid_rows, fail) {
                (InvalidRows::Skip, RowFailure::Parse(e) | RowFailure::Invalid(e)) => {
                    table.rejected.push(e)
                }
                (InvalidRows::FailFast, RowFailure::Parse(e)) => {
                    return Err(IngestError::Parse {
                        line: e.line,
                        column: e.column.unwrap_or_default(),
                        message: e.message,
                    })
                }
                (InvalidRows::FailFast, RowFailure::Invalid(e)) => {
                    return Err(IngestError::Validation { rows: vec![e] })
                }
            },
        }
    }
    Ok(table)
}

fn parse_row(
    record: &csv::StringRecord,
    index: &[usize; 5],
    row_no: usize,
    line: u64,
) -> Result<OptionQuote, RowFailure> {
    let field = |i: usize| -> Result<&str, RowFailure> {
        record.get(index[i]).ok_or_else(|| {
            RowFailure::Parse(RowError {
                line,
                column: Some(QUOTE_COLUMNS[i].to_string()),
                message: format!("row has {} fields", record.len()),
            })
        })
    };
    let parse_err = |i: usize, raw: &str, what: &str| {
        RowFailure::Parse(RowError {
            line,
            column: Some(QUOTE_COLUMNS[i].to_string()),
            message: format!("cannot parse `{raw}` as {what}"),
        })
    };
    let invalid = |column: &str, e: ModelError| {
        RowFailure::Invalid(RowError {
            line,
            column: Some(column.to_string()),
            message: e.to_string(),
        })
    };

    let raw = field(0)?;
    let option_type: OptionType = raw.parse().map_err(|_| parse_err(0, raw, "option type"))?;
    let raw = field(1)?;
    let strike: f64 = raw.parse().map_err(|_| parse_err(1, raw, "number"))?;
    let raw = field(2)?;
    let days: i64 = raw.parse().map_err(|_| parse_err(2, raw, "integer"))?;
    let raw = field(3)?;
    let price: f64 = raw.parse().map_err(|_| parse_err(3, raw, "number"))?;
    let raw = field(4)?;
    let oi: i128 = raw.parse().map_err(|_| parse_err(4, raw, "integer"))?;

    let maturity_days = match days {
        d if d < 0 => {
            return Err(invalid(
                "maturity_days",
                ModelError::NegativeField {
                    field: "maturity_days",
                    value: d as f64,
                },
            ))
        }
        0 => return Err(invalid("maturity_days", ModelError::ZeroMaturity)),
        d => u32::try_from(d).map_err(|_| parse_err(2, &d.to_string(), "day count below 2^32"))?,
    };
    let open_interest = match oi {
        o if o < 0 => {
            return Err(invalid(
                "open_interest",
                ModelError::NegativeField {
                    field: "open_interest",
                    value: o as f64,
                },
            ))
        }
        o => u64::try_from(o).map_err(|_| parse_err(4, raw, "integer below 2^64"))?,
    };

    validate_quote(OptionQuote {
        id: row_no,
        option_type,
        strike,
        maturity_days,
        price,
        open_interest,
    })
    .map_err(|e| {
        let column = match &e {
            ModelError::NegativeField { field, .. } | ModelError::NonFinite { field } => *field,
            _ => "",
        };
        invalid(column, e)
    })
}

/// Writes quotes in the canonical schema, re-readable by [`read_quotes`].
pub fn write_clean(path: &Path, quotes: &[OptionQuote], delimiter: u8) -> Result<(), IngestError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_clean_to(BufWriter::new(file), quotes, delimiter)
}

pub fn write_clean_to<W: Write>(
    writer: W,
    quotes: &[OptionQuote],
    delimiter: u8,
) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    w.write_record(QUOTE_COLUMNS)?;
    for q in quotes {
        w.write_record([
            q.option_type.as_str().to_string(),
            q.strike.to_string(),
            q.maturity_days.to_string(),
            q.price.to_string(),
            q.open_interest.to_string(),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RemovalEntry<'a> {
    id: usize,
    option_type: OptionType,
    stage: Stage,
    reason: String,
    diagnostics: &'a RemovalDetail,
}

#[derive(Debug, Serialize)]
struct ReportDocument<'a> {
    config: &'a CleaningConfig,
    market: Option<&'a MarketContext>,
    per_type_counts: &'a std::collections::BTreeMap<OptionType, TypeCounts>,
    stage_counts: &'a std::collections::BTreeMap<Stage, StageTotals>,
    skipped_groups: &'a [SkippedGroup],
    removals: Vec<RemovalEntry<'a>>,
}

/// The report as a JSON value with fields `config`, `market`,
/// `per_type_counts`, `stage_counts`, `skipped_groups` and `removals`.
pub fn report_json(report: &CleaningReport, removals: &[RemovalRecord]) -> serde_json::Value {
    let doc = ReportDocument {
        config: &report.config,
        market: report.market.as_ref(),
        per_type_counts: &report.per_type_counts,
        stage_counts: &report.stage_counts,
        skipped_groups: &report.skipped_groups,
        removals: removals
            .iter()
            .map(|r| RemovalEntry {
                id: r.quote_id,
                option_type: r.option_type,
                stage: r.stage(),
                reason: r.detail.reason(),
                diagnostics: &r.detail,
            })
            .collect(),
    };
    serde_json::to_value(doc).expect("report serializes")
}

pub fn write_report(
    path: &Path,
    report: &CleaningReport,
    removals: &[RemovalRecord],
) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(&report_json(report, removals))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// File name used for a group's plot data, e.g. `call_160d.csv`.
pub fn plot_file_name(diag: &GroupDiagnostics) -> String {
    format!("{}_{}d.csv", diag.option_type, diag.maturity_days)
}

pub fn write_plot_data_to<W: Write>(writer: W, diag: &GroupDiagnostics) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PLOT_COLUMNS)?;
    for p in &diag.points {
        w.write_record([
            p.strike.to_string(),
            p.price.to_string(),
            p.fitted.to_string(),
            p.residual.to_string(),
            diag.c_hat.to_string(),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

/// One file per processed group under `dir`. Returns the written paths.
pub fn write_plot_data<'a>(
    dir: &Path,
    groups: impl IntoIterator<Item = &'a GroupDiagnostics>,
) -> Result<Vec<PathBuf>, IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for diag in groups {
        let path = dir.join(plot_file_name(diag));
        let file = File::create(&path).map_err(io_err(&path))?;
        write_plot_data_to(BufWriter::new(file), diag)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a JSON market context: `{"spot": 1353.39, "rate": 0.0015}`; an
/// optional `dividend_yield` must be 0.
pub fn read_market_context(path: &Path) -> Result<MarketContext, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let ctx: MarketContext = serde_json::from_str(&text)?;
    ctx.validated().map_err(IngestError::Context)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogReturnError {
    #[error("price at position {index} is not positive: {value}")]
    NonPositivePrice { index: usize, value: f64 },
    #[error("need at least two prices, got {0}")]
    TooShort(usize),
}

/// `ln(P_t / P_{t−1})` for consecutive prices.
pub fn compute_log_returns(prices: &[f64]) -> Result<Vec<f64>, LogReturnError> {
    if prices.len() < 2 {
        return Err(LogReturnError::TooShort(prices.len()));
    }
    if let Some((index, &value)) = prices
        .iter()
        .enumerate()
        .find(|(_, p)| !(p.is_finite() && **p > 0.0))
    {
        return Err(LogReturnError::NonPositivePrice { index, value });
    }
    Ok(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// A time-ordered price history, optionally labelled by date.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceSeries {
    pub dates: Option<Vec<String>>,
    pub prices: Vec<f64>,
}

/// Reads a price history with a `price` (or `close`) column and an optional
/// `date` column.
pub fn read_price_series(path: &Path, delimiter: u8) -> Result<PriceSeries, IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let price_col = find("price")
        .or_else(|| find("close"))
        .ok_or(IngestError::MissingColumn("price"))?;
    let date_col = find("date");

    let mut series = PriceSeries {
        dates: date_col.map(|_| Vec::new()),
        prices: Vec::new(),
    };
    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(row_no as u64 + 2, |p| p.line());
        let raw = record.get(price_col).unwrap_or("");
        let price: f64 = raw.parse().map_err(|_| IngestError::Parse {
            line,
            column: headers[price_col].to_string(),
            message: format!("cannot parse `{raw}` as number"),
        })?;
        series.prices.push(price);
        if let (Some(dates), Some(col)) = (series.dates.as_mut(), date_col) {
            dates.push(record.get(col).unwrap_or("").to_string());
        }
    }
    Ok(series)
}

/// Writes `date,log_return` (dated series) or `log_return` rows; each return
/// is labelled with the date of its later observation.
pub fn write_returns(path: &Path, series: &PriceSeries, returns: &[f64]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    match &series.dates {
        Some(dates) => {
            w.write_record(["date", "log_return"])?;
            for (d, r) in dates.iter().skip(1).zip(returns) {
                w.write_record([d.clone(), r.to_string()])?;
            }
        }
        None => {
            w.write_record(["log_return"])?;
            for r in returns {
                w.write_record([r.to_string()])?;
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
