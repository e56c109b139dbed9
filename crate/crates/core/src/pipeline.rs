//! Orchestration of the three cleaning stages and removal accounting.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbitrage_filter::filter_arbitrage;
use crate::dedup::remove_duplicates;
use crate::model::{
    validate_quote, CleaningConfig, MarketContext, ModelError, OptionQuote, OptionType,
    RemovalRecord, Stage,
};
use crate::outlier_detector::{remove_outliers, GroupDiagnostics, GroupOutcome, SkippedGroup};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("quote {id}: {source}")]
    InvalidQuote {
        id: usize,
        #[source]
        source: ModelError,
    },
    #[error("quote id {0} occurs more than once")]
    DuplicateId(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Flow through one stage for one option type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageFlow {
    pub stage: Stage,
    pub input_count: usize,
    pub removed_count: usize,
    pub output_count: usize,
    pub removed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub input_count: usize,
    pub removed_count: usize,
    pub output_count: usize,
    pub removed_fraction: f64,
    pub stages: Vec<StageFlow>,
}

impl TypeCounts {
    /// Builds the stage-by-stage flow from an input count and the number of
    /// removals at each stage, in stage order.
    pub fn from_removals(input_count: usize, removed_by_stage: &[(Stage, usize)]) -> Self {
        let mut remaining = input_count;
        let mut stages = Vec::with_capacity(removed_by_stage.len());
        for &(stage, removed) in removed_by_stage {
            assert!(removed <= remaining, "more removals than quotes at {stage:?}");
            stages.push(StageFlow {
                stage,
                input_count: remaining,
                removed_count: removed,
                output_count: remaining - removed,
                removed_fraction: fraction(removed, remaining),
            });
            remaining -= removed;
        }
        let removed_count = input_count - remaining;
        Self {
            input_count,
            removed_count,
            output_count: remaining,
            removed_fraction: fraction(removed_count, input_count),
            stages,
        }
    }

    pub fn removed_percent(&self) -> f64 {
        100.0 * self.removed_fraction
    }
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTotals {
    pub call: usize,
    pub put: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub config: CleaningConfig,
    pub market: Option<MarketContext>,
    pub per_type_counts: BTreeMap<OptionType, TypeCounts>,
    pub stage_counts: BTreeMap<Stage, StageTotals>,
    pub skipped_groups: Vec<SkippedGroup>,
}

impl CleaningReport {
    pub fn new(
        config: CleaningConfig,
        market: Option<MarketContext>,
        input: &[OptionQuote],
        removals: &[RemovalRecord],
        skipped_groups: Vec<SkippedGroup>,
    ) -> Self {
        let mut per_type_counts = BTreeMap::new();
        let mut stage_counts: BTreeMap<Stage, StageTotals> =
            Stage::ALL.iter().map(|&s| (s, StageTotals::default())).collect();
        for t in OptionType::ALL {
            let input_count = input.iter().filter(|q| q.option_type == t).count();
            let by_stage: Vec<(Stage, usize)> = Stage::ALL
                .iter()
                .map(|&s| {
                    let n = removals
                        .iter()
                        .filter(|r| r.option_type == t && r.stage() == s)
                        .count();
                    (s, n)
                })
                .collect();
            for &(s, n) in &by_stage {
                let totals = stage_counts.get_mut(&s).expect("all stages present");
                match t {
                    OptionType::Call => totals.call += n,
                    OptionType::Put => totals.put += n,
                }
                totals.total += n;
            }
            per_type_counts.insert(t, TypeCounts::from_removals(input_count, &by_stage));
        }
        Self {
            config,
            market,
            per_type_counts,
            stage_counts,
            skipped_groups,
        }
    }

    pub fn counts(&self, t: OptionType) -> &TypeCounts {
        &self.per_type_counts[&t]
    }

    /// One line per option type, e.g. `call: 576 in, 146 removed (25%), 430 out`.
    pub fn summary_lines(&self) -> Vec<String> {
        self.per_type_counts
            .iter()
            .map(|(t, c)| {
                format!(
                    "{t}: {} in, {} removed ({:.0}%), {} out",
                    c.input_count,
                    c.removed_count,
                    c.removed_percent(),
                    c.output_count
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleaningOutcome {
    pub clean: Vec<OptionQuote>,
    pub report: CleaningReport,
    pub removals: Vec<RemovalRecord>,
    pub groups: Vec<GroupOutcome>,
}

impl CleaningOutcome {
    pub fn diagnostics(&self) -> impl Iterator<Item = &GroupDiagnostics> {
        self.groups.iter().filter_map(|g| match g {
            GroupOutcome::Processed(d) => Some(d),
            GroupOutcome::Skipped(_) => None,
        })
    }
}

/// Checks config, market context, every quote, and id uniqueness.
pub fn validate_inputs(
    quotes: &[OptionQuote],
    ctx: Option<&MarketContext>,
    config: &CleaningConfig,
) -> Result<(), PipelineError> {
    config.validated()?;
    if let Some(ctx) = ctx {
        ctx.validated()?;
    }
    let mut seen = HashSet::with_capacity(quotes.len());
    for q in quotes {
        validate_quote(*q).map_err(|source| PipelineError::InvalidQuote { id: q.id, source })?;
        if !seen.insert(q.id) {
            return Err(PipelineError::DuplicateId(q.id));
        }
    }
    Ok(())
}

pub(crate) fn skipped_of(groups: &[GroupOutcome]) -> Vec<SkippedGroup> {
    groups
        .iter()
        .filter_map(|g| match g {
            GroupOutcome::Skipped(s) => Some(s.clone()),
            GroupOutcome::Processed(_) => None,
        })
        .collect()
}

/// Arbitrage bounds, then smile outliers, then duplicates. The stage order
/// is fixed.
pub fn run_pipeline(
    quotes: &[OptionQuote],
    ctx: &MarketContext,
    config: &CleaningConfig,
) -> Result<CleaningOutcome, PipelineError> {
    validate_inputs(quotes, Some(ctx), config)?;

    let bounded = filter_arbitrage(quotes, ctx, config);
    let (trimmed, groups) = remove_outliers(&bounded.kept, config);
    let unique = remove_duplicates(&trimmed.kept);

    let mut removals = bounded.removed;
    removals.extend(trimmed.removed);
    removals.extend(unique.removed);

    let skipped = skipped_of(&groups);
    for s in &skipped {
        log::warn!(
            "{} {}d ({} quotes): outlier check skipped: {:?}",
            s.option_type,
            s.maturity_days,
            s.n,
            s.reason
        );
    }
    let report = CleaningReport::new(*config, Some(*ctx), quotes, &removals, skipped);
    Ok(CleaningOutcome {
        clean: unique.kept,
        report,
        removals,
        groups,
    })
}

/// Stage 1 alone.
pub fn run_bounds(
    quotes: &[OptionQuote],
    ctx: &MarketContext,
    config: &CleaningConfig,
) -> Result<CleaningOutcome, PipelineError> {
    validate_inputs(quotes, Some(ctx), config)?;
    let out = filter_arbitrage(quotes, ctx, config);
    let report = CleaningReport::new(*config, Some(*ctx), quotes, &out.removed, Vec::new());
    Ok(CleaningOutcome {
        clean: out.kept,
        report,
        removals: out.removed,
        groups: Vec::new(),
    })
}

/// Stage 2 alone.
pub fn run_outliers(
    quotes: &[OptionQuote],
    config: &CleaningConfig,
) -> Result<CleaningOutcome, PipelineError> {
    validate_inputs(quotes, None, config)?;
    let (out, groups) = remove_outliers(quotes, config);
    let report = CleaningReport::new(*config, None, quotes, &out.removed, skipped_of(&groups));
    Ok(CleaningOutcome {
        clean: out.kept,
        report,
        removals: out.removed,
        groups,
    })
}

/// Stage 3 alone.
pub fn run_dedup(
    quotes: &[OptionQuote],
    config: &CleaningConfig,
) -> Result<CleaningOutcome, PipelineError> {
    validate_inputs(quotes, None, config)?;
    let out = remove_duplicates(quotes);
    let report = CleaningReport::new(*config, None, quotes, &out.removed, Vec::new());
    Ok(CleaningOutcome {
        clean: out.kept,
        report,
        removals: out.removed,
        groups: Vec::new(),
    })
}
