//! Stage 2: per-maturity smile regression and residual outlier removal.
//!
//! Quotes are grouped by `(option_type, maturity_days)`. Each group gets a
//! least-squares polynomial of price on strike. Residuals are compared with
//! a band `[−ĉ, ĉ]` sized so that, for `n` i.i.d. normal residuals, all of
//! them fall inside with probability `1 − α`:
//!
//! ```text
//! ĉ = σ̂ · Φ⁻¹(½ + ½ (1 − α)^{1/n})
//! ```
//!
//! Flagging happens in a single pass; the polynomial is not refitted after
//! removals.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::model::{CleaningConfig, OptionQuote, OptionType, RemovalDetail, RemovalRecord, StageOutput};
use crate::numerics::{self, NumericsError, PolyCoeffs};

/// Residual standard deviations at or below this fraction of the largest
/// price in the group are rounding noise from an exact fit.
pub const DEGENERATE_SIGMA_REL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MaturityGroup {
    pub option_type: OptionType,
    pub maturity_days: u32,
    pub quotes: Vec<OptionQuote>,
}

impl MaturityGroup {
    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.quotes.iter().map(|q| (q.strike, q.price)).collect()
    }
}

/// Partitions quotes by `(option_type, maturity_days)`. Groups come out in
/// ascending maturity, calls before puts; members keep input order.
pub fn group_by_maturity(quotes: &[OptionQuote]) -> Vec<MaturityGroup> {
    let mut map: BTreeMap<(u32, OptionType), Vec<OptionQuote>> = BTreeMap::new();
    for q in quotes {
        map.entry((q.maturity_days, q.option_type)).or_default().push(*q);
    }
    map.into_iter()
        .map(|((maturity_days, option_type), quotes)| MaturityGroup {
            option_type,
            maturity_days,
            quotes,
        })
        .collect()
}

/// `σ · Φ⁻¹(½ + ½ (1 − α)^{1/n})`.
///
/// The quantile is taken through its upper-tail complement
/// `½ (1 − (1 − α)^{1/n})`, which keeps full precision when `n` is large.
pub fn critical_value(sigma: f64, n: usize, alpha: f64) -> f64 {
    assert!(sigma > 0.0, "sigma must be positive");
    assert!(n >= 1, "n must be at least 1");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let upper_tail = -0.5 * ((-alpha).ln_1p() / n as f64).exp_m1();
    let z = numerics::normal_upper_quantile(upper_tail)
        .expect("upper tail lies in (0, 1/2] for alpha in (0, 1)");
    sigma * z
}

/// Indices of residuals strictly outside `[−c, c]`.
pub fn exceedances(residuals: &[f64], c: f64) -> Vec<usize> {
    residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| r.abs() > c)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostic {
    pub id: usize,
    pub strike: f64,
    pub price: f64,
    pub fitted: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostics {
    pub option_type: OptionType,
    pub maturity_days: u32,
    pub coeffs: PolyCoeffs,
    pub sigma_hat: f64,
    pub c_hat: f64,
    pub points: Vec<PointDiagnostic>,
    pub flagged_ids: Vec<usize>,
}

impl GroupDiagnostics {
    pub fn residuals(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.residual).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    TooSmall { n: usize, min_group_size: usize },
    DegenerateResiduals { sigma_hat: f64 },
    SingularDesign { distinct_strikes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub option_type: OptionType,
    pub maturity_days: u32,
    pub n: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupOutcome {
    Processed(GroupDiagnostics),
    Skipped(SkippedGroup),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub kept: Vec<OptionQuote>,
    pub removed: Vec<RemovalRecord>,
    pub outcome: GroupOutcome,
}

pub fn detect_outliers(group: &MaturityGroup, config: &CleaningConfig) -> GroupResult {
    let n = group.len();
    let skip = |reason: SkipReason| GroupResult {
        kept: group.quotes.clone(),
        removed: Vec::new(),
        outcome: GroupOutcome::Skipped(SkippedGroup {
            option_type: group.option_type,
            maturity_days: group.maturity_days,
            n,
            reason,
        }),
    };
    if n < config.min_group_size {
        return skip(SkipReason::TooSmall {
            n,
            min_group_size: config.min_group_size,
        });
    }

    let points = group.points();
    let coeffs = match numerics::fit_polynomial(&points, config.poly_degree) {
        Ok(c) => c,
        Err(NumericsError::SingularDesign { distinct, .. }) => {
            log::warn!(
                "{} {}d: singular design ({distinct} distinct strikes), outlier check skipped",
                group.option_type,
                group.maturity_days
            );
            return skip(SkipReason::SingularDesign {
                distinct_strikes: distinct,
            });
        }
        Err(NumericsError::InsufficientPoints { .. }) => {
            return skip(SkipReason::TooSmall {
                n,
                min_group_size: config.min_group_size,
            })
        }
        Err(e) => unreachable!("fit_polynomial does not return {e:?}"),
    };
    let residuals = numerics::residuals(&points, &coeffs);
    let price_scale = points.iter().map(|p| p.1.abs()).fold(0.0_f64, f64::max);
    let sigma_hat = match numerics::residual_sigma(&residuals) {
        Ok(s) if s > DEGENERATE_SIGMA_REL * price_scale => s,
        Ok(s) => return skip(SkipReason::DegenerateResiduals { sigma_hat: s }),
        Err(_) => return skip(SkipReason::DegenerateResiduals { sigma_hat: 0.0 }),
    };
    let c_hat = critical_value(sigma_hat, n, config.alpha);

    let mut kept = Vec::with_capacity(n);
    let mut removed = Vec::new();
    let mut flagged_ids = Vec::new();
    let mut diag_points = Vec::with_capacity(n);
    for (q, &residual) in group.quotes.iter().zip(&residuals) {
        diag_points.push(PointDiagnostic {
            id: q.id,
            strike: q.strike,
            price: q.price,
            fitted: q.price - residual,
            residual,
        });
        if residual.abs() > c_hat {
            flagged_ids.push(q.id);
            removed.push(RemovalRecord::new(
                q,
                RemovalDetail::Outlier {
                    residual,
                    c_hat,
                    sigma_hat,
                },
            ));
        } else {
            kept.push(*q);
        }
    }

    GroupResult {
        kept,
        removed,
        outcome: GroupOutcome::Processed(GroupDiagnostics {
            option_type: group.option_type,
            maturity_days: group.maturity_days,
            coeffs,
            sigma_hat,
            c_hat,
            points: diag_points,
            flagged_ids,
        }),
    }
}

/// Runs outlier detection over every maturity group. Kept quotes retain
/// their input order; removals and outcomes follow group order.
pub fn remove_outliers(
    quotes: &[OptionQuote],
    config: &CleaningConfig,
) -> (StageOutput, Vec<GroupOutcome>) {
    let mut removed = Vec::new();
    let mut outcomes = Vec::new();
    for group in group_by_maturity(quotes) {
        let res = detect_outliers(&group, config);
        removed.extend(res.removed);
        outcomes.push(res.outcome);
    }
    let removed_ids: HashSet<usize> = removed.iter().map(|r| r.quote_id).collect();
    let kept = quotes
        .iter()
        .filter(|q| !removed_ids.contains(&q.id))
        .copied()
        .collect();
    (StageOutput { kept, removed }, outcomes)
}
