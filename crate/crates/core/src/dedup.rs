//! Stage 3: resolution of quotes sharing `(type, strike, maturity)`.
//!
//! Two substeps, in order:
//!
//! 1. Monotonicity pruning. A call price must not increase with strike and a
//!    put price must not decrease. Each duplicated quote is compared with the
//!    reference quote at the nearest smaller and nearest larger strike of its
//!    maturity group; a strict violation removes it.
//! 2. Open-interest resolution. Of the members that survive pruning, only
//!    the one with the largest open interest is kept (ties go to the earliest
//!    row).
//!
//! When a neighbouring strike is itself duplicated, its reference quote is
//! the member with the largest open interest, chosen among all members
//! before any pruning so the outcome does not depend on processing order.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::model::{
    ContractKey, Neighbor, OptionQuote, OptionType, RemovalDetail, RemovalRecord, StageOutput,
};
use crate::outlier_detector::{group_by_maturity, MaturityGroup};

/// Quotes sharing one contract key, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct DuplicateSet {
    pub key: ContractKey,
    pub members: Vec<OptionQuote>,
}

impl DuplicateSet {
    pub fn ids(&self) -> Vec<usize> {
        self.members.iter().map(|q| q.id).collect()
    }
}

/// Maximal sets of two or more quotes with equal `(type, strike, maturity)`,
/// ordered by the position of their first member.
pub fn find_duplicate_sets(quotes: &[OptionQuote]) -> Vec<DuplicateSet> {
    let mut order: Vec<ContractKey> = Vec::new();
    let mut by_key: HashMap<ContractKey, Vec<OptionQuote>> = HashMap::new();
    for q in quotes {
        let key = q.contract_key();
        let entry = by_key.entry(key).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(*q);
    }
    order
        .into_iter()
        .filter_map(|key| {
            let members = by_key.remove(&key)?;
            (members.len() >= 2).then_some(DuplicateSet { key, members })
        })
        .collect()
}

/// Largest open interest wins; ties go to the smallest id.
fn most_traded<'a>(quotes: impl IntoIterator<Item = &'a OptionQuote>) -> Option<&'a OptionQuote> {
    quotes
        .into_iter()
        .min_by(|a, b| b.open_interest.cmp(&a.open_interest).then(a.id.cmp(&b.id)))
}

fn strike_cmp(a: f64, b: f64) -> std::cmp::Ordering {
    a.total_cmp(&b)
}

/// Removes duplicated quotes whose price breaks strike monotonicity against
/// the neighbouring strikes of `group`. Quotes outside `dup_sets` are never
/// removed. Kept quotes follow group order.
pub fn monotonicity_prune(group: &MaturityGroup, dup_sets: &[DuplicateSet]) -> StageOutput {
    // distinct strikes in ascending order, with their reference quote
    let mut by_strike: BTreeMap<ContractKey, Vec<&OptionQuote>> = BTreeMap::new();
    for q in &group.quotes {
        by_strike.entry(q.contract_key()).or_default().push(q);
    }
    let mut ladder: Vec<(f64, &OptionQuote)> = by_strike
        .iter()
        .map(|(key, members)| {
            let reference = most_traded(members.iter().copied()).expect("non-empty strike bucket");
            (key.strike(), reference)
        })
        .collect();
    ladder.sort_by(|a, b| strike_cmp(a.0, b.0));

    let mut removed = Vec::new();
    for set in dup_sets {
        let strike = set.key.strike();
        let Ok(pos) = ladder.binary_search_by(|probe| strike_cmp(probe.0, strike)) else {
            continue;
        };
        let below = pos.checked_sub(1).map(|i| ladder[i].1);
        let above = ladder.get(pos + 1).map(|e| e.1);
        let competing_ids = set.ids();
        for q in &set.members {
            if let Some((neighbor, reference)) = violation(q, below, above) {
                removed.push(RemovalRecord::new(
                    q,
                    RemovalDetail::DuplicateMonotonicity {
                        neighbor,
                        neighbor_id: reference.id,
                        neighbor_strike: reference.strike,
                        neighbor_price: reference.price,
                        price: q.price,
                        competing_ids: competing_ids.clone(),
                    },
                ));
            }
        }
    }

    let removed_ids: HashSet<usize> = removed.iter().map(|r| r.quote_id).collect();
    StageOutput {
        kept: group
            .quotes
            .iter()
            .filter(|q| !removed_ids.contains(&q.id))
            .copied()
            .collect(),
        removed,
    }
}

fn violation<'a>(
    q: &OptionQuote,
    below: Option<&'a OptionQuote>,
    above: Option<&'a OptionQuote>,
) -> Option<(Neighbor, &'a OptionQuote)> {
    // calls decrease in strike, puts increase
    type Cmp = fn(f64, f64) -> bool;
    let (too_high_vs_below, too_low_vs_above): (Cmp, Cmp) = match q.option_type {
        OptionType::Call => (|p, r| p > r, |p, r| p < r),
        OptionType::Put => (|p, r| p < r, |p, r| p > r),
    };
    if let Some(r) = below {
        if too_high_vs_below(q.price, r.price) {
            return Some((Neighbor::Lower, r));
        }
    }
    if let Some(r) = above {
        if too_low_vs_above(q.price, r.price) {
            return Some((Neighbor::Upper, r));
        }
    }
    None
}

/// Keeps the most traded member of each set and removes the rest.
pub fn open_interest_resolve(sets: &[Vec<OptionQuote>]) -> StageOutput {
    let mut out = StageOutput::default();
    for members in sets {
        let Some(winner) = most_traded(members) else {
            continue;
        };
        let competing_ids: Vec<usize> = members.iter().map(|q| q.id).collect();
        for q in members {
            if q.id == winner.id {
                out.kept.push(*q);
            } else {
                out.removed.push(RemovalRecord::new(
                    q,
                    RemovalDetail::DuplicateOpenInterest {
                        kept_id: winner.id,
                        kept_open_interest: winner.open_interest,
                        open_interest: q.open_interest,
                        competing_ids: competing_ids.clone(),
                    },
                ));
            }
        }
    }
    out
}

/// Full duplicate-resolution stage. Kept quotes retain input order; removals
/// are ordered by maturity group, pruning removals before open-interest ones.
pub fn remove_duplicates(quotes: &[OptionQuote]) -> StageOutput {
    let mut removed = Vec::new();
    for group in group_by_maturity(quotes) {
        let sets = find_duplicate_sets(&group.quotes);
        if sets.is_empty() {
            continue;
        }
        let pruned = monotonicity_prune(&group, &sets);
        let pruned_ids: HashSet<usize> = pruned.removed.iter().map(|r| r.quote_id).collect();
        let remaining: Vec<Vec<OptionQuote>> = sets
            .iter()
            .map(|s| {
                s.members
                    .iter()
                    .filter(|q| !pruned_ids.contains(&q.id))
                    .copied()
                    .collect()
            })
            .collect();
        let resolved = open_interest_resolve(&remaining);
        removed.extend(pruned.removed);
        removed.extend(resolved.removed);
    }
    let removed_ids: HashSet<usize> = removed.iter().map(|r| r.quote_id).collect();
    StageOutput {
        kept: quotes
            .iter()
            .filter(|q| !removed_ids.contains(&q.id))
            .copied()
            .collect(),
        removed,
    }
}
