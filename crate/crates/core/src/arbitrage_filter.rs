//! Stage 1: model-free no-arbitrage price intervals for European options on a
//! non-dividend-paying underlying.
//!
//! Calls must satisfy `max(S₀ − K·e^{−rT}, 0) ≤ π ≤ S₀` and puts
//! `max(K·e^{−rT} − S₀, 0) ≤ π ≤ K·e^{−rT}`. Both comparisons are inclusive
//! and carry no tolerance band.

use serde::{Deserialize, Serialize};

use crate::model::{
    years_to_maturity, BoundSide, CleaningConfig, MarketContext, OptionQuote, OptionType,
    RemovalDetail, RemovalRecord, StageOutput,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBounds {
    pub lower: f64,
    pub upper: f64,
}

impl PriceBounds {
    pub fn contains(&self, price: f64) -> bool {
        self.lower <= price && price <= self.upper
    }

    /// The violated side, if any.
    pub fn violation(&self, price: f64) -> Option<(BoundSide, f64)> {
        if price < self.lower {
            Some((BoundSide::Lower, self.lower))
        } else if price > self.upper {
            Some((BoundSide::Upper, self.upper))
        } else {
            None
        }
    }
}

pub fn call_bounds(ctx: &MarketContext, strike: f64, years: f64) -> PriceBounds {
    let pv_strike = strike * ctx.discount(years);
    PriceBounds {
        lower: (ctx.spot - pv_strike).max(0.0),
        upper: ctx.spot,
    }
}

pub fn put_bounds(ctx: &MarketContext, strike: f64, years: f64) -> PriceBounds {
    let pv_strike = strike * ctx.discount(years);
    PriceBounds {
        lower: (pv_strike - ctx.spot).max(0.0),
        upper: pv_strike,
    }
}

/// Bounds applicable to one quote.
pub fn quote_bounds(q: &OptionQuote, ctx: &MarketContext, day_count: f64) -> PriceBounds {
    let years = years_to_maturity(q.maturity_days, day_count);
    match q.option_type {
        OptionType::Call => call_bounds(ctx, q.strike, years),
        OptionType::Put => put_bounds(ctx, q.strike, years),
    }
}

/// Checks a single quote, returning the removal record when it violates its
/// interval.
pub fn check_quote(
    q: &OptionQuote,
    ctx: &MarketContext,
    config: &CleaningConfig,
) -> Option<RemovalRecord> {
    let bounds = quote_bounds(q, ctx, config.day_count);
    bounds.violation(q.price).map(|(side, bound)| {
        RemovalRecord::new(
            q,
            RemovalDetail::ArbitrageBound {
                side,
                bound,
                price: q.price,
            },
        )
    })
}

/// Removes every quote priced outside its no-arbitrage interval. Kept quotes
/// retain their relative order.
pub fn filter_arbitrage(
    quotes: &[OptionQuote],
    ctx: &MarketContext,
    config: &CleaningConfig,
) -> StageOutput {
    let mut out = StageOutput::default();
    for q in quotes {
        match check_quote(q, ctx, config) {
            Some(rec) => out.removed.push(rec),
            None => out.kept.push(*q),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(spot: f64, rate: f64) -> MarketContext {
        MarketContext::new(spot, rate).unwrap()
    }

    fn call(id: usize, strike: f64, days: u32, price: f64) -> OptionQuote {
        OptionQuote {
            id,
            option_type: OptionType::Call,
            strike,
            maturity_days: days,
            price,
            open_interest: 1,
        }
    }

    #[test]
    fn call_bounds_at_index_level() {
        let b = call_bounds(&ctx(1353.39, 0.0015), 1350.0, 0.5);
        // 1353.39 - 1350 e^{-0.00075}
        assert!((b.lower - 4.402_120_4).abs() < 1e-6, "{b:?}");
        assert_eq!(b.upper, 1353.39);
    }

    #[test]
    fn call_bounds_degenerate_cases() {
        let b = call_bounds(&ctx(100.0, 0.05), 0.0, 2.0);
        assert_eq!(b, PriceBounds { lower: 100.0, upper: 100.0 });
        let b = call_bounds(&ctx(100.0, 0.0), 200.0, 1.0);
        assert_eq!(b, PriceBounds { lower: 0.0, upper: 100.0 });
    }

    #[test]
    fn put_bounds_examples() {
        let b = put_bounds(&ctx(100.0, 0.05), 90.0, 0.5);
        assert_eq!(b.lower, 0.0);
        assert!((b.upper - 87.777_9).abs() < 1e-4, "{b:?}");

        let b = put_bounds(&ctx(64.18, 0.0015), 80.0, 1.0);
        assert!((b.lower - 15.700_1).abs() < 1e-4, "{b:?}");
        assert!((b.upper - 79.880_1).abs() < 1e-4, "{b:?}");

        let b = put_bounds(&ctx(100.0, 0.05), 0.0, 1.0);
        assert_eq!(b, PriceBounds { lower: 0.0, upper: 0.0 });
    }

    #[test]
    fn boundary_prices_are_inclusive() {
        let c = ctx(100.0, 0.01);
        let cfg = CleaningConfig::default();
        let at_spot = call(0, 120.0, 30, 100.0);
        let above = call(1, 120.0, 30, 100.01);
        let out = filter_arbitrage(&[at_spot, above], &c, &cfg);
        assert_eq!(out.kept, vec![at_spot]);
        assert_eq!(out.removed.len(), 1);
        assert_eq!(out.removed[0].quote_id, 1);
        assert!(matches!(
            out.removed[0].detail,
            RemovalDetail::ArbitrageBound { side: BoundSide::Upper, bound, .. } if bound == 100.0
        ));
    }

    #[test]
    fn put_below_lower_bound_is_removed() {
        let c = ctx(100.0, 0.01);
        let cfg = CleaningConfig::default();
        let lower = put_bounds(&c, 150.0, years_to_maturity(60, 365.0)).lower;
        let q = OptionQuote {
            id: 7,
            option_type: OptionType::Put,
            strike: 150.0,
            maturity_days: 60,
            price: lower - 1e-9,
            open_interest: 3,
        };
        let out = filter_arbitrage(&[q], &c, &cfg);
        assert!(out.kept.is_empty());
        assert!(matches!(
            out.removed[0].detail,
            RemovalDetail::ArbitrageBound { side: BoundSide::Lower, .. }
        ));
    }

    fn arb_quote() -> impl Strategy<Value = (OptionQuote, MarketContext)> {
        (
            1.0..2000.0f64,
            0.0..3000.0f64,
            -0.02..0.2f64,
            1u32..1500,
            0.0..2500.0f64,
            any::<bool>(),
        )
            .prop_map(|(spot, strike, rate, days, price, is_call)| {
                let q = OptionQuote {
                    id: 0,
                    option_type: if is_call { OptionType::Call } else { OptionType::Put },
                    strike,
                    maturity_days: days,
                    price,
                    open_interest: 0,
                };
                (q, MarketContext::new(spot, rate).unwrap())
            })
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(quotes in prop::collection::vec(arb_quote(), 1..40)) {
            let cfg = CleaningConfig::default();
            let c = quotes[0].1;
            let qs: Vec<OptionQuote> = quotes.iter().enumerate()
                .map(|(i, (q, _))| OptionQuote { id: i, ..*q }).collect();
            let first = filter_arbitrage(&qs, &c, &cfg);
            let second = filter_arbitrage(&first.kept, &c, &cfg);
            prop_assert!(second.removed.is_empty());
            prop_assert_eq!(second.kept, first.kept);
        }

        #[test]
        fn kept_price_stays_kept_when_lowered_toward_bound((q, c) in arb_quote(), t in 0.0..=1.0f64) {
            let cfg = CleaningConfig::default();
            let b = quote_bounds(&q, &c, cfg.day_count);
            if b.contains(q.price) {
                let lowered = OptionQuote { price: (b.lower + t * (q.price - b.lower)).min(q.price), ..q };
                prop_assert!(check_quote(&lowered, &c, &cfg).is_none());
            }
        }
    }
}
