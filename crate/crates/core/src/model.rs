//! Domain types shared by every cleaning stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default day-count divisor (ACT/365 fixed).
pub const DEFAULT_DAY_COUNT: f64 = 365.0;
/// Family-wise significance level used for the residual band.
pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_POLY_DEGREE: usize = 2;
pub const DEFAULT_MIN_GROUP_SIZE: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("field `{field}` must be non-negative, got {value}")]
    NegativeField { field: &'static str, value: f64 },
    #[error("field `{field}` is not a finite number")]
    NonFinite { field: &'static str },
    #[error("maturity_days must be positive")]
    ZeroMaturity,
    #[error("spot price must be positive and finite, got {0}")]
    NonPositiveSpot(f64),
    #[error("rate must be finite, got {0}")]
    NonFiniteRate(f64),
    #[error("dividend yield must be 0 (dividend-paying underlyings are not supported), got {0}")]
    NonZeroDividend(f64),
    #[error("invalid cleaning config: {0}")]
    InvalidConfig(String),
    #[error("unknown option type `{0}` (expected `call` or `put`)")]
    UnknownOptionType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionType {
    Call,
    Put,
}

impl OptionType {
    pub const ALL: [OptionType; 2] = [OptionType::Call, OptionType::Put];

    pub fn as_str(self) -> &'static str {
        match self {
            OptionType::Call => "call",
            OptionType::Put => "put",
        }
    }
}

impl fmt::Display for OptionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptionType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("call") {
            Ok(OptionType::Call)
        } else if t.eq_ignore_ascii_case("put") {
            Ok(OptionType::Put)
        } else {
            Err(ModelError::UnknownOptionType(t.to_string()))
        }
    }
}

/// One recorded option row.
///
/// `id` is the ordinal of the row in its source dataset and is unique within
/// that dataset. Every removal record refers back to quotes by this id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub id: usize,
    pub option_type: OptionType,
    pub strike: f64,
    pub maturity_days: u32,
    pub price: f64,
    pub open_interest: u64,
}

impl OptionQuote {
    /// Key identifying the contract (type, strike, maturity). Two quotes with
    /// the same key are duplicates of one another.
    pub fn contract_key(&self) -> ContractKey {
        ContractKey::new(self.option_type, self.strike, self.maturity_days)
    }
}

/// Hashable identity of a contract. Strikes compare by bit pattern after
/// normalizing negative zero, which is exact for values parsed from the same
/// decimal text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContractKey {
    pub option_type: OptionType,
    pub maturity_days: u32,
    strike_bits: u64,
}

impl ContractKey {
    pub fn new(option_type: OptionType, strike: f64, maturity_days: u32) -> Self {
        Self {
            option_type,
            maturity_days,
            strike_bits: (strike + 0.0).to_bits(),
        }
    }

    pub fn strike(&self) -> f64 {
        f64::from_bits(self.strike_bits)
    }
}

/// Checks the field invariants of a quote and returns it unchanged.
pub fn validate_quote(q: OptionQuote) -> Result<OptionQuote, ModelError> {
    check_non_negative("strike", q.strike)?;
    check_non_negative("price", q.price)?;
    if q.maturity_days == 0 {
        return Err(ModelError::ZeroMaturity);
    }
    Ok(q)
}

fn check_non_negative(field: &'static str, value: f64) -> Result<(), ModelError> {
    if !value.is_finite() {
        return Err(ModelError::NonFinite { field });
    }
    if value < 0.0 {
        return Err(ModelError::NegativeField { field, value });
    }
    Ok(())
}

/// Converts a maturity in days to years.
pub fn years_to_maturity(maturity_days: u32, day_count: f64) -> f64 {
    debug_assert!(maturity_days > 0 && day_count > 0.0);
    f64::from(maturity_days) / day_count
}

/// Spot and continuously compounded risk-free rate shared by one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketContext {
    pub spot: f64,
    pub rate: f64,
    #[serde(default)]
    pub dividend_yield: f64,
}

impl MarketContext {
    pub fn new(spot: f64, rate: f64) -> Result<Self, ModelError> {
        Self {
            spot,
            rate,
            dividend_yield: 0.0,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self, ModelError> {
        if !(self.spot.is_finite() && self.spot > 0.0) {
            return Err(ModelError::NonPositiveSpot(self.spot));
        }
        if !self.rate.is_finite() {
            return Err(ModelError::NonFiniteRate(self.rate));
        }
        if self.dividend_yield != 0.0 {
            return Err(ModelError::NonZeroDividend(self.dividend_yield));
        }
        Ok(self)
    }

    /// Discount factor `e^{-rT}`.
    pub fn discount(&self, years: f64) -> f64 {
        (-self.rate * years).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub alpha: f64,
    pub poly_degree: usize,
    pub min_group_size: usize,
    pub day_count: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            poly_degree: DEFAULT_POLY_DEGREE,
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            day_count: DEFAULT_DAY_COUNT,
        }
    }
}

impl CleaningConfig {
    pub fn validated(self) -> Result<Self, ModelError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.poly_degree < 1 {
            return Err(ModelError::InvalidConfig(
                "poly_degree must be at least 1".into(),
            ));
        }
        if self.min_group_size < self.poly_degree + 2 {
            return Err(ModelError::InvalidConfig(format!(
                "min_group_size must be at least poly_degree + 2 = {}, got {}",
                self.poly_degree + 2,
                self.min_group_size
            )));
        }
        if !(self.day_count.is_finite() && self.day_count > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "day_count must be positive, got {}",
                self.day_count
            )));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ArbitrageBound,
    Outlier,
    DuplicateMonotonicity,
    DuplicateOpenInterest,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::ArbitrageBound,
        Stage::Outlier,
        Stage::DuplicateMonotonicity,
        Stage::DuplicateOpenInterest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::ArbitrageBound => "arbitrage_bound",
            Stage::Outlier => "outlier",
            Stage::DuplicateMonotonicity => "duplicate_monotonicity",
            Stage::DuplicateOpenInterest => "duplicate_open_interest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Lower,
    Upper,
}

/// Which neighbouring strike a duplicated quote was compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighbor {
    Lower,
    Upper,
}

/// Stage-specific diagnostics attached to a removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RemovalDetail {
    ArbitrageBound {
        side: BoundSide,
        bound: f64,
        price: f64,
    },
    Outlier {
        residual: f64,
        c_hat: f64,
        sigma_hat: f64,
    },
    DuplicateMonotonicity {
        neighbor: Neighbor,
        neighbor_id: usize,
        neighbor_strike: f64,
        neighbor_price: f64,
        price: f64,
        competing_ids: Vec<usize>,
    },
    DuplicateOpenInterest {
        kept_id: usize,
        kept_open_interest: u64,
        open_interest: u64,
        competing_ids: Vec<usize>,
    },
}

impl RemovalDetail {
    pub fn stage(&self) -> Stage {
        match self {
            RemovalDetail::ArbitrageBound { .. } => Stage::ArbitrageBound,
            RemovalDetail::Outlier { .. } => Stage::Outlier,
            RemovalDetail::DuplicateMonotonicity { .. } => Stage::DuplicateMonotonicity,
            RemovalDetail::DuplicateOpenInterest { .. } => Stage::DuplicateOpenInterest,
        }
    }

    /// Short human-readable reason.
    pub fn reason(&self) -> String {
        match self {
            RemovalDetail::ArbitrageBound { side, bound, price } => match side {
                BoundSide::Lower => format!("price {price} below no-arbitrage lower bound {bound}"),
                BoundSide::Upper => format!("price {price} above no-arbitrage upper bound {bound}"),
            },
            RemovalDetail::Outlier {
                residual, c_hat, ..
            } => format!("|residual| {} exceeds c_hat {}", residual.abs(), c_hat),
            RemovalDetail::DuplicateMonotonicity {
                neighbor,
                neighbor_strike,
                neighbor_price,
                price,
                ..
            } => {
                let side = match neighbor {
                    Neighbor::Lower => "next lower",
                    Neighbor::Upper => "next higher",
                };
                format!(
                    "duplicate priced {price} breaks strike monotonicity against {side} strike {neighbor_strike} priced {neighbor_price}"
                )
            }
            RemovalDetail::DuplicateOpenInterest {
                kept_id,
                kept_open_interest,
                open_interest,
                ..
            } => format!(
                "duplicate with open interest {open_interest}; kept quote {kept_id} with open interest {kept_open_interest}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalRecord {
    pub quote_id: usize,
    pub option_type: OptionType,
    pub detail: RemovalDetail,
}

impl RemovalRecord {
    pub fn new(quote: &OptionQuote, detail: RemovalDetail) -> Self {
        Self {
            quote_id: quote.id,
            option_type: quote.option_type,
            detail,
        }
    }

    pub fn stage(&self) -> Stage {
        self.detail.stage()
    }
}

/// Kept quotes and removal records produced by one stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutput {
    pub kept: Vec<OptionQuote>,
    pub removed: Vec<RemovalRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quote(option_type: OptionType, strike: f64, days: u32, price: f64) -> OptionQuote {
        OptionQuote {
            id: 0,
            option_type,
            strike,
            maturity_days: days,
            price,
            open_interest: 10,
        }
    }

    #[test]
    fn validate_accepts_well_formed_quote() {
        let q = quote(OptionType::Call, 100.0, 30, 5.0);
        assert_eq!(validate_quote(q), Ok(q));
    }

    #[test]
    fn validate_rejects_zero_maturity() {
        let q = quote(OptionType::Put, 100.0, 0, 5.0);
        assert_eq!(validate_quote(q), Err(ModelError::ZeroMaturity));
    }

    #[test]
    fn validate_rejects_negative_strike() {
        let q = quote(OptionType::Call, -5.0, 30, 5.0);
        assert!(matches!(
            validate_quote(q),
            Err(ModelError::NegativeField { field: "strike", .. })
        ));
    }

    #[test]
    fn validate_admits_zero_price() {
        let q = quote(OptionType::Put, 100.0, 30, 0.0);
        assert!(validate_quote(q).is_ok());
        let nan = quote(OptionType::Put, 100.0, 30, f64::NAN);
        assert!(matches!(
            validate_quote(nan),
            Err(ModelError::NonFinite { field: "price" })
        ));
    }

    #[test]
    fn years_to_maturity_divides() {
        assert_eq!(years_to_maturity(365, 365.0), 1.0);
        assert!((years_to_maturity(160, 365.0) - 0.438_356_164_383_561_6).abs() < 1e-15);
        assert!((years_to_maturity(182, 365.0) - 0.498_630_136_986_301_4).abs() < 1e-15);
    }

    #[test]
    fn years_to_maturity_is_increasing() {
        for d in 1..2000u32 {
            assert!(years_to_maturity(d + 1, 365.0) > years_to_maturity(d, 365.0));
        }
    }

    #[test]
    fn option_type_parses_case_insensitively() {
        assert_eq!("CALL".parse::<OptionType>(), Ok(OptionType::Call));
        assert_eq!(" Put ".parse::<OptionType>(), Ok(OptionType::Put));
        assert!("straddle".parse::<OptionType>().is_err());
    }

    #[test]
    fn market_context_rejects_dividends_and_bad_spot() {
        assert!(MarketContext::new(1353.39, 0.0015).is_ok());
        assert!(MarketContext::new(0.0, 0.0015).is_err());
        let ctx = MarketContext {
            spot: 100.0,
            rate: 0.0,
            dividend_yield: 0.02,
        };
        assert_eq!(ctx.validated(), Err(ModelError::NonZeroDividend(0.02)));
    }

    #[test]
    fn config_requires_more_points_than_coefficients() {
        assert!(CleaningConfig::default().validated().is_ok());
        let cfg = CleaningConfig {
            min_group_size: 3,
            ..CleaningConfig::default()
        };
        assert!(cfg.validated().is_err());
        for alpha in [0.0, 1.0, -0.1, f64::NAN] {
            let cfg = CleaningConfig {
                alpha,
                ..CleaningConfig::default()
            };
            assert!(cfg.validated().is_err(), "alpha {alpha}");
        }
    }

    #[test]
    fn contract_key_ignores_sign_of_zero() {
        assert_eq!(
            ContractKey::new(OptionType::Call, 0.0, 30),
            ContractKey::new(OptionType::Call, -0.0, 30)
        );
    }
}
