//! Synthetic, arbitrage-free option chains with labelled error injection.
//!
//! Random numbers come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`. Uniforms are `rand`'s standard `f64` draw (53 random
//! bits scaled to `[0, 1)`); normal noise uses the Box–Muller cosine branch
//! `√(−2 ln(1 − u₁)) · cos(2π u₂)`, redrawn whenever it falls outside
//! `±NOISE_TRUNCATION` standard deviations so that every clean price keeps
//! a known margin to its no-arbitrage bounds.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbitrage_filter::{quote_bounds, PriceBounds};
use crate::model::{MarketContext, OptionQuote, OptionType};
use crate::numerics::PolyCoeffs;
use crate::outlier_detector::MaturityGroup;

/// Noise draws beyond this many standard deviations are redrawn.
pub const NOISE_TRUNCATION: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("smile price {price} at strike {strike} is outside [{lower}, {upper}] less the noise margin")]
    SpecInfeasible {
        strike: f64,
        price: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid smile spec: {0}")]
    InvalidSpec(String),
    #[error("cannot place {requested} injections in a group of {available} quotes")]
    TooManyInjections { requested: usize, available: usize },
}

/// Parameters of one clean maturity group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmileSpec {
    pub option_type: OptionType,
    pub maturity_days: u32,
    /// Noiseless price as a polynomial in strike.
    pub smile: PolyCoeffs,
    pub strikes: Vec<f64>,
    pub noise_sigma: f64,
    /// Inclusive range of open interest drawn per quote.
    pub open_interest: (u64, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedKind {
    BoundViolation,
    Outlier,
    Duplicate,
}

impl InjectedKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InjectedKind::BoundViolation => "bound_violation",
            InjectedKind::Outlier => "outlier",
            InjectedKind::Duplicate => "duplicate",
        }
    }
}

/// Ground truth for one injection. `id` is the quote the cleaner is expected
/// to remove; `target_id` is the clean quote that was corrupted or copied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: usize,
    pub kind: InjectedKind,
    pub target_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGroup {
    pub group: MaturityGroup,
    pub noise_sigma: f64,
    pub labels: Vec<Label>,
}

struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    fn truncated_normal(&mut self) -> f64 {
        loop {
            let u1 = 1.0 - self.uniform();
            let u2 = self.uniform();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            if z.abs() <= NOISE_TRUNCATION {
                return z;
            }
        }
    }
}

/// Builds a clean group: `price = smile(strike) + noise`. Ids start at
/// `first_id` and follow the order of `spec.strikes`.
pub fn generate_group(
    spec: &SmileSpec,
    ctx: &MarketContext,
    day_count: f64,
    seed: u64,
    first_id: usize,
) -> Result<SyntheticGroup, SynthError> {
    if spec.strikes.is_empty() || spec.maturity_days == 0 {
        return Err(SynthError::InvalidSpec("need strikes and a positive maturity".into()));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("noise sigma {}", spec.noise_sigma)));
    }
    if spec.open_interest.0 > spec.open_interest.1 {
        return Err(SynthError::InvalidSpec("empty open-interest range".into()));
    }
    let mut distinct = spec.strikes.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() != spec.strikes.len() || distinct[0] < 0.0 {
        return Err(SynthError::InvalidSpec("strikes must be distinct and non-negative".into()));
    }

    let margin = NOISE_TRUNCATION * spec.noise_sigma;
    let mut template = OptionQuote {
        id: 0,
        option_type: spec.option_type,
        strike: 0.0,
        maturity_days: spec.maturity_days,
        price: 0.0,
        open_interest: 0,
    };
    for &strike in &spec.strikes {
        template.strike = strike;
        let b = quote_bounds(&template, ctx, day_count);
        let price = spec.smile.eval(strike);
        if !(price >= b.lower + margin && price <= b.upper - margin) {
            return Err(SynthError::SpecInfeasible {
                strike,
                price,
                lower: b.lower,
                upper: b.upper,
            });
        }
    }

    let mut noise = NoiseSource::new(seed);
    let quotes = spec
        .strikes
        .iter()
        .enumerate()
        .map(|(i, &strike)| {
            let price = spec.smile.eval(strike) + spec.noise_sigma * noise.truncated_normal();
            let open_interest = noise.rng.gen_range(spec.open_interest.0..=spec.open_interest.1);
            OptionQuote {
                id: first_id + i,
                strike,
                price,
                open_interest,
                ..template
            }
        })
        .collect();

    Ok(SyntheticGroup {
        group: MaturityGroup {
            option_type: spec.option_type,
            maturity_days: spec.maturity_days,
            quotes,
        },
        noise_sigma: spec.noise_sigma,
        labels: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub bound_violations: usize,
    pub outliers: usize,
    /// Outlier displacement in multiples of the group's noise sigma.
    pub outlier_k: f64,
    pub duplicates: usize,
}

impl InjectionPlan {
    pub fn total(&self) -> usize {
        self.bound_violations + self.outliers + self.duplicates
    }
}

/// Corrupts a clean group. Each injection targets a distinct clean quote and
/// no quote adjacent (by strike) to a duplicated one is touched, so that the
/// duplicate's monotonicity check sees clean neighbours.
///
/// * bound violation: the price is moved strictly outside its interval;
/// * outlier: the price is shifted by `±outlier_k · σ`, staying inside the
///   bounds;
/// * duplicate: a copy with id `next_id, next_id + 1, …`, a price within
///   `σ/4` of the original that keeps strict strike monotonicity, and a
///   different open interest. The label points at whichever member has the
///   smaller open interest.
pub fn inject_errors(
    sg: &SyntheticGroup,
    plan: &InjectionPlan,
    ctx: &MarketContext,
    day_count: f64,
    seed: u64,
    next_id: usize,
) -> Result<SyntheticGroup, SynthError> {
    let available = sg.group.len();
    let too_many = || SynthError::TooManyInjections {
        requested: plan.total(),
        available,
    };
    if plan.total() > available {
        return Err(too_many());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sg.clone();
    let sigma = sg.noise_sigma;

    // positions in ascending strike order
    let mut ladder: Vec<usize> = (0..available).collect();
    ladder.sort_by(|&a, &b| sg.group.quotes[a].strike.total_cmp(&sg.group.quotes[b].strike));
    let already: HashSet<usize> = sg.labels.iter().map(|l| l.target_id).collect();
    let mut used = vec![false; available];
    let mut blocked = vec![false; available];
    for (rank, &pos) in ladder.iter().enumerate() {
        if already.contains(&sg.group.quotes[pos].id) {
            used[rank] = true;
        }
    }

    let mut order: Vec<usize> = (0..available).collect();
    order.shuffle(&mut rng);

    // duplicates first: they constrain their neighbours
    let mut placed = 0;
    let mut dup_quotes = Vec::new();
    for &rank in &order {
        if placed == plan.duplicates {
            break;
        }
        if used[rank] || blocked[rank] {
            continue;
        }
        let neighbours = [rank.checked_sub(1), (rank + 1 < available).then_some(rank + 1)];
        if neighbours.iter().flatten().any(|&r| used[r]) {
            continue;
        }
        let original = sg.group.quotes[ladder[rank]];
        let below = rank.checked_sub(1).map(|r| sg.group.quotes[ladder[r]].price);
        let above = neighbours[1].map(|r| sg.group.quotes[ladder[r]].price);
        let price = original.price + sigma * (rng.gen::<f64>() - 0.5) * 0.5;
        let consistent = |p: f64| monotone_against(original.option_type, p, below, above);
        let bounds = quote_bounds(&original, ctx, day_count);
        if !(consistent(original.price) && consistent(price) && bounds.contains(price)) {
            continue;
        }
        let mut oi = original.open_interest;
        while oi == original.open_interest {
            oi = rng.gen_range(0..=original.open_interest.saturating_mul(2).max(10));
        }
        let copy = OptionQuote {
            id: next_id + dup_quotes.len(),
            price,
            open_interest: oi,
            ..original
        };
        let loser = if copy.open_interest < original.open_interest {
            copy.id
        } else {
            original.id
        };
        out.labels.push(Label {
            id: loser,
            kind: InjectedKind::Duplicate,
            target_id: original.id,
        });
        dup_quotes.push(copy);
        used[rank] = true;
        for r in neighbours.into_iter().flatten() {
            blocked[r] = true;
        }
        placed += 1;
    }
    if placed < plan.duplicates {
        return Err(too_many());
    }

    let mut placed_outliers = 0;
    let mut placed_bounds = 0;
    for &rank in &order {
        if placed_outliers == plan.outliers && placed_bounds == plan.bound_violations {
            break;
        }
        if used[rank] || blocked[rank] {
            continue;
        }
        let pos = ladder[rank];
        let q = out.group.quotes[pos];
        let bounds = quote_bounds(&q, ctx, day_count);
        if placed_outliers < plan.outliers {
            let shift = plan.outlier_k * sigma;
            let first_up = rng.gen::<bool>();
            let candidates = if first_up { [shift, -shift] } else { [-shift, shift] };
            if let Some(price) = candidates.iter().map(|s| q.price + s).find(|&p| bounds.contains(p)) {
                out.group.quotes[pos].price = price;
                out.labels.push(Label {
                    id: q.id,
                    kind: InjectedKind::Outlier,
                    target_id: q.id,
                });
                used[rank] = true;
                placed_outliers += 1;
                continue;
            }
        }
        if placed_bounds < plan.bound_violations {
            out.group.quotes[pos].price = violating_price(&bounds, &mut rng);
            out.labels.push(Label {
                id: q.id,
                kind: InjectedKind::BoundViolation,
                target_id: q.id,
            });
            used[rank] = true;
            placed_bounds += 1;
        }
    }
    if placed_outliers < plan.outliers || placed_bounds < plan.bound_violations {
        return Err(too_many());
    }

    out.group.quotes.extend(dup_quotes);
    Ok(out)
}

fn monotone_against(t: OptionType, price: f64, below: Option<f64>, above: Option<f64>) -> bool {
    match t {
        OptionType::Call => below.is_none_or(|b| price < b) && above.is_none_or(|a| price > a),
        OptionType::Put => below.is_none_or(|b| price > b) && above.is_none_or(|a| price < a),
    }
}

fn violating_price(bounds: &PriceBounds, rng: &mut ChaCha8Rng) -> f64 {
    if bounds.lower > 0.0 && rng.gen::<bool>() {
        // strictly below the lower bound, still non-negative
        bounds.lower * rng.gen_range(0.0..0.9)
    } else {
        let excess = (bounds.upper * rng.gen_range(0.01..0.5)).max(0.01);
        bounds.upper + excess
    }
}

/// A multi-group dataset with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub ctx: MarketContext,
    /// Sorted by id; ids equal row positions.
    pub quotes: Vec<OptionQuote>,
    pub labels: Vec<Label>,
}

impl Fixture {
    pub fn label_ids(&self, kind: InjectedKind) -> HashSet<usize> {
        self.labels.iter().filter(|l| l.kind == kind).map(|l| l.id).collect()
    }
}

/// Writes labels as `id,kind,target_id`.
pub fn write_labels_to<W: std::io::Write>(writer: W, labels: &[Label]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for l in labels {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_from<R: std::io::Read>(reader: R) -> Result<Vec<Label>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

/// Generates every group in `specs`, then spreads the injections of `plan`
/// over them: bound violations and duplicates round-robin, outliers one per
/// group in turn.
pub fn build_fixture(
    ctx: &MarketContext,
    specs: &[SmileSpec],
    plan: &InjectionPlan,
    day_count: f64,
    seed: u64,
) -> Result<Fixture, SynthError> {
    if specs.is_empty() {
        return Err(SynthError::InvalidSpec("no groups".into()));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut first_id = 0;
    let mut groups = Vec::with_capacity(specs.len());
    for spec in specs {
        let g = generate_group(spec, ctx, day_count, seeds.gen(), first_id)?;
        first_id += g.group.len();
        groups.push(g);
    }

    let share = |count: usize, i: usize| count / specs.len() + usize::from(i < count % specs.len());
    let mut next_id = first_id;
    let mut quotes = Vec::new();
    let mut labels = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let group_plan = InjectionPlan {
            bound_violations: share(plan.bound_violations, i),
            outliers: share(plan.outliers, i),
            outlier_k: plan.outlier_k,
            duplicates: share(plan.duplicates, i),
        };
        let injected = inject_errors(g, &group_plan, ctx, day_count, seeds.gen(), next_id)?;
        next_id += group_plan.duplicates;
        quotes.extend(injected.group.quotes);
        labels.extend(injected.labels);
    }
    quotes.sort_by_key(|q| q.id);
    Ok(Fixture {
        ctx: *ctx,
        quotes,
        labels,
    })
}

/// The layout used by the bundled fixtures: spot 100, rate 0.15%, three
/// maturities, calls and puts on 81 strikes from 80 to 120, noise σ = 0.05.
pub fn standard_layout() -> (MarketContext, Vec<SmileSpec>) {
    let ctx = MarketContext::new(100.0, 0.0015).expect("valid context");
    let strikes: Vec<f64> = (0..81).map(|i| 80.0 + 0.5 * f64::from(i)).collect();
    let mut specs = Vec::new();
    for (i, days) in [30u32, 91, 182].into_iter().enumerate() {
        let level = 0.8 + 0.3 * i as f64;
        for (option_type, vertex) in [(OptionType::Call, 125.0), (OptionType::Put, 75.0)] {
            // level + 0.0125 (K - vertex)^2
            let c = 0.0125;
            specs.push(SmileSpec {
                option_type,
                maturity_days: days,
                smile: PolyCoeffs(vec![level + c * vertex * vertex, -2.0 * c * vertex, c]),
                strikes: strikes.clone(),
                noise_sigma: 0.05,
                open_interest: (10, 5000),
            });
        }
    }
    (ctx, specs)
}

/// Injection counts of the bundled fixtures.
pub const STANDARD_PLAN: InjectionPlan = InjectionPlan {
    bound_violations: 5,
    outliers: 3,
    outlier_k: 10.0,
    duplicates: 4,
};
