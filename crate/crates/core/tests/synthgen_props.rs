mod common;

use optclean::arbitrage_filter::filter_arbitrage;
use optclean::dedup::remove_duplicates;
use optclean::model::CleaningConfig;
use optclean::synthgen::{build_fixture, standard_layout, InjectionPlan};

const NO_INJECTIONS: InjectionPlan = InjectionPlan {
    bound_violations: 0,
    outliers: 0,
    outlier_k: 10.0,
    duplicates: 0,
};

#[test]
fn generator_is_deterministic() {
    for seed in [0, 1, 99, u64::MAX] {
        assert_eq!(common::generate_standard(seed), common::generate_standard(seed));
    }
    assert_ne!(common::generate_standard(1).quotes, common::generate_standard(2).quotes);
}

#[test]
fn clean_data_passes_bounds_and_dedup_untouched() {
    let (ctx, specs) = standard_layout();
    let config = CleaningConfig::default();
    for seed in 0..50 {
        let f = build_fixture(&ctx, &specs, &NO_INJECTIONS, 365.0, seed).unwrap();
        assert!(f.labels.is_empty());
        assert!(filter_arbitrage(&f.quotes, &ctx, &config).removed.is_empty(), "seed {seed}");
        assert!(remove_duplicates(&f.quotes).removed.is_empty(), "seed {seed}");
    }
}
