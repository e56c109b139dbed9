#![allow(dead_code)]

use std::fs::File;
use std::path::{Path, PathBuf};

use optclean::ingest::{self, ReadOptions};
use optclean::model::MarketContext;
use optclean::synthgen::{self, build_fixture, standard_layout, Fixture, STANDARD_PLAN};

pub const FIXTURE_COUNT: u64 = 20;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_stem(seed: u64) -> String {
    format!("standard_{seed:02}")
}

pub fn generate_standard(seed: u64) -> Fixture {
    let (ctx, specs) = standard_layout();
    build_fixture(&ctx, &specs, &STANDARD_PLAN, 365.0, seed).expect("standard layout is feasible")
}

/// Loads `standard_NN.csv`, `standard_NN.labels.csv` and `standard.context.json`.
pub fn load_standard(seed: u64) -> Fixture {
    let dir = fixture_dir();
    let stem = fixture_stem(seed);
    let table = ingest::read_quotes(&dir.join(format!("{stem}.csv")), &ReadOptions::default())
        .expect("fixture quotes");
    let labels = synthgen::read_labels_from(
        File::open(dir.join(format!("{stem}.labels.csv"))).expect("fixture labels"),
    )
    .expect("label rows");
    let ctx: MarketContext =
        ingest::read_market_context(&dir.join("standard.context.json")).expect("fixture context");
    Fixture {
        ctx,
        quotes: table.quotes,
        labels,
    }
}
