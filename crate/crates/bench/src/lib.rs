//! Criterion benchmarks for the hot paths; run with `cargo bench -p amil-bench`.

use amil_core::synthdata::{make_bags, sample_events, Bag, EventFamily};

/// `n_bags` bags of `n_b` events drawn at θ.
pub fn bags(family: &EventFamily, theta: f64, n_bags: usize, n_b: usize, seed: u64) -> Vec<Bag> {
    let ev = sample_events(family, theta, n_bags * n_b, seed).expect("sample");
    make_bags(&ev, n_b, seed ^ 1).expect("bags")
}
