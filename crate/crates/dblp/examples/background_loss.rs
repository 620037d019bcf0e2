//! Pass economy under steady 5% background loss: the adaptive schedule
//! accepts each round in a single pass outside critical windows, while a
//! fixed 0.8% tolerance always needs a retransmission pass.
//!
//!     cargo run --release --example background_loss

use dblp::config::preset;
use dblp::runner::run;

fn main() {
    let cfg = preset("background-loss").expect("preset exists");
    let artifacts = run(&cfg).expect("simulate run");
    let baseline = artifacts
        .comparison
        .as_deref()
        .expect("preset carries a comparison");

    let total: u64 = artifacts.records.iter().map(|r| r.passes as u64).sum();
    let baseline_total: u64 = baseline.iter().map(|r| r.passes as u64).sum();
    let clr_rounds = artifacts
        .records
        .iter()
        .filter(|r| r.clr_active)
        .map(|r| r.round)
        .collect::<std::collections::BTreeSet<_>>();

    println!("adaptive passes: {total}");
    println!("fixed-tolerance passes: {baseline_total}");
    println!(
        "pass reduction: {:.1}%",
        100.0 * (baseline_total - total) as f64 / baseline_total as f64
    );
    println!(
        "critical-regime rounds: {} of {} ({:?})",
        clr_rounds.len(),
        cfg.steps,
        clr_rounds
    );
}
