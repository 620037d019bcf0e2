//! Reproduces the microburst experiment: 930 training rounds with one-round
//! 70% loss bursts at rounds 279 and 651, adaptive tolerance 0.008/0.408
//! against a fixed 0.008 run under identical seeds.
//!
//!     cargo run --release --example microburst

use dblp::config::preset;
use dblp::metrics::{summarize, Direction};
use dblp::runner::run;

fn main() {
    let mut cfg = preset("microburst-effnet").expect("preset exists");
    cfg.out_dir = Some(std::env::temp_dir().join("dblp-microburst"));
    let artifacts = run(&cfg).expect("simulate run");

    let baseline = artifacts
        .comparison
        .as_deref()
        .expect("preset carries a comparison");
    for &(round, _) in &cfg.loss.bursts {
        let passes_at = |records: &[dblp::metrics::RoundMetrics]| {
            records
                .iter()
                .find(|r| r.round == round && r.direction == Direction::W2S)
                .map(|r| r.passes)
                .expect("burst round recorded")
        };
        println!(
            "burst round {round}: adaptive {} passes, fixed {} passes",
            passes_at(&artifacts.records),
            passes_at(baseline),
        );
    }

    let summary = summarize(&artifacts.records, Some(baseline)).expect("non-empty run");
    println!(
        "tail latency: {:.5}s vs {:.5}s fixed ({:.2}x)",
        summary.tail,
        summary.comparison_tail.unwrap(),
        summary.tail_speedup.unwrap()
    );
    println!(
        "average latency: {:.5}s vs {:.5}s fixed ({:.2}x)",
        summary.average,
        summary.comparison_average.unwrap(),
        summary.average_speedup.unwrap()
    );
    if let Some(dir) = &cfg.out_dir {
        println!("CSV artifacts in {}", dir.display());
    }
}
