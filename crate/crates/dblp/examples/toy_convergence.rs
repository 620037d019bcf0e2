//! Trains the toy softmax classifier over the lossy simulated network with
//! the adaptive tolerance schedule, and compares final train accuracy
//! against a zero-tolerance (fully retransmitted) run of the same seeds.
//!
//!     cargo run --release --example toy_convergence

use dblp::allreduce::SimCluster;
use dblp::config::preset;
use dblp::lossnet::LossSchedule;

fn final_accuracy(cfg: &dblp::ExperimentConfig) -> f64 {
    let mut cluster = SimCluster::new(cfg).expect("valid preset");
    for _ in 0..cfg.steps {
        cluster.step().expect("simulated step");
    }
    // All workers hold identical models after the final broadcast; average
    // their shard accuracies for a whole-dataset figure.
    let n = cluster.worker_count();
    (0..n)
        .map(|i| cluster.worker_accuracy(i).expect("toy workload"))
        .sum::<f64>()
        / n as f64
}

fn main() {
    let mut worst_gap = 0.0f64;
    for seed in 1..=5u64 {
        let mut cfg = preset("toy-convergence").expect("preset exists");
        cfg.seed = seed;
        cfg.loss.seed = seed;

        let adaptive = final_accuracy(&cfg);

        // Lossless reference: identical seeds and workload, perfect network.
        let mut reference_cfg = cfg.clone();
        reference_cfg.loss = LossSchedule::lossless(seed);
        let lossless = final_accuracy(&reference_cfg);

        let gap = (adaptive - lossless).abs();
        worst_gap = worst_gap.max(gap);
        println!(
            "seed {seed}: lossy-adaptive acc {adaptive:.4}  lossless acc {lossless:.4}  gap {gap:.4}"
        );
    }
    println!("worst gap across seeds: {worst_gap:.4}");
}
