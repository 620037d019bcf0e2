//! Walks the critical-learning-regime automaton through a scripted gradient
//! norm trajectory and prints the tolerance decision per step.
//!
//!     cargo run --example clr_schedule

use dblp::clr::{ClrConfig, ToleranceSchedule};

fn main() {
    let cfg = ClrConfig {
        p_low: 0.008,
        p_high: 0.408,
        eta: 0.5,
        freq: 10,
        per_step_norms: false,
    };
    let mut schedule = ToleranceSchedule::new(cfg).expect("valid config");

    // Norm plateaus at 10, collapses to 4 at step 20 (a 60% change, above
    // eta = 0.5), then plateaus again.
    let norm = |step: u64| if step < 20 { 10.0 } else { 4.0 };

    println!("step  norm  tolerance  critical");
    for step in 0..40 {
        let tol = schedule.advance(step, norm(step));
        println!(
            "{step:>4}  {:>4.1}  {tol:>9.3}  {}",
            norm(step),
            if schedule.clr_active() { "yes" } else { "no" }
        );
    }
}
