//! Critical-learning-regime detection and the resulting tolerance schedule.
//!
//! Detection watches the relative change of the global gradient L2 norm:
//! a check fires when `|prev - curr| / prev >= eta`. Checks run every `freq`
//! steps; a firing check holds the tolerance at the low value for the next
//! `freq` steps, after which the schedule re-evaluates. Outside a critical
//! window the tolerance is the high value. Step 0 is always treated as
//! critical.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClrError {
    #[error("invalid tolerance pair: p_low {p_low} must be < p_high {p_high}, both in [0, 1)")]
    BadTolerances { p_low: f64, p_high: f64 },
    #[error("freq must be >= 1")]
    ZeroFreq,
}

/// Relative-norm-drop detection. A vanished previous norm counts as
/// triggered (maximal relative change) to avoid dividing by zero.
pub fn clr_triggered(prev_norm: f64, curr_norm: f64, eta: f64) -> bool {
    if prev_norm == 0.0 {
        return true;
    }
    (prev_norm - curr_norm).abs() / prev_norm >= eta
}

/// Global L2 norm over a set of tensors, accumulated in f64.
pub fn l2_norm<'a, I>(tensors: I) -> f64
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut sum = 0.0f64;
    for tensor in tensors {
        for &v in tensor {
            sum += v as f64 * v as f64;
        }
    }
    sum.sqrt()
}

/// Global L2 norm of one flat buffer.
pub fn l2_norm_flat(values: &[f32]) -> f64 {
    l2_norm(std::iter::once(values))
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClrConfig {
    pub p_low: f64,
    pub p_high: f64,
    /// Detection threshold on the relative norm change.
    pub eta: f64,
    /// Steps between checks, and the duration of a triggered window.
    pub freq: u64,
    /// Compare against the immediately previous step's norm instead of the
    /// norm sampled at the last check step.
    pub per_step_norms: bool,
}

impl ClrConfig {
    pub fn new(p_low: f64, p_high: f64) -> Self {
        Self {
            p_low,
            p_high,
            eta: 0.5,
            freq: 10,
            per_step_norms: false,
        }
    }

    pub fn validate(&self) -> Result<(), ClrError> {
        if !(0.0..1.0).contains(&self.p_low)
            || !(0.0..1.0).contains(&self.p_high)
            || self.p_low >= self.p_high
        {
            return Err(ClrError::BadTolerances {
                p_low: self.p_low,
                p_high: self.p_high,
            });
        }
        if self.freq == 0 {
            return Err(ClrError::ZeroFreq);
        }
        Ok(())
    }
}

/// The tolerance automaton: decides the active loss tolerance each step.
#[derive(Debug, Clone)]
pub struct ToleranceSchedule {
    cfg: ClrConfig,
    /// Norm sampled at the last check step.
    prev_norm: Option<f64>,
    /// Norm from the immediately previous step (per-step mode).
    last_norm: Option<f64>,
    clr_remaining: u64,
    current: f64,
    clr_active: bool,
}

impl ToleranceSchedule {
    pub fn new(cfg: ClrConfig) -> Result<Self, ClrError> {
        cfg.validate()?;
        let p_low = cfg.p_low;
        Ok(Self {
            cfg,
            prev_norm: None,
            last_norm: None,
            clr_remaining: 0,
            current: p_low,
            clr_active: true,
        })
    }

    /// Tolerance currently in effect (p_low before the first step).
    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn clr_active(&self) -> bool {
        self.clr_active
    }

    pub fn config(&self) -> &ClrConfig {
        &self.cfg
    }

    /// Advances one step with the step's gradient norm; returns the active
    /// tolerance for the step. Steps must be fed consecutively from 0.
    pub fn advance(&mut self, step: u64, curr_norm: f64) -> f64 {
        if step == 0 {
            // The start of training is always critical.
            self.prev_norm = Some(curr_norm);
            self.last_norm = Some(curr_norm);
            self.clr_remaining = 0;
            self.clr_active = true;
            self.current = self.cfg.p_low;
            return self.current;
        }
        if step.is_multiple_of(self.cfg.freq) {
            let reference = if self.cfg.per_step_norms {
                self.last_norm
            } else {
                self.prev_norm
            };
            let triggered = match reference {
                Some(prev) => clr_triggered(prev, curr_norm, self.cfg.eta),
                None => true,
            };
            // A retrigger while a window is active resets it to full length.
            self.clr_remaining = if triggered { self.cfg.freq } else { 0 };
            self.prev_norm = Some(curr_norm);
        } else if self.clr_remaining > 0 {
            self.clr_remaining -= 1;
        }
        self.last_norm = Some(curr_norm);
        self.clr_active = self.clr_remaining > 0;
        self.current = if self.clr_active {
            self.cfg.p_low
        } else {
            self.cfg.p_high
        };
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn schedule(p_low: f64, p_high: f64, freq: u64) -> ToleranceSchedule {
        let mut cfg = ClrConfig::new(p_low, p_high);
        cfg.freq = freq;
        ToleranceSchedule::new(cfg).unwrap()
    }

    #[test]
    fn triggered_cases() {
        assert!(clr_triggered(10.0, 4.0, 0.5)); // 0.6 >= 0.5
        assert!(!clr_triggered(10.0, 6.0, 0.5)); // 0.4 < 0.5
        assert!(clr_triggered(10.0, 16.0, 0.5)); // |−6|/10, increases count too
        assert!(clr_triggered(0.0, 1.0, 0.5)); // degenerate collapse
    }

    #[test]
    fn scale_invariance() {
        for &c in &[1e-3, 1.0, 1e3] {
            assert_eq!(
                clr_triggered(10.0 * c, 4.0 * c, 0.5),
                clr_triggered(10.0, 4.0, 0.5)
            );
            assert_eq!(
                clr_triggered(10.0 * c, 6.0 * c, 0.5),
                clr_triggered(10.0, 6.0, 0.5)
            );
        }
    }

    #[test]
    fn constant_norms_leave_only_step_zero_low() {
        let mut s = schedule(0.008, 0.408, 10);
        assert_eq!(s.advance(0, 5.0), 0.008);
        for step in 1..100 {
            assert_eq!(s.advance(step, 5.0), 0.408, "step {step}");
        }
    }

    #[test]
    fn norm_halving_holds_low_for_exactly_freq_steps() {
        let mut s = schedule(0.008, 0.408, 10);
        // Norm 10.0 through step 19, then 4.0 from step 20 on.
        for step in 0..20u64 {
            s.advance(step, 10.0);
        }
        for step in 20..30u64 {
            assert_eq!(s.advance(step, 4.0), 0.008, "step {step} inside the window");
        }
        // Step 30 re-evaluates: 4.0 vs 4.0 is no change.
        assert_eq!(s.advance(30, 4.0), 0.408);
    }

    #[test]
    fn active_tolerance_is_always_one_of_the_pair() {
        let mut s = schedule(0.024, 0.424, 7);
        let mut rng = CounterRng::new(3, 0);
        for step in 0..500u64 {
            let tol = s.advance(step, 1.0 + 20.0 * rng.next_f64());
            assert!(tol == 0.024 || tol == 0.424);
        }
    }

    #[test]
    fn retrigger_extends_window() {
        let mut s = schedule(0.008, 0.408, 5);
        s.advance(0, 16.0);
        for step in 1..5 {
            s.advance(step, 16.0);
        }
        assert_eq!(s.advance(5, 8.0), 0.008); // halved: trigger
        for step in 6..10 {
            assert_eq!(s.advance(step, 4.0), 0.008);
        }
        // Check at 10: 8.0 -> 4.0 is another halving, window restarts.
        assert_eq!(s.advance(10, 4.0), 0.008);
        for step in 11..15 {
            assert_eq!(s.advance(step, 4.0), 0.008);
        }
        assert_eq!(s.advance(15, 4.0), 0.408);
    }

    #[test]
    fn l2_norm_matches_naive_accumulation() {
        assert_eq!(l2_norm_flat(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm_flat(&[0.0; 32]), 0.0);
        let mut rng = CounterRng::new(8, 1);
        let a: Vec<f32> = (0..500).map(|_| rng.range_f64(-2.0, 2.0) as f32).collect();
        let b: Vec<f32> = (0..300).map(|_| rng.range_f64(-2.0, 2.0) as f32).collect();
        let naive: f64 = {
            let mut sum = 0.0f64;
            for &v in a.iter().chain(b.iter()) {
                sum += (v as f64).powi(2);
            }
            sum.sqrt()
        };
        let got = l2_norm([a.as_slice(), b.as_slice()]);
        assert!((got - naive).abs() / naive < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(ClrConfig::new(0.008, 0.408).validate().is_ok());
        assert!(ClrConfig::new(0.5, 0.4).validate().is_err());
        assert!(ClrConfig::new(0.2, 1.0).validate().is_err());
        let mut cfg = ClrConfig::new(0.1, 0.2);
        cfg.freq = 0;
        assert!(cfg.validate().is_err());
    }
}
