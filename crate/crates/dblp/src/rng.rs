//! Counter-based pseudorandom generation.
//!
//! Every random decision in the simulator (packet drops, jitter, synthetic
//! data) is a pure function of a 64-bit key and a counter, so runs replay
//! identically across platforms and thread schedules. The mixing function is
//! SplitMix64; an implementation in any language that follows the formulas
//! below reproduces the same streams bit for bit.
//!
//! Drop decisions are keyed as `mix3(seed, round, counter)` where `counter`
//! is the 0-based datagram index within the round.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const ROUND_SALT: u64 = 0xa076_1d64_78bd_642f;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless draw keyed by (seed, stream, counter).
pub fn mix3(seed: u64, stream: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(seed ^ stream.wrapping_mul(ROUND_SALT)) ^ counter.wrapping_mul(GOLDEN))
}

/// Maps a 64-bit word to a uniform double in [0, 1).
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential generator over the same mixing function, for bulk sampling.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: splitmix64(seed ^ stream.wrapping_mul(ROUND_SALT)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let h = splitmix64(self.key ^ self.counter.wrapping_mul(GOLDEN));
        self.counter += 1;
        h
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: u64) -> u64 {
        // Modulo bias is irrelevant at the sample counts used here.
        self.next_u64() % n
    }

    /// Standard normal via Box-Muller.
    pub fn next_gauss(&mut self) -> f64 {
        let u1 = (1.0 - self.next_f64()).max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
