//! Counter-based pseudo-random numbers for reproducible simulation.
//!
//! Every run (and every fit restart) gets its own stream derived from
//! `(seed, stream index)`, so parallel and serial execution produce bitwise
//! identical results regardless of how work is sharded.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// splitmix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream keyed by `(seed, stream)`; distinct streams start from
    /// scrambled, effectively independent states.
    pub fn stream(seed: u64, stream: u64) -> Self {
        Self {
            state: mix(seed ^ stream.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard exponential via inversion.
    #[inline]
    pub fn next_exp(&mut self) -> f64 {
        -(1.0 - self.next_f64()).ln()
    }
}
