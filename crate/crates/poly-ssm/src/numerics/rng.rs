//! Counter-based deterministic random generator.
//!
//! Output i is a pure function of (seed, i): the generator hashes the seed
//! plus a step counter through a 64-bit finalizer, so streams never depend
//! on call order and per-sample substreams can be split off by index
//! without touching the parent. This is what makes dataset generation and
//! training runs reproducible bit-for-bit regardless of batching or
//! parallel fan-out.

/// 64-bit mix finalizer (splitmix64). Full avalanche, bijective.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Splits off an independent substream. Deterministic in (seed, index)
    /// and independent of how much the parent has been consumed.
    pub fn derive(&self, index: u64) -> Rng {
        let salt = mix64(index.wrapping_mul(GOLDEN).wrapping_add(0x6A09_E667_F3BC_C909));
        Rng::new(mix64(self.seed ^ salt))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Widening-multiply reduction; the bias is
    /// below 2^-60 for the small n used here.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    #[inline]
    pub fn bit(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }
}
