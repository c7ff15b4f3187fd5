//! Deterministic pseudo-random streams.
//!
//! All randomness in this crate flows through [`DetRng`], a SplitMix64
//! generator with a single `u64` of state. The state is plain data, so it
//! serializes with the values that carry it and produces the same stream on
//! every platform. Independent substreams are derived with [`stream`], which
//! keys a fresh seed off a base seed and an index (iteration number, episode
//! number, agent id, ...). Nothing in the crate touches ambient OS
//! randomness.

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a stream index.
pub fn stream(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_mul(GAMMA).wrapping_add(GAMMA)))
}

/// Derives a seed from a base seed and two indices (e.g. iteration, agent).
pub fn stream2(seed: u64, a: u64, b: u64) -> u64 {
    stream(stream(seed, a), b)
}

/// SplitMix64 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Raw state, exposed so environment snapshots can record it.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn from_state(state: u64) -> Self {
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` via widening multiply. `n` must be > 0.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal draw (Box-Muller; consumes two uniforms per call).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln() finite
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Chooses `k` distinct items from `pool` (partial Fisher-Yates).
    /// Returns them sorted ascending.
    pub fn choose_k(&mut self, pool: &[usize], k: usize) -> Vec<usize> {
        assert!(k <= pool.len(), "cannot choose {k} from {}", pool.len());
        let mut items = pool.to_vec();
        for i in 0..k {
            let j = i + self.below((items.len() - i) as u64) as usize;
            items.swap(i, j);
        }
        items.truncate(k);
        items.sort_unstable();
        items
    }
}
