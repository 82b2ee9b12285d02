//! Deterministic pseudo-random generator used everywhere randomness is needed.
//!
//! The generator is xoshiro256++ seeded through splitmix64. Both algorithms are
//! fixed by this module — not delegated to an external crate — so that an
//! identical seed produces an identical sample stream across runs, platforms,
//! and dependency upgrades. Training reproducibility and checkpoint resume both
//! rely on this.

/// splitmix64 step. Used for seeding and for cheap stateless hashing.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Hash a byte string to a u64 with splitmix64 over 8-byte chunks.
///
/// Stable across platforms; used for user-id split assignment and feature
/// hashing, where `std`'s `DefaultHasher` would not be version-stable.
pub fn hash_bytes(seed: u64, bytes: &[u8]) -> u64 {
    let mut state = seed ^ 0x51_7c_c1_b7_27_22_0a_95;
    let mut acc = splitmix64(&mut state);
    for chunk in bytes.chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state ^= u64::from_le_bytes(word).wrapping_add(acc);
        acc = splitmix64(&mut state);
    }
    state ^= bytes.len() as u64;
    splitmix64(&mut state)
}

/// xoshiro256++ generator state.
///
/// Serializable as four u64 words; see [`RngState::state_words`] and
/// [`RngState::from_state_words`] (checkpoints store these verbatim).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    s: [u64; 4],
}

impl RngState {
    /// Seed via splitmix64, per the xoshiro authors' recommendation.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        RngState { s }
    }

    /// Independent stream derived from (seed, stream). Streams with different
    /// tags are decorrelated by the splitmix64 avalanche.
    pub fn for_substream(seed: u64, stream: u64) -> Self {
        let mut sm = seed;
        let a = splitmix64(&mut sm);
        let mut sm2 = stream ^ 0x9e3779b97f4a7c15;
        let b = splitmix64(&mut sm2);
        Self::from_seed(a ^ b.rotate_left(17))
    }

    pub fn state_words(&self) -> [u64; 4] {
        self.s
    }

    pub fn from_state_words(words: [u64; 4]) -> Self {
        RngState { s: words }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). n must be positive.
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection-free multiply-shift; bias is < 2^-64 * n, irrelevant here,
        // and the mapping is platform-stable which is what matters.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller. Two uniforms per sample, no cached
    /// spare, so the state stays four words and serializes cleanly.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}
