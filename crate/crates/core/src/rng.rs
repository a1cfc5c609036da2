//! Seeded, portable random number generation.
//!
//! Sampling decisions must be reproducible across platforms, architectures and
//! releases, so this module fixes the generator to two published constructions:
//! splitmix64 for seeding/stream derivation and xoshiro256++ for the output
//! sequence. Streams are keyed by `(seed, label)` so independent clips draw
//! from independent sequences regardless of processing order.

/// One step of the splitmix64 sequence. Advances `state` and returns the next
/// output. Published constants; do not change them, they define the streams.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes. Used to fold textual stream labels (clip ids) into
/// the 64-bit stream key.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01B3);
    }
    h
}

/// xoshiro256++ generator with splitmix64 seeding.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    /// Generator seeded from a single 64-bit value via splitmix64, the
    /// seeding procedure recommended by the xoshiro authors.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        // splitmix64 never yields four zeros, so the state is valid.
        Rng { s }
    }

    /// Independent stream for `(seed, label)`. Two distinct labels under the
    /// same seed give unrelated sequences; the same pair always gives the
    /// same sequence.
    pub fn for_stream(seed: u64, label: &str) -> Self {
        let mut sm = seed;
        let a = splitmix64(&mut sm);
        Self::from_seed(a ^ fnv1a64(label.as_bytes()))
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

    /// Unbiased draw in `[0, n)`. Rejection sampling over the largest multiple
    /// of `n` that fits in 64 bits, so every residue is exactly equally likely.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires n > 0");
        // 2^64 mod n; values >= 2^64 - rem would bias the modulo and are redrawn.
        let rem = (u64::MAX % n + 1) % n;
        loop {
            let x = self.next_u64();
            if rem == 0 || x < u64::MAX - rem + 1 {
                return x % n;
            }
        }
    }

    /// Uniform f64 in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
