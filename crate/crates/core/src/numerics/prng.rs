//! Deterministic randomness: xoshiro256++ with splitmix64 seeding.
//!
//! The generator is specified exactly so that a seed produces the same
//! stream on every platform and in every build; dataset files and CSV
//! outputs are reproducible byte for byte because of this.

use super::Vector;

/// xoshiro256++ generator (Blackman & Vigna), 256-bit state.
#[derive(Clone, Debug)]
pub struct Prng {
    s: [u64; 4],
}

impl Prng {
    /// Expands a 64-bit seed into the full state with splitmix64.
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in &mut s {
            *slot = splitmix64(&mut sm);
        }
        // all-zero state is invalid for xoshiro
        if s == [0, 0, 0, 0] {
            s[0] = 0x9E3779B97F4A7C15;
        }
        Self { s }
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

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`; safe as a logarithm argument.
    pub fn next_open_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` via rejection sampling (unbiased).
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Advances the state by 2^128 steps; `clone` + `jump` yields streams
    /// that never overlap in practice, used for parallel chains.
    pub fn jump(&mut self) {
        const JUMP: [u64; 4] = [
            0x180EC6D33CFD0ABA,
            0xD5A61266F0C9392C,
            0xA9582618E03FC9AA,
            0x39ABDC4529B1661C,
        ];
        let mut s = [0u64; 4];
        for word in JUMP {
            for bit in 0..64 {
                if (word & (1u64 << bit)) != 0 {
                    s[0] ^= self.s[0];
                    s[1] ^= self.s[1];
                    s[2] ^= self.s[2];
                    s[3] ^= self.s[3];
                }
                self.next_u64();
            }
        }
        self.s = s;
    }

    /// Returns an independent stream and advances `self` past it.
    pub fn fork(&mut self) -> Prng {
        let child = self.clone();
        self.jump();
        child
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// `n` i.i.d. standard normal draws via the Box-Muller transform.
///
/// Each call consumes ceil(n/2) uniform pairs; the spare half of an odd
/// draw is discarded, so the stream position depends only on the call
/// sequence, not on internal caching.
pub fn standard_normal(prng: &mut Prng, n: usize) -> Vector {
    assert!(n >= 1, "standard_normal needs n >= 1");
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1 = prng.next_open_f64();
        let u2 = prng.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        out.push(r * theta.sin());
    }
    out.truncate(n);
    Vector::from_vec_unchecked(out)
}
