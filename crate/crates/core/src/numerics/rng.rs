//! Seeded pseudo-random generation.
//!
//! The generator is xoshiro256** (Blackman & Vigna) with its 256-bit state
//! filled from the 64-bit seed by four SplitMix64 steps. Both algorithms are
//! fixed; every experiment in this crate depends on the exact stream, so the
//! first values for seed 42 are pinned in the tests below.
//!
//! Sub-streams for pipeline components are derived by hashing the component
//! name (FNV-1a 64) into the parent seed, see [`Rng::derive`].

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a 64-bit hash of a string.
pub fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { seed, s }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for a named component, a pure function of
    /// `(self.seed, name)`. Does not advance `self`.
    pub fn derive(&self, name: &str) -> Rng {
        let mut sm = self.seed ^ fnv1a(name);
        Rng::new(splitmix64(&mut sm))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        // rejection sampling keeps the result unbiased
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_42_stream_is_pinned() {
        let mut rng = Rng::new(42);
        let vals: Vec<u64> = (0..100).map(|_| rng.next_u64()).collect();
        assert_eq!(
            &vals[..5],
            &[
                1546998764402558742,
                6990951692964543102,
                12544586762248559009,
                17057574109182124193,
                18295552978065317476
            ]
        );
        assert_eq!(vals[99], 1037873480352228813);
        let sum = vals.iter().fold(0u64, |a, &v| a.wrapping_add(v));
        assert_eq!(sum, 2941489668532899912);
    }

    #[test]
    fn derive_is_pure_and_distinct() {
        let root = Rng::new(7);
        let mut a = root.derive("level-0");
        let mut b = root.derive("level-0");
        let mut c = root.derive("level-1");
        let x = a.next_u64();
        assert_eq!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
        assert_eq!(root, Rng::new(7));
    }

    #[test]
    fn below_and_f64_ranges() {
        let mut rng = Rng::new(1);
        for _ in 0..10_000 {
            let v = rng.next_f64();
            assert!((0.0..1.0).contains(&v));
            assert!(rng.below(7) < 7);
        }
        let mut v: Vec<usize> = (0..20).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }
}
