//! Seeded pseudo-random numbers.
//!
//! xorshift64* with a splitmix64-scrambled seed. The integer stream depends
//! only on the seed, never on platform or build flags.

use std::f64::consts::TAU;

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    spare_normal: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut state = splitmix64(seed);
        if state == 0 {
            // zero is the one fixed point of xorshift
            state = 0x9E37_79B9_7F4A_7C15;
        }
        Rng {
            state,
            spare_normal: None,
        }
    }

    /// An independent generator derived from this one's seed material and `stream`.
    pub fn fork(&self, stream: u64) -> Self {
        Rng::new(self.state ^ splitmix64(stream.wrapping_add(1)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`, by rejection so there is no modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// One standard normal draw (Box–Muller, both outputs used).
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping ln finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    /// `n` draws from `N(mean, std²)`.
    pub fn normal(&mut self, n: usize, mean: f64, std: f64) -> Vec<f64> {
        assert!(std >= 0.0, "standard deviation must be non-negative");
        (0..n).map(|_| mean + std * self.standard_normal()).collect()
    }

    /// Fisher–Yates.
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
    fn same_seed_same_stream() {
        let a = Rng::new(42).normal(5, 0.0, 1.0);
        let b = Rng::new(42).normal(5, 0.0, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, Rng::new(43).normal(5, 0.0, 1.0));
    }

    const PINNED: [u64; 3] = [8916199331640804048, 16032783972208265725, 12954103179475586193];

    #[test]
    fn integer_stream_is_pinned() {
        // Cross-checked against an independent implementation.
        let mut r = Rng::new(0);
        let got: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        assert_eq!(got, PINNED);
    }

    #[test]
    fn zero_std_is_constant() {
        let v = Rng::new(1).normal(17, 3.5, 0.0);
        assert!(v.iter().all(|&x| x == 3.5));
    }

    #[test]
    fn normal_moments() {
        let n = 100_000;
        let v = Rng::new(2024).normal(n, 0.0, 1.0);
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn uniform_range() {
        let mut r = Rng::new(5);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..1000).collect();
        Rng::new(9).shuffle(&mut v);
        assert_ne!(v, (0..1000).collect::<Vec<_>>());
        v.sort_unstable();
        assert_eq!(v, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn forks_differ() {
        let base = Rng::new(3);
        let mut a = base.fork(0);
        let mut b = base.fork(1);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
