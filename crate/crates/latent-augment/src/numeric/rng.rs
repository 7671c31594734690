//! Seeded random number generation.
//!
//! Everything stochastic in this crate flows through [`Rng`], a SplitMix64
//! stream. The same seed always yields a bit-identical stream, and named
//! substreams (`data`, `init`, `noise`, ...) are derived by hashing the seed
//! together with a label, so each consumer advances its own stream without
//! disturbing the others.

/// 64-bit FNV-1a over a byte slice. Used for seed derivation and for
/// fingerprinting config/schedule parameters; not cryptographic.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a base seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + label.len());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(label.as_bytes());
    fnv1a64(&buf)
}

/// Derive a child seed from a base seed and a numeric index, for per-sample
/// substreams that must be independent of processing order.
pub fn derive_seed_index(seed: u64, index: u64) -> u64 {
    let mut buf = [0u8; 17];
    buf[..8].copy_from_slice(&seed.to_le_bytes());
    buf[8] = b'#';
    buf[9..].copy_from_slice(&index.to_le_bytes());
    fnv1a64(&buf)
}

/// Deterministic SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, state: seed }
    }

    /// The seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh stream for `label`, derived from this stream's seed.
    /// Independent of how far this stream has advanced.
    pub fn substream(&self, label: &str) -> Rng {
        Rng::new(derive_seed(self.seed, label))
    }

    /// A fresh stream for a numeric index (e.g. one per generated sample).
    pub fn substream_index(&self, index: u64) -> Rng {
        Rng::new(derive_seed_index(self.seed, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, n). Rejection sampling keeps the draw unbiased.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        loop {
            let x = self.next_u64();
            let r = x % n;
            if x.wrapping_sub(r) <= u64::MAX - (n - 1) {
                return r;
            }
        }
    }

    /// Standard normal via Box-Muller. Two uniforms per draw; no cached
    /// second value, so the stream position is a pure function of the number
    /// of draws.
    pub fn next_normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        for i in (1..n).rev() {
            let j = self.next_below((i + 1) as u64) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substreams_differ_from_parent_and_each_other() {
        let root = Rng::new(7);
        let mut a = root.substream("data");
        let mut b = root.substream("init");
        let mut c = root.clone();
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(y, z);
    }

    #[test]
    fn substream_ignores_parent_position() {
        let mut root = Rng::new(7);
        let before = root.substream("noise").next_u64();
        root.next_u64();
        root.next_u64();
        let after = root.substream("noise").next_u64();
        assert_eq!(before, after);
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(1234);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = rng.next_normal();
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn next_below_in_range() {
        let mut rng = Rng::new(9);
        for _ in 0..1000 {
            assert!(rng.next_below(7) < 7);
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = Rng::new(3);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, (0..50).collect::<Vec<_>>());
    }
}
