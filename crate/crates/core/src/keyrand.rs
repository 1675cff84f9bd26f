//! Labeled, reproducible random streams.
//!
//! Every key-dependent object is drawn from a [`RandStream`] obtained with
//! [`derive_stream`]. The stream state is a pure function of the 64-bit seed
//! and a short ASCII label:
//!
//! ```text
//! h      = FNV-1a-64(label bytes)
//! k0     = splitmix64(seed)
//! k1     = splitmix64(k0 ^ h)
//! word_i = splitmix64(k1 + i * 0x9E3779B97F4A7C15), i = 0..4
//! ```
//!
//! The four words (little-endian) form the 256-bit key of a ChaCha20 stream
//! cipher used as the generator. Uniforms take the top 53 bits of each 64-bit
//! output; Gaussians use Box–Muller on consecutive uniform pairs, returning
//! the cosine branch first and the sine branch on the next call.
//!
//! Streams are not cryptographically meaningful key schedules; they only make
//! every experiment reproducible bit-for-bit.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::ensembles::Permutation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KeySeed(pub u64);

impl From<u64> for KeySeed {
    fn from(v: u64) -> Self {
        KeySeed(v)
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

/// A single-consumer random stream tagged with the label it was derived from.
#[derive(Clone, Debug)]
pub struct RandStream {
    rng: ChaCha20Rng,
    label: String,
    spare_gaussian: Option<f64>,
}

/// Derives the stream for `(seed, label)`.
///
/// # Panics
///
/// Panics if `label` is empty or not ASCII; labels are compile-time tags in
/// this crate, so a bad one is a programming error.
pub fn derive_stream(seed: KeySeed, label: &str) -> RandStream {
    assert!(!label.is_empty() && label.is_ascii(), "stream labels must be non-empty ASCII");
    let k1 = splitmix64(splitmix64(seed.0) ^ fnv1a64(label.as_bytes()));
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        let word = splitmix64(k1.wrapping_add((i as u64).wrapping_mul(GOLDEN)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    RandStream { rng: ChaCha20Rng::from_seed(key), label: label.to_owned(), spare_gaussian: None }
}

impl RandStream {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box–Muller).
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare_gaussian = Some(r * s);
        r * c
    }

    /// Uniform integer in `0..bound` without modulo bias.
    pub fn next_index(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "next_index bound must be positive");
        self.rng.random_range(0..bound)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn next_int_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "empty integer range");
        self.rng.random_range(lo..=hi)
    }

    /// `+1.0` or `-1.0` with equal probability.
    pub fn next_sign(&mut self) -> f64 {
        if self.rng.next_u32() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }
}

/// Uniformly random permutation of `0..n` by Fisher–Yates.
pub fn random_permutation(stream: &mut RandStream, n: usize) -> Permutation {
    assert!(n >= 1, "permutation size must be positive");
    let mut map: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = stream.next_index(i + 1);
        map.swap(i, j);
    }
    Permutation::new(map).expect("shuffle of the identity is a bijection")
}

/// `k` distinct indices from `0..n`, in draw order (partial Fisher–Yates).
pub fn sample_indices(stream: &mut RandStream, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} distinct indices from {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + stream.next_index(n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first(stream: &mut RandStream, n: usize) -> Vec<u64> {
        (0..n).map(|_| stream.next_u64()).collect()
    }

    #[test]
    fn same_seed_and_label_replays() {
        let a = first(&mut derive_stream(KeySeed(1), "A"), 100);
        let b = first(&mut derive_stream(KeySeed(1), "A"), 100);
        assert_eq!(a, b);
    }

    #[test]
    fn labels_and_seeds_separate_streams() {
        let a = derive_stream(KeySeed(1), "A").next_u64();
        assert_ne!(a, derive_stream(KeySeed(1), "B").next_u64());
        assert_ne!(a, derive_stream(KeySeed(2), "A").next_u64());
    }

    #[test]
    fn uniform_range_and_mean() {
        let mut s = derive_stream(KeySeed(7), "uniform");
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = s.next_uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn uniform_replays_from_cloned_state() {
        let mut s = derive_stream(KeySeed(3), "replay");
        s.next_uniform();
        let mut t = s.clone();
        assert_eq!(s.next_uniform(), t.next_uniform());
        assert_eq!(s.next_gaussian(), t.next_gaussian());
    }

    #[test]
    fn gaussian_moments_and_central_mass() {
        let mut s = derive_stream(KeySeed(11), "gauss");
        let n = 1_000_000;
        let (mut sum, mut sq, mut inside) = (0.0, 0.0, 0usize);
        for _ in 0..n {
            let z = s.next_gaussian();
            sum += z;
            sq += z * z;
            if z.abs() < 1.96 {
                inside += 1;
            }
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
        // Φ(1.96) - Φ(-1.96) = 0.9500042
        assert!((inside as f64 / n as f64 - 0.95).abs() < 0.005);
    }

    #[test]
    fn singleton_permutation_is_identity() {
        let p = random_permutation(&mut derive_stream(KeySeed(0), "p"), 1);
        assert_eq!(p.map(), &[0]);
    }

    #[test]
    fn permutation_composed_with_inverse_is_identity() {
        let p = random_permutation(&mut derive_stream(KeySeed(5), "p"), 50);
        let id = p.compose(&p.inverse());
        assert!(id.is_identity());
        assert!(p.inverse().compose(&p).is_identity());
    }

    fn lehmer_rank(map: &[usize]) -> usize {
        let n = map.len();
        let mut rank = 0;
        for i in 0..n {
            let smaller = map[i + 1..].iter().filter(|&&v| v < map[i]).count();
            rank = rank * (n - i) + smaller;
        }
        rank
    }

    #[test]
    fn three_element_shuffle_is_uniform() {
        let mut s = derive_stream(KeySeed(21), "perm3");
        let mut counts = [0usize; 6];
        let trials = 60_000;
        for _ in 0..trials {
            counts[lehmer_rank(random_permutation(&mut s, 3).map())] += 1;
        }
        for c in counts {
            assert!((c as f64 / trials as f64 - 1.0 / 6.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn shuffle_passes_chi_square_for_small_n() {
        // Upper 0.001 critical values of chi-square with n!-1 degrees of freedom.
        let critical = [(2usize, 10.828), (3, 20.515), (4, 49.728)];
        for (n, crit) in critical {
            let cells = (1..=n).product::<usize>();
            let trials = 100_000;
            let mut counts = vec![0usize; cells];
            let mut s = derive_stream(KeySeed(n as u64), "chi");
            for _ in 0..trials {
                counts[lehmer_rank(random_permutation(&mut s, n).map())] += 1;
            }
            let expected = trials as f64 / cells as f64;
            let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            assert!(chi2 < crit, "n={n}: chi2 {chi2} >= {crit}");
        }
    }
}
