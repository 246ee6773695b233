//! Deterministic random streams and low-discrepancy points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent stream `stream` of the counter-based generator seeded by
/// `seed`. The same `(seed, stream)` always yields the same sequence.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for a sub-task, derived from a master seed and an index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

/// The `index`-th Halton point in [0, 1)^dim (dim ≤ 8).
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    (0..dim).map(|k| radical_inverse(index + 1, PRIMES[k])).collect()
}

/// Uniform point in the Euclidean ball of radius `radius` in ℝ^dim.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    for x in &mut v {
        *x *= r / norm;
    }
    v
}

/// Uniform point in the cube [-radius, radius]^dim.
pub fn uniform_in_cube<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-radius..=radius)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, 0).random()).collect();
        let b: Vec<u64> = (0..4).map(|_| stream(7, 0).random()).collect();
        assert_eq!(a, b);
        let mut s0 = stream(7, 0);
        let mut s1 = stream(7, 1);
        assert_ne!(s0.random::<u64>(), s1.random::<u64>());
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }

    #[test]
    fn halton_first_points() {
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
        assert_eq!(halton(1, 1), vec![0.25]);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = stream(3, 0);
        for _ in 0..1000 {
            let p = uniform_in_ball(&mut rng, 4, 0.2);
            assert!(p.iter().map(|x| x * x).sum::<f64>().sqrt() <= 0.2 + 1e-15);
        }
    }
}
