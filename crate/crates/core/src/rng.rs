//! Seeded random streams and low-discrepancy point sets.
//!
//! Every stochastic routine takes an explicit seed. Independent streams for
//! replications or sub-tasks are derived from `(seed, tag, index)` so that
//! results do not depend on scheduling order.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha20Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed, a string tag and an index.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(splitmix64(index)))
}

pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    ChaCha20Rng::seed_from_u64(derive_seed(seed, tag, index))
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Uniform draw on the Euclidean unit sphere in ℝ^d.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let g = standard_normal_vec(rng, d);
        let norm = g.norm();
        if norm > 1e-300 {
            return g / norm;
        }
    }
}

/// Uniform draw in the Euclidean unit ball in ℝ^d.
pub fn unit_ball<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    let dir = unit_sphere(rng, d);
    let radius: f64 = rng.random::<f64>().powf(1.0 / d as f64);
    dir * radius
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

/// Halton sequence in [0,1)^d with a Cranley–Patterson random shift.
pub struct ShiftedHalton {
    shift: Vec<f64>,
    index: u64,
}

impl ShiftedHalton {
    pub fn new(d: usize, seed: u64) -> Self {
        assert!(d <= PRIMES.len(), "Halton sequence supports d <= {}", PRIMES.len());
        let mut rng = stream(seed, "halton", d as u64);
        let shift = (0..d).map(|_| rng.random::<f64>()).collect();
        ShiftedHalton { shift, index: 1 }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let i = self.index;
        self.index += 1;
        self.shift
            .iter()
            .enumerate()
            .map(|(j, s)| (radical_inverse(i, PRIMES[j]) + s).fract())
            .collect()
    }
}

/// Map a point of the unit cube to the unit ball: the first d-1 coordinates
/// choose a direction via inverse normal CDF, the last one the radius.
pub fn cube_to_ball(p: &[f64], d: usize) -> DVector<f64> {
    use statrs::distribution::{ContinuousCDF, Normal};
    let normal = Normal::new(0.0, 1.0).unwrap();
    if d == 1 {
        return DVector::from_element(1, 2.0 * p[0] - 1.0);
    }
    // direction from d coordinates of a (d+1)-point is wasteful; use d normals
    // from the first d coordinates and the radius from an extra coordinate.
    let g = DVector::from_iterator(
        d,
        (0..d).map(|j| normal.inverse_cdf(p[j].clamp(1e-12, 1.0 - 1e-12))),
    );
    let norm = g.norm().max(1e-300);
    let radius = p[d].powf(1.0 / d as f64);
    g * (radius / norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        let a = derive_seed(7, "a", 0);
        assert_ne!(a, derive_seed(7, "b", 0));
        assert_ne!(a, derive_seed(7, "a", 1));
        assert_ne!(a, derive_seed(8, "a", 0));
        assert_eq!(a, derive_seed(7, "a", 0));
    }

    #[test]
    fn halton_points_in_unit_cube() {
        let mut h = ShiftedHalton::new(3, 1);
        for _ in 0..100 {
            let p = h.next_point();
            assert!(p.iter().all(|&x| (0.0..1.0).contains(&x)));
        }
    }

    #[test]
    fn halton_mean_is_near_half() {
        let mut h = ShiftedHalton::new(2, 3);
        let n = 4096;
        let mut m = [0.0; 2];
        for _ in 0..n {
            let p = h.next_point();
            m[0] += p[0];
            m[1] += p[1];
        }
        assert!((m[0] / n as f64 - 0.5).abs() < 1e-2);
        assert!((m[1] / n as f64 - 0.5).abs() < 1e-2);
    }

    #[test]
    fn ball_points_inside() {
        let mut rng = stream(0, "t", 0);
        for d in 1..5 {
            for _ in 0..50 {
                assert!(unit_ball(&mut rng, d).norm() <= 1.0);
            }
            let p = vec![0.3; d + 1];
            assert!(cube_to_ball(&p, d).norm() <= 1.0 + 1e-12);
        }
    }
}
