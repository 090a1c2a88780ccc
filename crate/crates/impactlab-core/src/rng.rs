//! Reproducible Brownian noise for Monte Carlo.
//!
//! Each path draws from a ChaCha8 stream keyed by `(seed, path_index)`, and
//! normals are produced by Box-Muller with a fixed word consumption per draw.
//! Paths are therefore reproducible and parallelizable with no shared state,
//! and a path's increments do not depend on how many other paths run.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INV_2_53: f64 = 1.0 / 9007199254740992.0; // 2^-53

/// `n` standard normal draws for the given `(seed, path)` stream.
pub fn standard_normals(seed: u64, path: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // open-interval uniforms: u1 in (0, 1], u2 in [0, 1)
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * INV_2_53;
        let u2 = (rng.next_u64() >> 11) as f64 * INV_2_53;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        if out.len() < n {
            out.push(r * theta.sin());
        }
    }
    out
}

/// Brownian increments `dW ~ N(0, dt)` on a grid with `steps` steps.
pub fn brownian_increments(seed: u64, path: u64, steps: usize, dt: f64) -> Vec<f64> {
    let scale = dt.sqrt();
    standard_normals(seed, path, steps)
        .into_iter()
        .map(|z| z * scale)
        .collect()
}

/// Sums consecutive groups of `factor` fine increments into coarse ones,
/// preserving the underlying Brownian path across grid resolutions.
pub fn aggregate_increments(fine: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor > 0 && fine.len() % factor == 0);
    fine.chunks_exact(factor).map(|c| c.iter().sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a = standard_normals(42, 3, 64);
        let b = standard_normals(42, 3, 64);
        assert_eq!(a, b);
        let c = standard_normals(42, 4, 64);
        assert_ne!(a, c);
        let d = standard_normals(43, 3, 64);
        assert_ne!(a, d);
    }

    #[test]
    fn prefix_is_stable_in_length() {
        let short = standard_normals(7, 0, 10);
        let long = standard_normals(7, 0, 20);
        assert_eq!(&long[..10], &short[..]);
    }

    #[test]
    fn moments_are_roughly_standard() {
        let zs = standard_normals(1, 0, 200_000);
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / zs.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn aggregation_preserves_totals() {
        let fine = brownian_increments(9, 2, 64, 1.0 / 64.0);
        let coarse = aggregate_increments(&fine, 8);
        assert_eq!(coarse.len(), 8);
        let tot_f: f64 = fine.iter().sum();
        let tot_c: f64 = coarse.iter().sum();
        assert!((tot_f - tot_c).abs() < 1e-14);
    }
}
