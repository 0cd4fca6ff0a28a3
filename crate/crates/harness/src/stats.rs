//! Uniformity tests on inclusion counts of a without-replacement sampler.
//!
//! Over `T` trials a sampler keeps `k` of `n` items. Under uniformity each
//! count has mean `T·p` with `p = k/n`, variance `T·p(1-p)`, and pairwise
//! covariance `-T·p(1-p)/(n-1)`, so `Σ z_j² · (n-1)/n` is chi-square with
//! `n - 1` degrees of freedom.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, Normal};

/// Two-sided tail mass beyond three standard deviations.
pub fn three_sigma_tail() -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * n.sf(3.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InclusionTest {
    pub cells: usize,
    pub trials: u64,
    pub k: usize,
    pub expected: f64,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub max_abs_z: f64,
    /// Largest `|count/T - p|`.
    pub max_dev: f64,
    pub beyond_3sigma: usize,
    /// Chance of at least `beyond_3sigma` such cells under uniformity.
    pub beyond_3sigma_p: f64,
}

impl InclusionTest {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha && self.beyond_3sigma_p > alpha
    }
}

fn upper_tail(cells: usize, hits: usize, q: f64) -> f64 {
    if hits == 0 {
        return 1.0;
    }
    let b = Binomial::new(q, cells as u64).unwrap();
    b.sf(hits as u64 - 1)
}

fn chi_sf(x: f64, df: usize) -> f64 {
    if df == 0 {
        return if x == 0.0 { 1.0 } else { 0.0 };
    }
    ChiSquared::new(df as f64).unwrap().sf(x)
}

pub fn inclusion_test(counts: &[u64], trials: u64, k: usize) -> InclusionTest {
    let n = counts.len();
    let p = if n == 0 { 1.0 } else { (k.min(n)) as f64 / n as f64 };
    let t = trials as f64;
    let max_dev = counts
        .iter()
        .map(|&c| (c as f64 / t - p).abs())
        .fold(0.0, f64::max);
    if p >= 1.0 || n <= 1 {
        let exact = counts.iter().all(|&c| c == trials);
        return InclusionTest {
            cells: n,
            trials,
            k,
            expected: p,
            chi2: 0.0,
            df: 0,
            p_value: if exact { 1.0 } else { 0.0 },
            max_abs_z: if exact { 0.0 } else { f64::INFINITY },
            max_dev,
            beyond_3sigma: if exact { 0 } else { n },
            beyond_3sigma_p: if exact { 1.0 } else { 0.0 },
        };
    }
    let var = t * p * (1.0 - p);
    let zs: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 - t * p) / var.sqrt())
        .collect();
    let chi2 = zs.iter().map(|z| z * z).sum::<f64>() * (n - 1) as f64 / n as f64;
    let beyond = zs.iter().filter(|z| z.abs() > 3.0).count();
    InclusionTest {
        cells: n,
        trials,
        k,
        expected: p,
        chi2,
        df: n - 1,
        p_value: chi_sf(chi2, n - 1),
        max_abs_z: zs.iter().map(|z| z.abs()).fold(0.0, f64::max),
        max_dev,
        beyond_3sigma: beyond,
        beyond_3sigma_p: upper_tail(n, beyond, three_sigma_tail()),
    }
}

/// Compares two samplers that should both be uniform with the same `k`:
/// chi-square on the per-cell differences of inclusion frequencies.
pub fn same_distribution(a: &[u64], ta: u64, b: &[u64], tb: u64, k: usize) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let p = (k.min(n)) as f64 / n.max(1) as f64;
    if p >= 1.0 || n <= 1 {
        let same = a.iter().zip(b).all(|(&x, &y)| x == ta && y == tb);
        return (0.0, if same { 1.0 } else { 0.0 });
    }
    let var = p * (1.0 - p) * (1.0 / ta as f64 + 1.0 / tb as f64);
    let chi2 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 / ta as f64 - y as f64 / tb as f64;
            d * d / var
        })
        .sum::<f64>()
        * (n - 1) as f64
        / n as f64;
    (chi2, chi_sf(chi2, n - 1))
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simulate(n: usize, k: usize, trials: u64, biased: bool, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; n];
        let mut items: Vec<usize> = (0..n).collect();
        for _ in 0..trials {
            // Partial Fisher-Yates.
            for i in 0..k {
                let j = rng.random_range(i..n);
                items.swap(i, j);
            }
            if biased && rng.random_bool(0.05) {
                items[0] = 0;
            }
            let mut chosen = items[..k].to_vec();
            chosen.sort();
            chosen.dedup();
            for &c in &chosen {
                counts[c] += 1;
            }
        }
        counts
    }

    #[test]
    fn uniform_sampler_passes() {
        for (n, k) in [(10, 1), (30, 5), (40, 20)] {
            let c = simulate(n, k, 50_000, false, n as u64);
            let r = inclusion_test(&c, 50_000, k);
            assert!(r.passes(0.001), "{r:?}");
        }
    }

    #[test]
    fn biased_sampler_fails() {
        let c = simulate(30, 5, 50_000, true, 3);
        let r = inclusion_test(&c, 50_000, 5);
        assert!(r.p_value < 1e-6, "{r:?}");
    }

    #[test]
    fn full_inclusion_is_exact() {
        let r = inclusion_test(&[7, 7, 7], 7, 5);
        assert!(r.passes(0.001));
        let r = inclusion_test(&[7, 6, 7], 7, 5);
        assert!(!r.passes(0.001));
    }

    #[test]
    fn three_sigma_tail_value() {
        assert!((three_sigma_tail() - 0.0026998).abs() < 1e-6);
    }

    #[test]
    fn same_distribution_detects_shift() {
        let a = simulate(20, 3, 40_000, false, 1);
        let b = simulate(20, 3, 40_000, false, 2);
        assert!(same_distribution(&a, 40_000, &b, 40_000, 3).1 > 0.001);
        let c = simulate(20, 3, 40_000, true, 2);
        assert!(same_distribution(&a, 40_000, &c, 40_000, 3).1 < 0.001);
    }
}
