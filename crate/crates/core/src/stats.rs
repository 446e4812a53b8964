//! Finite-sample tests used by the experiment harness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_901;

/// One-sided 99% normal quantile, for upper confidence bounds.
pub const Z_99_UPPER: f64 = 2.326_347_874_040_841;

/// Significance floor for every p-value check.
pub const P_FLOOR: f64 = 0.001;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson homogeneity test of two count vectors over the same categories
/// (no continuity correction). Categories empty in both samples are dropped;
/// with fewer than two categories left there is nothing to test and the
/// p-value is 1.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquare {
    assert_eq!(a.len(), b.len(), "count vectors must align");
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let n = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cats = 0;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cats += 1;
        for (obs, row) in [(x, na), (y, nb)] {
            let exp = row as f64 * col / n;
            if exp > 0.0 {
                stat += (obs as f64 - exp).powi(2) / exp;
            }
        }
    }
    if cats < 2 || na == 0 || nb == 0 {
        return ChiSquare { statistic: 0.0, dof: 0, p_value: 1.0 };
    }
    let dof = cats - 1;
    ChiSquare { statistic: stat, dof, p_value: chi_square_sf(stat, dof) }
}

/// Goodness of fit of `observed` counts against category probabilities.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquare {
    assert_eq!(observed.len(), probs.len(), "count and probability vectors must align");
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cats = 0;
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            if o > 0 {
                return ChiSquare { statistic: f64::INFINITY, dof: 0, p_value: 0.0 };
            }
            continue;
        }
        cats += 1;
        let e = n as f64 * p;
        stat += (o as f64 - e).powi(2) / e;
    }
    if cats < 2 {
        return ChiSquare { statistic: 0.0, dof: 0, p_value: 1.0 };
    }
    ChiSquare { statistic: stat, dof: cats - 1, p_value: chi_square_sf(stat, cats - 1) }
}

fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("dof >= 1").sf(stat)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KolmogorovSmirnov {
    pub statistic: f64,
    pub n: usize,
    pub p_value: f64,
}

impl KolmogorovSmirnov {
    /// Asymptotic critical value of `D` at level `alpha`.
    pub fn critical_value(n: usize, alpha: f64) -> f64 {
        (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
    }
}

/// One-sample KS test of `samples` against `cdf`. Sorts `samples` in place.
pub fn ks_test(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> KolmogorovSmirnov {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sn = nf.sqrt();
    KolmogorovSmirnov { statistic: d, n, p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d) }
}

/// `Pr[K > x]` for the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// `p ± k·sqrt(p(1-p)/n)`: the band a binomial rate falls in.
pub fn binomial_band(p: f64, n: u64, k: f64) -> (f64, f64) {
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    (p - k * sigma, p + k * sigma)
}

/// Counts of each value in `0..categories`.
pub fn histogram(values: impl IntoIterator<Item = usize>, categories: usize) -> Vec<u64> {
    let mut counts = vec![0u64; categories];
    for v in values {
        counts[v] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chi_square_reference_values() {
        // scipy.stats.chi2_contingency([[10, 20, 30], [20, 20, 20]], correction=False)
        let c = chi_square_two_sample(&[10, 20, 30], &[20, 20, 20]);
        assert_eq!(c.dof, 2);
        assert!((c.statistic - 5.333_333_333_333_334).abs() < 1e-9);
        assert!((c.p_value - 0.069_483_451_222_801_5).abs() < 1e-9);
        let g = chi_square_gof(&[18, 22, 60], &[0.2, 0.2, 0.6]);
        assert!((g.statistic - 0.4).abs() < 1e-12);
        assert!((g.p_value - 0.818_730_753_077_981_8).abs() < 1e-9);
        assert_eq!(chi_square_two_sample(&[5, 0], &[7, 0]).p_value, 1.0);
        assert_eq!(chi_square_gof(&[1, 1], &[1.0, 0.0]).p_value, 0.0);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // scipy.special.kolmogorov
        assert!((kolmogorov_sf(1.0) - 0.269_999_671_677_354_6).abs() < 1e-9);
        assert!((kolmogorov_sf(1.9495) - 0.001).abs() < 1e-5);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
        assert!((KolmogorovSmirnov::critical_value(1, 0.001) - 1.9495).abs() < 1e-3);
    }

    #[test]
    fn ks_accepts_uniform_and_rejects_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut u: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
        assert!(ks_test(&mut u, |x| x.clamp(0.0, 1.0)).p_value > P_FLOOR);
        let mut v: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>().powf(1.1)).collect();
        assert!(ks_test(&mut v, |x| x.clamp(0.0, 1.0)).p_value < P_FLOOR);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 10_000, Z_99);
        assert_eq!(lo, 0.0);
        assert!((hi - 6.630e-4).abs() < 1e-6, "{hi}");
        let (lo, hi) = wilson_interval(50, 100, Z_99);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
        assert_eq!(wilson_interval(0, 0, Z_99), (0.0, 1.0));
        assert!(wilson_interval(0, 10_000, Z_99_UPPER).1 < 6e-4);
    }

    #[test]
    fn band_and_histogram() {
        let (lo, hi) = binomial_band(0.25, 10_000, 4.0);
        assert!((hi - 0.25 - 4.0 * 0.004_330_127_018_922_193).abs() < 1e-12);
        assert!(lo < 0.25);
        assert_eq!(histogram([0, 2, 2, 1, 2], 3), vec![1, 1, 3]);
    }
}
