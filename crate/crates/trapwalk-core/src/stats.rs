//! Statistical test machinery and hand-rolled samplers: Kolmogorov-Smirnov
//! one- and two-sample tests, chi-square goodness of fit with small-bin
//! merging, a permutation test of independence, regression slopes, and the
//! elementary samplers (normal, exponential, geometric) used to synthesize
//! reference distributions.
//!
//! Sampling uses the crate's counter-based uniform streams so every
//! statistical experiment is replayable; only distribution CDFs come from
//! `statrs`.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::env::UnitSource;

/// Errors from degenerate statistical inputs.
#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum StatError {
    #[error("sample too small: {0}")]
    TooSmall(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
}

/// Survival function of the Kolmogorov distribution,
/// Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2), clipped to [0,1].
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.18 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100u32 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        if k % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS statistic: sup over pooled points of |F1 - F2|.
/// Correct in the presence of ties (both empirical CDFs are evaluated at
/// the same jump points).
pub fn ks_two_sample_statistic(a: &[f64], b: &[f64]) -> Result<f64, StatError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatError::TooSmall("both samples must be nonempty"));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n || j < m {
        let t = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        let f1 = i as f64 / n as f64;
        let f2 = j as f64 / m as f64;
        d = d.max((f1 - f2).abs());
    }
    Ok(d)
}

/// Two-sample KS test with the asymptotic p-value. For integer-valued data
/// the p-value is conservative (ties only shrink the null statistic).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatError> {
    let d = ks_two_sample_statistic(a, b)?;
    let n_eff = (a.len() as f64 * b.len() as f64) / (a.len() + b.len()) as f64;
    let sqrt_n = n_eff.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// One-sample KS test against an exact CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsResult, StatError> {
    if sample.is_empty() {
        return Err(StatError::TooSmall("empty sample"));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n);
        d = d.max((i + 1) as f64 / n - f);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// A KS statistic with its asymptotic p-value.
#[derive(Clone, Copy, Debug)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Chi-square goodness of fit. Adjacent bins are merged until every
/// expected count is at least 5 (the tail bin absorbs the remainder).
/// `fitted_params` reduces the degrees of freedom.
pub fn chi_square_gof(
    observed: &[f64],
    expected: &[f64],
    fitted_params: usize,
) -> Result<Chi2Result, StatError> {
    if observed.len() != expected.len() {
        return Err(StatError::Degenerate("observed/expected length mismatch"));
    }
    if observed.len() < 2 {
        return Err(StatError::TooSmall("need at least two bins"));
    }
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        if e < 0.0 {
            return Err(StatError::Degenerate("negative expected count"));
        }
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= 5.0 {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => return Err(StatError::Degenerate("total expected count below 5")),
        }
    }
    if merged.len() < 2 {
        return Err(StatError::Degenerate("fewer than two bins after merging"));
    }
    let mut x2 = 0.0;
    for &(o, e) in &merged {
        x2 += (o - e) * (o - e) / e;
    }
    let dof = merged.len() as i64 - 1 - fitted_params as i64;
    if dof < 1 {
        return Err(StatError::Degenerate("no degrees of freedom left"));
    }
    let chi = ChiSquared::new(dof as f64).expect("dof >= 1");
    Ok(Chi2Result {
        statistic: x2,
        dof: dof as usize,
        p_value: 1.0 - chi.cdf(x2),
        bins_used: merged.len(),
    })
}

/// A chi-square statistic with its p-value.
#[derive(Clone, Copy, Debug)]
pub struct Chi2Result {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins_used: usize,
}

/// Ordinary least squares y = slope * x + intercept.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), StatError> {
    if xs.len() != ys.len() {
        return Err(StatError::Degenerate("x/y length mismatch"));
    }
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return Err(StatError::TooSmall("need at least two points"));
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(StatError::Degenerate("x values are all equal"));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Lag-1 autocorrelation; for i.i.d. data it concentrates within
/// roughly 3/sqrt(n) of zero.
pub fn lag1_autocorrelation(xs: &[f64]) -> Result<f64, StatError> {
    if xs.len() < 3 {
        return Err(StatError::TooSmall("need at least three points"));
    }
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    if denom == 0.0 {
        return Err(StatError::Degenerate("constant series"));
    }
    let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    Ok(num / denom)
}

/// Standard normal draw by Box-Muller (two uniforms per pair; the sine
/// partner is discarded for simplicity).
pub fn sample_normal<R: UnitSource>(rng: &mut R) -> f64 {
    let u1 = rng.next_unit();
    let u2 = rng.next_unit();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Exponential draw with the given rate.
pub fn sample_exponential<R: UnitSource>(rng: &mut R, rate: f64) -> f64 {
    debug_assert!(rate > 0.0);
    -rng.next_unit().ln() / rate
}

/// Geometric draw on {0, 1, 2, ...}: number of failures before the first
/// success with success probability q.
pub fn sample_geometric<R: UnitSource>(rng: &mut R, q: f64) -> u64 {
    debug_assert!(q > 0.0 && q <= 1.0);
    if q >= 1.0 {
        return 0;
    }
    let u = rng.next_unit();
    // P[N >= k] = (1-q)^k, so N = floor(ln u / ln(1-q)).
    let k = (u.ln() / (1.0 - q).ln()).floor();
    if k < 0.0 {
        0
    } else {
        k as u64
    }
}

/// Bernoulli draw.
pub fn sample_bernoulli<R: UnitSource>(rng: &mut R, p: f64) -> bool {
    rng.next_unit() <= p
}

/// Empirical mutual information (nats) of two discrete series.
fn mutual_information(xs: &[u64], ys: &[u64]) -> f64 {
    use std::collections::HashMap;
    let n = xs.len() as f64;
    let mut joint: HashMap<(u64, u64), f64> = HashMap::new();
    let mut px: HashMap<u64, f64> = HashMap::new();
    let mut py: HashMap<u64, f64> = HashMap::new();
    for (&x, &y) in xs.iter().zip(ys) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *px.entry(x).or_insert(0.0) += 1.0;
        *py.entry(y).or_insert(0.0) += 1.0;
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c / n;
        let p1 = px[&x] / n;
        let p2 = py[&y] / n;
        mi += pxy * (pxy / (p1 * p2)).ln();
    }
    mi.max(0.0)
}

/// Permutation test of independence between two discrete series: the
/// observed mutual information is compared against `n_perm` random
/// relabelings. Returns the observed MI, the null's 99th percentile, and
/// the permutation p-value (fraction of null MI >= observed).
pub fn permutation_independence_test<R: UnitSource>(
    xs: &[u64],
    ys: &[u64],
    n_perm: usize,
    rng: &mut R,
) -> Result<IndependenceResult, StatError> {
    if xs.len() != ys.len() {
        return Err(StatError::Degenerate("x/y length mismatch"));
    }
    if xs.len() < 10 {
        return Err(StatError::TooSmall("need at least ten pairs"));
    }
    if n_perm < 20 {
        return Err(StatError::TooSmall("need at least twenty permutations"));
    }
    let observed = mutual_information(xs, ys);
    let mut shuffled = ys.to_vec();
    let mut null = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        // Fisher-Yates with the unit stream.
        for i in (1..shuffled.len()).rev() {
            let j = (rng.next_unit() * (i + 1) as f64) as usize;
            let j = j.min(i);
            shuffled.swap(i, j);
        }
        null.push(mutual_information(xs, &shuffled));
    }
    null.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx99 = ((n_perm as f64) * 0.99).floor() as usize;
    let null_p99 = null[idx99.min(n_perm - 1)];
    let exceed = null.iter().filter(|&&m| m >= observed).count();
    Ok(IndependenceResult {
        observed_mi: observed,
        null_p99,
        p_value: (exceed as f64 + 1.0) / (n_perm as f64 + 1.0),
    })
}

/// Result of the permutation independence test.
#[derive(Clone, Copy, Debug)]
pub struct IndependenceResult {
    pub observed_mi: f64,
    pub null_p99: f64,
    pub p_value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::UnitStream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kolmogorov_survival_reference_points() {
        // Classical table values: Q(1.36) ~ 0.049, Q(1.63) ~ 0.010.
        assert!((kolmogorov_survival(1.36) - 0.049).abs() < 0.002);
        assert!((kolmogorov_survival(1.63) - 0.010).abs() < 0.001);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(3.0) < 1e-6);
    }

    #[test]
    fn ks_two_sample_hand_computed() {
        // a = {1,2,3}, b = {1.5, 2.5}: max gap of the step functions is 1/3.
        let d = ks_two_sample_statistic(&[1.0, 2.0, 3.0], &[1.5, 2.5]).unwrap();
        assert_abs_diff_eq!(d, 1.0 / 3.0, epsilon = 1e-12);
        // Identical samples, with ties: distance 0.
        let d0 = ks_two_sample_statistic(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(d0, 0.0);
    }

    #[test]
    fn ks_same_distribution_passes_and_shifted_fails() {
        let mut rng = UnitStream::new(99);
        let a: Vec<f64> = (0..4000).map(|_| sample_exponential(&mut rng, 1.0)).collect();
        let b: Vec<f64> = (0..4000).map(|_| sample_exponential(&mut rng, 1.0)).collect();
        let same = ks_two_sample(&a, &b).unwrap();
        assert!(same.p_value > 0.01, "p = {}", same.p_value);
        let c: Vec<f64> = (0..4000).map(|_| 1.3 * sample_exponential(&mut rng, 1.0)).collect();
        let diff = ks_two_sample(&a, &c).unwrap();
        assert!(diff.p_value < 0.01, "p = {}", diff.p_value);
    }

    #[test]
    fn ks_one_sample_exponential() {
        let mut rng = UnitStream::new(7);
        let a: Vec<f64> = (0..5000).map(|_| sample_exponential(&mut rng, 2.0)).collect();
        let r = ks_one_sample(&a, |x| 1.0 - (-2.0 * x).exp()).unwrap();
        assert!(r.p_value > 0.01, "p = {}", r.p_value);
        let wrong = ks_one_sample(&a, |x| 1.0 - (-x).exp()).unwrap();
        assert!(wrong.p_value < 1e-6);
    }

    #[test]
    fn chi_square_merges_small_bins() {
        // Uniform die, fair observations: tiny statistic, p near 1.
        let obs = [10.0, 12.0, 9.0, 11.0, 10.0, 8.0];
        let exp = [10.0; 6];
        let r = chi_square_gof(&obs, &exp, 0).unwrap();
        assert_eq!(r.bins_used, 6);
        assert!(r.p_value > 0.5);
        // Tail bins with tiny expectations merge into the last kept bin.
        let obs2 = [50.0, 30.0, 15.0, 3.0, 1.0, 1.0];
        let exp2 = [50.0, 30.0, 15.0, 3.0, 1.5, 0.5];
        let r2 = chi_square_gof(&obs2, &exp2, 0).unwrap();
        assert!(r2.bins_used == 4, "bins {}", r2.bins_used);
        assert!(r2.p_value > 0.9);
    }

    #[test]
    fn geometric_sampler_matches_pmf() {
        let q = 69.0 / 169.0;
        let mut rng = UnitStream::new(1234);
        let n = 200_000;
        let mut counts = vec![0.0; 30];
        let mut sum = 0.0;
        for _ in 0..n {
            let k = sample_geometric(&mut rng, q);
            sum += k as f64;
            if (k as usize) < counts.len() {
                counts[k as usize] += 1.0;
            }
        }
        let mean_hat = sum / n as f64;
        let mean_true = (1.0 - q) / q;
        // sigma of the mean: sqrt((1-q)/q^2 / n).
        let sigma = ((1.0 - q) / (q * q) / n as f64).sqrt();
        assert!(
            (mean_hat - mean_true).abs() < 4.0 * sigma,
            "mean {mean_hat} vs {mean_true}"
        );
        let expected: Vec<f64> = (0..30)
            .map(|k| n as f64 * q * (1.0 - q).powi(k))
            .collect();
        let r = chi_square_gof(&counts, &expected, 0).unwrap();
        assert!(r.p_value > 0.001, "chi2 p = {}", r.p_value);
    }

    #[test]
    fn normal_sampler_moments() {
        let mut rng = UnitStream::new(5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_normal(&mut rng)).collect();
        assert!(mean(&xs).abs() < 4.0 / (n as f64).sqrt());
        assert!((variance(&xs) - 1.0).abs() < 0.02);
    }

    #[test]
    fn slope_recovers_line() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.5 * x - 2.0).collect();
        let (slope, intercept) = least_squares(&xs, &ys).unwrap();
        assert_abs_diff_eq!(slope, 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(intercept, -2.0, epsilon = 1e-10);
    }

    #[test]
    fn independence_test_separates() {
        let mut rng = UnitStream::new(42);
        let n = 2000;
        let xs: Vec<u64> = (0..n).map(|_| sample_geometric(&mut rng, 0.4)).collect();
        let ys_indep: Vec<u64> = (0..n).map(|_| (rng.next_unit() < 0.5) as u64).collect();
        let r = permutation_independence_test(&xs, &ys_indep, 200, &mut rng).unwrap();
        assert!(r.p_value > 0.01, "independent pair rejected, p = {}", r.p_value);
        // Strongly dependent pair: y indicates x == 0.
        let ys_dep: Vec<u64> = xs.iter().map(|&x| (x == 0) as u64).collect();
        let r2 = permutation_independence_test(&xs, &ys_dep, 200, &mut rng).unwrap();
        assert!(r2.p_value < 0.01, "dependent pair accepted, p = {}", r2.p_value);
        assert!(r2.observed_mi > r2.null_p99);
    }

    #[test]
    fn lag1_autocorrelation_iid_small() {
        let mut rng = UnitStream::new(77);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.next_unit()).collect();
        let r = lag1_autocorrelation(&xs).unwrap();
        assert!(r.abs() < 3.0 / (xs.len() as f64).sqrt(), "r1 = {r}");
    }
}
