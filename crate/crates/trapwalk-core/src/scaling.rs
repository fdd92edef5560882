//! Statistical verification layer for the limit behaviour: tail-index
//! estimation, the tail-inverse normalization, self-similarity tests on
//! clock processes, displacement-exponent diagnostics, and the covariance
//! geometry of the transverse limit (drift direction, sigma, the projected
//! square root).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::env::{ConductanceLaw, UnitSource};
use crate::lattice::{Point, MAX_DIM};
use crate::stats::{ks_two_sample, least_squares, KsResult};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum ScalingError {
    #[error("not enough data: {0}")]
    TooSmall(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("unsupported for this law: {0}")]
    Unsupported(&'static str),
}

/// A tail-index estimate with its asymptotic confidence half-width.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TailFit {
    pub gamma_hat: f64,
    /// Number of upper order statistics used.
    pub k_used: usize,
    /// Asymptotic 95% half-width, 1.96 * gamma_hat / sqrt(k).
    pub ci_half_width: f64,
}

/// Hill estimates at half, default, and double the default k, to expose
/// sensitivity to the order-statistics cutoff.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HillSensitivity {
    pub at_half_k: TailFit,
    pub at_default_k: TailFit,
    pub at_double_k: TailFit,
}

/// Displacement-exponent regression outcome.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ExponentFit {
    /// Mean over replicas of the per-replica log-log slope.
    pub slope: f64,
    pub replicas_used: usize,
    /// Checkpoints dropped for non-positive levels.
    pub points_skipped: usize,
}

/// Transverse-fluctuation check outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FkCheck {
    /// Estimated drift direction, unit norm, positive component along the
    /// bias direction.
    pub v0_hat: Vec<f64>,
    /// Log-log slope of the mean squared transverse displacement.
    pub transverse_slope: f64,
    /// Sample covariance of per-block displacements.
    pub sigma_hat: Vec<Vec<f64>>,
    /// (I - P_v0) sqrt(sigma_hat).
    pub md_hat: Vec<Vec<f64>>,
    /// True when sigma_hat is numerically rank-deficient.
    pub rank_deficient: bool,
}

/// Point estimates of the clock-limit constants.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LimitConstants {
    /// Trap-intensity constant: P[trap block] / P[c_* >= n].
    pub c1_hat: f64,
    /// (c1_hat * mean of W_n^gamma)^(1/gamma).
    pub c_infty_hat: f64,
    pub lt_blocks: usize,
    pub blocks_total: usize,
}

/// Aggregated verification report, serialized to JSON by the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub gamma_config: f64,
    pub gamma_from_blocks: TailFit,
    pub gamma_from_displacement: f64,
    pub selfsim_pvalue: f64,
    pub transverse_slope: f64,
    /// Mean block displacement over mean block duration.
    pub v_hat: Vec<f64>,
    pub v0_hat: Vec<f64>,
    pub sigma_hat: Vec<Vec<f64>>,
    pub md_hat: Vec<Vec<f64>>,
}

impl ScalingReport {
    /// Structural invariants: sigma_hat symmetric positive semidefinite,
    /// md_hat annihilated by the projection onto v0_hat.
    pub fn validate(&self) -> Result<(), ScalingError> {
        let sq = matrix_sqrt_psd(&self.sigma_hat);
        if sq.is_err() {
            return Err(ScalingError::Degenerate(
                "sigma_hat is not symmetric positive semidefinite",
            ));
        }
        let d = self.v0_hat.len();
        if self.md_hat.len() != d {
            return Err(ScalingError::Degenerate("md_hat dimension mismatch"));
        }
        for j in 0..d {
            let mut proj = 0.0;
            for i in 0..d {
                proj += self.v0_hat[i] * self.md_hat[i][j];
            }
            if proj.abs() > 1e-8 {
                return Err(ScalingError::Degenerate(
                    "md_hat is not orthogonal to v0_hat",
                ));
            }
        }
        Ok(())
    }
}

/// Generalized inverse of the conductance tail at 1/n: the smallest x at
/// or above the support's lower endpoint with P[c_* > x] <= 1/n. Analytic
/// where the tail inverts in closed form, bisection (relative tolerance
/// 1e-10) otherwise.
pub fn inv_scale(law: &ConductanceLaw, n: f64) -> f64 {
    assert!(n >= 1.0, "inv_scale needs n >= 1");
    let target = 1.0 / n;
    match *law {
        ConductanceLaw::Pareto { gamma, x_min } => x_min * n.powf(1.0 / gamma),
        ConductanceLaw::LogPower { x_min, .. } => {
            if law.tail(x_min) <= target {
                return x_min;
            }
            let mut lo = x_min;
            let mut hi = 2.0 * x_min.max(1.0);
            while law.tail(hi) > target {
                lo = hi;
                hi *= 2.0;
            }
            // Invariant: tail(lo) > target >= tail(hi); return hi so the
            // defining inequality holds at the result.
            while hi - lo > 1e-10 * hi {
                let mid = 0.5 * (lo + hi);
                if law.tail(mid) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        }
        ConductanceLaw::Bounded { lo, hi } => {
            if hi == lo || target >= 1.0 {
                return lo;
            }
            // tail(x) = ln(hi/x) / ln(hi/lo) on [lo, hi).
            hi * (lo / hi).powf(target)
        }
    }
}

/// Hill estimator over the k largest order statistics:
/// gamma_hat = k / sum_{i<=k} ln(X_(i) / X_(k+1)).
pub fn hill_estimate(samples: &[f64], k: usize) -> Result<TailFit, ScalingError> {
    if k == 0 {
        return Err(ScalingError::Degenerate("k must be positive"));
    }
    if samples.len() < k + 1 {
        return Err(ScalingError::TooSmall("need at least k + 1 samples"));
    }
    if samples.iter().any(|&x| !(x > 0.0)) {
        return Err(ScalingError::Degenerate("samples must be positive"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("positive finite samples"));
    let pivot = sorted[k];
    let sum: f64 = sorted[..k].iter().map(|&x| (x / pivot).ln()).sum();
    if sum <= 0.0 {
        return Err(ScalingError::Degenerate(
            "zero log-spacings, tail index undefined",
        ));
    }
    let gamma_hat = k as f64 / sum;
    Ok(TailFit {
        gamma_hat,
        k_used: k,
        ci_half_width: 1.96 * gamma_hat / (k as f64).sqrt(),
    })
}

/// Default order-statistics cutoff: floor(sqrt(N)), clamped to leave a
/// pivot sample.
pub fn hill_default_k(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Hill estimates at k/2, k, and 2k around the default cutoff.
pub fn hill_sensitivity(samples: &[f64]) -> Result<HillSensitivity, ScalingError> {
    let k = hill_default_k(samples.len());
    let half = (k / 2).max(1);
    let double = (2 * k).min(samples.len().saturating_sub(1));
    Ok(HillSensitivity {
        at_half_k: hill_estimate(samples, half)?,
        at_default_k: hill_estimate(samples, k)?,
        at_double_k: hill_estimate(samples, double)?,
    })
}

/// Least-squares slope of ln(level) against ln(n) over the checkpoints,
/// averaged over replicas. `level_rows[r][i]` is replica r's level at
/// checkpoint i; non-positive levels are skipped and counted.
pub fn displacement_exponent(
    checkpoints: &[u64],
    level_rows: &[Vec<f64>],
) -> Result<ExponentFit, ScalingError> {
    if checkpoints.len() < 3 {
        return Err(ScalingError::TooSmall("need at least three checkpoints"));
    }
    if checkpoints.iter().any(|&n| n == 0) {
        return Err(ScalingError::Degenerate("checkpoints must be positive"));
    }
    let lo = *checkpoints.iter().min().expect("nonempty");
    let hi = *checkpoints.iter().max().expect("nonempty");
    if (hi as f64) < 100.0 * lo as f64 {
        return Err(ScalingError::Degenerate(
            "checkpoints must span two decades",
        ));
    }
    if level_rows.is_empty() {
        return Err(ScalingError::TooSmall("need at least one replica"));
    }
    let mut slopes = Vec::with_capacity(level_rows.len());
    let mut skipped = 0usize;
    for row in level_rows {
        if row.len() != checkpoints.len() {
            return Err(ScalingError::Degenerate(
                "replica row length does not match checkpoints",
            ));
        }
        let mut xs = Vec::with_capacity(row.len());
        let mut ys = Vec::with_capacity(row.len());
        for (&n, &level) in checkpoints.iter().zip(row) {
            if level > 0.0 {
                xs.push((n as f64).ln());
                ys.push(level.ln());
            } else {
                skipped += 1;
            }
        }
        if xs.len() < 2 {
            continue;
        }
        let (slope, _) = least_squares(&xs, &ys)
            .map_err(|_| ScalingError::Degenerate("checkpoint spacing degenerate"))?;
        slopes.push(slope);
    }
    if slopes.is_empty() {
        return Err(ScalingError::TooSmall(
            "no replica kept two positive checkpoints",
        ));
    }
    Ok(ExponentFit {
        slope: slopes.iter().sum::<f64>() / slopes.len() as f64,
        replicas_used: slopes.len(),
        points_skipped: skipped,
    })
}

/// Two-sample self-similarity test of the clock process: partial sums of
/// `n1` and of `n2` consecutive durations, each normalized by the tail
/// inverse at its count, compared by a two-sample KS test. Windows are
/// disjoint, so replicas stay independent under the i.i.d. hypothesis.
pub fn clock_selfsimilarity_test(
    durations: &[f64],
    law: &ConductanceLaw,
    n1: usize,
    n2: usize,
    replicas: usize,
) -> Result<KsResult, ScalingError> {
    if n1 == 0 || n2 < 4 * n1 {
        return Err(ScalingError::Degenerate("need n2 >= 4 * n1 >= 4"));
    }
    if replicas < 25 {
        return Err(ScalingError::TooSmall("need at least 25 replicas"));
    }
    let needed = replicas * (n1 + n2);
    if durations.len() < needed {
        return Err(ScalingError::TooSmall(
            "not enough durations for disjoint replica windows",
        ));
    }
    let scale1 = inv_scale(law, n1 as f64);
    let scale2 = inv_scale(law, n2 as f64);
    let mut a = Vec::with_capacity(replicas);
    let mut b = Vec::with_capacity(replicas);
    let mut cursor = 0usize;
    for _ in 0..replicas {
        let s: f64 = durations[cursor..cursor + n1].iter().sum();
        a.push(s / scale1);
        cursor += n1;
    }
    for _ in 0..replicas {
        let s: f64 = durations[cursor..cursor + n2].iter().sum();
        b.push(s / scale2);
        cursor += n2;
    }
    ks_two_sample(&a, &b).map_err(|_| ScalingError::Degenerate("KS test failed"))
}

/// Bootstrap variant of the self-similarity test for pools too small for
/// disjoint windows: each partial sum draws its terms with replacement
/// from the empirical duration law. Replica sums are independent given
/// the pool.
///
/// Fidelity caveat: a partial sum of n heavy-tailed terms is dominated by
/// its top order statistics, which live near the empirical (1 - 1/n)
/// quantile. The comparison is faithful only when the pool dwarfs the
/// larger window (25 * n2 or more keeps a couple of dozen pool points
/// above that quantile); below that the truncated empirical tail biases
/// the two windows differently and the test rejects spuriously.
pub fn clock_selfsimilarity_bootstrap<R: UnitSource>(
    durations: &[f64],
    law: &ConductanceLaw,
    n1: usize,
    n2: usize,
    replicas: usize,
    rng: &mut R,
) -> Result<KsResult, ScalingError> {
    if n1 == 0 || n2 < 4 * n1 {
        return Err(ScalingError::Degenerate("need n2 >= 4 * n1 >= 4"));
    }
    if replicas < 25 {
        return Err(ScalingError::TooSmall("need at least 25 replicas"));
    }
    if durations.len() < 100 {
        return Err(ScalingError::TooSmall(
            "need at least 100 pooled durations to resample",
        ));
    }
    let m = durations.len() as u64;
    let mut draw_sum = |count: usize, rng: &mut R| -> f64 {
        let mut s = 0.0;
        for _ in 0..count {
            let idx = (rng.next_unit() * m as f64) as u64;
            s += durations[idx.min(m - 1) as usize];
        }
        s
    };
    let scale1 = inv_scale(law, n1 as f64);
    let scale2 = inv_scale(law, n2 as f64);
    let mut a = Vec::with_capacity(replicas);
    let mut b = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        a.push(draw_sum(n1, rng) / scale1);
    }
    for _ in 0..replicas {
        b.push(draw_sum(n2, rng) / scale2);
    }
    ks_two_sample(&a, &b).map_err(|_| ScalingError::Degenerate("KS test failed"))
}

/// Sample covariance (denominator n - 1) of the first `dim` coordinates.
pub fn displacement_covariance(
    dim: usize,
    rows: &[[f64; MAX_DIM]],
) -> Result<Vec<Vec<f64>>, ScalingError> {
    if rows.len() < 2 {
        return Err(ScalingError::TooSmall("need at least two displacement rows"));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        for i in 0..dim {
            mean[i] += row[i];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    for row in rows {
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    for r in cov.iter_mut() {
        for v in r.iter_mut() {
            *v /= n - 1.0;
        }
    }
    Ok(cov)
}

/// Symmetric PSD square root via the spectral decomposition. Eigenvalues
/// within a small negative tolerance are clamped to zero; anything more
/// negative is rejected.
pub fn matrix_sqrt_psd(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ScalingError> {
    let d = m.len();
    if d == 0 || m.iter().any(|r| r.len() != d) {
        return Err(ScalingError::Degenerate("matrix must be square"));
    }
    let mut scale = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            scale = scale.max(m[i][j].abs());
            if (m[i][j] - m[j][i]).abs() > 1e-9 * scale.max(1.0) {
                return Err(ScalingError::Degenerate("matrix is not symmetric"));
            }
        }
    }
    let a = DMatrix::from_fn(d, d, |i, j| 0.5 * (m[i][j] + m[j][i]));
    let eig = a.symmetric_eigen();
    let tol = 1e-9 * scale.max(1.0);
    let mut vals = Vec::with_capacity(d);
    for &l in eig.eigenvalues.iter() {
        if l < -tol {
            return Err(ScalingError::Degenerate(
                "matrix is not positive semidefinite",
            ));
        }
        vals.push(l.max(0.0).sqrt());
    }
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for (k, &sv) in vals.iter().enumerate() {
                s += eig.eigenvectors[(i, k)] * sv * eig.eigenvectors[(j, k)];
            }
            out[i][j] = s;
        }
    }
    Ok(out)
}

/// (I - v0 v0^T) m, removing the drift-direction component of every
/// column.
pub fn project_off_direction(v0: &[f64], m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = v0.len();
    let mut out = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut dotp = 0.0;
        for k in 0..d {
            dotp += v0[k] * m[k][j];
        }
        for i in 0..d {
            out[i][j] = m[i][j] - v0[i] * dotp;
        }
    }
    out
}

fn point_to_f64(p: Point) -> [f64; MAX_DIM] {
    let mut out = [0.0; MAX_DIM];
    for i in 0..MAX_DIM {
        out[i] = p[i] as f64;
    }
    out
}

/// Transverse-fluctuation check: the drift direction from mean block
/// displacement, the log-log slope of the mean squared transverse
/// displacement over the checkpoints, and the projected square root of
/// the displacement covariance.
pub fn transverse_fk_check(
    dim: usize,
    direction: &[f64; MAX_DIM],
    block_displacements: &[Point],
    checkpoints: &[u64],
    position_rows: &[Vec<Point>],
) -> Result<FkCheck, ScalingError> {
    if dim < 2 {
        return Err(ScalingError::Degenerate(
            "transverse check needs dimension at least 2",
        ));
    }
    if checkpoints.len() < 3 {
        return Err(ScalingError::TooSmall("need at least three checkpoints"));
    }
    let lo = *checkpoints.iter().min().expect("nonempty");
    let hi = *checkpoints.iter().max().expect("nonempty");
    if lo == 0 || (hi as f64) < 100.0 * lo as f64 {
        return Err(ScalingError::Degenerate(
            "checkpoints must span two decades",
        ));
    }
    if block_displacements.len() < 2 {
        return Err(ScalingError::TooSmall("need at least two blocks"));
    }
    if position_rows.is_empty()
        || position_rows.iter().any(|r| r.len() != checkpoints.len())
    {
        return Err(ScalingError::Degenerate(
            "replica rows must match checkpoints",
        ));
    }

    // Drift direction: normalized mean displacement, oriented along the
    // bias.
    let mut v0 = vec![0.0f64; dim];
    for p in block_displacements {
        for i in 0..dim {
            v0[i] += p[i] as f64;
        }
    }
    let norm = v0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ScalingError::Degenerate("mean displacement is zero"));
    }
    for v in v0.iter_mut() {
        *v /= norm;
    }
    let along_bias: f64 = v0.iter().zip(direction.iter()).map(|(a, b)| a * b).sum();
    if along_bias < 0.0 {
        for v in v0.iter_mut() {
            *v = -*v;
        }
    }

    // Mean squared transverse displacement per checkpoint.
    let mut xs = Vec::with_capacity(checkpoints.len());
    let mut ys = Vec::with_capacity(checkpoints.len());
    for (i, &n) in checkpoints.iter().enumerate() {
        let mut msq = 0.0;
        for row in position_rows {
            let p = point_to_f64(row[i]);
            let along: f64 = (0..dim).map(|k| p[k] * v0[k]).sum();
            let mut sq = 0.0;
            for k in 0..dim {
                let t = p[k] - along * v0[k];
                sq += t * t;
            }
            msq += sq;
        }
        msq /= position_rows.len() as f64;
        if msq > 0.0 {
            xs.push((n as f64).ln());
            ys.push(msq.ln());
        }
    }
    if xs.len() < 3 {
        return Err(ScalingError::Degenerate(
            "fewer than three checkpoints with positive transverse spread",
        ));
    }
    let (transverse_slope, _) = least_squares(&xs, &ys)
        .map_err(|_| ScalingError::Degenerate("checkpoint spacing degenerate"))?;

    // Covariance of block displacements and its projected square root.
    let rows: Vec<[f64; MAX_DIM]> = block_displacements
        .iter()
        .map(|&p| point_to_f64(p))
        .collect();
    let sigma_hat = displacement_covariance(dim, &rows)?;
    let sq = matrix_sqrt_psd(&sigma_hat)?;
    let md_hat = project_off_direction(&v0, &sq);
    let a = DMatrix::from_fn(dim, dim, |i, j| sigma_hat[i][j]);
    let eig = a.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let rank = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > 1e-12 * max_ev.max(1e-300))
        .count();

    Ok(FkCheck {
        v0_hat: v0,
        transverse_slope,
        sigma_hat,
        md_hat,
        rank_deficient: rank < dim,
    })
}

/// Point estimates of the clock-limit constants from block statistics:
/// the trap-intensity constant from the LT frequency against the tail,
/// and the composite limit constant from the scaled occupation samples.
pub fn estimate_limit_constants(
    blocks_total: usize,
    lt_w_samples: &[f64],
    law: &ConductanceLaw,
    n: f64,
) -> Result<LimitConstants, ScalingError> {
    let gamma = law
        .gamma()
        .ok_or(ScalingError::Unsupported("law has no tail index"))?;
    if blocks_total == 0 {
        return Err(ScalingError::TooSmall("no blocks"));
    }
    if lt_w_samples.is_empty() {
        return Err(ScalingError::TooSmall("no LT blocks at this threshold"));
    }
    if lt_w_samples.len() > blocks_total {
        return Err(ScalingError::Degenerate("more LT blocks than blocks"));
    }
    let tail = law.tail(n);
    if !(tail > 0.0) {
        return Err(ScalingError::Degenerate("tail vanishes at the threshold"));
    }
    let p_lt = lt_w_samples.len() as f64 / blocks_total as f64;
    let c1_hat = p_lt / tail;
    let mean_w_gamma =
        lt_w_samples.iter().map(|&w| w.powf(gamma)).sum::<f64>() / lt_w_samples.len() as f64;
    Ok(LimitConstants {
        c1_hat,
        c_infty_hat: (c1_hat * mean_w_gamma).powf(1.0 / gamma),
        lt_blocks: lt_w_samples.len(),
        blocks_total,
    })
}
