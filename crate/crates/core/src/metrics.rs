//! Distortion and perception measures, and the optimal MSE/W2 tradeoff.
//!
//! Sample sets are matrices with one sample per row; 1D estimators take
//! plain slices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{check_psd, spd_solve, sym_sqrt};

/// Largest `n` accepted by [`w2_exact_small`].
pub const EXACT_W2_MAX: usize = 4096;

/// Which estimator produced a perception value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceKind {
    /// Wasserstein-2 between Gaussian fits.
    W2GaussianFit,
    /// Quantile-coupling W2 (1D).
    W2Empirical1d,
    /// Exact optimal assignment W2.
    W2Exact,
    /// Smoothed histogram KL (1D).
    KlHistogram,
    /// KL between Gaussian fits; a parametric approximation.
    KlGaussianFit,
}

impl DivergenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DivergenceKind::W2GaussianFit => "w2-gaussian-fit",
            DivergenceKind::W2Empirical1d => "w2-empirical-1d",
            DivergenceKind::W2Exact => "w2-exact",
            DivergenceKind::KlHistogram => "kl-histogram",
            DivergenceKind::KlGaussianFit => "kl-gaussian-fit (parametric approximation)",
        }
    }
}

/// One point of a distortion-perception sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DPPoint {
    pub lambda: f64,
    /// Mean squared error.
    pub distortion: f64,
    pub w2: f64,
    pub w2_kind: DivergenceKind,
    pub kl: Option<f64>,
    pub kl_kind: Option<DivergenceKind>,
    pub n_samples: usize,
    pub seed: u64,
    /// Perception computed from a single sample is meaningless.
    pub degenerate: bool,
}

/// Mean squared Euclidean distance between paired rows.
pub fn mse_paired(reconstructions: &DMatrix<f64>, references: &DMatrix<f64>) -> Result<f64> {
    if reconstructions.nrows() == 0 {
        return Err(Error::EmptyInput("reconstructions"));
    }
    ensure_dim(reconstructions.nrows(), references.nrows())?;
    ensure_dim(reconstructions.ncols(), references.ncols())?;
    let total: f64 = (reconstructions - references).iter().map(|v| v * v).sum();
    Ok(total / reconstructions.nrows() as f64)
}

pub fn sample_mean(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput("samples"));
    }
    Ok(x.row_mean().transpose())
}

/// Unbiased sample covariance (zero for a single sample).
pub fn sample_cov(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mean = sample_mean(x)?;
    let n = x.nrows();
    let centered = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] - mean[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let c = centered.transpose() * centered / denom;
    Ok((&c + c.transpose()) * 0.5)
}

/// `W2(N(mu1, cov1), N(mu2, cov2))`.
pub fn w2_gaussian(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    ensure_dim(mu1.len(), mu2.len())?;
    ensure_dim(mu1.len(), cov1.nrows())?;
    ensure_dim(mu2.len(), cov2.nrows())?;
    check_psd(cov1, "first covariance")?;
    check_psd(cov2, "second covariance")?;
    let r1 = sym_sqrt(cov1)?;
    let cross = sym_sqrt(&(&r1 * cov2 * &r1))?;
    let w2sq = (mu1 - mu2).norm_squared() + (cov1 + cov2 - cross * 2.0).trace();
    Ok(w2sq.max(0.0).sqrt())
}

/// W2 between Gaussian fits of two sample sets.
pub fn w2_gaussian_fit(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    ensure_dim(a.ncols(), b.ncols())?;
    w2_gaussian(&sample_mean(a)?, &sample_cov(a)?, &sample_mean(b)?, &sample_cov(b)?)
}

/// Quantile of sorted data at probability `u`, linear between order
/// statistics placed at `(i + 0.5) / n`.
fn quantile_sorted(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    let pos = u * n as f64 - 0.5;
    if pos <= 0.0 {
        return sorted[0];
    }
    let lo = pos.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[lo + 1] - sorted[lo])
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// 1D W2 by quantile coupling on the grid `u_i = (i + 0.5) / m`,
/// `m = max(len_a, len_b)`. Equal-size inputs reduce to sorted pairing.
pub fn w2_empirical_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(Error::EmptyInput("w2_empirical_1d samples"));
    }
    let a = sorted_copy(samples_a);
    let b = sorted_copy(samples_b);
    let m = a.len().max(b.len());
    let total: f64 = (0..m)
        .map(|i| {
            let u = (i as f64 + 0.5) / m as f64;
            (quantile_sorted(&a, u) - quantile_sorted(&b, u)).powi(2)
        })
        .sum();
    Ok((total / m as f64).sqrt())
}

/// Min-cost perfect matching on an `n x n` cost given by `cost(i, j)`
/// (shortest augmenting path with potentials). Returns `assignment[row] = col`.
pub fn solve_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based arrays; index 0 is the virtual source
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Exact empirical W2 between equal-size point sets via optimal assignment
/// on squared Euclidean costs.
pub fn w2_exact_small(samples_a: &DMatrix<f64>, samples_b: &DMatrix<f64>) -> Result<f64> {
    let n = samples_a.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("w2_exact_small samples"));
    }
    ensure_dim(n, samples_b.nrows())?;
    ensure_dim(samples_a.ncols(), samples_b.ncols())?;
    if n > EXACT_W2_MAX {
        return Err(Error::InvalidRange(format!(
            "exact W2 supports at most {EXACT_W2_MAX} points, got {n}"
        )));
    }
    let d = samples_a.ncols();
    // row-major copies for cache-friendly cost evaluation
    let ra: Vec<f64> = (0..n).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| samples_a[(i, j)]).collect();
    let rb: Vec<f64> = (0..n).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| samples_b[(i, j)]).collect();
    let cost = |i: usize, j: usize| -> f64 {
        ra[i * d..(i + 1) * d]
            .iter()
            .zip(&rb[j * d..(j + 1) * d])
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let assignment = solve_assignment(n, cost);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    Ok((total / n as f64).sqrt())
}

/// Histogram estimate of `KL(p || q)` over the joint sample range with
/// `bins` equal-width bins and a pseudo-count of 0.5 per bin.
pub fn kl_estimate_1d(samples_p: &[f64], samples_q: &[f64], bins: usize) -> Result<f64> {
    if samples_p.is_empty() || samples_q.is_empty() {
        return Err(Error::EmptyInput("kl_estimate_1d samples"));
    }
    if bins < 2 {
        return Err(Error::InvalidRange(format!("need at least 2 bins, got {bins}")));
    }
    let (lo, hi) = samples_p
        .iter()
        .chain(samples_q)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidRange("samples must be finite".into()));
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let count = |xs: &[f64]| {
        let mut h = vec![0.5f64; bins];
        for &x in xs {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            h[b] += 1.0;
        }
        let total: f64 = h.iter().sum();
        h.iter_mut().for_each(|c| *c /= total);
        h
    };
    let hp = count(samples_p);
    let hq = count(samples_q);
    let kl: f64 = hp.iter().zip(&hq).map(|(p, q)| p * (p / q).ln()).sum();
    Ok(kl.max(0.0))
}

/// `KL(N(mu_p, cov_p) || N(mu_q, cov_q))`.
pub fn kl_gaussian(
    mu_p: &DVector<f64>,
    cov_p: &DMatrix<f64>,
    mu_q: &DVector<f64>,
    cov_q: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_p.len();
    ensure_dim(d, mu_q.len())?;
    let chol_q = cov_q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("covariance is not positive definite".into()))?;
    let chol_p = cov_p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("covariance is not positive definite".into()))?;
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let tr = spd_solve(cov_q, cov_p)?.trace();
    let diff = mu_q - mu_p;
    let maha = diff.dot(&chol_q.solve(&diff));
    let kl = 0.5 * (tr + maha - d as f64 + logdet(&chol_q.l()) - logdet(&chol_p.l()));
    Ok(kl.max(0.0))
}

/// KL between Gaussian fits of two sample sets; tagged
/// [`DivergenceKind::KlGaussianFit`] wherever reported.
pub fn kl_gaussian_fit(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    ensure_dim(p.ncols(), q.ncols())?;
    kl_gaussian(&sample_mean(p)?, &sample_cov(p)?, &sample_mean(q)?, &sample_cov(q)?)
}

/// `D(P) = Tr + (sqrt(Tr) - P)^2` for `P <= sqrt(Tr)`, else `Tr`.
pub fn optimal_distortion(trace_sigma: f64, p: f64) -> f64 {
    let r = trace_sigma.sqrt();
    if p <= r {
        trace_sigma + (r - p).powi(2)
    } else {
        trace_sigma
    }
}

/// The optimal MSE/W2 tradeoff as `(P, D)` pairs.
pub fn optimal_dp_curve(trace_sigma: f64, p_values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if !(trace_sigma > 0.0) {
        return Err(Error::InvalidRange(format!("trace must be positive, got {trace_sigma}")));
    }
    if let Some(p) = p_values.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::InvalidRange(format!("perception values must be >= 0, got {p}")));
    }
    Ok(p_values
        .iter()
        .map(|&p| (p, optimal_distortion(trace_sigma, p)))
        .collect())
}

/// `(lambda, D, P)` with `D = (1 + lambda) Tr` and
/// `P = (1 - sqrt(lambda)) sqrt(Tr)`; every point lies on the optimal curve.
pub fn achievability_curve(trace_sigma: f64, lambdas: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    if !(trace_sigma > 0.0) {
        return Err(Error::InvalidRange(format!("trace must be positive, got {trace_sigma}")));
    }
    lambdas
        .iter()
        .map(|&l| {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidRange(format!("lambda must lie in [0, 1], got {l}")));
            }
            let d = (1.0 + l) * trace_sigma;
            let p = (1.0 - l.sqrt()) * trace_sigma.sqrt();
            let on_curve = optimal_distortion(trace_sigma, p);
            assert!(
                (on_curve - d).abs() <= 1e-12 * d.max(1.0),
                "achievability point off the optimal curve"
            );
            Ok((l, d, p))
        })
        .collect()
}

/// Sample size up to which [`W2Method::Auto`] uses the exact solver in 2D+.
pub const AUTO_EXACT_MAX: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum W2Method {
    /// Quantile coupling in 1D; otherwise Gaussian fit against an analytic
    /// reference when one is known, exact assignment for small `n`, and
    /// Gaussian fit for large `n`.
    Auto,
    GaussianFit,
    Empirical1d,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionOptions {
    #[serde(default = "auto")]
    pub w2: W2Method,
    /// Also report a KL estimate (histogram in 1D, Gaussian fit otherwise).
    #[serde(default = "yes")]
    pub kl: bool,
    #[serde(default = "fifty")]
    pub kl_bins: usize,
}

fn auto() -> W2Method {
    W2Method::Auto
}
fn yes() -> bool {
    true
}
fn fifty() -> usize {
    50
}

impl Default for PerceptionOptions {
    fn default() -> Self {
        Self {
            w2: W2Method::Auto,
            kl: true,
            kl_bins: 50,
        }
    }
}

/// Distortion and perception of `reconstructions` against paired ground
/// truth rows. `analytic` is the exact `(mean, cov)` of the target law when
/// known; Gaussian-fit estimators then compare against it directly.
pub fn evaluate_dp(
    lambda: f64,
    reconstructions: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    analytic: Option<(&DVector<f64>, &DMatrix<f64>)>,
    opts: &PerceptionOptions,
    seed: u64,
) -> Result<DPPoint> {
    evaluate_dp_against(lambda, reconstructions, truth, truth, analytic, opts, seed)
}

/// As [`evaluate_dp`], but perception is measured against `reference`, a
/// sample of the target law drawn independently of `truth`.
pub fn evaluate_dp_against(
    lambda: f64,
    reconstructions: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    analytic: Option<(&DVector<f64>, &DMatrix<f64>)>,
    opts: &PerceptionOptions,
    seed: u64,
) -> Result<DPPoint> {
    let distortion = mse_paired(reconstructions, truth)?;
    let truth = reference;
    let n = reconstructions.nrows();
    let d = reconstructions.ncols();
    let col = |m: &DMatrix<f64>| m.column(0).iter().copied().collect::<Vec<f64>>();
    let fit_w2 = || -> Result<f64> {
        match analytic {
            Some((mu, cov)) => w2_gaussian(&sample_mean(reconstructions)?, &sample_cov(reconstructions)?, mu, cov),
            None => w2_gaussian_fit(reconstructions, truth),
        }
    };
    let method = match opts.w2 {
        W2Method::Auto if d == 1 => W2Method::Empirical1d,
        W2Method::Auto if analytic.is_some() || n > AUTO_EXACT_MAX => W2Method::GaussianFit,
        W2Method::Auto => W2Method::Exact,
        m => m,
    };
    let (w2, w2_kind) = match method {
        W2Method::Empirical1d => {
            if d != 1 {
                return Err(Error::InvalidConfig("empirical 1D W2 needs 1D samples".into()));
            }
            (w2_empirical_1d(&col(reconstructions), &col(truth))?, DivergenceKind::W2Empirical1d)
        }
        W2Method::Exact => (w2_exact_small(reconstructions, truth)?, DivergenceKind::W2Exact),
        _ => (fit_w2()?, DivergenceKind::W2GaussianFit),
    };
    let (kl, kl_kind) = if !opts.kl {
        (None, None)
    } else if d == 1 {
        (
            Some(kl_estimate_1d(&col(reconstructions), &col(truth), opts.kl_bins)?),
            Some(DivergenceKind::KlHistogram),
        )
    } else {
        let kl = match analytic {
            Some((mu, cov)) => kl_gaussian(&sample_mean(reconstructions)?, &sample_cov(reconstructions)?, mu, cov),
            None => kl_gaussian_fit(reconstructions, truth),
        };
        match kl {
            Ok(v) => (Some(v), Some(DivergenceKind::KlGaussianFit)),
            // a collapsed sample set has no density
            Err(Error::LinearAlgebra(_)) => (None, None),
            Err(e) => return Err(e),
        }
    };
    Ok(DPPoint {
        lambda,
        distortion,
        w2,
        w2_kind,
        kl,
        kl_kind,
        n_samples: n,
        seed,
        degenerate: n < 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, standard_normal};

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn normals(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..n).map(|_| mean + sd * standard_normal(&mut rng)).collect()
    }

    #[test]
    fn mse_examples() {
        let a = col(&[0.0, 2.0]);
        let b = col(&[1.0, 2.0]);
        assert_eq!(mse_paired(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_paired(&a, &b).unwrap(), 0.5);
        assert!(matches!(
            mse_paired(&DMatrix::zeros(0, 1), &DMatrix::zeros(0, 1)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn w2_gaussian_examples() {
        let m = DVector::from_vec(vec![0.0]);
        let c = DMatrix::from_element(1, 1, 1.0);
        assert!(w2_gaussian(&m, &c, &m, &c).unwrap() < 1e-12);
        let w = w2_gaussian(&m, &c, &DVector::from_vec(vec![1.0]), &DMatrix::from_element(1, 1, 4.0))
            .unwrap();
        assert!((w - 2f64.sqrt()).abs() < 1e-12);

        let mu = DVector::from_vec(vec![0.3, -0.1]);
        let sig = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        for &l in &[0.0, 0.3, 0.8, 1.0] {
            let w = w2_gaussian(&mu, &sig, &mu, &(&sig * l)).unwrap();
            assert!((w - (1.0 - f64::sqrt(l)) * sig.trace().sqrt()).abs() < 1e-7);
        }
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(w2_gaussian(&mu, &sig, &mu, &bad).is_err());
    }

    #[test]
    fn w2_empirical_examples() {
        let a = normals(100_000, 0.0, 1.0, 1);
        assert_eq!(w2_empirical_1d(&a, &a).unwrap(), 0.0);
        let b = normals(100_000, 1.0, 1.0, 2);
        assert!((w2_empirical_1d(&a, &b).unwrap() - 1.0).abs() < 0.02);
        let c = normals(100_000, 0.5, 2.0, 3);
        let want = (0.25f64 + 1.0).sqrt();
        assert!((w2_empirical_1d(&a, &c).unwrap() / want - 1.0).abs() < 0.02);
        assert!(w2_empirical_1d(&[], &a).is_err());
    }

    #[test]
    fn w2_empirical_unequal_sizes() {
        let a = [0.0, 1.0];
        let b = [0.0, 0.0, 1.0, 1.0];
        assert!(w2_empirical_1d(&a, &b).unwrap() < 0.3);
    }

    #[test]
    fn w2_exact_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert!(w2_exact_small(&a, &a).unwrap() < 1e-15);
        assert!(w2_exact_small(&a, &b).unwrap() < 1e-15);
        let x = normals(300, 0.0, 1.0, 4);
        let y = normals(300, 0.4, 1.5, 5);
        let exact = w2_exact_small(&col(&x), &col(&y)).unwrap();
        let sorted = w2_empirical_1d(&x, &y).unwrap();
        assert!((exact - sorted).abs() < 1e-12);
        assert!(w2_exact_small(&col(&x), &col(&y[..10])).is_err());
    }

    #[test]
    fn assignment_beats_brute_force_on_tiny_instances() {
        let mut rng = seeded(8);
        for _ in 0..20 {
            let n = 5;
            let c: Vec<f64> = (0..n * n).map(|_| standard_normal(&mut rng).abs()).collect();
            let got = solve_assignment(n, |i, j| c[i * n + j]);
            let got_cost: f64 = got.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            permute(&mut perm, 0, &mut |p| {
                let s: f64 = p.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
                best = best.min(s);
            });
            assert!((got_cost - best).abs() < 1e-12);
        }
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn kl_examples() {
        let a = normals(100_000, 0.0, 1.0, 6);
        assert!(kl_estimate_1d(&a, &a, 100).unwrap() <= 1e-3);
        let b = normals(100_000, 1.0, 1.0, 7);
        let kl = kl_estimate_1d(&a, &b, 100).unwrap();
        assert!((kl / 0.5 - 1.0).abs() < 0.1, "{kl}");
        let far: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        let kl = kl_estimate_1d(&a, &far, 100).unwrap();
        assert!(kl.is_finite() && kl > 5.0);
        assert!(kl_estimate_1d(&a, &b, 1).is_err());
    }

    #[test]
    fn gaussian_kl_closed_form() {
        let m0 = DVector::from_vec(vec![0.0]);
        let m1 = DVector::from_vec(vec![1.0]);
        let c = DMatrix::from_element(1, 1, 1.0);
        assert!((kl_gaussian(&m0, &c, &m1, &c).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn curve_anchors() {
        let c = optimal_dp_curve(1.0, &[0.0, 0.5, 1.0, 3.0]).unwrap();
        assert_eq!(c[0].1, 2.0);
        assert!((c[1].1 - 1.25).abs() < 1e-15);
        assert_eq!(c[2].1, 1.0);
        assert_eq!(c[3].1, 1.0);
        let a = achievability_curve(1.0, &[0.0, 0.25, 1.0]).unwrap();
        assert_eq!((a[0].1, a[0].2), (1.0, 1.0));
        assert!((a[1].1 - 1.25).abs() < 1e-15 && (a[1].2 - 0.5).abs() < 1e-15);
        assert_eq!((a[2].1, a[2].2), (2.0, 0.0));
        assert!(optimal_dp_curve(0.0, &[0.1]).is_err());
        assert!(achievability_curve(1.0, &[1.2]).is_err());
    }

    #[test]
    fn evaluate_dp_picks_estimators() {
        let a = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let b = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let p = evaluate_dp(0.5, &a, &b, None, &PerceptionOptions::default(), 7).unwrap();
        assert_eq!(p.distortion, 1.0);
        assert_eq!(p.w2, 1.0);
        assert_eq!(p.w2_kind, DivergenceKind::W2Empirical1d);
        assert_eq!(p.kl_kind, Some(DivergenceKind::KlHistogram));
        assert!(!p.degenerate);

        let a2 = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let b2 = &a2 * 1.0 + DMatrix::from_element(3, 2, 0.5);
        let p = evaluate_dp(0.0, &a2, &b2, None, &PerceptionOptions::default(), 0).unwrap();
        assert_eq!(p.w2_kind, DivergenceKind::W2Exact);
        assert!((p.w2 - 0.5f64.sqrt()).abs() < 1e-12);

        let one = DMatrix::from_row_slice(1, 2, &[0.3, 0.4]);
        let p = evaluate_dp(1.0, &one, &one, None, &PerceptionOptions::default(), 0).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.kl, None);
    }
}
