//! Linear-Gaussian posteriors, diffused conditional moments, the exact reverse
//! kernel of a Gaussian posterior, and the marginal moments of the
//! variance-scaled reverse chain.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{check_psd, spd_solve, spd_solve_vec, sym_sqrt, symmetrize};
use crate::measurement::MeasurementModel;
use crate::rng::standard_normal;
use crate::schedule::NoiseSchedule;

/// `p(x0 | y) = N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        ensure_dim(mean.len(), cov.nrows())?;
        ensure_dim(mean.len(), cov.ncols())?;
        check_psd(&cov, "posterior covariance")?;
        Ok(Self {
            mean,
            cov: symmetrize(&cov),
        })
    }

    pub fn diagonal(mean: &[f64], variances: &[f64]) -> Result<Self> {
        ensure_dim(mean.len(), variances.len())?;
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    /// `Sigma_k = (1 - abar_k) I + abar_k Sigma_y`.
    pub fn diffused_cov(&self, schedule: &NoiseSchedule, k: usize) -> DMatrix<f64> {
        let ab = schedule.alpha_bar(k);
        let d = self.dim();
        DMatrix::identity(d, d) * (1.0 - ab) + &self.cov * ab
    }

    pub fn diffused_mean(&self, schedule: &NoiseSchedule, k: usize) -> DVector<f64> {
        &self.mean * schedule.alpha_bar(k).sqrt()
    }

    /// `grad log p(x_k | y) = -Sigma_k^{-1} (x - mu_k)`.
    pub fn diffused_score(
        &self,
        schedule: &NoiseSchedule,
        k: usize,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        schedule.check_index(k)?;
        ensure_dim(self.dim(), x.len())?;
        let r = x - self.diffused_mean(schedule, k);
        Ok(-spd_solve_vec(&self.diffused_cov(schedule, k), &r)?)
    }

    /// `n` draws as rows of a matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let root = sym_sqrt(&self.cov)?;
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        let mut z = DVector::zeros(d);
        for i in 0..n {
            for v in z.iter_mut() {
                *v = standard_normal(rng);
            }
            let x = &self.mean + &root * &z;
            out.row_mut(i).copy_from(&x.transpose());
        }
        Ok(out)
    }
}

/// Exact conditional of `x0 ~ N(prior_mean, prior_cov)` given
/// `y = A x0 + n`, in gain form so a near-singular prior covariance is fine.
pub fn gaussian_posterior(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    model: &MeasurementModel,
    y: &DVector<f64>,
) -> Result<GaussianPosterior> {
    let d = prior_mean.len();
    ensure_dim(model.data_dim(), d)?;
    ensure_dim(model.output_dim(), y.len())?;
    check_psd(prior_cov, "prior covariance")?;
    let a = model.as_matrix().ok_or_else(|| {
        Error::InvalidConfig("a Gaussian posterior needs a linear measurement operator".into())
    })?;
    let n = a.nrows();
    let s2 = model.noise_std().powi(2);
    let pat = prior_cov * a.transpose();
    let innovation_cov = &a * &pat + DMatrix::identity(n, n) * s2;
    // gain^T = S^{-1} A P
    let gain_t = spd_solve(&innovation_cov, &pat.transpose())?;
    let resid = y - &a * prior_mean;
    let mean = prior_mean + gain_t.transpose() * resid;
    let cov = prior_cov - pat * gain_t;
    let cov = symmetrize(&cov);
    // clamp round-off in the perfect-measurement limit
    let min_ev = crate::linalg::sym_eigenvalues(&cov)[0];
    let cov = if min_ev < 0.0 {
        cov + DMatrix::identity(d, d) * (-min_ev)
    } else {
        cov
    };
    GaussianPosterior::new(mean, cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// `mu_k = sqrt(abar_k) mu_y`, `Sigma_k = (1 - abar_k) I + abar_k Sigma_y`.
pub fn diffused_conditional_moments(
    posterior: &GaussianPosterior,
    schedule: &NoiseSchedule,
    k: usize,
) -> Result<Moments> {
    schedule.check_index(k)?;
    Ok(Moments {
        mean: posterior.diffused_mean(schedule, k),
        cov: posterior.diffused_cov(schedule, k),
    })
}

/// Moments of `p_lambda(x_k | y)` together with the unscaled `p(x_k | y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMoments {
    pub k: usize,
    pub mu_lambda: DVector<f64>,
    pub sigma_lambda: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Coefficient on `U_k`. `Exact` uses `sqrt(alpha_{k+1})`, which makes `U_k`
/// the true reverse-kernel mean map; `HalfBeta` substitutes
/// `1 - beta_{k+1} / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelForm {
    #[default]
    Exact,
    HalfBeta,
}

/// `p(x_k | x_{k+1}, y) = N(U_k x_{k+1} + V_k mu_y, C_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseKernelParams {
    pub k: usize,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Kernel parameters in the form
/// `U_k = c_k Sigma_k M^{-1}`, `V_k = beta sqrt(abar_k) M^{-1}`,
/// `C_k = beta Sigma_k M^{-1}` with `M = (1 - beta) Sigma_k + beta I`.
pub fn reverse_kernel_params(
    posterior: &GaussianPosterior,
    schedule: &NoiseSchedule,
    k: usize,
    form: KernelForm,
) -> Result<ReverseKernelParams> {
    if k >= schedule.steps() {
        return Err(Error::IndexOutOfRange {
            k,
            steps: schedule.steps() - 1,
        });
    }
    let d = posterior.dim();
    let beta = schedule.beta(k + 1);
    let sigma_k = posterior.diffused_cov(schedule, k);
    let eye = DMatrix::<f64>::identity(d, d);
    let m = &sigma_k * (1.0 - beta) + &eye * beta;
    // Sigma_k and M commute, so Sigma_k M^{-1} = M^{-1} Sigma_k
    let s_minv = symmetrize(&spd_solve(&m, &sigma_k)?);
    let m_inv = symmetrize(&spd_solve(&m, &eye)?);
    let coeff = match form {
        KernelForm::Exact => schedule.alpha(k + 1).sqrt(),
        KernelForm::HalfBeta => 1.0 - 0.5 * beta,
    };
    Ok(ReverseKernelParams {
        k,
        u: &s_minv * coeff,
        v: m_inv * (beta * schedule.alpha_bar(k).sqrt()),
        c: s_minv * beta,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidRange(format!("lambda must lie in [0, 1], got {lambda}")))
    }
}

/// Propagates `mu_k = U_k mu_{k+1} + V_k mu_y`,
/// `Sigma_k = lambda C_k + U_k Sigma_{k+1} U_k^T` from `N(0, I)` at `k = T`.
/// Element `i` of the result holds step `T - i`.
pub fn theorem1_moments_recursion(
    posterior: &GaussianPosterior,
    schedule: &NoiseSchedule,
    lambda: f64,
    form: KernelForm,
) -> Result<Vec<MarginalMoments>> {
    check_lambda(lambda)?;
    let d = posterior.dim();
    let t = schedule.steps();
    let mut mu = DVector::zeros(d);
    let mut sigma = DMatrix::identity(d, d);
    let mut out = Vec::with_capacity(t + 1);
    out.push(MarginalMoments {
        k: t,
        mu_lambda: mu.clone(),
        sigma_lambda: sigma.clone(),
        mu: posterior.diffused_mean(schedule, t),
        sigma: posterior.diffused_cov(schedule, t),
    });
    for k in (0..t).rev() {
        let p = reverse_kernel_params(posterior, schedule, k, form)?;
        mu = &p.u * &mu + &p.v * &posterior.mean;
        sigma = symmetrize(&(&p.c * lambda + &p.u * &sigma * p.u.transpose()));
        out.push(MarginalMoments {
            k,
            mu_lambda: mu.clone(),
            sigma_lambda: sigma.clone(),
            mu: posterior.diffused_mean(schedule, k),
            sigma: posterior.diffused_cov(schedule, k),
        });
    }
    Ok(out)
}

/// Closed-form moments of `p_lambda(x_k | y)` for the chain started at
/// `N(0, I)`, exact at finite `T`:
///
/// `Sigma_k^lambda = Sigma_k (lambda I + P Sigma_T^{-2} (I - lambda Sigma_T) Sigma_k)`,
/// `mu_k^lambda = sqrt(abar_k) (1 - P) Sigma_T^{-1} mu_y`,
/// with `P = alpha_{k+1} ... alpha_T`.
pub fn theorem1_moments_closed_form(
    posterior: &GaussianPosterior,
    schedule: &NoiseSchedule,
    lambda: f64,
    k: usize,
) -> Result<MarginalMoments> {
    check_lambda(lambda)?;
    schedule.check_index(k)?;
    let d = posterior.dim();
    let t = schedule.steps();
    let eye = DMatrix::<f64>::identity(d, d);
    let sigma_k = posterior.diffused_cov(schedule, k);
    let sigma_t = posterior.diffused_cov(schedule, t);
    let tail = schedule.tail_product(k + 1);
    let inner = spd_solve(&sigma_t, &spd_solve(&sigma_t, &(&eye - &sigma_t * lambda))?)?;
    let sigma_lambda = &sigma_k * (&eye * lambda + inner * &sigma_k * tail);
    let mu_lambda = spd_solve_vec(&sigma_t, &posterior.mean)?
        * (schedule.alpha_bar(k).sqrt() * (1.0 - tail));
    Ok(MarginalMoments {
        k,
        mu_lambda,
        sigma_lambda: symmetrize(&sigma_lambda),
        mu: posterior.diffused_mean(schedule, k),
        sigma: sigma_k,
    })
}

/// The `abar_T -> 0` form
/// `Sigma_k (lambda I + (1 - lambda) P Sigma_{T-1}^{-1} Sigma_k)`,
/// `(1 - P) sqrt(abar_k) mu_y`. Agrees with
/// [`theorem1_moments_closed_form`] up to terms of order `abar_T`.
pub fn theorem1_moments_asymptotic(
    posterior: &GaussianPosterior,
    schedule: &NoiseSchedule,
    lambda: f64,
    k: usize,
) -> Result<MarginalMoments> {
    check_lambda(lambda)?;
    let t = schedule.steps();
    if k >= t {
        return Err(Error::IndexOutOfRange { k, steps: t - 1 });
    }
    let d = posterior.dim();
    let sigma_k = posterior.diffused_cov(schedule, k);
    let sigma_tm1 = posterior.diffused_cov(schedule, t - 1);
    let tail = schedule.tail_product(k + 1);
    let rhs = spd_solve(&sigma_tm1, &sigma_k)? * ((1.0 - lambda) * tail);
    let sigma_lambda = &sigma_k * (DMatrix::identity(d, d) * lambda + rhs);
    Ok(MarginalMoments {
        k,
        mu_lambda: &posterior.mean * ((1.0 - tail) * schedule.alpha_bar(k).sqrt()),
        sigma_lambda: symmetrize(&sigma_lambda),
        mu: posterior.diffused_mean(schedule, k),
        sigma: sigma_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_rel_diff, sym_eigenvalues};
    use crate::schedule::build_schedule;

    fn default_schedule() -> NoiseSchedule {
        build_schedule(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn scalar_posterior_by_hand() {
        let model = MeasurementModel::scaled_identity(1.0, 1.0, 1).unwrap();
        let post = gaussian_posterior(
            &DVector::from_vec(vec![0.0]),
            &DMatrix::from_element(1, 1, 1.0),
            &model,
            &DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_limits() {
        let m0 = DVector::from_vec(vec![0.3, -0.2]);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let y = DVector::from_vec(vec![1.5, -0.5]);
        let vague = MeasurementModel::scaled_identity(1.0, 1e6, 2).unwrap();
        let post = gaussian_posterior(&m0, &p0, &vague, &y).unwrap();
        assert!((&post.mean - &m0).amax() < 1e-5);
        assert!((&post.cov - &p0).amax() < 1e-5);
        let sharp = MeasurementModel::scaled_identity(1.0, 1e-6, 2).unwrap();
        let post = gaussian_posterior(&m0, &p0, &sharp, &y).unwrap();
        assert!((&post.mean - &y).amax() < 1e-5);
        assert!(post.cov.amax() < 1e-5);
    }

    #[test]
    fn posterior_rejects_nonlinear_operator() {
        let model = MeasurementModel::new(crate::Operator::Tanh { gain: 1.0 }, 0.1, 1).unwrap();
        let r = gaussian_posterior(
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
            &model,
            &DVector::zeros(1),
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn diffused_moments_endpoints() {
        let s = default_schedule();
        // sqrt(abar_T) ~ 6.4e-3, so the 1e-2 bound on mu_T holds for |mu_y| < 1.57
        let post = GaussianPosterior::diagonal(&[1.5, -1.0], &[0.7, 1.3]).unwrap();
        let m0 = diffused_conditional_moments(&post, &s, 0).unwrap();
        assert_eq!(m0.mean, post.mean);
        assert_eq!(m0.cov, post.cov);
        let mt = diffused_conditional_moments(&post, &s, 1000).unwrap();
        assert!((mt.cov - DMatrix::identity(2, 2)).amax() < 1e-3);
        assert!(mt.mean.amax() < 1e-2);
    }

    #[test]
    fn kernel_with_identity_covariance() {
        let s = default_schedule();
        let post = GaussianPosterior::diagonal(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        for &k in &[0usize, 10, 500, 999] {
            let b = s.beta(k + 1);
            let p = reverse_kernel_params(&post, &s, k, KernelForm::HalfBeta).unwrap();
            assert!((&p.u - DMatrix::identity(2, 2) * (1.0 - 0.5 * b)).amax() < 1e-15);
            assert!((&p.c - DMatrix::identity(2, 2) * b).amax() < 1e-15);
            let p = reverse_kernel_params(&post, &s, k, KernelForm::Exact).unwrap();
            assert!((&p.u - DMatrix::identity(2, 2) * (1.0 - b).sqrt()).amax() < 1e-15);
        }
    }

    /// The kernel expressed directly through `Sigma_{k+1}`.
    fn first_form(post: &GaussianPosterior, s: &NoiseSchedule, k: usize) -> ReverseKernelParams {
        let sk = post.diffused_cov(s, k);
        let sk1 = post.diffused_cov(s, k + 1);
        let inv = sk1.clone().try_inverse().unwrap();
        let b = s.beta(k + 1);
        let r = b / (1.0 - b);
        let d = post.dim();
        let c_den = DMatrix::identity(d, d) * (r + 1.0 - s.alpha_bar(k)) + &post.cov * s.alpha_bar(k);
        ReverseKernelParams {
            k,
            u: &sk * &inv * s.alpha(k + 1).sqrt(),
            v: &inv * (s.alpha_bar(k).sqrt() * (1.0 - s.alpha(k + 1))),
            c: &sk * c_den.try_inverse().unwrap() * r,
        }
    }

    #[test]
    fn first_and_second_forms_agree() {
        let s = default_schedule();
        let post = GaussianPosterior::new(
            DVector::from_vec(vec![0.5, -1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]),
        )
        .unwrap();
        for k in 0..1000 {
            let f = first_form(&post, &s, k);
            let exact = reverse_kernel_params(&post, &s, k, KernelForm::Exact).unwrap();
            assert!(max_rel_diff(&exact.u, &f.u, 1e-3) < 1e-12);
            assert!(max_rel_diff(&exact.v, &f.v, 1e-3) < 1e-12);
            assert!(max_rel_diff(&exact.c, &f.c, 1e-3) < 1e-12);
            // sqrt(1 - b) = 1 - b/2 - b^2/8 - ...
            let half = reverse_kernel_params(&post, &s, k, KernelForm::HalfBeta).unwrap();
            let b = s.beta(k + 1);
            assert!(max_rel_diff(&half.u, &f.u, 1e-3) <= b * b / (8.0 * (1.0 - b)) + 1e-14);
            assert!(max_rel_diff(&half.c, &f.c, 1e-3) < 1e-12);
        }
    }

    #[test]
    fn vanishing_beta_limit() {
        let mut betas = vec![0.0];
        betas.extend(std::iter::repeat_n(1e-12, 10));
        let s = NoiseSchedule::from_betas(betas).unwrap();
        let post = GaussianPosterior::diagonal(&[1.0], &[0.3]).unwrap();
        let p = reverse_kernel_params(&post, &s, 4, KernelForm::Exact).unwrap();
        assert!((p.u[(0, 0)] - 1.0).abs() < 1e-10);
        assert!(p.v[(0, 0)].abs() < 1e-10);
        assert!(p.c[(0, 0)].abs() < 1e-10);
    }

    #[test]
    fn kernel_covariance_is_positive_definite() {
        let s = default_schedule();
        let post = GaussianPosterior::diagonal(&[0.0, 0.0], &[0.2, 3.0]).unwrap();
        for k in (0..1000).step_by(37) {
            let p = reverse_kernel_params(&post, &s, k, KernelForm::Exact).unwrap();
            assert!(sym_eigenvalues(&p.c)[0] > 0.0);
        }
        assert!(reverse_kernel_params(&post, &s, 1000, KernelForm::Exact).is_err());
    }

    #[test]
    fn recursion_matches_closed_form() {
        let s = default_schedule();
        let posts = [
            GaussianPosterior::diagonal(&[0.8], &[0.7]).unwrap(),
            GaussianPosterior::new(
                DVector::from_vec(vec![1.0, -0.5]),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
            )
            .unwrap(),
        ];
        for post in &posts {
            for &lambda in &[0.0, 0.25, 0.5, 0.75, 1.0] {
                let rec = theorem1_moments_recursion(post, &s, lambda, KernelForm::Exact).unwrap();
                assert_eq!(rec.len(), 1001);
                for m in &rec {
                    let cf = theorem1_moments_closed_form(post, &s, lambda, m.k).unwrap();
                    assert!(max_rel_diff(&m.sigma_lambda, &cf.sigma_lambda, 1e-6) < 1e-9);
                    let dm = (&m.mu_lambda - &cf.mu_lambda).amax();
                    assert!(dm <= 1e-9 * cf.mu_lambda.amax().max(1e-6), "k={} dm={dm}", m.k);
                }
            }
        }
    }

    #[test]
    fn asymptotic_form_is_close() {
        let s = default_schedule();
        let post = GaussianPosterior::diagonal(&[1.0, -1.0], &[1.0, 2.0]).unwrap();
        for &lambda in &[0.0, 0.5, 1.0] {
            for k in (0..1000).step_by(50) {
                let a = theorem1_moments_asymptotic(&post, &s, lambda, k).unwrap();
                let e = theorem1_moments_closed_form(&post, &s, lambda, k).unwrap();
                assert!(max_rel_diff(&a.sigma_lambda, &e.sigma_lambda, 1e-3) < 1e-3);
                assert!((&a.mu_lambda - &e.mu_lambda).amax() < 1e-3);
            }
        }
    }

    #[test]
    fn endpoint_limits() {
        let s = default_schedule();
        let post = GaussianPosterior::diagonal(&[0.9], &[0.7]).unwrap();
        let rec = theorem1_moments_recursion(&post, &s, 0.0, KernelForm::Exact).unwrap();
        let last = rec.last().unwrap();
        assert_eq!(last.k, 0);
        assert!(last.sigma_lambda[(0, 0)] <= 1e-3);
        assert!((last.mu_lambda[0] - 0.9).abs() < 1e-3);

        let post = GaussianPosterior::diagonal(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        for (lambda, want) in [(1.0, [1.0, 2.0]), (0.5, [0.5, 1.0])] {
            let rec = theorem1_moments_recursion(&post, &s, lambda, KernelForm::Exact).unwrap();
            let sig = &rec.last().unwrap().sigma_lambda;
            for i in 0..2 {
                assert!((sig[(i, i)] / want[i] - 1.0).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn lambda_zero_endpoint_is_tiny() {
        let s = default_schedule();
        let post = GaussianPosterior::diagonal(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        let m = theorem1_moments_closed_form(&post, &s, 0.0, 0).unwrap();
        let asym = theorem1_moments_asymptotic(&post, &s, 0.0, 0).unwrap();
        // abar_T Sigma_{T-1}^{-1} Sigma_0^2
        let want = s.alpha_bar(1000) * 4.0 / post.diffused_cov(&s, 999)[(1, 1)];
        assert!((asym.sigma_lambda[(1, 1)] - want).abs() < 1e-15);
        assert!(m.sigma_lambda.amax() < 1e-3);
    }

    #[test]
    fn lambda_one_leaves_marginals_unscaled_far_from_t() {
        let s = default_schedule();
        let post = GaussianPosterior::diagonal(&[0.0], &[0.4]).unwrap();
        let m = theorem1_moments_closed_form(&post, &s, 1.0, 10).unwrap();
        assert!(max_rel_diff(&m.sigma_lambda, &m.sigma, 1e-9) < 1e-3);
    }

    #[test]
    fn rejects_lambda_out_of_range() {
        let s = default_schedule();
        let post = GaussianPosterior::diagonal(&[0.0], &[0.4]).unwrap();
        assert!(theorem1_moments_recursion(&post, &s, 1.5, KernelForm::Exact).is_err());
        assert!(theorem1_moments_closed_form(&post, &s, -0.1, 3).is_err());
    }
}
