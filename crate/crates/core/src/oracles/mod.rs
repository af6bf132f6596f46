//! Closed-form ground truth for Gaussian and 1D mixture posteriors.

mod gaussian;
mod mixture;

pub use gaussian::{
    diffused_conditional_moments, gaussian_posterior, reverse_kernel_params,
    theorem1_moments_asymptotic, theorem1_moments_closed_form, theorem1_moments_recursion,
    GaussianPosterior, KernelForm, MarginalMoments, Moments, ReverseKernelParams,
};
pub use mixture::{
    diffused_mixture_score, log_sum_exp, mixture_posterior, mmse_estimate, MixtureModel,
    MixturePosterior, Posterior,
};
