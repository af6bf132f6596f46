//! Central finite differences against every analytic gradient and VJP.
//! Shared by the core gradient tests and the acceptance target.

use dptraverse::nn::{Activation, Architecture, Parameterization, ScoreNetwork};
use dptraverse::sampler::dps_terms;
use dptraverse::{
    build_schedule, derive_seed, seeded, GaussianPosterior, MeasurementModel, MixtureModel,
    NoiseSchedule, Operator, PriorScore,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const TOLERANCE: f64 = 1e-5;
const H: f64 = 1e-5;

/// Worst relative error of one gradient family.
#[derive(Debug, Clone)]
pub struct Family {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

/// `||a - b||_inf / ||b||_inf`, with `b` the finite-difference estimate.
pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    num / den
}

fn central(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + H;
            let up = f(&x);
            x[i] = x0 - H;
            let down = f(&x);
            x[i] = x0;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn tiny(d: usize, act: Activation, param: Parameterization) -> Architecture {
    Architecture {
        data_dim: d,
        x_widths: vec![5],
        embed_dim: 4,
        t_widths: vec![4],
        fusion_widths: vec![6],
        activation: act,
        parameterization: param,
    }
}

const PARAMS: [Parameterization; 3] = [Parameterization::Epsilon, Parameterization::Score, Parameterization::V];

fn normals<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * dptraverse::rng::standard_normal(rng)).collect()
}

fn schedule() -> NoiseSchedule {
    build_schedule(200, 1e-4, 0.02).unwrap()
}

/// Loss gradient with respect to every network parameter.
pub fn network_parameters(instances: usize, seed: u64) -> Family {
    let s = schedule();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = seeded(derive_seed(seed, &[1, i as u64]));
        let d = 1 + i % 2;
        let act = if i % 4 == 3 { Activation::Identity } else { Activation::Silu };
        let mut net = ScoreNetwork::new(tiny(d, act, PARAMS[i % 3]), s.steps(), rng.random()).unwrap();
        let batch = DMatrix::from_vec(3, d, normals(&mut rng, 3 * d, 1.0));
        let noise_seed: u64 = rng.random();
        let (_, grad) = net.dsm_loss_and_grad(&batch, &s, &mut seeded(noise_seed)).unwrap();
        let theta = net.params().to_vec();
        let fd = central(
            &mut |p| {
                net.params_mut().copy_from_slice(p);
                net.dsm_loss_and_grad(&batch, &s, &mut seeded(noise_seed)).unwrap().0
            },
            &theta,
        );
        worst = worst.max(rel(&grad, &fd));
    }
    Family {
        name: "network parameter gradient",
        instances,
        worst,
    }
}

/// `v^T d score / d x` for all three output parameterizations.
pub fn network_input_vjp(instances: usize, seed: u64) -> Family {
    let s = schedule();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = seeded(derive_seed(seed, &[2, i as u64]));
        let d = 1 + i % 3;
        let net = ScoreNetwork::new(tiny(d, Activation::Silu, PARAMS[i % 3]), s.steps(), rng.random()).unwrap();
        let k = rng.random_range(1..=s.steps());
        let x = normals(&mut rng, d, 1.0);
        let v = normals(&mut rng, d, 1.0);
        let vjp = net.score_vjp(&x, k, &s, &v).unwrap();
        let fd = central(
            &mut |x| net.score_eval(x, k, &s).unwrap().iter().zip(&v).map(|(a, b)| a * b).sum(),
            &x,
        );
        worst = worst.max(rel(&vjp, &fd));
    }
    Family {
        name: "network input VJP",
        instances,
        worst,
    }
}

fn operator<R: Rng>(rng: &mut R, i: usize, d: usize) -> MeasurementModel {
    let op = match i % 3 {
        0 => Operator::Scale(0.5 + rng.random::<f64>()),
        1 => Operator::Matrix(DMatrix::from_vec(2, d, normals(rng, 2 * d, 1.0))),
        _ => Operator::Tanh {
            gain: 0.5 + rng.random::<f64>(),
        },
    };
    MeasurementModel::new(op, 0.3, d).unwrap()
}

/// `J_A(x)^T v` for every operator kind.
pub fn measurement_vjp(instances: usize, seed: u64) -> Family {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = seeded(derive_seed(seed, &[3, i as u64]));
        let d = 1 + i % 3;
        let m = operator(&mut rng, i, d);
        let x = normals(&mut rng, d, 1.0);
        let v = normals(&mut rng, m.output_dim(), 1.0);
        let vjp = m.vjp(&x, &v);
        let fd = central(&mut |x| m.apply(x).iter().zip(&v).map(|(a, b)| a * b).sum(), &x);
        worst = worst.max(rel(&vjp, &fd));
    }
    Family {
        name: "measurement VJP",
        instances,
        worst,
    }
}

/// Gradient of `||y - A(x0_hat(x))||^2` through the learned, Gaussian and
/// mixture priors.
pub fn dps_gradient(instances: usize, seed: u64) -> Family {
    let s = schedule();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = seeded(derive_seed(seed, &[4, i as u64]));
        let k = rng.random_range(1..=s.steps());
        let (prior, d): (Box<dyn PriorScore>, usize) = match i % 3 {
            0 => {
                let d = 1 + i % 2;
                let net = ScoreNetwork::new(tiny(d, Activation::Silu, PARAMS[(i / 3) % 3]), s.steps(), rng.random())
                    .unwrap();
                (Box::new(net), d)
            }
            1 => {
                let a = DMatrix::from_vec(2, 2, normals(&mut rng, 4, 1.0));
                let cov = &a * a.transpose() + DMatrix::identity(2, 2) * 0.2;
                let g = GaussianPosterior::new(DVector::from_vec(normals(&mut rng, 2, 1.0)), cov).unwrap();
                (Box::new(g), 2)
            }
            _ => (Box::new(MixtureModel::two_component_example().prior()), 1),
        };
        let m = operator(&mut rng, i / 3, d);
        let y = normals(&mut rng, m.output_dim(), 1.0);
        let x = normals(&mut rng, d, 1.0);
        let t = dps_terms(prior.as_ref(), &x, k, &y, &m, &s).unwrap();
        let fd = central(&mut |x| dps_terms(prior.as_ref(), x, k, &y, &m, &s).unwrap().residual_sq, &x);
        worst = worst.max(rel(&t.grad, &fd));
    }
    Family {
        name: "DPS residual gradient",
        instances,
        worst,
    }
}

/// Mixture score against `d/dx log p` and its derivative against `d/dx score`.
pub fn mixture_scores(instances: usize, seed: u64) -> Family {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = seeded(derive_seed(seed, &[5, i as u64]));
        let w = 0.2 + 0.6 * rng.random::<f64>();
        let model = MixtureModel::new(
            vec![w, 1.0 - w],
            normals(&mut rng, 2, 1.5),
            vec![0.3 + rng.random::<f64>(), 0.3 + rng.random::<f64>()],
            0.5 + rng.random::<f64>(),
            0.3 + rng.random::<f64>(),
        )
        .unwrap();
        let post = dptraverse::mixture_posterior(&model, normals(&mut rng, 1, 1.0)[0]).unwrap();
        let x = normals(&mut rng, 1, 1.0);
        let fd = central(&mut |x| post.log_density(x[0]), &x);
        worst = worst.max(rel(&[post.score(x[0])], &fd));
        let fd = central(&mut |x| post.score(x[0]), &x);
        worst = worst.max(rel(&[post.score_derivative(x[0])], &fd));
    }
    Family {
        name: "mixture score and derivative",
        instances,
        worst,
    }
}

/// Diffused Gaussian score against the log density, and its VJP.
pub fn gaussian_scores(instances: usize, seed: u64) -> Family {
    let s = schedule();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = seeded(derive_seed(seed, &[6, i as u64]));
        let d = 1 + i % 3;
        let a = DMatrix::from_vec(d, d, normals(&mut rng, d * d, 1.0));
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
        let g = GaussianPosterior::new(DVector::from_vec(normals(&mut rng, d, 1.0)), cov).unwrap();
        let k = rng.random_range(0..=s.steps());
        let mean = g.diffused_mean(&s, k);
        let prec = g.diffused_cov(&s, k).try_inverse().unwrap();
        let x = normals(&mut rng, d, 1.0);
        let logp = |x: &[f64]| {
            let r = DVector::from_column_slice(x) - &mean;
            -0.5 * (r.transpose() * &prec * &r)[(0, 0)]
        };
        let score = g.prior_score(&x, k, &s).unwrap();
        worst = worst.max(rel(&score, &central(&mut |x| logp(x), &x)));
        if k > 0 {
            let v = normals(&mut rng, d, 1.0);
            let (_, vjp) = g.prior_score_and_vjp(&x, k, &s, &mut |_| v.clone()).unwrap();
            let fd = central(
                &mut |x| g.prior_score(x, k, &s).unwrap().iter().zip(&v).map(|(a, b)| a * b).sum(),
                &x,
            );
            worst = worst.max(rel(&vjp, &fd));
        }
    }
    Family {
        name: "Gaussian score and VJP",
        instances,
        worst,
    }
}

pub fn all(instances: usize, seed: u64) -> Vec<Family> {
    vec![
        network_parameters(instances, seed),
        network_input_vjp(instances, seed),
        measurement_vjp(instances, seed),
        dps_gradient(instances, seed),
        mixture_scores(instances, seed),
        gaussian_scores(instances, seed),
    ]
}
