//! The subcommands. Each writes its outputs under the output directory and
//! returns their paths.

use std::fs;
use std::path::{Path, PathBuf};

use dptraverse::csv::{fmt_f64, CsvTable};
use dptraverse::metrics::optimal_dp_curve;
use dptraverse::nn::{load_checkpoint, train, Checkpoint, DataSource, LogEntry};
use dptraverse::oracles::KernelForm;
use dptraverse::{
    derive_seed, generate, sample, sample_batch, seeded, sweep_lambda, theorem1_moments_closed_form,
    theorem1_moments_recursion, DPPoint, Error, GaussianPosterior, GuidanceMode, MeasurementModel,
    NoiseSchedule, Observations, OracleScore, Posterior, SamplerConfig, ScoreNetwork, ScoreSource,
    SigmaTilde, SweepEntry, TrainConfig, YSource,
};
use nalgebra::{DMatrix, DVector};

use crate::config::{
    CurveSection, OraclePosterior, RunConfig, SweepSection, TrajectorySection, CONFIG_BEGIN,
    CONFIG_END,
};
use crate::error::CliError;
use crate::plot::{Figure, Series, Style};

const SAMPLER_STREAM: u64 = 1;
const TRUTH_STREAM: u64 = 2;
const REFERENCE_STREAM: u64 = 3;
const OBSERVE_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Sample,
    Sweep,
    Oracle,
    ZetaSweep,
    Trajectories,
    Curve,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Train,
        Command::Sample,
        Command::Sweep,
        Command::Oracle,
        Command::ZetaSweep,
        Command::Trajectories,
        Command::Curve,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Sweep => "sweep",
            Command::Oracle => "oracle",
            Command::ZetaSweep => "zeta-sweep",
            Command::Trajectories => "trajectories",
            Command::Curve => "curve",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Settings that come from flags rather than the config.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Fill the `wall_ms` column of training logs.
    pub timing: bool,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    schedule: NoiseSchedule,
    header: Vec<String>,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn new(cmd: Command, mut cfg: RunConfig, opts: &Options) -> Result<Self, CliError> {
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        let out = opts
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        let schedule = cfg.schedule.build()?;
        let mut header = vec![
            "dptraverse run".to_string(),
            format!("command = {}", cmd.name()),
            format!("seed = {}", cfg.seed),
            CONFIG_BEGIN.to_string(),
        ];
        header.extend(cfg.resolved_toml().lines().map(str::to_string));
        header.push(CONFIG_END.to_string());
        Ok(Self {
            cfg,
            out,
            schedule,
            header,
            written: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_table(&mut self, name: &str, mut table: CsvTable) -> Result<(), CliError> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        }
        let mut comments = self.header.clone();
        comments.append(&mut table.comments);
        table.comments = comments;
        table
            .write(&path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn write_svg(&mut self, name: &str, fig: &Figure) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, fig.render(&self.header))
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn sampler_seed(&self) -> u64 {
        derive_seed(self.cfg.seed, &[SAMPLER_STREAM])
    }

    fn sweep(&self) -> SweepSection {
        self.cfg.sweep.clone().unwrap_or_default()
    }
}

/// A score source together with what it borrows.
enum Prepared {
    Oracle {
        oracle: OracleScore,
        posterior: OraclePosterior,
    },
    Learned {
        net: ScoreNetwork,
        model: MeasurementModel,
    },
}

impl Prepared {
    fn new(ctx: &Ctx) -> Result<Self, CliError> {
        let cfg = &ctx.cfg;
        if let Some(o) = &cfg.oracle {
            let posterior = o.resolve(cfg.measurement.as_ref())?;
            let p: Posterior = match &posterior {
                OraclePosterior::Gaussian(g) => g.clone().into(),
                OraclePosterior::Mixture(_, m) => m.clone().into(),
            };
            return Ok(Prepared::Oracle {
                oracle: OracleScore::new(p, &ctx.schedule)?,
                posterior,
            });
        }
        let path = cfg.sampler.checkpoint.as_ref().ok_or_else(|| {
            CliError::Config("need an [oracle] table or sampler.checkpoint for a learned score".into())
        })?;
        let ck = load_checkpoint(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if ck.schedule != cfg.schedule {
            return Err(CliError::Config(format!(
                "checkpoint {} was trained with schedule {:?}, config has {:?}",
                path.display(),
                ck.schedule,
                cfg.schedule
            )));
        }
        let m = cfg
            .measurement
            .as_ref()
            .ok_or_else(|| CliError::Config("learned sampling needs a [measurement] table".into()))?;
        let model = m.model(ck.net.architecture().data_dim)?;
        Ok(Prepared::Learned { net: ck.net, model })
    }

    fn source(&self) -> ScoreSource<'_> {
        match self {
            Prepared::Oracle { oracle, .. } => ScoreSource::Oracle(oracle),
            Prepared::Learned { net, model } => ScoreSource::Learned { prior: net, model },
        }
    }

    fn dim(&self) -> usize {
        self.source().dim()
    }

    fn template(&self, ctx: &Ctx, lambda: f64) -> Result<SamplerConfig, CliError> {
        let s = &ctx.cfg.sampler;
        let (sigma, guidance) = match self {
            Prepared::Oracle { .. } => (SigmaTilde::ExactC, GuidanceMode::OracleScore),
            Prepared::Learned { .. } => (SigmaTilde::Beta, GuidanceMode::Dps),
        };
        let c = SamplerConfig {
            lambda,
            zeta: s.zeta,
            sigma_tilde: s.sigma_tilde.unwrap_or(sigma),
            noise_scaling: s.noise_scaling,
            guidance,
            seed: ctx.sampler_seed(),
        };
        c.validate()?;
        Ok(c)
    }

    /// The observation for single-`y` commands (empty for oracles).
    fn fixed_y(&self, ctx: &Ctx) -> Result<Vec<f64>, CliError> {
        match self {
            Prepared::Oracle { .. } => Ok(Vec::new()),
            Prepared::Learned { model, .. } => {
                let y = ctx
                    .cfg
                    .sampler
                    .y
                    .clone()
                    .ok_or_else(|| CliError::Config("learned sampling needs sampler.y".into()))?;
                if y.len() != model.output_dim() {
                    return Err(CliError::Config(format!(
                        "sampler.y has {} entries, the measurement has {} outputs",
                        y.len(),
                        model.output_dim()
                    )));
                }
                Ok(y)
            }
        }
    }

    fn mmse(&self) -> Option<DVector<f64>> {
        match self {
            Prepared::Oracle { posterior, .. } => Some(match posterior {
                OraclePosterior::Gaussian(g) => g.mean.clone(),
                OraclePosterior::Mixture(_, m) => DVector::from_element(1, m.mean()),
            }),
            Prepared::Learned { .. } => None,
        }
    }
}

/// Ground truth for sweeps.
struct Truth {
    truth: DMatrix<f64>,
    ys: Option<DMatrix<f64>>,
    reference: Option<DMatrix<f64>>,
    analytic: Option<GaussianPosterior>,
}

impl Truth {
    fn new(ctx: &Ctx, prep: &Prepared, n: usize) -> Result<Self, CliError> {
        let mut rng = seeded(derive_seed(ctx.cfg.seed, &[TRUTH_STREAM]));
        match prep {
            Prepared::Oracle { posterior, .. } => match posterior {
                OraclePosterior::Gaussian(g) => Ok(Truth {
                    truth: g.sample(n, &mut rng)?,
                    ys: None,
                    reference: None,
                    analytic: Some(g.clone()),
                }),
                OraclePosterior::Mixture(_, m) => Ok(Truth {
                    truth: DMatrix::from_column_slice(n, 1, &m.sample(n, &mut rng)),
                    ys: None,
                    reference: None,
                    analytic: None,
                }),
            },
            Prepared::Learned { model, .. } => {
                let spec = ctx.cfg.dataset.as_ref().ok_or_else(|| {
                    CliError::Config("a learned sweep draws ground truth from [dataset]".into())
                })?;
                let truth = generate(spec, n, derive_seed(ctx.cfg.seed, &[TRUTH_STREAM]))?;
                let reference = generate(spec, n, derive_seed(ctx.cfg.seed, &[REFERENCE_STREAM]))?;
                let mut orng = seeded(derive_seed(ctx.cfg.seed, &[OBSERVE_STREAM]));
                let m = model.output_dim();
                let mut ys = DMatrix::zeros(n, m);
                for i in 0..n {
                    let x = DVector::from_iterator(truth.ncols(), truth.row(i).iter().copied());
                    let y = model.observe(&x, &mut orng)?;
                    ys.row_mut(i).copy_from(&y.transpose());
                }
                Ok(Truth {
                    truth,
                    ys: Some(ys),
                    reference: Some(reference),
                    analytic: None,
                })
            }
        }
    }

    fn ysource(&self) -> YSource<'_> {
        match (&self.ys, &self.reference) {
            (Some(ys), Some(reference)) => YSource::Paired {
                ys,
                truth: &self.truth,
                reference,
            },
            _ => YSource::Fixed {
                y: &[],
                truth: &self.truth,
                analytic: self.analytic.as_ref(),
            },
        }
    }
}

fn columns(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

fn table(header: &[String]) -> CsvTable {
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    CsvTable::new(&refs)
}

fn matrix_table(m: &DMatrix<f64>) -> CsvTable {
    let mut t = table(&columns(m.ncols()));
    for i in 0..m.nrows() {
        t.push_floats(&m.row(i).iter().copied().collect::<Vec<_>>());
    }
    t
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn divergence_error(failures: Vec<(f64, Error)>) -> Result<(), CliError> {
    let mut it = failures.into_iter();
    match it.next() {
        None => Ok(()),
        Some((l, e)) => {
            let rest = it.count();
            let e = CliError::from(e);
            let msg = format!(
                "lambda = {l}: {e}{}",
                if rest > 0 { format!(" (and {rest} more)") } else { String::new() }
            );
            Err(match e {
                CliError::Config(_) => CliError::Config(msg),
                CliError::Io(_) => CliError::Io(msg),
                CliError::Divergence(_) => CliError::Divergence(msg),
            })
        }
    }
}

/// Runs `cmd` and returns the files written.
pub fn run(cmd: Command, cfg: RunConfig, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    let mut ctx = Ctx::new(cmd, cfg, opts)?;
    match cmd {
        Command::Train => cmd_train(&mut ctx, opts)?,
        Command::Sample => cmd_sample(&mut ctx)?,
        Command::Sweep => cmd_sweep(&mut ctx)?,
        Command::Oracle => cmd_oracle(&mut ctx)?,
        Command::ZetaSweep => cmd_zeta_sweep(&mut ctx)?,
        Command::Trajectories => cmd_trajectories(&mut ctx)?,
        Command::Curve => cmd_curve(&mut ctx)?,
    }
    Ok(ctx.written)
}

fn cmd_train(ctx: &mut Ctx, opts: &Options) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let spec = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("train needs a [dataset] table".into()))?;
    let ts = cfg
        .train
        .as_ref()
        .ok_or_else(|| CliError::Config("train needs a [train] table".into()))?;
    let arch = cfg.model.clone().unwrap_or_else(default_model).architecture(spec.dim());
    let ck_path = ctx.path("model.ckpt");
    let tc = TrainConfig {
        final_lr_fraction: ts.final_lr_fraction,
        checkpoint_path: Some(ck_path.clone()),
        checkpoint_every: ts.checkpoint_every,
        log_every: ts.log_every,
        record_wall_time: opts.timing,
        ..TrainConfig::new(ts.steps, ts.batch_size, ts.learning_rate, cfg.seed)
    };
    tc.validate()?;
    let resume: Option<Checkpoint> = match &ts.resume {
        Some(p) => Some(load_checkpoint(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let outcome = train(&tc, arch, DataSource::Generator(spec), &ctx.schedule, resume)?;
    let mut log = table(&["step".into(), "loss".into(), "wall_ms".into()]);
    for LogEntry { step, loss, wall_ms } in &outcome.log {
        log.push(vec![step.to_string(), fmt_f64(*loss), opt_f64(*wall_ms)]);
    }
    log.comments.push(format!("parameters = {}", outcome.net.param_count()));
    ctx.write_table("train_log.csv", log)?;
    ctx.written.push(ck_path);
    Ok(())
}

fn default_model() -> crate::config::ModelSection {
    toml::from_str("").expect("model defaults")
}

fn cmd_sample(ctx: &mut Ctx) -> Result<(), CliError> {
    let prep = Prepared::new(ctx)?;
    let y = prep.fixed_y(ctx)?;
    let template = prep.template(ctx, ctx.cfg.sampler.lambda)?;
    let n = ctx.cfg.sampler.n_samples;
    let x = sample_batch(Observations::Fixed(&y), n, &template, &prep.source(), &ctx.schedule)?;
    let mut t = matrix_table(&x);
    t.comments.extend(template.describe());
    ctx.write_table("samples.csv", t)
}

fn dp_row(p: &DPPoint) -> Vec<String> {
    vec![
        fmt_f64(p.lambda),
        fmt_f64(p.distortion),
        fmt_f64(p.w2),
        opt_f64(p.kl),
        p.n_samples.to_string(),
        p.seed.to_string(),
    ]
}

fn kinds_comment(points: &[&DPPoint]) -> Vec<String> {
    match points.first() {
        Some(p) => vec![
            format!("w2 = {}", p.w2_kind.as_str()),
            format!("kl = {}", p.kl_kind.map(|k| k.as_str()).unwrap_or("not computed")),
        ],
        None => Vec::new(),
    }
}

fn cmd_sweep(ctx: &mut Ctx) -> Result<(), CliError> {
    let prep = Prepared::new(ctx)?;
    let sw = ctx.sweep();
    let n = ctx.cfg.sampler.n_samples;
    let truth = Truth::new(ctx, &prep, n)?;
    let template = prep.template(ctx, sw.lambdas[0])?;
    let entries = sweep_lambda(
        &sw.lambdas,
        truth.ysource(),
        &template,
        &prep.source(),
        &ctx.schedule,
        &ctx.cfg.metrics,
    )?;
    let mut curve = table(&["lambda", "mse", "w2", "kl", "n_samples", "seed"].map(String::from));
    let mut failures = Vec::new();
    let mut points = Vec::new();
    for (i, SweepEntry { lambda, result }) in entries.into_iter().enumerate() {
        match result {
            Ok((p, recon)) => {
                if sw.save_samples {
                    let mut t = matrix_table(&recon);
                    t.comments.extend(template.with_lambda(lambda).describe());
                    ctx.write_table(&format!("samples/lambda_{i:02}.csv"), t)?;
                }
                curve.push(dp_row(&p));
                points.push(p);
            }
            Err(e) => failures.push((lambda, e)),
        }
    }
    curve.comments = kinds_comment(&points.iter().collect::<Vec<_>>());
    ctx.write_table("dp_curve.csv", curve)?;

    let mut fig = Figure::new("distortion-perception sweep", "perception (W2)", "distortion (MSE)");
    if let Some(g) = &truth.analytic {
        let tr = g.trace();
        let grid: Vec<f64> = (0..=60).map(|i| i as f64 / 60.0 * 1.25 * tr.sqrt()).collect();
        fig.push(Series::new("optimal D(P)", optimal_dp_curve(tr, &grid)?, Style::Line));
    }
    fig.push(Series::new(
        "lambda sweep",
        points.iter().map(|p| (p.w2, p.distortion)).collect(),
        Style::Markers,
    ));
    ctx.write_svg("dp_curve.svg", &fig)?;
    divergence_error(failures)
}

fn cmd_zeta_sweep(ctx: &mut Ctx) -> Result<(), CliError> {
    let prep = Prepared::new(ctx)?;
    if matches!(prep, Prepared::Oracle { .. }) {
        return Err(CliError::Config(
            "zeta-sweep needs a learned score (sampler.checkpoint); oracle sampling has no guidance weight".into(),
        ));
    }
    let sw = ctx.sweep();
    let n = ctx.cfg.sampler.n_samples;
    let truth = Truth::new(ctx, &prep, n)?;
    let base = prep.template(ctx, sw.zeta_lambda)?;
    let mut t = table(
        &["multiplier", "zeta_base", "zeta_slope", "lambda", "mse", "w2", "kl", "n_samples", "seed"]
            .map(String::from),
    );
    let mut failures = Vec::new();
    let mut points = Vec::new();
    for &m in &sw.zeta_multipliers {
        let cfg = SamplerConfig {
            zeta: base.zeta.scaled(m),
            ..base
        };
        let entry = sweep_lambda(
            &[sw.zeta_lambda],
            truth.ysource(),
            &cfg,
            &prep.source(),
            &ctx.schedule,
            &ctx.cfg.metrics,
        )?
        .pop()
        .expect("one entry");
        match entry.result {
            Ok((p, _)) => {
                let mut row = vec![fmt_f64(m), fmt_f64(cfg.zeta.base), fmt_f64(cfg.zeta.slope)];
                row.extend(dp_row(&p));
                t.push(row);
                points.push(p);
            }
            Err(e) => failures.push((sw.zeta_lambda, e)),
        }
    }
    t.comments = kinds_comment(&points.iter().collect::<Vec<_>>());
    t.comments.push(format!("zeta scale = {:?}", base.zeta.scale));
    ctx.write_table("zeta_sweep.csv", t)?;
    let mut fig = Figure::new("guidance weight sweep", "perception (W2)", "distortion (MSE)");
    fig.push(Series::new(
        format!("zeta sweep, lambda = {}", sw.zeta_lambda),
        points.iter().map(|p| (p.w2, p.distortion)).collect(),
        Style::Markers,
    ));
    ctx.write_svg("zeta_sweep.svg", &fig)?;
    divergence_error(failures)
}

fn cmd_trajectories(ctx: &mut Ctx) -> Result<(), CliError> {
    let prep = Prepared::new(ctx)?;
    let ts: TrajectorySection = ctx.cfg.trajectories.clone().unwrap_or_default();
    let y = prep.fixed_y(ctx)?;
    let d = prep.dim();
    let mut head = vec!["lambda".to_string(), "path".to_string()];
    head.extend(columns(d));
    let mut ends = table(&head);
    if let Some(m) = prep.mmse() {
        ends.comments.push(format!(
            "mmse = {}",
            m.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
        ));
    }
    let title = if d == 1 { "reverse trajectories" } else { "reverse trajectories (x0, x1)" };
    let (xl, yl) = if d == 1 { ("k", "x") } else { ("x0", "x1") };
    let mut fig = Figure::new(title, xl, yl);
    let mut failures = Vec::new();
    for (li, &lambda) in ts.lambdas.iter().enumerate() {
        let template = prep.template(ctx, lambda)?;
        let mut paths = table(&{
            let mut h = vec!["path".to_string(), "k".to_string()];
            h.extend(columns(d));
            h
        });
        paths.comments.extend(template.describe());
        for i in 0..ts.count {
            let cfg = template.with_seed(derive_seed(template.seed, &[i as u64]));
            let tr = match sample(&y, &cfg, &prep.source(), &ctx.schedule, ts.record) {
                Ok(t) => t,
                Err(e) => {
                    failures.push((lambda, e));
                    continue;
                }
            };
            let mut row = vec![fmt_f64(lambda), i.to_string()];
            row.extend(tr.x0.iter().map(|v| fmt_f64(*v)));
            ends.push(row);
            if ts.record {
                for (k, x) in &tr.states {
                    let mut row = vec![i.to_string(), k.to_string()];
                    row.extend(x.iter().map(|v| fmt_f64(*v)));
                    paths.push(row);
                }
                let pts = tr
                    .states
                    .iter()
                    .map(|(k, x)| if d == 1 { (*k as f64, x[0]) } else { (x[0], x[1]) })
                    .collect();
                let label = if i == 0 { format!("lambda = {lambda}") } else { String::new() };
                fig.push(Series::new(label, pts, Style::Line).in_group(li));
            }
        }
        if ts.record {
            ctx.write_table(&format!("trajectories_lambda_{li:02}.csv"), paths)?;
        }
    }
    ctx.write_table("endpoints.csv", ends)?;
    if ts.record {
        ctx.write_svg("trajectories.svg", &fig)?;
    }
    divergence_error(failures)
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

struct Check {
    lambda: f64,
    name: &'static str,
    value: f64,
    tolerance: Option<f64>,
}

impl Check {
    fn status(&self) -> &'static str {
        match self.tolerance {
            None => "info",
            Some(t) if self.value <= t => "PASS",
            Some(_) => "FAIL",
        }
    }
}

fn cmd_oracle(ctx: &mut Ctx) -> Result<(), CliError> {
    let prep = Prepared::new(ctx)?;
    let Prepared::Oracle { posterior, .. } = &prep else {
        return Err(CliError::Config("oracle needs an [oracle] table".into()));
    };
    let lambdas = ctx.sweep().lambdas;
    let n = ctx.cfg.sampler.n_samples;
    let mut checks = Vec::new();
    let mut failures = Vec::new();
    match posterior {
        OraclePosterior::Gaussian(g) => {
            let d = g.dim();
            let t = ctx.schedule.steps();
            let stride = (t / 20).max(1);
            let mut head = vec!["lambda".to_string(), "k".to_string()];
            head.extend((0..d).map(|i| format!("mu_rec_{i}")));
            head.extend((0..d).map(|i| format!("mu_cf_{i}")));
            for i in 0..d {
                for j in i..d {
                    head.push(format!("sigma_rec_{i}{j}"));
                }
            }
            for i in 0..d {
                for j in i..d {
                    head.push(format!("sigma_cf_{i}{j}"));
                }
            }
            let mut moments = table(&head);
            for &lambda in &lambdas {
                let rec = theorem1_moments_recursion(g, &ctx.schedule, lambda, KernelForm::Exact)?;
                let mut worst: f64 = 0.0;
                for m in &rec {
                    let cf = theorem1_moments_closed_form(g, &ctx.schedule, lambda, m.k)?;
                    let mu_r = DMatrix::from_column_slice(d, 1, m.mu_lambda.as_slice());
                    let mu_c = DMatrix::from_column_slice(d, 1, cf.mu_lambda.as_slice());
                    worst = worst.max(rel_err(&mu_r, &mu_c)).max(rel_err(&m.sigma_lambda, &cf.sigma_lambda));
                    if m.k % stride == 0 {
                        let mut row = vec![fmt_f64(lambda), m.k.to_string()];
                        row.extend(m.mu_lambda.iter().map(|v| fmt_f64(*v)));
                        row.extend(cf.mu_lambda.iter().map(|v| fmt_f64(*v)));
                        for s in [&m.sigma_lambda, &cf.sigma_lambda] {
                            for i in 0..d {
                                for j in i..d {
                                    row.push(fmt_f64(s[(i, j)]));
                                }
                            }
                        }
                        moments.push(row);
                    }
                }
                let end = rec.last().expect("k = 0 row");
                checks.push(Check {
                    lambda,
                    name: "recursion-vs-closed-form",
                    value: worst,
                    tolerance: Some(1e-6),
                });
                checks.push(Check {
                    lambda,
                    name: "sigma0-vs-lambda-sigma",
                    value: (&end.sigma_lambda - &g.cov * lambda).amax() / g.cov.amax(),
                    tolerance: Some(1e-2),
                });
                checks.push(Check {
                    lambda,
                    name: "mu0-vs-mu",
                    value: (&end.mu_lambda - &g.mean).amax(),
                    tolerance: Some(1e-3),
                });
                let template = prep.template(ctx, lambda)?;
                match sample_batch(Observations::Fixed(&[]), n, &template, &prep.source(), &ctx.schedule) {
                    Ok(x) => {
                        let mean = DVector::from_iterator(d, (0..d).map(|j| x.column(j).mean()));
                        let scale = end.sigma_lambda.diagonal().max().max(0.0);
                        checks.push(Check {
                            lambda,
                            name: "mc-mean",
                            value: (&mean - &end.mu_lambda).amax(),
                            tolerance: Some(5.0 * (scale / n as f64).sqrt() + 1e-3),
                        });
                        if n > 1 {
                            let cov = dptraverse::metrics::sample_cov(&x)?;
                            checks.push(Check {
                                lambda,
                                name: "mc-cov",
                                value: (&cov - &end.sigma_lambda).amax(),
                                tolerance: Some(5.0 * (2.0 / n as f64).sqrt() * end.sigma_lambda.amax() + 1e-3),
                            });
                        }
                    }
                    Err(e) => failures.push((lambda, e)),
                }
            }
            ctx.write_table("oracle_moments.csv", moments)?;
        }
        OraclePosterior::Mixture(_, m) => {
            let mut rng = seeded(derive_seed(ctx.cfg.seed, &[TRUTH_STREAM]));
            let direct = m.sample(n, &mut rng);
            let mmse = m.mean();
            for &lambda in &lambdas {
                let template = prep.template(ctx, lambda)?;
                let x = match sample_batch(Observations::Fixed(&[]), n, &template, &prep.source(), &ctx.schedule) {
                    Ok(x) => x,
                    Err(e) => {
                        failures.push((lambda, e));
                        continue;
                    }
                };
                let xs: Vec<f64> = x.column(0).iter().copied().collect();
                let dev = xs.iter().map(|v| (v - mmse).abs()).fold(0.0, f64::max);
                let w2 = dptraverse::metrics::w2_empirical_1d(&xs, &direct)?;
                let kl = dptraverse::metrics::kl_estimate_1d(&xs, &direct, ctx.cfg.metrics.kl_bins)?;
                let mse = xs.iter().zip(&direct).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
                let tol = |t: f64, on: bool| on.then_some(t);
                checks.push(Check {
                    lambda,
                    name: "max-dev-from-mmse",
                    value: dev,
                    tolerance: tol(2e-2, lambda == 0.0),
                });
                checks.push(Check {
                    lambda,
                    name: "w2-to-posterior",
                    value: w2,
                    tolerance: tol(0.05, lambda == 1.0),
                });
                checks.push(Check {
                    lambda,
                    name: "kl-to-posterior",
                    value: kl,
                    tolerance: tol(0.02, lambda == 1.0),
                });
                checks.push(Check {
                    lambda,
                    name: "mse",
                    value: mse,
                    tolerance: None,
                });
            }
        }
    }
    let mut report = table(&["lambda", "check", "value", "tolerance", "status"].map(String::from));
    for c in &checks {
        println!("{} lambda={} {} = {:.3e}", c.status(), c.lambda, c.name, c.value);
        report.push(vec![
            fmt_f64(c.lambda),
            c.name.to_string(),
            fmt_f64(c.value),
            opt_f64(c.tolerance),
            c.status().to_string(),
        ]);
    }
    report.comments.push(format!("n_samples = {n}"));
    ctx.write_table("oracle_report.csv", report)?;
    divergence_error(failures)
}

fn cmd_curve(ctx: &mut Ctx) -> Result<(), CliError> {
    let c: CurveSection = ctx.cfg.curve.clone().unwrap_or_default();
    let p_max = c.p_max.unwrap_or(1.25 * c.trace.sqrt());
    let grid: Vec<f64> = (0..c.points)
        .map(|i| p_max * i as f64 / (c.points - 1) as f64)
        .collect();
    let curve = optimal_dp_curve(c.trace, &grid)?;
    let mut t = table(&["p".to_string(), "d".to_string()]);
    println!("{:>12} {:>12}", "P", "D(P)");
    for &(p, d) in &curve {
        println!("{p:>12.6} {d:>12.6}");
        t.push_floats(&[p, d]);
    }
    t.comments.push(format!("trace = {}", fmt_f64(c.trace)));
    ctx.write_table("curve.csv", t)?;
    let mut fig = Figure::new("optimal distortion-perception curve", "perception (W2)", "distortion (MSE)");
    fig.push(Series::new(format!("Tr = {}", c.trace), curve, Style::Line));
    ctx.write_svg("curve.svg", &fig)
}

/// Reruns the command recorded in an output file with its embedded config.
pub fn replay(file: &Path, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let text = fs::read_to_string(file).map_err(|e| CliError::Io(format!("{}: {e}", file.display())))?;
    let (cmd, body) = crate::config::extract_embedded(&text)
        .ok_or_else(|| CliError::Config(format!("{}: no embedded config", file.display())))?;
    let cmd = Command::parse(&cmd)
        .ok_or_else(|| CliError::Config(format!("{}: unknown command '{cmd}'", file.display())))?;
    let cfg = RunConfig::parse(&body, &file.display().to_string())?;
    run(cmd, cfg, opts)
}
