//! Time-conditioned MLP: an input block on `x`, a block on a sinusoidal
//! embedding of `k / T`, and a fusion block on their concatenation.
//!
//! Parameters live in one flat vector, layer by layer, each layer as its
//! weight matrix (row-major, `n_in x n_out`) followed by its bias. Every
//! row of a batch is computed independently with a fixed summation order,
//! so results do not depend on batch composition or thread count.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::rng::{fill_standard_normal, seeded, standard_normal};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// `z * sigmoid(z)`.
    Silu,
    Identity,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "silu" => Some(Activation::Silu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

/// What the network output means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    /// Predicts the injected noise; `score = -eps_hat / sqrt(1 - abar_k)`.
    Epsilon,
    /// Predicts the score directly.
    Score,
    /// Predicts `v = sqrt(abar_k) eps - sqrt(1 - abar_k) x0`, so
    /// `eps_hat = sqrt(1 - abar_k) x_k + sqrt(abar_k) v_hat` and
    /// `x0_hat = sqrt(abar_k) x_k - sqrt(1 - abar_k) v_hat`. Network error
    /// reaches `x0_hat` without the `1 / sqrt(abar_k)` blow-up at large `k`.
    V,
}

impl Parameterization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parameterization::Epsilon => "epsilon",
            Parameterization::Score => "score",
            Parameterization::V => "v",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "epsilon" => Some(Parameterization::Epsilon),
            "score" => Some(Parameterization::Score),
            "v" => Some(Parameterization::V),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub data_dim: usize,
    pub x_widths: Vec<usize>,
    /// Even; half sines, half cosines.
    pub embed_dim: usize,
    pub t_widths: Vec<usize>,
    /// Hidden widths of the fusion block; its output layer maps to `data_dim`.
    pub fusion_widths: Vec<usize>,
    pub activation: Activation,
    pub parameterization: Parameterization,
}

impl Architecture {
    /// Widths `[64, 64]`, `[64, 64]` on a 36-dim embedding, fusion `[80, 64]`:
    /// 26,514 parameters at `d = 2`.
    pub fn reference(data_dim: usize) -> Self {
        Self {
            data_dim,
            x_widths: vec![64, 64],
            embed_dim: 36,
            t_widths: vec![64, 64],
            fusion_widths: vec![80, 64],
            activation: Activation::Silu,
            parameterization: Parameterization::Epsilon,
        }
    }

    pub fn small(data_dim: usize) -> Self {
        Self {
            data_dim,
            x_widths: vec![32, 32],
            embed_dim: 16,
            t_widths: vec![32, 32],
            fusion_widths: vec![48, 48],
            activation: Activation::Silu,
            parameterization: Parameterization::Epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.data_dim == 0 {
            return bad("data_dim must be positive");
        }
        if self.x_widths.is_empty() || self.t_widths.is_empty() {
            return bad("input and time blocks need at least one layer");
        }
        if self.embed_dim < 4 || self.embed_dim % 2 != 0 {
            return bad("embed_dim must be even and at least 4");
        }
        let all = self.x_widths.iter().chain(&self.t_widths).chain(&self.fusion_widths);
        if all.clone().any(|w| *w == 0) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
    act: bool,
    /// Offset of this layer's input in the activation workspace.
    input: usize,
    /// Offset of this layer's pre-activation in the workspace.
    pre: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    X,
    T,
    F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    arch: Architecture,
    steps: usize,
    layers: Vec<Layer>,
    blocks: Vec<Block>,
    params: Vec<f64>,
    ws_len: usize,
}

/// Scratch space for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    act: Vec<f64>,
    grad: Vec<f64>,
}

impl ScoreNetwork {
    /// All-zero parameters. `steps` is the schedule length `T` used to
    /// normalise the time input.
    pub fn zeros(arch: Architecture, steps: usize) -> Result<Self> {
        arch.validate()?;
        if steps == 0 {
            return Err(Error::InvalidConfig("schedule length must be positive".into()));
        }
        let mut layers = Vec::new();
        let mut blocks = Vec::new();
        let mut p = 0usize;
        let mut ws = 0usize;
        let mut push = |n_in: usize, n_out: usize, act: bool, block: Block, ws: &mut usize| {
            let l = Layer {
                n_in,
                n_out,
                w: p,
                b: p + n_in * n_out,
                act,
                input: *ws,
                pre: *ws + n_in,
            };
            p += n_in * n_out + n_out;
            *ws += n_in + n_out;
            layers.push(l);
            blocks.push(block);
        };
        let mut prev = arch.data_dim;
        for &w in &arch.x_widths {
            push(prev, w, true, Block::X, &mut ws);
            prev = w;
        }
        let hx = prev;
        prev = arch.embed_dim;
        for &w in &arch.t_widths {
            push(prev, w, true, Block::T, &mut ws);
            prev = w;
        }
        let ht = prev;
        prev = hx + ht;
        for &w in &arch.fusion_widths {
            push(prev, w, true, Block::F, &mut ws);
            prev = w;
        }
        push(prev, arch.data_dim, false, Block::F, &mut ws);
        Ok(Self {
            params: vec![0.0; p],
            arch,
            steps,
            layers,
            blocks,
            ws_len: ws,
        })
    }

    /// Gaussian weights with variance `1 / n_in`, zero biases.
    pub fn new(arch: Architecture, steps: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch, steps)?;
        let mut rng = seeded(seed);
        for l in net.layers.clone() {
            let scale = 1.0 / (l.n_in as f64).sqrt();
            for w in &mut net.params[l.w..l.b] {
                *w = scale * standard_normal(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn data_dim(&self) -> usize {
        self.arch.data_dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Layer shapes `(n_in, n_out)` in parameter order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.n_in, l.n_out)).collect()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            act: vec![0.0; self.ws_len],
            grad: vec![0.0; self.ws_len],
        }
    }

    /// Sinusoidal features of `k / T` at frequencies `1 .. 1000`.
    pub fn embed(&self, k: usize, out: &mut [f64]) {
        let half = self.arch.embed_dim / 2;
        let t = k as f64 / self.steps as f64;
        let ln_max = 1000f64.ln();
        for j in 0..half {
            let omega = (ln_max * j as f64 / (half - 1) as f64).exp();
            let (s, c) = (t * omega).sin_cos();
            out[j] = s;
            out[half + j] = c;
        }
    }

    fn first_of(&self, block: Block) -> usize {
        self.blocks.iter().position(|b| *b == block).unwrap()
    }

    fn last_of(&self, block: Block) -> usize {
        self.blocks.iter().rposition(|b| *b == block).unwrap()
    }

    fn dense_forward(&self, l: &Layer, ws: &mut Workspace) {
        let (input, pre) = ws.act[l.input..l.pre + l.n_out].split_at_mut(l.n_in);
        pre.copy_from_slice(&self.params[l.b..l.b + l.n_out]);
        for (i, &xi) in input.iter().enumerate() {
            let row = &self.params[l.w + i * l.n_out..l.w + (i + 1) * l.n_out];
            for (o, w) in pre.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    /// Where the post-activation output of layer `i` goes.
    fn output_target(&self, i: usize) -> usize {
        let fx = self.last_of(Block::X);
        let ft = self.last_of(Block::T);
        let f0 = self.layers[self.first_of(Block::F)];
        if i == fx {
            f0.input
        } else if i == ft {
            f0.input + self.layers[fx].n_out
        } else {
            self.layers[i + 1].input
        }
    }

    /// Raw network output (noise or score, per the parameterization).
    pub fn forward_ws(&self, x: &[f64], k: usize, ws: &mut Workspace) -> Vec<f64> {
        let x0 = self.layers[0];
        ws.act[x0.input..x0.input + x0.n_in].copy_from_slice(x);
        let t0 = self.layers[self.first_of(Block::T)];
        let mut emb = vec![0.0; self.arch.embed_dim];
        self.embed(k, &mut emb);
        ws.act[t0.input..t0.input + t0.n_in].copy_from_slice(&emb);
        let n = self.layers.len();
        for i in 0..n {
            let l = self.layers[i];
            self.dense_forward(&l, ws);
            if i + 1 < n {
                let target = self.output_target(i);
                let act = self.arch.activation;
                for j in 0..l.n_out {
                    let z = ws.act[l.pre + j];
                    ws.act[target + j] = if l.act { act.apply(z) } else { z };
                }
            }
        }
        let last = self.layers[n - 1];
        ws.act[last.pre..last.pre + last.n_out].to_vec()
    }

    pub fn forward(&self, x: &[f64], k: usize) -> Vec<f64> {
        self.forward_ws(x, k, &mut self.workspace())
    }

    /// Backpropagate `grad_out` (w.r.t. the raw output) through the pass
    /// stored in `ws`. Accumulates parameter gradients into `param_grad`
    /// when given and returns the gradient w.r.t. `x`.
    pub fn backward_ws(
        &self,
        ws: &mut Workspace,
        grad_out: &[f64],
        mut param_grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let n = self.layers.len();
        let act = self.arch.activation;
        let need_time = param_grad.is_some();
        // grad[l.pre..] holds dL/d(pre-activation) of layer l,
        // grad[l.input..] holds dL/d(input) of layer l
        let last = self.layers[n - 1];
        ws.grad[last.pre..last.pre + last.n_out].copy_from_slice(grad_out);
        for i in (0..n).rev() {
            let l = self.layers[i];
            if !need_time && self.blocks[i] == Block::T {
                continue;
            }
            if i + 1 < n {
                // dL/d(post) sits at the consumer's input slot
                let target = self.output_target(i);
                for j in 0..l.n_out {
                    let g = ws.grad[target + j];
                    let z = ws.act[l.pre + j];
                    ws.grad[l.pre + j] = if l.act { g * act.derivative(z) } else { g };
                }
            }
            let (gin, gpre) = ws.grad[l.input..l.pre + l.n_out].split_at_mut(l.n_in);
            if let Some(pg) = param_grad.as_deref_mut() {
                let input = &ws.act[l.input..l.input + l.n_in];
                for (i_in, &xi) in input.iter().enumerate() {
                    let row = &mut pg[l.w + i_in * l.n_out..l.w + (i_in + 1) * l.n_out];
                    for (r, g) in row.iter_mut().zip(gpre.iter()) {
                        *r += xi * g;
                    }
                }
                for (b, g) in pg[l.b..l.b + l.n_out].iter_mut().zip(gpre.iter()) {
                    *b += g;
                }
            }
            for (i_in, gi) in gin.iter_mut().enumerate() {
                let row = &self.params[l.w + i_in * l.n_out..l.w + (i_in + 1) * l.n_out];
                *gi = row.iter().zip(gpre.iter()).map(|(w, g)| w * g).sum();
            }
        }
        let x0 = self.layers[0];
        ws.grad[x0.input..x0.input + x0.n_in].to_vec()
    }

    /// `(a, b)` with `score = a x + b * output`.
    fn score_factor(&self, schedule: &NoiseSchedule, k: usize) -> Result<(f64, f64)> {
        if k == 0 {
            return Err(Error::ZeroStepScore);
        }
        schedule.check_index(k)?;
        if schedule.steps() != self.steps {
            return Err(Error::InvalidConfig(format!(
                "network was built for T = {}, schedule has T = {}",
                self.steps,
                schedule.steps()
            )));
        }
        let ab = schedule.alpha_bar(k);
        Ok(match self.arch.parameterization {
            Parameterization::Epsilon => (0.0, -1.0 / (1.0 - ab).sqrt()),
            Parameterization::Score => (0.0, 1.0),
            Parameterization::V => (-1.0, -(ab / (1.0 - ab)).sqrt()),
        })
    }

    /// Estimate of `grad log p(x_k)`.
    pub fn score_eval(&self, x: &[f64], k: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        ensure_dim(self.data_dim(), x.len())?;
        let (a, f) = self.score_factor(schedule, k)?;
        Ok(self.forward(x, k).iter().zip(x).map(|(v, xi)| a * xi + f * v).collect())
    }

    /// Scores for every row of `x`, in parallel.
    pub fn score_batch(&self, x: &DMatrix<f64>, k: usize, schedule: &NoiseSchedule) -> Result<DMatrix<f64>> {
        ensure_dim(self.data_dim(), x.ncols())?;
        let (a, f) = self.score_factor(schedule, k)?;
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map_init(
                || self.workspace(),
                |ws, i| {
                    let xi: Vec<f64> = x.row(i).iter().copied().collect();
                    let out = self.forward_ws(&xi, k, ws);
                    out.iter().zip(&xi).map(|(v, x)| a * x + f * v).collect()
                },
            )
            .collect();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(DMatrix::from_row_slice(x.nrows(), self.data_dim(), &flat))
    }

    /// `v^T (d score / d x)`.
    pub fn score_vjp(
        &self,
        x: &[f64],
        k: usize,
        schedule: &NoiseSchedule,
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        ensure_dim(self.data_dim(), cotangent.len())?;
        let (_, vjp) = self.score_and_vjp(x, k, schedule, &mut |_| cotangent.to_vec())?;
        Ok(vjp)
    }

    /// Score at `x` and the VJP against a cotangent that may depend on it.
    pub fn score_and_vjp(
        &self,
        x: &[f64],
        k: usize,
        schedule: &NoiseSchedule,
        cotangent_of: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_dim(self.data_dim(), x.len())?;
        let (a, f) = self.score_factor(schedule, k)?;
        let mut ws = self.workspace();
        let out = self.forward_ws(x, k, &mut ws);
        let score: Vec<f64> = out.iter().zip(x).map(|(v, xi)| a * xi + f * v).collect();
        let cot = cotangent_of(&score);
        ensure_dim(self.data_dim(), cot.len())?;
        let g: Vec<f64> = cot.iter().map(|c| f * c).collect();
        let mut vjp = self.backward_ws(&mut ws, &g, None);
        if a != 0.0 {
            vjp.iter_mut().zip(&cot).for_each(|(v, c)| *v += a * c);
        }
        Ok((score, vjp))
    }

    /// Denoising score matching on a batch of clean rows. Each row draws
    /// `k ~ U{1..T}` and `eps ~ N(0, I)`; the loss is the batch mean of
    /// `||eps_hat - eps||^2` (or `||sqrt(1 - abar_k) s_hat + eps||^2` in
    /// score mode, the same objective). In v mode the loss is
    /// `||v_hat - v||^2`, which weights step `k` by `1 / abar_k` relative to
    /// the noise loss.
    pub fn dsm_loss_and_grad<R: Rng + ?Sized>(
        &self,
        batch: &DMatrix<f64>,
        schedule: &NoiseSchedule,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        let b = batch.nrows();
        if b == 0 {
            return Err(Error::EmptyInput("training batch"));
        }
        let d = self.data_dim();
        ensure_dim(d, batch.ncols())?;
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRange("training batch has non-finite entries".into()));
        }
        if schedule.steps() != self.steps {
            return Err(Error::InvalidConfig("schedule length does not match network".into()));
        }
        let t = schedule.steps();
        let mut ks = Vec::with_capacity(b);
        let mut eps = vec![0.0; b * d];
        for i in 0..b {
            ks.push(rng.random_range(1..=t));
            fill_standard_normal(rng, &mut eps[i * d..(i + 1) * d]);
        }
        const CHUNK: usize = 16;
        let chunks: Vec<(f64, Vec<f64>)> = (0..b.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut ws = self.workspace();
                let mut grad = vec![0.0; self.params.len()];
                let mut loss = 0.0;
                for i in c * CHUNK..((c + 1) * CHUNK).min(b) {
                    let k = ks[i];
                    let ab = schedule.alpha_bar(k);
                    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
                    let e = &eps[i * d..(i + 1) * d];
                    let xk: Vec<f64> = (0..d).map(|j| sa * batch[(i, j)] + sn * e[j]).collect();
                    let out = self.forward_ws(&xk, k, &mut ws);
                    let (resid, scale): (Vec<f64>, f64) = match self.arch.parameterization {
                        Parameterization::Epsilon => {
                            (out.iter().zip(e).map(|(o, e)| o - e).collect(), 1.0)
                        }
                        Parameterization::Score => {
                            (out.iter().zip(e).map(|(o, e)| sn * o + e).collect(), sn)
                        }
                        Parameterization::V => (
                            (0..d).map(|j| out[j] - (sa * e[j] - sn * batch[(i, j)])).collect(),
                            1.0,
                        ),
                    };
                    loss += resid.iter().map(|r| r * r).sum::<f64>();
                    let g: Vec<f64> = resid.iter().map(|r| 2.0 * scale * r / b as f64).collect();
                    self.backward_ws(&mut ws, &g, Some(&mut grad));
                }
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in chunks {
            loss += l;
            for (a, v) in grad.iter_mut().zip(&g) {
                *a += v;
            }
        }
        Ok((loss / b as f64, grad))
    }
}
