//! A shallow autoencoder prior trained with autoencoder or denoising losses
//! plus the normalized idempotent penalty
//!
//! ```text
//! R(P) = sum_x ||P(P(x)) - P(x)|| / ||P(x)||
//! ```
//!
//! The prior is `P(x) = W_dec σ(W_enc x)` with `σ` either the identity or
//! `tanh`. Gradients are derived by hand; the penalty is differentiated
//! through both applications of `P` in `P∘P`.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dist2, dot, norm2, Matrix};
use crate::rng::{derive_seed, gaussian_vec, rng_from_seed, SeededRng};

/// Elements with `||P(x)||` at or below this are left out of the penalty,
/// in the loss and in its gradient alike.
pub const NORM_GUARD: f64 = 1e-12;

/// Penalty weight used for deep denoisers; the default here.
pub const DEFAULT_LAMBDA: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Linear,
    Tanh,
}

impl Nonlinearity {
    fn eval(self, a: f64) -> f64 {
        match self {
            Nonlinearity::Linear => a,
            Nonlinearity::Tanh => a.tanh(),
        }
    }

    fn derivative(self, a: f64) -> f64 {
        match self {
            Nonlinearity::Linear => 1.0,
            Nonlinearity::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Nonlinearity::Linear => "linear",
            Nonlinearity::Tanh => "tanh",
        }
    }
}

/// One-hidden-layer autoencoder `x -> W_dec σ(W_enc x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyPrior {
    encoder: Matrix,
    decoder: Matrix,
    nonlinearity: Nonlinearity,
    seed: Option<u64>,
}

/// Intermediate values of one forward pass.
struct Forward {
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

/// Gradient with the same shapes as the prior's weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorGradient {
    pub encoder: Matrix,
    pub decoder: Matrix,
}

impl PriorGradient {
    fn zeros_like(p: &ToyPrior) -> Self {
        Self {
            encoder: Matrix::zeros(p.encoder.rows(), p.encoder.cols()),
            decoder: Matrix::zeros(p.decoder.rows(), p.decoder.cols()),
        }
    }

    /// Encoder entries followed by decoder entries, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.encoder
            .as_slice()
            .iter()
            .chain(self.decoder.as_slice())
            .copied()
            .collect()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.to_flat())
    }
}

impl ToyPrior {
    /// `encoder` is `d x N`, `decoder` is `N x d`, and `d < N`.
    pub fn new(encoder: Matrix, decoder: Matrix, nonlinearity: Nonlinearity) -> Result<Self> {
        let (d, n) = (encoder.rows(), encoder.cols());
        check_dim("decoder rows", n, decoder.rows())?;
        check_dim("decoder cols", d, decoder.cols())?;
        if d >= n {
            return Err(Error::InvalidArgument(format!(
                "latent dimension {d} must be below ambient dimension {n}"
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            nonlinearity,
            seed: None,
        })
    }

    /// Gaussian initialisation scaled by fan-in.
    pub fn random(n: usize, d_latent: usize, nonlinearity: Nonlinearity, seed: u64) -> Result<Self> {
        if n == 0 || d_latent == 0 {
            return Err(Error::InvalidArgument("prior dimensions must be positive".into()));
        }
        let mut rng = rng_from_seed(seed);
        let enc = gaussian_vec(&mut rng, d_latent * n, 1.0 / (n as f64).sqrt());
        let dec = gaussian_vec(&mut rng, n * d_latent, 1.0 / (d_latent as f64).sqrt());
        let mut p = Self::new(
            Matrix::new(d_latent, n, enc)?,
            Matrix::new(n, d_latent, dec)?,
            nonlinearity,
        )?;
        p.seed = Some(seed);
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.encoder.cols()
    }

    pub fn d_latent(&self) -> usize {
        self.encoder.rows()
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn encoder(&self) -> &Matrix {
        &self.encoder
    }

    pub fn decoder(&self) -> &Matrix {
        &self.decoder
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            decoder: self.decoder.scaled(s),
            ..self.clone()
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.n() * self.d_latent()
    }

    pub fn params(&self) -> Vec<f64> {
        self.encoder
            .as_slice()
            .iter()
            .chain(self.decoder.as_slice())
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameter vector", self.param_count(), flat.len())?;
        let split = self.encoder.as_slice().len();
        self.encoder.as_mut_slice().copy_from_slice(&flat[..split]);
        self.decoder.as_mut_slice().copy_from_slice(&flat[split..]);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("prior input", self.n(), x.len())?;
        Ok(self.forward(x.to_vec()).output)
    }

    fn forward(&self, input: Vec<f64>) -> Forward {
        let pre = self.encoder.mul_vec(&input);
        let hidden: Vec<f64> = pre.iter().map(|&a| self.nonlinearity.eval(a)).collect();
        let output = self.decoder.mul_vec(&hidden);
        Forward {
            input,
            pre,
            hidden,
            output,
        }
    }

    /// Accumulates parameter gradients for upstream gradient `g_out` and
    /// returns the gradient with respect to the input.
    fn backward(&self, f: &Forward, g_out: &[f64], grad: &mut PriorGradient) -> Vec<f64> {
        let d = self.d_latent();
        for (i, &g) in g_out.iter().enumerate() {
            if g != 0.0 {
                let row = &mut grad.decoder.as_mut_slice()[i * d..(i + 1) * d];
                axpy(g, &f.hidden, row);
            }
        }
        let g_hidden = self.decoder.mul_t_vec(g_out);
        let g_pre: Vec<f64> = g_hidden
            .iter()
            .zip(&f.pre)
            .map(|(g, &a)| g * self.nonlinearity.derivative(a))
            .collect();
        let n = self.n();
        for (j, &g) in g_pre.iter().enumerate() {
            if g != 0.0 {
                let row = &mut grad.encoder.as_mut_slice()[j * n..(j + 1) * n];
                axpy(g, &f.input, row);
            }
        }
        self.encoder.mul_t_vec(&g_pre)
    }

    /// Prior parameters as CSV: a `n,d_latent,nonlinearity,seed` header,
    /// its values, then the flattened encoder and decoder on one line each.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,d_latent,nonlinearity,seed")?;
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{}",
            self.n(),
            self.d_latent(),
            self.nonlinearity.name(),
            seed
        )?;
        for m in [&self.encoder, &self.decoder] {
            let vals: Vec<String> = m.as_slice().iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", vals.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        if lines.len() < 4 || lines[0].trim() != "n,d_latent,nonlinearity,seed" {
            return Err(Error::Parse("prior file needs a header and three lines".into()));
        }
        let meta: Vec<&str> = lines[1].trim().split(',').collect();
        if meta.len() != 4 {
            return Err(Error::Parse("prior metadata needs 4 fields".into()));
        }
        let n: usize = meta[0].parse().map_err(|e| Error::Parse(format!("n: {e}")))?;
        let d: usize = meta[1].parse().map_err(|e| Error::Parse(format!("d_latent: {e}")))?;
        let nonlinearity = match meta[2] {
            "linear" => Nonlinearity::Linear,
            "tanh" => Nonlinearity::Tanh,
            other => return Err(Error::Parse(format!("unknown nonlinearity `{other}`"))),
        };
        let seed = match meta[3] {
            "" => None,
            s => Some(s.parse().map_err(|e| Error::Parse(format!("seed: {e}")))?),
        };
        let parse_row = |s: &str| -> Result<Vec<f64>> {
            s.trim()
                .split(',')
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("`{t}`: {e}"))))
                .collect()
        };
        let mut p = Self::new(
            Matrix::new(d, n, parse_row(&lines[2])?)?,
            Matrix::new(n, d, parse_row(&lines[3])?)?,
            nonlinearity,
        )?;
        p.seed = seed;
        Ok(p)
    }
}

/// Sum of the penalty terms plus how many batch elements contributed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NiprTerms {
    pub sum: f64,
    pub used: usize,
    pub skipped: usize,
}

pub fn nipr_terms(p: &ToyPrior, batch: &[Vec<f64>]) -> Result<NiprTerms> {
    let mut terms = NiprTerms {
        sum: 0.0,
        used: 0,
        skipped: 0,
    };
    for x in batch {
        let px = p.apply(x)?;
        let npx = norm2(&px);
        if npx <= NORM_GUARD {
            terms.skipped += 1;
            continue;
        }
        let ppx = p.apply(&px)?;
        terms.sum += dist2(&ppx, &px) / npx;
        terms.used += 1;
    }
    Ok(terms)
}

/// `sum_x ||P(P(x)) - P(x)|| / ||P(x)||` over the batch.
pub fn nipr_penalty(p: &ToyPrior, batch: &[Vec<f64>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let t = nipr_terms(p, batch)?;
    if t.used == 0 {
        return Err(Error::MetricUndefined(format!(
            "all {} batch elements have ||P(x)|| below {NORM_GUARD}",
            t.skipped
        )));
    }
    Ok(t.sum)
}

/// Unnormalized idempotence defect `||P(P(x)) - P(x)||` for one input.
pub fn idempotence_defect(p: &ToyPrior, x: &[f64]) -> Result<f64> {
    let px = p.apply(x)?;
    Ok(dist2(&p.apply(&px)?, &px))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `sum_x ||P(x) - x||^2`
    Ae,
    /// `mean_x ||P(x + ε) - x||^2`, `ε ~ N(0, ξ^2 I)`
    Pnp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub noise_sigma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            noise_sigma: 0.1,
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 32,
            loss_kind: LossKind::Pnp,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(
                "lambda and noise_sigma must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Denoising-loss perturbations, one vector per batch element.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseDraws(pub Vec<Vec<f64>>);

impl NoiseDraws {
    pub fn none() -> Self {
        Self(Vec::new())
    }

    pub fn sample(batch_len: usize, n: usize, sigma: f64, seed: u64) -> Self {
        Self::from_rng(batch_len, n, sigma, &mut rng_from_seed(seed))
    }

    fn from_rng(batch_len: usize, n: usize, sigma: f64, rng: &mut SeededRng) -> Self {
        Self((0..batch_len).map(|_| gaussian_vec(rng, n, sigma)).collect())
    }
}

struct LossEval {
    loss: f64,
    grad: PriorGradient,
    nipr_used: usize,
}

fn evaluate(p: &ToyPrior, batch: &[Vec<f64>], cfg: &TrainConfig, noise: &NoiseDraws) -> Result<LossEval> {
    let mut grad = PriorGradient::zeros_like(p);
    let mut loss = 0.0;
    let n = p.n();
    let pnp = cfg.loss_kind == LossKind::Pnp;
    if pnp && !noise.0.is_empty() {
        check_dim("noise draws", batch.len(), noise.0.len())?;
    }
    let data_weight = if pnp && !batch.is_empty() {
        1.0 / batch.len() as f64
    } else {
        1.0
    };

    for (i, x) in batch.iter().enumerate() {
        check_dim("batch element", n, x.len())?;
        let input = match noise.0.get(i) {
            Some(eps) if pnp => x.iter().zip(eps).map(|(a, b)| a + b).collect(),
            _ => x.clone(),
        };
        let f = p.forward(input);
        let diff: Vec<f64> = f.output.iter().zip(x).map(|(a, b)| a - b).collect();
        loss += data_weight * dot(&diff, &diff);
        let g_out: Vec<f64> = diff.iter().map(|d| 2.0 * data_weight * d).collect();
        p.backward(&f, &g_out, &mut grad);
    }

    let mut nipr_used = 0;
    if cfg.lambda > 0.0 {
        // penalty is evaluated on the clean inputs
        let mut fwd = Vec::with_capacity(batch.len());
        for x in batch {
            let f1 = p.forward(x.clone());
            if norm2(&f1.output) > NORM_GUARD {
                fwd.push(f1);
            }
        }
        nipr_used = fwd.len();
        if nipr_used > 0 {
            let w = cfg.lambda / nipr_used as f64;
            for f1 in fwd {
                let f2 = p.forward(f1.output.clone());
                let u: Vec<f64> = f2.output.iter().zip(&f1.output).map(|(a, b)| a - b).collect();
                let nu = norm2(&u);
                let np = norm2(&f1.output);
                loss += w * nu / np;
                // d(nu/np)/dp2 = u/(nu np); d(nu/np)/dp1 = -u/(nu np) - nu p1/np^3
                let g_p2: Vec<f64> = if nu > 0.0 {
                    u.iter().map(|v| w * v / (nu * np)).collect()
                } else {
                    vec![0.0; n]
                };
                let through_input = p.backward(&f2, &g_p2, &mut grad);
                let c = w * nu / (np * np * np);
                let g_p1: Vec<f64> = g_p2
                    .iter()
                    .zip(&f1.output)
                    .zip(&through_input)
                    .map(|((g2, p1), gi)| -g2 - c * p1 + gi)
                    .collect();
                p.backward(&f1, &g_p1, &mut grad);
            }
        }
    }
    Ok(LossEval { loss, grad, nipr_used })
}

/// Data-fit loss plus `lambda` times the batch-mean penalty.
pub fn training_loss(p: &ToyPrior, batch: &[Vec<f64>], cfg: &TrainConfig, noise: &NoiseDraws) -> Result<f64> {
    let e = evaluate(p, batch, cfg, noise)?;
    if cfg.lambda > 0.0 && e.nipr_used == 0 && !batch.is_empty() {
        return Err(Error::MetricUndefined(
            "penalty undefined: every P(x) in the batch is numerically zero".into(),
        ));
    }
    Ok(e.loss)
}

/// Analytic gradient of [`training_loss`] with respect to all weights.
pub fn loss_gradient(p: &ToyPrior, batch: &[Vec<f64>], cfg: &TrainConfig, noise: &NoiseDraws) -> Result<PriorGradient> {
    Ok(evaluate(p, batch, cfg, noise)?.grad)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub prior: ToyPrior,
    /// Mean minibatch loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    pub diverged: bool,
}

/// Fixed-step minibatch gradient descent. Batch order and noise come from
/// streams derived from `cfg.seed`, one per epoch.
pub fn train(p0: &ToyPrior, dataset: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut prior = p0.clone();
    let mut params = prior.params();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x7a11, epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let noise = match cfg.loss_kind {
                LossKind::Pnp => NoiseDraws::from_rng(batch.len(), prior.n(), cfg.noise_sigma, &mut rng),
                LossKind::Ae => NoiseDraws::none(),
            };
            let e = evaluate(&prior, &batch, cfg, &noise)?;
            if !e.loss.is_finite() {
                return Ok(TrainOutcome {
                    prior,
                    epoch_losses,
                    diverged: true,
                });
            }
            let step: Vec<f64> = params
                .iter()
                .zip(e.grad.to_flat())
                .map(|(w, g)| w - cfg.learning_rate * g)
                .collect();
            if step.iter().any(|v| !v.is_finite()) {
                return Ok(TrainOutcome {
                    prior,
                    epoch_losses,
                    diverged: true,
                });
            }
            params = step;
            prior.set_params(&params)?;
            total += e.loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(TrainOutcome {
        prior,
        epoch_losses,
        diverged: false,
    })
}

/// Points near a `d`-dimensional manifold in `R^N`:
/// `scale * (U z + curvature * V tanh(z)) + ambient_noise * g` with
/// orthonormal `U`, `V` spanning disjoint subspaces and `z ~ N(0, I_d)`.
#[derive(Clone, Debug)]
pub struct SyntheticManifold {
    basis: Matrix,
    bend: Matrix,
    pub curvature: f64,
    pub scale: f64,
}

impl SyntheticManifold {
    pub fn new(n: usize, d: usize, curvature: f64, scale: f64, seed: u64) -> Result<Self> {
        if d == 0 || 2 * d > n {
            return Err(Error::InvalidArgument(format!(
                "manifold needs 0 < 2d <= N, got d={d}, N={n}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let g = DMatrix::from_fn(n, 2 * d, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let mut basis = Matrix::zeros(n, d);
        let mut bend = Matrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                basis.set(i, j, q[(i, j)]);
                bend.set(i, j, q[(i, d + j)]);
            }
        }
        Ok(Self {
            basis,
            bend,
            curvature,
            scale,
        })
    }

    pub fn n(&self) -> usize {
        self.basis.rows()
    }

    pub fn d(&self) -> usize {
        self.basis.cols()
    }

    /// Orthonormal basis of the linear part, `N x d`.
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn point(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.basis.mul_vec(z);
        if self.curvature != 0.0 {
            let t: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
            axpy(self.curvature, &self.bend.mul_vec(&t), &mut x);
        }
        x.iter_mut().for_each(|v| *v *= self.scale);
        x
    }

    pub fn sample(&self, count: usize, ambient_noise: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..count)
            .map(|_| {
                let z = gaussian_vec(&mut rng, self.d(), 1.0);
                let mut x = self.point(&z);
                if ambient_noise > 0.0 {
                    axpy(1.0, &gaussian_vec(&mut rng, self.n(), ambient_noise), &mut x);
                }
                x
            })
            .collect()
    }
}
