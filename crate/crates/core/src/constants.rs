//! Restricted isometry and restricted Lipschitz constants, and the recovery
//! bound they feed.
//!
//! For the sparse model the secant set `Σ_k - Σ_k` is `Σ_2k`, so the RIC of
//! `B` is the largest operator norm of `(B - I)` restricted to the columns of
//! any `2k`-subset. [`exact_ric_sparse`] enumerates those subsets; the
//! Monte-Carlo estimators sample instead and are lower bounds.

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist2, norm2, Matrix};
use crate::models::Projection;
use crate::rng::{gaussian_vec, random_support, rng_from_seed, sparse_gaussian, SeededRng};

/// Maximum number of supports [`exact_ric_sparse`] will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Exact RIC of the square matrix `b` (typically `mu L A`) on `Σ_k - Σ_k`.
pub fn exact_ric_sparse(b: &Matrix, k: usize) -> Result<f64> {
    check_dim("square matrix", b.rows(), b.cols())?;
    let n = b.cols();
    let t = (2 * k).min(n);
    if t == 0 {
        return Ok(0.0);
    }
    let count = binomial(n, t);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let d = b.minus_identity()?.to_nalgebra();
    let gram = d.transpose() * &d;
    let mut worst = 0.0_f64;
    for support in (0..n).combinations(t) {
        let sub = DMatrix::from_fn(t, t, |i, j| gram[(support[i], support[j])]);
        let top = sub.symmetric_eigenvalues().iter().cloned().fold(0.0_f64, f64::max);
        worst = worst.max(top);
    }
    Ok(worst.sqrt())
}

/// Smallest and largest eigenvalue of `g` restricted to coordinate
/// subsets of size `min(2k, N)`, by enumeration. For `g = A^T A` these are
/// the squared extreme singular values of `A` on `Σ_2k`.
pub fn restricted_eigen_range(g: &Matrix, k: usize) -> Result<(f64, f64)> {
    check_dim("square matrix", g.rows(), g.cols())?;
    let n = g.cols();
    let t = (2 * k).min(n);
    if t == 0 {
        return Err(Error::InvalidArgument("restriction to an empty support".into()));
    }
    let count = binomial(n, t);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let full = g.to_nalgebra();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for support in (0..n).combinations(t) {
        let sub = DMatrix::from_fn(t, t, |i, j| full[(support[i], support[j])]);
        for ev in sub.symmetric_eigenvalues().iter() {
            lo = lo.min(*ev);
            hi = hi.max(*ev);
        }
    }
    Ok((lo, hi))
}

/// Step size `mu` minimizing the exact RIC of `mu g` on `Σ_k - Σ_k`, and
/// that RIC. The RIC is convex in `mu`, so a golden-section search over
/// `(0, 2 / λ_min]` of the restricted spectrum finds the minimum.
pub fn best_step_ric(g: &Matrix, k: usize) -> Result<(f64, f64)> {
    let (lo, hi) = restricted_eigen_range(g, k)?;
    if !(lo > 0.0) {
        return Err(Error::MetricUndefined(
            "restricted spectrum is not positive definite".into(),
        ));
    }
    let ric = |mu: f64| exact_ric_sparse(&g.scaled(mu), k);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 2.0 / lo);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (ric(c)?, ric(d)?);
    while b - a > 1e-12 * hi.recip().max(1.0) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = ric(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = ric(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Spectral norm of a symmetric matrix from its eigenvalues.
pub fn symmetric_operator_norm(g: &Matrix) -> Result<f64> {
    check_dim("square matrix", g.rows(), g.cols())?;
    Ok(g.to_nalgebra()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs())))
}

/// Largest `||(B - I) v||` over `trials` random unit vectors supported on
/// `min(2k, N)` coordinates. Sample `t` depends only on `seed` and `t`, so
/// more trials never lower the estimate.
pub fn mc_ric(b: &Matrix, k: usize, trials: usize, seed: u64) -> Result<f64> {
    check_dim("square matrix", b.rows(), b.cols())?;
    let n = b.cols();
    let t = (2 * k).min(n);
    if t == 0 {
        return Ok(0.0);
    }
    let d = b.minus_identity()?;
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let support = random_support(&mut rng, n, t);
        let vals = gaussian_vec(&mut rng, t, 1.0);
        let nv = norm2(&vals);
        if nv == 0.0 {
            continue;
        }
        let mut v = vec![0.0; n];
        for (i, val) in support.into_iter().zip(vals) {
            v[i] = val / nv;
        }
        worst = worst.max(norm2(&d.mul_vec(&v)));
    }
    Ok(worst)
}

/// Draws a point of the model set the projection targets.
fn sample_model_point(p: &Projection, n: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    Ok(match p {
        Projection::Identity => gaussian_vec(rng, n, 1.0),
        Projection::HardThreshold { k } | Projection::PAlpha { k, .. } => {
            if *k > n {
                return Err(Error::InvalidArgument(format!("sparsity {k} exceeds dimension {n}")));
            }
            sparse_gaussian(rng, n, *k)
        }
        Projection::Product(parts) => {
            let total: usize = parts.iter().map(|(_, d)| d).sum();
            check_dim("product dimension", total, n)?;
            let mut x = Vec::with_capacity(n);
            for (q, d) in parts {
                x.extend(sample_model_point(q, *d, rng)?);
            }
            x
        }
        Projection::Perturbed { base, .. } => sample_model_point(base, n, rng)?,
        Projection::Learned(_) => p.apply(&gaussian_vec(rng, n, 1.0))?,
    })
}

/// Largest observed `||P(z) - x|| / ||z - x||` over sampled pairs with `x`
/// in the model set. Half of the draws put `z` near the model
/// (`z = x' + τ g`, `x'` in the model, `τ` log-uniform in `[1e-3, 1]` times
/// `||x'|| / sqrt N`, and `τ = 0` on the first draw); the other half take
/// `z ~ N(0, I)`. A lower bound on the restricted Lipschitz constant.
pub fn mc_beta(p: &Projection, n: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0_f64;
    let mut accepted = 0usize;
    let mut draw = 0usize;
    while accepted < trials {
        if draw > 10 * trials + 100 {
            return Err(Error::MetricUndefined("too many degenerate draws".into()));
        }
        let x = sample_model_point(p, n, &mut rng)?;
        let z = if draw.is_multiple_of(2) {
            let anchor = sample_model_point(p, n, &mut rng)?;
            let tau = if draw == 0 {
                0.0
            } else {
                10f64.powf(rng.gen_range(-3.0..0.0)) * norm2(&anchor).max(1e-3) / (n as f64).sqrt()
            };
            anchor
                .iter()
                .map(|a| {
                    a + tau * {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        g
                    }
                })
                .collect()
        } else {
            gaussian_vec(&mut rng, n, 1.0)
        };
        draw += 1;
        let denom = dist2(&z, &x);
        if denom == 0.0 {
            continue;
        }
        worst = worst.max(dist2(&p.apply(&z)?, &x) / denom);
        accepted += 1;
    }
    Ok(worst)
}

/// Quantities entering the recovery bound. `noise_term` is `||mu L e||`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TheoremBound {
    pub delta: f64,
    pub beta: f64,
    pub mu: f64,
    pub noise_term: f64,
    pub model_error: f64,
    pub proj_error_eta: f64,
    pub op_norm_mu_la: f64,
    pub op_norm_i_minus_mu_la: f64,
}

impl TheoremBound {
    pub fn contraction(&self) -> f64 {
        self.delta * self.beta
    }

    fn check(&self) -> Result<f64> {
        let fields = [
            self.delta,
            self.beta,
            self.mu,
            self.noise_term,
            self.model_error,
            self.proj_error_eta,
            self.op_norm_mu_la,
            self.op_norm_i_minus_mu_la,
        ];
        if fields.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("bound inputs must be nonnegative".into()));
        }
        let r = self.contraction();
        if r >= 1.0 {
            return Err(Error::ContractionViolated(r));
        }
        Ok(1.0 - r)
    }

    /// Multiplies `||mu L e||`. The noise enters through the scaled residual
    /// `mu L e`, so the step size is not applied a second time here.
    pub fn c_stab(&self) -> Result<f64> {
        Ok(1.0 / self.check()?)
    }

    pub fn c_rob(&self) -> Result<f64> {
        Ok(self.op_norm_mu_la / self.check()?)
    }

    /// Model-error constant for the distance to the truth itself.
    pub fn c_rob_prime(&self) -> Result<f64> {
        Ok(1.0 + self.c_rob()?)
    }

    pub fn c_proj(&self) -> Result<f64> {
        Ok(self.op_norm_i_minus_mu_la / self.check()?)
    }

    fn offset(&self, rob: f64) -> Result<f64> {
        Ok(self.c_stab()? * self.noise_term + rob * self.model_error + self.c_proj()? * self.proj_error_eta)
    }
}

fn bound_sequence(tb: &TheoremBound, n_iters: usize, initial_error: f64, offset: f64) -> Vec<f64> {
    let r = tb.contraction();
    let mut decay = 1.0;
    (0..=n_iters)
        .map(|_| {
            let b = decay * initial_error + offset;
            decay *= r;
            b
        })
        .collect()
}

/// `b_n = (δβ)^n e_0 + C_stab ||mu L e|| + C_rob d + C_proj η` for
/// `n = 0..=n_iters`, bounding `||x_n - P_Σ(x_hat)||`.
pub fn theorem_bound_eval(tb: &TheoremBound, n_iters: usize, initial_error: f64) -> Result<Vec<f64>> {
    if !(initial_error >= 0.0) {
        return Err(Error::InvalidArgument("initial error must be nonnegative".into()));
    }
    let offset = tb.offset(tb.c_rob()?)?;
    Ok(bound_sequence(tb, n_iters, initial_error, offset))
}

/// Same as [`theorem_bound_eval`] with `C_rob'` in place of `C_rob`,
/// bounding `||x_n - x_hat||`.
pub fn theorem_bound_eval_to_truth(tb: &TheoremBound, n_iters: usize, initial_error: f64) -> Result<Vec<f64>> {
    if !(initial_error >= 0.0) {
        return Err(Error::InvalidArgument("initial error must be nonnegative".into()));
    }
    let offset = tb.offset(tb.c_rob_prime()?)?;
    Ok(bound_sequence(tb, n_iters, initial_error, offset))
}
