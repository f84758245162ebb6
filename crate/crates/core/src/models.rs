//! Projections onto low-dimensional model sets.
//!
//! The sparse model `Σ_k` has a closed-form orthogonal projection (hard
//! thresholding). [`Projection::PAlpha`] deliberately degrades its
//! restricted Lipschitz constant by rescaling the output, and
//! [`Projection::Product`] concatenates projections onto the blocks of a
//! product model. Learned priors and bounded perturbations of a projection
//! fit the same interface.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist2, norm2};
use crate::nipr::ToyPrior;
use crate::rng::rng_from_seed;

/// Restricted Lipschitz constant of hard thresholding onto `Σ_k`:
/// `sqrt((3 + sqrt 5) / 2)`, the golden ratio.
pub const HARD_THRESHOLD_BETA: f64 = 1.618_033_988_749_895;

/// A generalized projection `R^N -> Σ`.
#[derive(Clone, Debug)]
pub enum Projection {
    Identity,
    HardThreshold {
        k: usize,
    },
    PAlpha {
        k: usize,
        alpha: f64,
    },
    /// Block-wise projection; each entry is a component and its block length.
    Product(Vec<(Projection, usize)>),
    Learned(Arc<ToyPrior>),
    /// `base(z) + R(z)` with `||R(z)|| = eta`. The direction of `R(z)` is a
    /// pseudo-random unit vector keyed on the bits of `z` and `seed`, so the
    /// map is a deterministic function of its input.
    Perturbed {
        base: Box<Projection>,
        eta: f64,
        seed: u64,
    },
}

impl Projection {
    pub fn hard_threshold(k: usize) -> Self {
        Projection::HardThreshold { k }
    }

    pub fn p_alpha(k: usize, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and nonnegative, got {alpha}"
            )));
        }
        Ok(Projection::PAlpha { k, alpha })
    }

    pub fn product(components: Vec<(Projection, usize)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("product needs at least one component".into()));
        }
        Ok(Projection::Product(components))
    }

    pub fn perturbed(base: Projection, eta: f64, seed: u64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be nonnegative, got {eta}")));
        }
        Ok(Projection::Perturbed {
            base: Box::new(base),
            eta,
            seed,
        })
    }

    /// Known analytic restricted-Lipschitz bound, when there is one.
    pub fn beta_bound(&self) -> Option<f64> {
        match self {
            Projection::Identity => Some(1.0),
            Projection::HardThreshold { .. } => Some(HARD_THRESHOLD_BETA),
            Projection::PAlpha { alpha, .. } => Some(HARD_THRESHOLD_BETA + alpha),
            Projection::Product(parts) => parts
                .iter()
                .map(|(p, _)| p.beta_bound())
                .try_fold(0.0_f64, |acc, b| b.map(|b| acc.max(b))),
            Projection::Learned(_) | Projection::Perturbed { .. } => None,
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Projection::Identity => Ok(z.to_vec()),
            Projection::HardThreshold { k } => hard_threshold(z, *k),
            Projection::PAlpha { k, alpha } => p_alpha_project(z, *k, *alpha),
            Projection::Product(parts) => product_project(z, parts),
            Projection::Learned(prior) => prior.apply(z),
            Projection::Perturbed { base, eta, seed } => {
                let mut out = base.apply(z)?;
                let dir = perturbation_direction(z, out.len(), *seed);
                for (o, d) in out.iter_mut().zip(dir) {
                    *o += eta * d;
                }
                Ok(out)
            }
        }
    }
}

/// Keeps the `k` largest-magnitude entries. Ties keep the lower index.
pub fn hard_threshold(z: &[f64], k: usize) -> Result<Vec<f64>> {
    if k > z.len() {
        return Err(Error::InvalidArgument(format!(
            "sparsity {k} exceeds dimension {}",
            z.len()
        )));
    }
    let mut out = vec![0.0; z.len()];
    if k == 0 {
        return Ok(out);
    }
    let mut idx: Vec<usize> = (0..z.len()).collect();
    if k < z.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| z[b].abs().total_cmp(&z[a].abs()).then(a.cmp(&b)));
    }
    for &i in &idx[..k] {
        out[i] = z[i];
    }
    Ok(out)
}

/// `(1 + alpha * ||z - H(z)|| / ||H(z)||) H(z)` where `H` is hard
/// thresholding, or zero when `H(z)` is exactly zero.
pub fn p_alpha_project(z: &[f64], k: usize, alpha: f64) -> Result<Vec<f64>> {
    let mut p = hard_threshold(z, k)?;
    let np = norm2(&p);
    if np == 0.0 {
        return Ok(p);
    }
    let factor = 1.0 + alpha * dist2(z, &p) / np;
    p.iter_mut().for_each(|v| *v *= factor);
    Ok(p)
}

pub fn product_project(z: &[f64], components: &[(Projection, usize)]) -> Result<Vec<f64>> {
    let total: usize = components.iter().map(|(_, d)| d).sum();
    check_dim("product projection split", total, z.len())?;
    let mut out = Vec::with_capacity(z.len());
    let mut offset = 0;
    for (p, d) in components {
        let block = p.apply(&z[offset..offset + d])?;
        check_dim("product component output", *d, block.len())?;
        out.extend(block);
        offset += d;
    }
    Ok(out)
}

/// `||p(x) - x||`, the projection-induced distance to the model.
pub fn model_distance(x: &[f64], p: &Projection) -> Result<f64> {
    Ok(dist2(&p.apply(x)?, x))
}

fn perturbation_direction(z: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let key = z
        .iter()
        .fold(seed, |h, v| crate::rng::derive_seed(h, v.to_bits(), 0x70e7));
    let mut rng = rng_from_seed(key);
    let mut d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nd = norm2(&d);
    if nd > 0.0 {
        d.iter_mut().for_each(|v| *v /= nd);
    }
    d
}
