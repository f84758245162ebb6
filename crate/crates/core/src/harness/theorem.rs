use serde::Serialize;

use super::{fmt_f64, ExperimentSpec, ResultTable, RunStatus};
use crate::constants::{
    best_step_ric, symmetric_operator_norm, theorem_bound_eval, theorem_bound_eval_to_truth, TheoremBound,
};
use crate::error::Result;
use crate::gpgd::{gpgd_run, GpgdConfig};
use crate::linalg::{dist2, norm2};
use crate::models::{hard_threshold, Projection, HARD_THRESHOLD_BETA};
use crate::operators::{gaussian_operator, BackProjection};
use crate::rng::{derive_seed, gaussian_vec, rng_from_seed, sparse_gaussian};

/// Largest admissible excess of an observed error over its bound.
pub const THEOREM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoremVariant {
    Noiseless,
    Noisy,
    ModelError,
    Perturbed,
}

impl TheoremVariant {
    pub const ALL: [TheoremVariant; 4] = [Self::Noiseless, Self::Noisy, Self::ModelError, Self::Perturbed];

    fn name(self) -> &'static str {
        match self {
            Self::Noiseless => "noiseless",
            Self::Noisy => "noisy",
            Self::ModelError => "model-error",
            Self::Perturbed => "perturbed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremCase {
    pub variant: TheoremVariant,
    pub case: usize,
    pub seed: u64,
    pub bound: TheoremBound,
    /// `max_n (||x_n - P(x_hat)|| - b_n)`.
    pub max_gap: f64,
    /// Same against `x_hat` with the `C_rob'` bound; model-error cases only.
    pub max_gap_to_truth: Option<f64>,
    pub observed: Vec<f64>,
    pub bound_values: Vec<f64>,
}

impl TheoremCase {
    pub fn holds(&self) -> bool {
        self.max_gap <= THEOREM_TOLERANCE && self.max_gap_to_truth.is_none_or(|g| g <= THEOREM_TOLERANCE)
    }
}

/// Draws tried for one variant, admissible or not.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Attempts {
    pub variant: TheoremVariant,
    pub tried: usize,
    pub admissible: usize,
    /// Smallest tuned `delta * beta` over the tried draws.
    pub best_contraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoremCheckResult {
    pub required: usize,
    pub cases: Vec<TheoremCase>,
    pub attempts: Vec<Attempts>,
}

impl TheoremCheckResult {
    pub fn cases_of(&self, v: TheoremVariant) -> impl Iterator<Item = &TheoremCase> {
        self.cases.iter().filter(move |c| c.variant == v)
    }

    pub fn status(&self) -> RunStatus {
        if let Some(c) = self.cases.iter().find(|c| !c.holds()) {
            return RunStatus::Violated(format!(
                "{} case {} exceeds the bound by {:e}",
                c.variant.name(),
                c.case,
                c.max_gap.max(c.max_gap_to_truth.unwrap_or(f64::NEG_INFINITY))
            ));
        }
        for v in TheoremVariant::ALL {
            let found = self.cases_of(v).count();
            if found < self.required {
                return RunStatus::Inconclusive(format!(
                    "{}: only {found} of {} draws had delta * beta < 1",
                    v.name(),
                    self.required
                ));
            }
        }
        RunStatus::Complete
    }

    pub fn tables(&self) -> Result<Vec<ResultTable>> {
        let mut cases = ResultTable::new(
            "cases",
            &[
                "variant",
                "case",
                "seed",
                "delta",
                "beta",
                "mu",
                "contraction",
                "noise_term",
                "model_error",
                "eta",
                "max_gap",
                "max_gap_to_truth",
                "holds",
            ],
        );
        let mut traces = ResultTable::new("bounds", &["variant", "case", "iter", "observed", "bound"]);
        let mut attempts = ResultTable::new("attempts", &["variant", "tried", "admissible", "best_contraction"]);
        for a in &self.attempts {
            attempts.push(vec![
                a.variant.name().to_string(),
                a.tried.to_string(),
                a.admissible.to_string(),
                fmt_f64(a.best_contraction),
            ])?;
        }
        for c in &self.cases {
            let b = &c.bound;
            cases.push(vec![
                c.variant.name().to_string(),
                c.case.to_string(),
                c.seed.to_string(),
                fmt_f64(b.delta),
                fmt_f64(b.beta),
                fmt_f64(b.mu),
                fmt_f64(b.contraction()),
                fmt_f64(b.noise_term),
                fmt_f64(b.model_error),
                fmt_f64(b.proj_error_eta),
                fmt_f64(c.max_gap),
                c.max_gap_to_truth.map(fmt_f64).unwrap_or_default(),
                c.holds().to_string(),
            ])?;
            for (i, (o, bv)) in c.observed.iter().zip(&c.bound_values).enumerate() {
                traces.push(vec![
                    c.variant.name().to_string(),
                    c.case.to_string(),
                    i.to_string(),
                    fmt_f64(*o),
                    fmt_f64(*bv),
                ])?;
            }
        }
        Ok(vec![cases, traces, attempts])
    }
}

fn max_gap(observed: &[f64], bound: &[f64]) -> f64 {
    observed
        .iter()
        .zip(bound)
        .map(|(o, b)| o - b)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Tuned `delta * beta` of the draw and, when it is below 1, the case.
fn check_case(spec: &ExperimentSpec, variant: TheoremVariant, seed: u64) -> Result<(f64, Option<TheoremCase>)> {
    let k = spec.sparsity_grid[0];
    let op = gaussian_operator(spec.m, spec.n, derive_seed(seed, 0, 0))?;
    let gram = op.gram();
    let (mu, delta) = best_step_ric(&gram, k)?;
    let contraction = delta * HARD_THRESHOLD_BETA;
    if contraction >= 1.0 {
        return Ok((contraction, None));
    }

    let mut rng = rng_from_seed(derive_seed(seed, 1, 0));
    let sparse = sparse_gaussian(&mut rng, spec.n, k);
    let size = norm2(&sparse);
    let truth = match variant {
        TheoremVariant::ModelError => {
            let g = gaussian_vec(&mut rng, spec.n, 1.0);
            let g_norm = norm2(&g);
            sparse
                .iter()
                .zip(&g)
                .map(|(s, v)| s + spec.model_error * size * v / g_norm)
                .collect()
        }
        _ => sparse,
    };
    let target = hard_threshold(&truth, k)?;
    let mut y = op.apply(&truth)?;
    let mut noise_term = 0.0;
    if variant == TheoremVariant::Noisy {
        let scale = norm2(&y) / (spec.m as f64).sqrt();
        let e = gaussian_vec(&mut rng, spec.m, spec.gaussian_sigma * scale);
        noise_term = mu * norm2(&op.adjoint(&e)?);
        y.iter_mut().zip(&e).for_each(|(a, b)| *a += b);
    }
    let eta = if variant == TheoremVariant::Perturbed {
        spec.eta * size
    } else {
        0.0
    };
    let p = if eta > 0.0 {
        Projection::perturbed(Projection::hard_threshold(k), eta, derive_seed(seed, 2, 0))?
    } else {
        Projection::hard_threshold(k)
    };

    let bound = TheoremBound {
        delta,
        beta: HARD_THRESHOLD_BETA,
        mu,
        noise_term,
        model_error: dist2(&truth, &target),
        proj_error_eta: eta,
        op_norm_mu_la: symmetric_operator_norm(&gram.scaled(mu))?,
        op_norm_i_minus_mu_la: symmetric_operator_norm(&gram.scaled(mu).minus_identity()?)?,
    };
    let cfg = GpgdConfig {
        mu,
        max_iters: spec.iterations,
        rel_change_tol: 0.0,
        record_iterates: true,
    };
    let x0 = vec![0.0; spec.n];
    let tr = gpgd_run(&x0, &p, &BackProjection::adjoint(&op), &op, &y, &cfg, Some(&target))?;
    let observed = tr.errors()?.to_vec();
    let e0 = dist2(&x0, &target);
    let bound_values = theorem_bound_eval(&bound, tr.iterations_run, e0)?;
    let max_gap_to_truth = if variant == TheoremVariant::ModelError {
        let to_truth: Vec<f64> = tr
            .iterates
            .as_ref()
            .expect("recorded")
            .iter()
            .map(|x| dist2(x, &truth))
            .collect();
        Some(max_gap(
            &to_truth,
            &theorem_bound_eval_to_truth(&bound, tr.iterations_run, e0)?,
        ))
    } else {
        None
    };
    Ok((
        contraction,
        Some(TheoremCase {
            variant,
            case: 0,
            seed,
            bound,
            max_gap: max_gap(&observed, &bound_values),
            max_gap_to_truth,
            observed,
            bound_values,
        }),
    ))
}

/// Checks the recovery bound on `spec.trials` admissible draws per variant.
/// Draws whose tuned `delta * beta` is not below 1 are skipped; at most
/// `spec.max_resamples` draws are tried per variant.
pub fn run_theorem_check(spec: &ExperimentSpec) -> Result<TheoremCheckResult> {
    spec.validate()?;
    let mut cases = Vec::new();
    let mut attempts = Vec::new();
    for (vi, variant) in TheoremVariant::ALL.into_iter().enumerate() {
        let mut found = 0;
        let mut tried = 0;
        let mut best = f64::INFINITY;
        while found < spec.trials && tried < spec.max_resamples {
            let seed = derive_seed(spec.seed, 0x7c + vi as u64, tried as u64);
            tried += 1;
            let (contraction, case) = check_case(spec, variant, seed)?;
            best = best.min(contraction);
            if let Some(mut c) = case {
                c.case = found;
                cases.push(c);
                found += 1;
            }
        }
        attempts.push(Attempts {
            variant,
            tried,
            admissible: found,
            best_contraction: best,
        });
    }
    Ok(TheoremCheckResult {
        required: spec.trials,
        cases,
        attempts,
    })
}
