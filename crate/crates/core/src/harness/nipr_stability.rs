use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{fmt_f64, mean, trial_seed, ExperimentSpec, ResultTable, RunStatus};
use crate::error::{Error, Result};
use crate::gpgd::{gpgd_run, i_min_oracle, GpgdConfig, RecoveryTrace};
use crate::linalg::norm2;
use crate::metrics::{normalized_error, stability_report, StabilityReport, DEFAULT_OFFSETS};
use crate::models::Projection;
use crate::nipr::{nipr_penalty, train, LossKind, Nonlinearity, SyntheticManifold, ToyPrior, TrainConfig};
use crate::operators::{gaussian_operator, BackProjection};
use crate::rng::{derive_seed, rng_from_seed};

/// Budget growth stops once a run would exceed this many times the
/// configured iteration count.
const MAX_BUDGET_FACTOR: usize = 20;

/// SM1 values closer than this count as a tie in paired comparisons.
pub const SM1_TIE_TOLERANCE: f64 = 1e-12;

/// Both priors on one compressed-sensing instance.
#[derive(Clone, Debug, PartialEq)]
pub struct NiprPair {
    pub trial: usize,
    pub iterations: usize,
    pub plain: StabilityReport,
    pub regularized: StabilityReport,
    pub plain_final_error: f64,
    pub regularized_final_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiprStabilityResult {
    pub lambda: f64,
    /// Set when training of either prior diverged; no pairs are run then.
    pub aborted: Option<String>,
    /// NIPR penalty of each trained prior on its training set.
    pub plain_penalty: f64,
    pub regularized_penalty: f64,
    pub pairs: Vec<NiprPair>,
}

impl NiprStabilityResult {
    pub fn status(&self) -> RunStatus {
        match &self.aborted {
            Some(msg) => RunStatus::Aborted(msg.clone()),
            None => RunStatus::Complete,
        }
    }

    /// Pairs where the regularized prior's SM1 at `offset` is no larger, up
    /// to [`SM1_TIE_TOLERANCE`].
    pub fn sm1_wins(&self, offset: usize) -> usize {
        self.pairs
            .iter()
            .filter(|p| match (p.regularized.sm1(offset), p.plain.sm1(offset)) {
                (Some(r), Some(q)) => r <= q + SM1_TIE_TOLERANCE,
                _ => false,
            })
            .count()
    }

    pub fn mean_final_errors(&self) -> (f64, f64) {
        let plain: Vec<f64> = self.pairs.iter().map(|p| p.plain_final_error).collect();
        let reg: Vec<f64> = self.pairs.iter().map(|p| p.regularized_final_error).collect();
        (mean(&plain), mean(&reg))
    }

    pub fn tables(&self) -> Result<Vec<ResultTable>> {
        let mut header = vec!["trial", "prior", "lambda", "train_penalty", "iterations", "i_min"];
        let sm1: Vec<String> = DEFAULT_OFFSETS.iter().map(|o| format!("sm1_{o}")).collect();
        let sm2: Vec<String> = DEFAULT_OFFSETS.iter().map(|o| format!("sm2_{o}")).collect();
        header.extend(sm1.iter().map(String::as_str));
        header.extend(sm2.iter().map(String::as_str));
        header.push("final_error");
        let mut t = ResultTable::new("pairs", &header);
        for p in &self.pairs {
            for (name, lambda, penalty, r, err) in [
                ("plain", 0.0, self.plain_penalty, &p.plain, p.plain_final_error),
                (
                    "nipr",
                    self.lambda,
                    self.regularized_penalty,
                    &p.regularized,
                    p.regularized_final_error,
                ),
            ] {
                let mut row = vec![
                    p.trial.to_string(),
                    name.to_string(),
                    fmt_f64(lambda),
                    fmt_f64(penalty),
                    p.iterations.to_string(),
                    r.i_min.to_string(),
                ];
                row.extend(r.sm1_at.iter().map(|v| fmt_f64(*v)));
                row.extend(r.sm2_at.iter().map(|v| fmt_f64(*v)));
                row.push(fmt_f64(err));
                t.push(row)?;
            }
        }
        Ok(vec![t])
    }
}

fn train_config(spec: &ExperimentSpec, lambda: f64) -> TrainConfig {
    TrainConfig {
        lambda,
        noise_sigma: spec.train_noise,
        learning_rate: spec.learning_rate,
        epochs: spec.epochs,
        batch_size: spec.batch_size,
        loss_kind: LossKind::Pnp,
        seed: derive_seed(spec.seed, 0x7e, 1),
    }
}

/// Runs GPGD long enough that every offset past `i_min` is covered.
fn covered_run(
    spec: &ExperimentSpec,
    priors: [&Projection; 2],
    bp: &BackProjection<'_>,
    y: &[f64],
    truth: &[f64],
) -> Result<(usize, [RecoveryTrace; 2])> {
    let reach = DEFAULT_OFFSETS.iter().max().copied().unwrap_or(0) + 1;
    let mut budget = spec.iterations;
    loop {
        let cfg = GpgdConfig {
            mu: spec.mu,
            max_iters: budget,
            rel_change_tol: 0.0,
            record_iterates: true,
        };
        let run = |p: &Projection| gpgd_run(&vec![0.0; spec.n], p, bp, bp.operator(), y, &cfg, Some(truth));
        let traces = [run(priors[0])?, run(priors[1])?];
        if let Some(t) = traces.iter().find(|t| t.diverged) {
            return Err(Error::Diverged(format!(
                "recovery diverged after {} iterations",
                t.iterations_run
            )));
        }
        let need = traces
            .iter()
            .map(|t| i_min_oracle(t).map(|i| i + reach))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .max()
            .unwrap_or(0);
        if need <= budget {
            return Ok((budget, traces));
        }
        if need > MAX_BUDGET_FACTOR * spec.iterations {
            return Err(Error::MetricUndefined(format!(
                "i_min keeps moving past {need} iterations"
            )));
        }
        budget = need;
    }
}

pub fn run_nipr_stability(spec: &ExperimentSpec) -> Result<NiprStabilityResult> {
    spec.validate()?;
    let manifold = SyntheticManifold::new(
        spec.n,
        spec.latent_dim,
        spec.manifold_curvature,
        spec.manifold_scale,
        derive_seed(spec.seed, 0x7e, 0),
    )?;
    let data = manifold.sample(spec.train_size, 0.0, derive_seed(spec.seed, 0x7e, 2));
    let init = ToyPrior::random(
        spec.n,
        spec.latent_dim,
        Nonlinearity::Tanh,
        derive_seed(spec.seed, 0x7e, 3),
    )?;

    let trained: Vec<_> = [0.0, spec.lambda]
        .par_iter()
        .map(|&lambda| train(&init, &data, &train_config(spec, lambda)))
        .collect::<Result<_>>()?;
    if let Some(i) = trained.iter().position(|t| t.diverged || !t.prior.is_finite()) {
        let which = if i == 0 { "plain" } else { "regularized" };
        return Ok(NiprStabilityResult {
            lambda: spec.lambda,
            aborted: Some(format!(
                "{which} prior training diverged after {} epochs",
                trained[i].epoch_losses.len()
            )),
            plain_penalty: f64::NAN,
            regularized_penalty: f64::NAN,
            pairs: Vec::new(),
        });
    }
    let plain_penalty = nipr_penalty(&trained[0].prior, &data)? / data.len() as f64;
    let regularized_penalty = nipr_penalty(&trained[1].prior, &data)? / data.len() as f64;
    let plain = Projection::Learned(Arc::new(trained[0].prior.clone()));
    let regularized = Projection::Learned(Arc::new(trained[1].prior.clone()));

    let pairs = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(spec, 0, t);
            let op = gaussian_operator(spec.m, spec.n, derive_seed(seed, 0, 0))?;
            let truth = manifold.sample(1, 0.0, derive_seed(seed, 1, 0)).remove(0);
            let mut y = op.apply(&truth)?;
            let sigma = spec.gaussian_sigma * norm2(&y) / (spec.m as f64).sqrt();
            let mut rng = rng_from_seed(derive_seed(seed, 1, 1));
            for v in y.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * g;
            }
            let bp = BackProjection::adjoint(&op);
            let (iterations, [a, b]) = covered_run(spec, [&plain, &regularized], &bp, &y, &truth)?;
            Ok(NiprPair {
                trial: t,
                iterations,
                plain: stability_report(&a, &DEFAULT_OFFSETS)?,
                regularized: stability_report(&b, &DEFAULT_OFFSETS)?,
                plain_final_error: normalized_error(&a.final_iterate, &truth),
                regularized_final_error: normalized_error(&b.final_iterate, &truth),
            })
        })
        .collect::<Result<_>>()?;

    Ok(NiprStabilityResult {
        lambda: spec.lambda,
        aborted: None,
        plain_penalty,
        regularized_penalty,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentKind;

    fn small() -> ExperimentSpec {
        ExperimentSpec {
            trials: 2,
            epochs: 20,
            train_size: 64,
            iterations: 120,
            ..ExperimentSpec::defaults(ExperimentKind::NiprStability)
        }
    }

    #[test]
    fn identical_priors_give_identical_reports() {
        let r = run_nipr_stability(&ExperimentSpec { lambda: 0.0, ..small() }).unwrap();
        for p in &r.pairs {
            assert_eq!(p.plain, p.regularized);
            assert_eq!(p.plain_final_error, p.regularized_final_error);
        }
        assert_eq!(r.plain_penalty, r.regularized_penalty);
    }

    #[test]
    fn reports_cover_all_offsets() {
        let r = run_nipr_stability(&small()).unwrap();
        assert!(r.aborted.is_none());
        for p in &r.pairs {
            assert!(p.iterations >= p.plain.i_min + 101);
            assert_eq!(p.plain.offsets, DEFAULT_OFFSETS.to_vec());
        }
    }

    #[test]
    fn divergent_training_aborts() {
        let r = run_nipr_stability(&ExperimentSpec {
            learning_rate: 1e6,
            ..small()
        })
        .unwrap();
        assert!(r.aborted.is_some());
        assert!(matches!(r.status(), RunStatus::Aborted(_)));
        assert!(r.pairs.is_empty());
    }
}
