//! Generalized projected gradient descent
//!
//! ```text
//! x_{n+1} = P(x_n) - mu * L(A P(x_n) - y)
//! ```
//!
//! The projection is applied before the descent step, so iterates are
//! generally not in the model set; the reported errors are those of the raw
//! iterates `x_n`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist2, norm2, sub};
use crate::models::Projection;
use crate::operators::{BackProjection, MeasurementOperator};

/// Floor for the relative-change denominator.
const REL_CHANGE_FLOOR: f64 = f64::EPSILON;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpgdConfig {
    pub mu: f64,
    pub max_iters: usize,
    /// Stop once `||x_{n+1} - x_n|| / ||x_n||` drops below this; 0 disables.
    pub rel_change_tol: f64,
    pub record_iterates: bool,
}

impl Default for GpgdConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            max_iters: 500,
            rel_change_tol: 0.0,
            record_iterates: false,
        }
    }
}

impl GpgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.mu
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.rel_change_tol >= 0.0) {
            return Err(Error::InvalidArgument("rel_change_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-iteration record of a run. Index `i` refers to iterate `x_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryTrace {
    /// `x_0 ..= x_T`, only when requested.
    pub iterates: Option<Vec<Vec<f64>>>,
    /// `||x_i - x_hat||`, only when ground truth was supplied.
    pub errors_to_truth: Option<Vec<f64>>,
    /// `||A P(x_i) - y||`.
    pub residual_norms: Vec<f64>,
    /// `||x_i - x_{i-1}|| / ||x_{i-1}||`; entry 0 is NaN.
    pub rel_changes: Vec<f64>,
    pub iterations_run: usize,
    pub diverged: bool,
    pub final_iterate: Vec<f64>,
}

impl RecoveryTrace {
    pub fn errors(&self) -> Result<&[f64]> {
        self.errors_to_truth.as_deref().ok_or(Error::MissingTruth)
    }

    /// One row per iterate: `iter,error_to_truth,residual_norm,rel_change`.
    /// Missing values are written as empty fields.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "error_to_truth", "residual_norm", "rel_change"])?;
        for i in 0..=self.iterations_run {
            let err = self
                .errors_to_truth
                .as_ref()
                .map(|e| format!("{:?}", e[i]))
                .unwrap_or_default();
            let rel = if i == 0 {
                String::new()
            } else {
                format!("{:?}", self.rel_changes[i])
            };
            out.write_record([i.to_string(), err, format!("{:?}", self.residual_norms[i]), rel])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One iteration: `P(x) - mu * L(A P(x) - y)`.
pub fn gpgd_step(
    x: &[f64],
    p: &Projection,
    bp: &BackProjection<'_>,
    op: &MeasurementOperator,
    y: &[f64],
    mu: f64,
) -> Result<Vec<f64>> {
    Ok(step_with_residual(x, p, bp, op, y, mu)?.0)
}

fn step_with_residual(
    x: &[f64],
    p: &Projection,
    bp: &BackProjection<'_>,
    op: &MeasurementOperator,
    y: &[f64],
    mu: f64,
) -> Result<(Vec<f64>, f64)> {
    check_dim("iterate", op.n_ambient(), x.len())?;
    check_dim("observations", op.m(), y.len())?;
    let px = p.apply(x)?;
    let residual = sub(&op.apply(&px)?, y);
    let back = bp.back_project(&residual)?;
    check_dim("back-projection output", px.len(), back.len())?;
    let next = px.iter().zip(&back).map(|(a, b)| a - mu * b).collect();
    Ok((next, norm2(&residual)))
}

fn residual_norm(x: &[f64], p: &Projection, op: &MeasurementOperator, y: &[f64]) -> Result<f64> {
    let px = p.apply(x)?;
    Ok(norm2(&sub(&op.apply(&px)?, y)))
}

/// Runs the iteration from `x0` until `max_iters` steps or the relative
/// change criterion. A non-finite iterate stops the run; the trace then ends
/// at the last finite iterate and `diverged` is set.
pub fn gpgd_run(
    x0: &[f64],
    p: &Projection,
    bp: &BackProjection<'_>,
    op: &MeasurementOperator,
    y: &[f64],
    cfg: &GpgdConfig,
    truth: Option<&[f64]>,
) -> Result<RecoveryTrace> {
    cfg.validate()?;
    check_dim("initial iterate", op.n_ambient(), x0.len())?;
    check_dim("back-projection operator rows", op.m(), bp.operator().m())?;
    check_dim(
        "back-projection operator cols",
        op.n_ambient(),
        bp.operator().n_ambient(),
    )?;
    if let Some(t) = truth {
        check_dim("ground truth", op.n_ambient(), t.len())?;
    }

    let mut x = x0.to_vec();
    let mut iterates = cfg.record_iterates.then(|| vec![x.clone()]);
    let mut errors = truth.map(|t| vec![dist2(&x, t)]);
    let mut residual_norms = Vec::with_capacity(cfg.max_iters + 1);
    let mut rel_changes = vec![f64::NAN];
    let mut diverged = false;
    let mut steps = 0;

    for _ in 0..cfg.max_iters {
        let (next, rnorm) = step_with_residual(&x, p, bp, op, y, cfg.mu)?;
        if next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        residual_norms.push(rnorm);
        let change = dist2(&next, &x) / norm2(&x).max(REL_CHANGE_FLOOR);
        rel_changes.push(change);
        if let (Some(errs), Some(t)) = (errors.as_mut(), truth) {
            errs.push(dist2(&next, t));
        }
        if let Some(its) = iterates.as_mut() {
            its.push(next.clone());
        }
        x = next;
        steps += 1;
        if cfg.rel_change_tol > 0.0 && change < cfg.rel_change_tol {
            break;
        }
    }
    residual_norms.push(residual_norm(&x, p, op, y)?);
    if !residual_norms.last().is_some_and(|r| r.is_finite()) {
        diverged = true;
    }

    Ok(RecoveryTrace {
        iterates,
        errors_to_truth: errors,
        residual_norms,
        rel_changes,
        iterations_run: steps,
        diverged,
        final_iterate: x,
    })
}

/// Index of the smallest error to the truth; ties pick the lowest index.
pub fn i_min_oracle(trace: &RecoveryTrace) -> Result<usize> {
    let errs = trace.errors()?;
    let mut best = 0;
    for (i, e) in errs.iter().enumerate() {
        if *e < errs[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::gaussian_operator;
    use crate::rng::{gaussian_vec, rng_from_seed, sparse_gaussian};

    fn trace_with_errors(errors: Vec<f64>) -> RecoveryTrace {
        let t = errors.len() - 1;
        RecoveryTrace {
            iterates: None,
            errors_to_truth: Some(errors),
            residual_norms: vec![0.0; t + 1],
            rel_changes: vec![f64::NAN; t + 1],
            iterations_run: t,
            diverged: false,
            final_iterate: vec![],
        }
    }

    #[test]
    fn identity_operator_step_returns_observations() {
        let a = MeasurementOperator::identity(4);
        let bp = BackProjection::adjoint(&a);
        let y = vec![1.0, -2.0, 0.5, 3.0];
        for p in [
            Projection::hard_threshold(1),
            Projection::Identity,
            Projection::p_alpha(2, 0.4).unwrap(),
        ] {
            let next = gpgd_step(&[9.0, 0.1, -4.0, 2.0], &p, &bp, &a, &y, 1.0).unwrap();
            for (n, t) in next.iter().zip(&y) {
                assert!((n - t).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fixed_point_when_residual_vanishes() {
        let a = gaussian_operator(5, 8, 1).unwrap();
        let x = vec![0.0, 2.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0];
        let y = a.apply(&x).unwrap();
        let p = Projection::hard_threshold(2);
        let next = gpgd_step(&x, &p, &BackProjection::adjoint(&a), &a, &y, 0.7).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn two_dimensional_worked_step() {
        let a = MeasurementOperator::identity(2);
        let next = gpgd_step(
            &[3.0, 1.0],
            &Projection::hard_threshold(1),
            &BackProjection::adjoint(&a),
            &a,
            &[2.0, 0.0],
            0.5,
        )
        .unwrap();
        assert_eq!(next, vec![2.5, 0.0]);
    }

    #[test]
    fn exact_recovery_in_one_step_with_identity() {
        let a = MeasurementOperator::identity(6);
        let truth = vec![0.0, 1.5, 0.0, 0.0, -2.0, 0.0];
        let cfg = GpgdConfig {
            mu: 1.0,
            max_iters: 1,
            ..Default::default()
        };
        let tr = gpgd_run(
            &[0.0; 6],
            &Projection::hard_threshold(2),
            &BackProjection::adjoint(&a),
            &a,
            &truth,
            &cfg,
            Some(&truth),
        )
        .unwrap();
        assert_eq!(tr.iterations_run, 1);
        assert_eq!(tr.errors().unwrap()[1], 0.0);
        assert_eq!(tr.residual_norms.len(), 2);
        assert_eq!(tr.rel_changes.len(), 2);
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = GpgdConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(GpgdConfig {
            mu: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn iht_converges_at_moderate_size() {
        let a = gaussian_operator(150, 300, 21).unwrap();
        let mut rng = rng_from_seed(22);
        let truth = sparse_gaussian(&mut rng, 300, 9);
        let y = a.apply(&truth).unwrap();
        let cfg = GpgdConfig {
            mu: 1.0,
            max_iters: 500,
            ..Default::default()
        };
        let tr = gpgd_run(
            &[0.0; 300],
            &Projection::hard_threshold(9),
            &BackProjection::adjoint(&a),
            &a,
            &y,
            &cfg,
            Some(&truth),
        )
        .unwrap();
        let rel = tr.errors().unwrap().last().unwrap() / norm2(&truth);
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn relative_change_stops_early() {
        let a = gaussian_operator(40, 60, 3).unwrap();
        let mut rng = rng_from_seed(4);
        let truth = sparse_gaussian(&mut rng, 60, 3);
        let y = a.apply(&truth).unwrap();
        let cfg = GpgdConfig {
            mu: 0.5,
            max_iters: 1000,
            rel_change_tol: 1e-8,
            record_iterates: false,
        };
        let tr = gpgd_run(
            &[0.0; 60],
            &Projection::hard_threshold(3),
            &BackProjection::adjoint(&a),
            &a,
            &y,
            &cfg,
            None,
        )
        .unwrap();
        assert!(tr.iterations_run < 1000);
        assert!(*tr.rel_changes.last().unwrap() < 1e-8);
        assert!(tr.errors_to_truth.is_none());
    }

    #[test]
    fn divergence_truncates_trace() {
        let a = MeasurementOperator::identity(3);
        let y = vec![1.0, 1.0, 1.0];
        let cfg = GpgdConfig {
            mu: 1e300,
            max_iters: 50,
            record_iterates: true,
            ..Default::default()
        };
        let tr = gpgd_run(
            &[0.0; 3],
            &Projection::Identity,
            &BackProjection::adjoint(&a),
            &a,
            &y,
            &cfg,
            Some(&y),
        )
        .unwrap();
        assert!(tr.diverged);
        assert!(tr.iterations_run < 50);
        let its = tr.iterates.as_ref().unwrap();
        assert_eq!(its.len(), tr.iterations_run + 1);
        assert!(its.iter().flatten().all(|v| v.is_finite()));
        assert_eq!(tr.errors().unwrap().len(), tr.iterations_run + 1);
    }

    #[test]
    fn masked_back_projection_ignores_outlier_amplitude() {
        let a = gaussian_operator(30, 40, 5).unwrap();
        let mut rng = rng_from_seed(6);
        let truth = sparse_gaussian(&mut rng, 40, 3);
        let clean = a.apply(&truth).unwrap();
        let mut traces = Vec::new();
        for amp in [10.0, 1e6] {
            let mut y = clean.clone();
            let mut e = vec![0.0; 30];
            for i in [2usize, 11, 17] {
                e[i] = amp;
                y[i] += amp;
            }
            let bp = BackProjection::masking_support_of(&a, &e).unwrap();
            let cfg = GpgdConfig {
                mu: 1.0,
                max_iters: 100,
                record_iterates: true,
                ..Default::default()
            };
            traces.push(
                gpgd_run(
                    &[0.0; 40],
                    &Projection::hard_threshold(3),
                    &bp,
                    &a,
                    &y,
                    &cfg,
                    Some(&truth),
                )
                .unwrap(),
            );
        }
        assert_eq!(traces[0].iterates, traces[1].iterates);
        assert_eq!(traces[0].errors_to_truth, traces[1].errors_to_truth);
    }

    #[test]
    fn runs_are_deterministic() {
        let a = gaussian_operator(20, 30, 8).unwrap();
        let mut rng = rng_from_seed(8);
        let y = gaussian_vec(&mut rng, 20, 1.0);
        let cfg = GpgdConfig {
            mu: 0.8,
            max_iters: 40,
            record_iterates: true,
            ..Default::default()
        };
        let p = Projection::p_alpha(3, 0.3).unwrap();
        let r1 = gpgd_run(
            &[0.0; 30],
            &p,
            &BackProjection::residual_threshold(&a, 15).unwrap(),
            &a,
            &y,
            &cfg,
            None,
        )
        .unwrap();
        let r2 = gpgd_run(
            &[0.0; 30],
            &p,
            &BackProjection::residual_threshold(&a, 15).unwrap(),
            &a,
            &y,
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(r1.iterates, r2.iterates);
        assert_eq!(r1.residual_norms, r2.residual_norms);
        assert_eq!(r1.rel_changes[1..], r2.rel_changes[1..]);
        assert_eq!(r1.iterations_run, r2.iterations_run);
    }

    #[test]
    fn i_min_examples() {
        assert_eq!(i_min_oracle(&trace_with_errors(vec![5.0, 4.0, 3.0])).unwrap(), 2);
        assert_eq!(i_min_oracle(&trace_with_errors(vec![3.0, 1.0, 2.0])).unwrap(), 1);
        assert_eq!(i_min_oracle(&trace_with_errors(vec![2.0, 1.0, 1.0])).unwrap(), 1);
        let mut t = trace_with_errors(vec![1.0]);
        t.errors_to_truth = None;
        assert!(matches!(i_min_oracle(&t), Err(Error::MissingTruth)));
    }

    #[test]
    fn trace_csv_layout() {
        let a = MeasurementOperator::identity(2);
        let cfg = GpgdConfig {
            max_iters: 2,
            ..Default::default()
        };
        let truth = vec![1.0, 0.0];
        let tr = gpgd_run(
            &[0.0, 0.0],
            &Projection::hard_threshold(1),
            &BackProjection::adjoint(&a),
            &a,
            &truth,
            &cfg,
            Some(&truth),
        )
        .unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,error_to_truth,residual_norm,rel_change");
        assert_eq!(lines[1], "0,1.0,1.0,");
        assert_eq!(lines.len(), 4);
    }
}
