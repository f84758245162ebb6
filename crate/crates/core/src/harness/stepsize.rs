use rayon::prelude::*;
use serde::Serialize;

use super::{fmt_f64, mean, mean_curve, trial_seed, ExperimentSpec, ResultTable, SparseInstance};
use crate::error::Result;
use crate::gpgd::{gpgd_run, GpgdConfig};
use crate::metrics::{centile_curve, normalized_error};
use crate::models::Projection;
use crate::operators::BackProjection;

/// Iterations averaged at the end of a trace to read off its plateau.
pub const PLATEAU_WINDOW: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepSizeCell {
    pub mu: f64,
    pub k: usize,
    pub centile_error: f64,
    pub mean_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepSizeResult {
    pub centile: f64,
    pub success_tol: f64,
    pub trace_k: usize,
    pub cells: Vec<StepSizeCell>,
    /// Mean normalized error per iteration at `trace_k`, per step size.
    pub traces: Vec<(f64, Vec<f64>)>,
}

impl StepSizeResult {
    pub fn cell(&self, mu: f64, k: usize) -> Option<&StepSizeCell> {
        self.cells.iter().find(|c| c.mu == mu && c.k == k)
    }

    /// Grid sparsities at or below `k_max` where the step size misses the
    /// tolerance.
    pub fn failures_up_to(&self, mu: f64, k_max: usize) -> Vec<usize> {
        self.cells
            .iter()
            .filter(|c| c.mu == mu && c.k <= k_max && !(c.centile_error < self.success_tol))
            .map(|c| c.k)
            .collect()
    }

    /// Mean of the last [`PLATEAU_WINDOW`] points of the averaged trace.
    pub fn plateau(&self, mu: f64) -> Option<f64> {
        let (_, curve) = self.traces.iter().find(|(m, _)| *m == mu)?;
        let w = PLATEAU_WINDOW.min(curve.len());
        Some(mean(&curve[curve.len() - w..]))
    }

    pub fn tables(&self) -> Result<Vec<ResultTable>> {
        let mut cells = ResultTable::new("cells", &["mu", "k", "centile", "centile_error", "mean_error"]);
        for c in &self.cells {
            cells.push(vec![
                fmt_f64(c.mu),
                c.k.to_string(),
                fmt_f64(self.centile),
                fmt_f64(c.centile_error),
                fmt_f64(c.mean_error),
            ])?;
        }
        let mut traces = ResultTable::new("traces", &["mu", "k", "iter", "mean_normalized_error"]);
        for (mu, curve) in &self.traces {
            for (i, e) in curve.iter().enumerate() {
                traces.push(vec![fmt_f64(*mu), self.trace_k.to_string(), i.to_string(), fmt_f64(*e)])?;
            }
        }
        Ok(vec![cells, traces])
    }
}

fn config(spec: &ExperimentSpec, mu: f64, record: bool) -> GpgdConfig {
    GpgdConfig {
        mu,
        max_iters: spec.iterations,
        rel_change_tol: if record { 0.0 } else { 1e-12 },
        record_iterates: record,
    }
}

pub fn run_stepsize_study(spec: &ExperimentSpec) -> Result<StepSizeResult> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.sparsity_grid.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let errors: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let k = spec.sparsity_grid[c];
            let inst = SparseInstance::draw(spec.m, spec.n, k, spec.gaussian_sigma, trial_seed(spec, c, t))?;
            let bp = BackProjection::adjoint(&inst.op);
            spec.mu_grid
                .iter()
                .map(|&mu| {
                    let tr = gpgd_run(
                        &vec![0.0; spec.n],
                        &Projection::hard_threshold(k),
                        &bp,
                        &inst.op,
                        &inst.y,
                        &config(spec, mu, false),
                        None,
                    )?;
                    Ok(normalized_error(&tr.final_iterate, &inst.truth))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (j, &mu) in spec.mu_grid.iter().enumerate() {
        for (c, &k) in spec.sparsity_grid.iter().enumerate() {
            let errs: Vec<f64> = errors[c * spec.trials..(c + 1) * spec.trials]
                .iter()
                .map(|r| r[j])
                .collect();
            cells.push(StepSizeCell {
                mu,
                k,
                centile_error: centile_curve(&errs, spec.centile)?,
                mean_error: mean(&errs),
            });
        }
    }

    let k = spec.trace_k.min(spec.n);
    let trace_cell = spec.sparsity_grid.len();
    let per_trial: Vec<Vec<Vec<f64>>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let inst = SparseInstance::draw(spec.m, spec.n, k, spec.gaussian_sigma, trial_seed(spec, trace_cell, t))?;
            let bp = BackProjection::adjoint(&inst.op);
            spec.mu_grid
                .iter()
                .map(|&mu| {
                    let tr = gpgd_run(
                        &vec![0.0; spec.n],
                        &Projection::hard_threshold(k),
                        &bp,
                        &inst.op,
                        &inst.y,
                        &config(spec, mu, true),
                        None,
                    )?;
                    Ok(tr
                        .iterates
                        .expect("recorded")
                        .iter()
                        .map(|x| normalized_error(x, &inst.truth))
                        .collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<_>>()?;
    let traces = spec
        .mu_grid
        .iter()
        .enumerate()
        .map(|(j, &mu)| {
            let curves: Vec<Vec<f64>> = per_trial.iter().map(|r| r[j].clone()).collect();
            (mu, mean_curve(&curves))
        })
        .collect();

    Ok(StepSizeResult {
        centile: spec.centile,
        success_tol: spec.success_tol,
        trace_k: k,
        cells,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentKind;

    #[test]
    fn tiny_step_barely_moves() {
        let spec = ExperimentSpec {
            m: 30,
            n: 60,
            sparsity_grid: vec![2],
            mu_grid: vec![1e-9],
            trials: 2,
            iterations: 5,
            trace_k: 2,
            gaussian_sigma: 0.0,
            ..ExperimentSpec::defaults(ExperimentKind::StepSizeStudy)
        };
        let r = run_stepsize_study(&spec).unwrap();
        let curve = &r.traces[0].1;
        assert_eq!(curve.len(), 6);
        // x_1 = mu A^T y is tiny, after that hard thresholding keeps it tiny
        assert!(curve[1..].iter().all(|e| (e - 1.0).abs() < 1e-6));
    }
}
