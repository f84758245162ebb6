use rayon::prelude::*;
use serde::Serialize;

use super::{fmt_f64, mean, trial_seed, ExperimentSpec, ResultTable, SparseInstance};
use crate::error::Result;
use crate::gpgd::{gpgd_run, GpgdConfig};
use crate::metrics::{centile_curve, normalized_error};
use crate::models::Projection;
use crate::operators::BackProjection;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaCell {
    pub k: usize,
    pub alpha: f64,
    pub centile_error: f64,
    pub mean_error: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseAlphaResult {
    pub centile: f64,
    pub success_tol: f64,
    pub cells: Vec<AlphaCell>,
    /// Per-iteration normalized error of one trial at `trace_k`, per alpha.
    pub traces: Vec<(f64, Vec<f64>)>,
}

impl PhaseAlphaResult {
    /// Largest grid sparsity whose centile error is below the tolerance.
    pub fn success_edge(&self, alpha: f64) -> Option<usize> {
        self.cells
            .iter()
            .filter(|c| c.alpha == alpha && c.success)
            .map(|c| c.k)
            .max()
    }

    pub fn tables(&self) -> Result<Vec<ResultTable>> {
        let mut cells = ResultTable::new(
            "cells",
            &["k", "alpha", "centile", "centile_error", "mean_error", "success"],
        );
        for c in &self.cells {
            cells.push(vec![
                c.k.to_string(),
                fmt_f64(c.alpha),
                fmt_f64(self.centile),
                fmt_f64(c.centile_error),
                fmt_f64(c.mean_error),
                c.success.to_string(),
            ])?;
        }
        let mut traces = ResultTable::new("traces", &["alpha", "iter", "normalized_error"]);
        for (alpha, errs) in &self.traces {
            for (i, e) in errs.iter().enumerate() {
                traces.push(vec![fmt_f64(*alpha), i.to_string(), fmt_f64(*e)])?;
            }
        }
        Ok(vec![cells, traces])
    }
}

fn config(spec: &ExperimentSpec, record: bool) -> GpgdConfig {
    GpgdConfig {
        mu: spec.mu,
        max_iters: spec.iterations,
        rel_change_tol: 1e-12,
        record_iterates: record,
    }
}

/// Final normalized error for every alpha on one draw; all alphas share it.
fn trial(spec: &ExperimentSpec, k: usize, seed: u64) -> Result<Vec<f64>> {
    let inst = SparseInstance::draw(spec.m, spec.n, k, spec.gaussian_sigma, seed)?;
    let bp = BackProjection::adjoint(&inst.op);
    let x0 = vec![0.0; spec.n];
    spec.alpha_grid
        .iter()
        .map(|&alpha| {
            let p = Projection::p_alpha(k, alpha)?;
            let tr = gpgd_run(&x0, &p, &bp, &inst.op, &inst.y, &config(spec, false), None)?;
            Ok(normalized_error(&tr.final_iterate, &inst.truth))
        })
        .collect()
}

pub fn run_phase_transition_alpha(spec: &ExperimentSpec) -> Result<PhaseAlphaResult> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.sparsity_grid.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let errors: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(c, t)| trial(spec, spec.sparsity_grid[c], trial_seed(spec, c, t)))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (c, &k) in spec.sparsity_grid.iter().enumerate() {
        let rows = &errors[c * spec.trials..(c + 1) * spec.trials];
        for (j, &alpha) in spec.alpha_grid.iter().enumerate() {
            let errs: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let centile_error = centile_curve(&errs, spec.centile)?;
            cells.push(AlphaCell {
                k,
                alpha,
                centile_error,
                mean_error: mean(&errs),
                success: centile_error < spec.success_tol,
            });
        }
    }

    let trace_cell = spec.sparsity_grid.len();
    let inst = SparseInstance::draw(
        spec.m,
        spec.n,
        spec.trace_k.min(spec.n),
        spec.gaussian_sigma,
        trial_seed(spec, trace_cell, 0),
    )?;
    let bp = BackProjection::adjoint(&inst.op);
    let traces = spec
        .alpha_grid
        .par_iter()
        .map(|&alpha| {
            let p = Projection::p_alpha(spec.trace_k.min(spec.n), alpha)?;
            let tr = gpgd_run(
                &vec![0.0; spec.n],
                &p,
                &bp,
                &inst.op,
                &inst.y,
                &config(spec, true),
                None,
            )?;
            let errs = tr
                .iterates
                .as_ref()
                .expect("recorded")
                .iter()
                .map(|x| normalized_error(x, &inst.truth))
                .collect();
            Ok((alpha, errs))
        })
        .collect::<Result<_>>()?;

    Ok(PhaseAlphaResult {
        centile: spec.centile,
        success_tol: spec.success_tol,
        cells,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentKind;

    fn small() -> ExperimentSpec {
        ExperimentSpec {
            m: 30,
            n: 60,
            sparsity_grid: vec![0, 2, 3],
            alpha_grid: vec![0.0, 0.5],
            trials: 4,
            iterations: 200,
            trace_k: 2,
            ..ExperimentSpec::defaults(ExperimentKind::PhaseTransitionAlpha)
        }
    }

    #[test]
    fn zero_sparsity_recovers_exactly() {
        let r = run_phase_transition_alpha(&small()).unwrap();
        for c in r.cells.iter().filter(|c| c.k == 0) {
            assert_eq!(c.centile_error, 0.0);
        }
        assert_eq!(r.cells.len(), 6);
        assert_eq!(r.traces.len(), 2);
        assert_eq!(r.traces[0].1[0], 1.0);
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            run_phase_transition_alpha(&small()).unwrap(),
            run_phase_transition_alpha(&small()).unwrap()
        );
    }
}
