use rayon::prelude::*;
use serde::Serialize;

use super::{fmt_f64, mean, trial_seed, ExperimentSpec, ResultTable, SparseInstance};
use crate::error::{Error, Result};
use crate::gpgd::{gpgd_run, GpgdConfig};
use crate::metrics::{centile_curve, normalized_error};
use crate::models::Projection;
use crate::operators::BackProjection;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutlierCell {
    pub k: usize,
    pub s: usize,
    /// Residual-threshold back-projection keeping `m - s` entries.
    pub adapted_error: f64,
    /// Plain adjoint back-projection.
    pub adjoint_error: f64,
    pub adapted_mean: f64,
    pub adjoint_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutlierResult {
    pub m: usize,
    pub centile: f64,
    pub success_tol: f64,
    pub cells: Vec<OutlierCell>,
}

impl OutlierResult {
    pub fn cell(&self, k: usize, s: usize) -> Option<&OutlierCell> {
        self.cells.iter().find(|c| c.k == k && c.s == s)
    }

    /// Largest grid outlier count at which the adapted error is below the
    /// tolerance for sparsity `k`.
    pub fn success_edge(&self, k: usize) -> Option<usize> {
        self.cells
            .iter()
            .filter(|c| c.k == k && c.adapted_error < self.success_tol)
            .map(|c| c.s)
            .max()
    }

    pub fn tables(&self) -> Result<Vec<ResultTable>> {
        let mut t = ResultTable::new(
            "cells",
            &[
                "k",
                "s",
                "keep",
                "centile",
                "adapted_error",
                "adjoint_error",
                "adapted_mean",
                "adjoint_mean",
            ],
        );
        for c in &self.cells {
            t.push(vec![
                c.k.to_string(),
                c.s.to_string(),
                (self.m - c.s).to_string(),
                fmt_f64(self.centile),
                fmt_f64(c.adapted_error),
                fmt_f64(c.adjoint_error),
                fmt_f64(c.adapted_mean),
                fmt_f64(c.adjoint_mean),
            ])?;
        }
        Ok(vec![t])
    }
}

/// `(adapted, adjoint)` final normalized errors on one draw.
fn trial(spec: &ExperimentSpec, k: usize, s: usize, seed: u64) -> Result<(f64, f64)> {
    let mut inst = SparseInstance::draw(spec.m, spec.n, k, spec.gaussian_sigma, seed)?;
    inst.plant_outliers(s, spec.outlier_amplitude, seed);
    let cfg = GpgdConfig {
        mu: spec.mu,
        max_iters: spec.iterations,
        rel_change_tol: 1e-12,
        record_iterates: false,
    };
    let p = Projection::hard_threshold(k);
    let x0 = vec![0.0; spec.n];
    let run = |bp: &BackProjection<'_>| -> Result<f64> {
        let tr = gpgd_run(&x0, &p, bp, &inst.op, &inst.y, &cfg, None)?;
        Ok(normalized_error(&tr.final_iterate, &inst.truth))
    };
    let adapted = run(&BackProjection::residual_threshold(&inst.op, spec.m - s)?)?;
    let adjoint = run(&BackProjection::adjoint(&inst.op))?;
    Ok((adapted, adjoint))
}

pub fn run_outlier_tradeoff(spec: &ExperimentSpec) -> Result<OutlierResult> {
    spec.validate()?;
    if let Some(s) = spec.outlier_grid.iter().find(|s| **s >= spec.m) {
        return Err(Error::InvalidArgument(format!(
            "outlier count {s} must be below m = {}",
            spec.m
        )));
    }
    let grid: Vec<(usize, usize)> = spec
        .sparsity_grid
        .iter()
        .flat_map(|&k| spec.outlier_grid.iter().map(move |&s| (k, s)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    // Draws depend on the sparsity and the trial only, so every s reuses
    // the same signal and operator.
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let (k, s) = grid[c];
            let k_idx = spec.sparsity_grid.iter().position(|v| *v == k).expect("grid value");
            trial(spec, k, s, trial_seed(spec, k_idx, t))
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(grid.len());
    for (c, &(k, s)) in grid.iter().enumerate() {
        let rows = &results[c * spec.trials..(c + 1) * spec.trials];
        let adapted: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let adjoint: Vec<f64> = rows.iter().map(|r| r.1).collect();
        cells.push(OutlierCell {
            k,
            s,
            adapted_error: centile_curve(&adapted, spec.centile)?,
            adjoint_error: centile_curve(&adjoint, spec.centile)?,
            adapted_mean: mean(&adapted),
            adjoint_mean: mean(&adjoint),
        });
    }
    Ok(OutlierResult {
        m: spec.m,
        centile: spec.centile,
        success_tol: spec.success_tol,
        cells,
    })
}
