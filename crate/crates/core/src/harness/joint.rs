use rayon::prelude::*;
use serde::Serialize;

use super::{fmt_f64, mean, trial_seed, ExperimentSpec, ResultTable, SparseInstance};
use crate::error::Result;
use crate::gpgd::{gpgd_run, GpgdConfig};
use crate::metrics::{centile_curve, normalized_error};
use crate::models::Projection;
use crate::operators::{joint_operator, BackProjection};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointCell {
    pub k: usize,
    pub s: usize,
    pub signal_error: f64,
    pub noise_error: f64,
    pub worst_signal_error: f64,
    pub worst_noise_error: f64,
    pub mean_signal_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointModelResult {
    pub centile: f64,
    pub cells: Vec<JointCell>,
}

impl JointModelResult {
    pub fn cell(&self, k: usize, s: usize) -> Option<&JointCell> {
        self.cells.iter().find(|c| c.k == k && c.s == s)
    }

    pub fn tables(&self) -> Result<Vec<ResultTable>> {
        let mut t = ResultTable::new(
            "cells",
            &[
                "k",
                "s",
                "centile",
                "signal_error",
                "noise_error",
                "worst_signal_error",
                "worst_noise_error",
                "mean_signal_error",
            ],
        );
        for c in &self.cells {
            t.push(vec![
                c.k.to_string(),
                c.s.to_string(),
                fmt_f64(self.centile),
                fmt_f64(c.signal_error),
                fmt_f64(c.noise_error),
                fmt_f64(c.worst_signal_error),
                fmt_f64(c.worst_noise_error),
                fmt_f64(c.mean_signal_error),
            ])?;
        }
        Ok(vec![t])
    }
}

/// Normalized errors of the signal and noise blocks of `P(x_n)` on one draw.
pub(crate) fn joint_trial(spec: &ExperimentSpec, k: usize, s: usize, seed: u64) -> Result<(f64, f64)> {
    let mut inst = SparseInstance::draw(spec.m, spec.n, k, spec.gaussian_sigma, seed)?;
    let e = inst.plant_outliers(s, spec.outlier_amplitude, seed);
    let joint = joint_operator(&inst.op);
    let stacked = joint.as_operator();
    let p = Projection::product(vec![
        (Projection::hard_threshold(k), spec.n),
        (Projection::hard_threshold(s), spec.m),
    ])?;
    let cfg = GpgdConfig {
        mu: spec.mu,
        max_iters: spec.iterations,
        rel_change_tol: 1e-14,
        record_iterates: false,
    };
    let tr = gpgd_run(
        &vec![0.0; spec.n + spec.m],
        &p,
        &BackProjection::adjoint(stacked),
        stacked,
        &inst.y,
        &cfg,
        None,
    )?;
    let est = p.apply(&tr.final_iterate)?;
    let (x, e_hat) = est.split_at(spec.n);
    Ok((normalized_error(x, &inst.truth), normalized_error(e_hat, &e)))
}

pub fn run_joint_model(spec: &ExperimentSpec) -> Result<JointModelResult> {
    spec.validate()?;
    let grid: Vec<(usize, usize)> = spec
        .sparsity_grid
        .iter()
        .flat_map(|&k| spec.outlier_grid.iter().map(move |&s| (k, s)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(c, t)| joint_trial(spec, grid[c].0, grid[c].1, trial_seed(spec, c, t)))
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(grid.len());
    for (c, &(k, s)) in grid.iter().enumerate() {
        let rows = &results[c * spec.trials..(c + 1) * spec.trials];
        let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let es: Vec<f64> = rows.iter().map(|r| r.1).collect();
        cells.push(JointCell {
            k,
            s,
            signal_error: centile_curve(&xs, spec.centile)?,
            noise_error: centile_curve(&es, spec.centile)?,
            worst_signal_error: xs.iter().cloned().fold(0.0, f64::max),
            worst_noise_error: es.iter().cloned().fold(0.0, f64::max),
            mean_signal_error: mean(&xs),
        });
    }
    Ok(JointModelResult {
        centile: spec.centile,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentKind;

    #[test]
    fn no_noise_block_reduces_to_sparse_recovery() {
        let spec = ExperimentSpec {
            m: 40,
            n: 60,
            sparsity_grid: vec![2],
            outlier_grid: vec![0],
            trials: 3,
            iterations: 400,
            ..ExperimentSpec::defaults(ExperimentKind::JointModel)
        };
        let r = run_joint_model(&spec).unwrap();
        let c = r.cell(2, 0).unwrap();
        assert_eq!(c.worst_noise_error, 0.0);
        assert!(c.worst_signal_error < 1e-6, "{}", c.worst_signal_error);
    }
}
