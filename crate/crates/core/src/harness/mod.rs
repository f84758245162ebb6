//! Experiment drivers.
//!
//! Each experiment expands its [`ExperimentSpec`] into a grid of cells,
//! runs seeded trials for every cell and summarizes them into long-form
//! [`ResultTable`]s. Trial `t` of cell `c` draws everything from
//! `derive_seed(spec.seed, c, t)`, so results do not depend on how trials
//! are scheduled; rayon's ordered collect keeps aggregation deterministic.

mod alpha;
mod joint;
mod nipr_stability;
mod outliers;
mod spec;
mod stepsize;
mod table;
mod theorem;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::linalg::norm2;
use crate::operators::{gaussian_operator, MeasurementOperator};
use crate::rng::{derive_seed, random_support, rng_from_seed, sparse_gaussian};

pub use alpha::{run_phase_transition_alpha, AlphaCell, PhaseAlphaResult};
pub use joint::{run_joint_model, JointCell, JointModelResult};
pub use nipr_stability::{run_nipr_stability, NiprPair, NiprStabilityResult, SM1_TIE_TOLERANCE};
pub use outliers::{run_outlier_tradeoff, OutlierCell, OutlierResult};
pub use spec::{ExperimentKind, ExperimentSpec};
pub use stepsize::{run_stepsize_study, StepSizeCell, StepSizeResult};
pub use table::{fmt_f64, ResultTable};
pub use theorem::{run_theorem_check, Attempts, TheoremCase, TheoremCheckResult, TheoremVariant, THEOREM_TOLERANCE};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    /// The theorem check found too few admissible instances.
    Inconclusive(String),
    /// Prior training diverged.
    Aborted(String),
    /// An observed error exceeded the theorem bound.
    Violated(String),
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub status: RunStatus,
    pub tables: Vec<ResultTable>,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let (status, tables) = match spec.experiment {
        ExperimentKind::PhaseTransitionAlpha => (RunStatus::Complete, run_phase_transition_alpha(spec)?.tables()?),
        ExperimentKind::OutlierTradeoff => (RunStatus::Complete, run_outlier_tradeoff(spec)?.tables()?),
        ExperimentKind::StepSizeStudy => (RunStatus::Complete, run_stepsize_study(spec)?.tables()?),
        ExperimentKind::JointModel => (RunStatus::Complete, run_joint_model(spec)?.tables()?),
        ExperimentKind::NiprStability => {
            let r = run_nipr_stability(spec)?;
            (r.status(), r.tables()?)
        }
        ExperimentKind::TheoremCheck => {
            let r = run_theorem_check(spec)?;
            (r.status(), r.tables()?)
        }
    };
    Ok(ExperimentReport {
        spec: spec.clone(),
        status,
        tables,
    })
}

#[derive(Serialize)]
struct Metadata<'a> {
    experiment: String,
    version: &'a str,
    wall_clock_seconds: f64,
    status: &'a RunStatus,
    tables: Vec<String>,
    spec: &'a ExperimentSpec,
}

impl ExperimentReport {
    /// Path of table `i` when the first table goes to `out`: later tables
    /// get `<stem>.<name>.csv` beside it.
    pub fn table_path(&self, out: &Path, i: usize) -> PathBuf {
        if i == 0 {
            return out.to_path_buf();
        }
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        out.with_file_name(format!("{stem}.{}.csv", self.tables[i].name))
    }

    pub fn metadata_path(out: &Path) -> PathBuf {
        out.with_extension("json")
    }

    /// Writes every table plus the JSON metadata; returns the paths written.
    pub fn write(&self, out: &Path, version: &str, wall_clock_seconds: f64) -> Result<Vec<PathBuf>> {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut written = Vec::new();
        for (i, t) in self.tables.iter().enumerate() {
            let path = self.table_path(out, i);
            let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
            t.write_csv(&mut f)?;
            written.push(path);
        }
        let meta = Metadata {
            experiment: self.spec.experiment.to_string(),
            version,
            wall_clock_seconds,
            status: &self.status,
            tables: written.iter().map(|p| p.display().to_string()).collect(),
            spec: &self.spec,
        };
        let path = Self::metadata_path(out);
        fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")?;
        written.push(path);
        Ok(written)
    }
}

/// One noisy compressed-sensing draw around a sparse signal.
#[derive(Clone, Debug)]
pub(crate) struct SparseInstance {
    pub op: MeasurementOperator,
    pub truth: Vec<f64>,
    pub y: Vec<f64>,
    /// `||A x_hat|| / sqrt(m)`, the per-entry signal scale.
    pub scale: f64,
}

impl SparseInstance {
    pub fn draw(m: usize, n: usize, k: usize, gaussian_sigma: f64, seed: u64) -> Result<Self> {
        let op = gaussian_operator(m, n, derive_seed(seed, 0, 0))?;
        let mut rng = rng_from_seed(derive_seed(seed, 1, 0));
        let truth = sparse_gaussian(&mut rng, n, k);
        let mut y = op.apply(&truth)?;
        let scale = norm2(&y) / (m as f64).sqrt();
        let sigma = gaussian_sigma * scale;
        if sigma > 0.0 {
            for v in y.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * g;
            }
        }
        Ok(Self { op, truth, y, scale })
    }

    /// Adds `s` outliers of magnitude `amplitude * scale` and random sign at
    /// uniformly random positions; returns the outlier vector.
    pub fn plant_outliers(&mut self, s: usize, amplitude: f64, seed: u64) -> Vec<f64> {
        let m = self.y.len();
        let mut rng = rng_from_seed(derive_seed(seed, 2, 0));
        let mut e = vec![0.0; m];
        for i in random_support(&mut rng, m, s) {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            e[i] = sign * amplitude * self.scale;
            self.y[i] += e[i];
        }
        e
    }
}

/// Seed of trial `trial` in cell `cell`.
pub(crate) fn trial_seed(spec: &ExperimentSpec, cell: usize, trial: usize) -> u64 {
    derive_seed(spec.seed, cell as u64, trial as u64)
}

/// Elementwise mean of equally long sequences.
pub(crate) fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64)
        .collect()
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_is_reproducible_and_scaled() {
        let a = SparseInstance::draw(20, 40, 3, 0.0, 5).unwrap();
        let b = SparseInstance::draw(20, 40, 3, 0.0, 5).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.truth.iter().filter(|v| **v != 0.0).count(), 3);
        assert!((norm2(&a.y) / 20f64.sqrt() - a.scale).abs() < 1e-12);
    }

    #[test]
    fn outliers_have_requested_support_and_size() {
        let mut inst = SparseInstance::draw(20, 40, 3, 0.0, 5).unwrap();
        let clean = inst.y.clone();
        let e = inst.plant_outliers(4, 100.0, 6);
        assert_eq!(e.iter().filter(|v| **v != 0.0).count(), 4);
        for (i, v) in e.iter().enumerate() {
            assert_eq!(inst.y[i], clean[i] + v);
            if *v != 0.0 {
                assert!((v.abs() - 100.0 * inst.scale).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn report_paths() {
        let spec = ExperimentSpec::defaults(ExperimentKind::StepSizeStudy);
        let r = ExperimentReport {
            spec,
            status: RunStatus::Complete,
            tables: vec![ResultTable::new("cells", &["a"]), ResultTable::new("traces", &["b"])],
        };
        let out = Path::new("/tmp/x/run.csv");
        assert_eq!(r.table_path(out, 0), PathBuf::from("/tmp/x/run.csv"));
        assert_eq!(r.table_path(out, 1), PathBuf::from("/tmp/x/run.traces.csv"));
        assert_eq!(ExperimentReport::metadata_path(out), PathBuf::from("/tmp/x/run.json"));
    }
}
