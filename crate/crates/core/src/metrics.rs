//! Post-optimum stability metrics and error summaries.
//!
//! Both stability metrics look at the iterations after `i_min`, the iterate
//! closest to the truth. SM1 is the worst relative inflation of the error
//! over that window, SM2 the accumulated relative motion of the iterates.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gpgd::{i_min_oracle, RecoveryTrace};
use crate::linalg::{dist2, norm2};

pub const DEFAULT_OFFSETS: [usize; 3] = [10, 50, 100];

/// `max_{i_min < i <= i_min + n} (e_i / e_min - 1)`.
pub fn sm1(trace: &RecoveryTrace, n: usize) -> Result<f64> {
    let errs = trace.errors()?;
    let i_min = i_min_oracle(trace)?;
    if n == 0 {
        return Err(Error::InvalidArgument("offset must be positive".into()));
    }
    if i_min + n >= errs.len() {
        return Err(Error::MetricUndefined(format!(
            "trace ends at iteration {} but SM1 needs {}",
            errs.len() - 1,
            i_min + n
        )));
    }
    let best = errs[i_min];
    if best == 0.0 {
        return Err(Error::MetricUndefined("exact recovery at i_min".into()));
    }
    Ok(errs[i_min + 1..=i_min + n]
        .iter()
        .map(|e| e / best - 1.0)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `sum_{i_min < i <= i_min + n} ||x_{i+1} - x_i|| / ||x_i||`.
pub fn sm2(trace: &RecoveryTrace, n: usize) -> Result<f64> {
    let its = trace.iterates.as_ref().ok_or(Error::MissingIterates)?;
    let i_min = i_min_oracle(trace)?;
    if n == 0 {
        return Err(Error::InvalidArgument("offset must be positive".into()));
    }
    if i_min + n + 1 >= its.len() {
        return Err(Error::MetricUndefined(format!(
            "trace holds {} iterates but SM2 needs {}",
            its.len(),
            i_min + n + 2
        )));
    }
    let mut total = 0.0;
    for i in i_min + 1..=i_min + n {
        let nx = norm2(&its[i]);
        if nx == 0.0 {
            return Err(Error::MetricUndefined(format!("iterate {i} is zero")));
        }
        total += dist2(&its[i + 1], &its[i]) / nx;
    }
    Ok(total)
}

/// `||x - x_hat|| / ||x_hat||`; for a zero truth, 0 when `x` is zero too and
/// infinity otherwise.
pub fn normalized_error(x: &[f64], truth: &[f64]) -> f64 {
    let nt = norm2(truth);
    let d = dist2(x, truth);
    if nt > 0.0 {
        d / nt
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Nearest-rank order statistic: the `ceil(centile * len)`-th smallest
/// error, capped at 1.
pub fn centile_curve(errors: &[f64], centile: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no trials to summarize".into()));
    }
    if !(centile > 0.0 && centile <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "centile must lie in (0, 1], got {centile}"
        )));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((centile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1].min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub i_min: usize,
    pub offsets: Vec<usize>,
    pub sm1_at: Vec<f64>,
    pub sm2_at: Vec<f64>,
}

impl StabilityReport {
    pub fn sm1(&self, offset: usize) -> Option<f64> {
        self.offsets.iter().position(|&o| o == offset).map(|i| self.sm1_at[i])
    }

    pub fn sm2(&self, offset: usize) -> Option<f64> {
        self.offsets.iter().position(|&o| o == offset).map(|i| self.sm2_at[i])
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["i_min".to_string()];
        h.extend(self.offsets.iter().map(|o| format!("sm1_{o}")));
        h.extend(self.offsets.iter().map(|o| format!("sm2_{o}")));
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![self.i_min.to_string()];
        r.extend(self.sm1_at.iter().chain(&self.sm2_at).map(|v| format!("{v:?}")));
        r
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())?;
        out.write_record(self.csv_row())?;
        out.flush()?;
        Ok(())
    }
}

pub fn stability_report(trace: &RecoveryTrace, offsets: &[usize]) -> Result<StabilityReport> {
    if offsets.contains(&0) {
        return Err(Error::InvalidArgument("offsets must be positive".into()));
    }
    let sm1_at = offsets.iter().map(|&n| sm1(trace, n)).collect::<Result<_>>()?;
    let sm2_at = offsets.iter().map(|&n| sm2(trace, n)).collect::<Result<_>>()?;
    Ok(StabilityReport {
        i_min: i_min_oracle(trace)?,
        offsets: offsets.to_vec(),
        sm1_at,
        sm2_at,
    })
}
