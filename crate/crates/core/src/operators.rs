//! Measurement operators and the back-projections used in the descent step.
//!
//! A [`MeasurementOperator`] wraps a dense `m x N` matrix `A`. The descent
//! step does not have to use `A^T` to map residuals back to the signal
//! domain: a [`BackProjection`] can mask known outlier positions, or
//! re-estimate them from the residual at every call.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;

/// How an operator was constructed; written into the CSV header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Gaussian,
    Explicit,
    Joint,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatorKind::Gaussian => "gaussian",
            OperatorKind::Explicit => "explicit",
            OperatorKind::Joint => "joint",
        })
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(OperatorKind::Gaussian),
            "explicit" => Ok(OperatorKind::Explicit),
            "joint" => Ok(OperatorKind::Joint),
            other => Err(Error::Parse(format!("unknown operator kind `{other}`"))),
        }
    }
}

/// Dense linear map `A: R^N -> R^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementOperator {
    matrix: Matrix,
    seed: Option<u64>,
    kind: OperatorKind,
}

impl MeasurementOperator {
    pub fn from_matrix(matrix: Matrix) -> Self {
        Self {
            matrix,
            seed: None,
            kind: OperatorKind::Explicit,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Matrix::from_rows(rows).map(Self::from_matrix)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_matrix(Matrix::identity(n))
    }

    /// Number of measurements `m`.
    pub fn m(&self) -> usize {
        self.matrix.rows()
    }

    /// Ambient dimension `N`.
    pub fn n_ambient(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("operator input", self.n_ambient(), x.len())?;
        Ok(self.matrix.mul_vec(x))
    }

    /// `A^T r`.
    pub fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_dim("operator adjoint input", self.m(), r.len())?;
        Ok(self.matrix.mul_t_vec(r))
    }

    /// `A^T A` as an explicit `N x N` matrix.
    pub fn gram(&self) -> Matrix {
        self.matrix
            .transpose()
            .matmul(&self.matrix)
            .expect("A^T A is always conformable")
    }

    /// Writes the operator as CSV: a `m,n,seed,kind` header, one line with
    /// those values, then the `m` matrix rows. Values round-trip exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "m,n,seed,kind")?;
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", self.m(), self.n_ambient(), seed, self.kind)?;
        for i in 0..self.m() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next_line = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Parse(format!("missing {what}")))
        };
        let header = next_line("header")?;
        if header.trim() != "m,n,seed,kind" {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let meta = next_line("metadata line")?;
        let fields: Vec<&str> = meta.trim().split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("metadata line `{meta}` needs 4 fields")));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad dimension `{s}`: {e}")))
        };
        let m = parse_usize(fields[0])?;
        let n = parse_usize(fields[1])?;
        let seed = match fields[2] {
            "" => None,
            s => Some(
                s.parse::<u64>()
                    .map_err(|e| Error::Parse(format!("bad seed `{s}`: {e}")))?,
            ),
        };
        let kind: OperatorKind = fields[3].parse()?;
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let line = next_line("matrix row")?;
            let before = data.len();
            for tok in line.trim().split(',') {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {i}: bad value `{tok}`: {e}")))?,
                );
            }
            check_dim("csv row length", n, data.len() - before)?;
        }
        Ok(Self {
            matrix: Matrix::new(m, n, data)?,
            seed,
            kind,
        })
    }
}

/// Random Gaussian operator with i.i.d. `N(0, 1/m)` entries, filled row by
/// row from a ChaCha stream seeded with `seed`.
pub fn gaussian_operator(m: usize, n: usize, seed: u64) -> Result<MeasurementOperator> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "operator dimensions must be positive, got m={m}, n={n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let data = (0..m * n)
        .map(|_| {
            scale * {
                let g: f64 = StandardNormal.sample(&mut rng);
                g
            }
        })
        .collect::<Vec<f64>>();
    Ok(MeasurementOperator {
        matrix: Matrix::new(m, n, data)?,
        seed: Some(seed),
        kind: OperatorKind::Gaussian,
    })
}

/// Which linear map sends residuals back to the signal domain.
#[derive(Clone, Debug, PartialEq)]
pub enum BackProjectionKind {
    /// `A^T r`
    Adjoint,
    /// `A^T S r` with a fixed 0/1 diagonal `S`.
    MaskedAdjoint { mask: Vec<f64> },
    /// `A^T S_r r` where `S_r` keeps the `keep` smallest-magnitude residual
    /// entries, re-selected on every call.
    ResidualThreshold { keep: usize },
}

#[derive(Clone, Debug)]
pub struct BackProjection<'a> {
    kind: BackProjectionKind,
    operator: &'a MeasurementOperator,
}

impl<'a> BackProjection<'a> {
    pub fn adjoint(operator: &'a MeasurementOperator) -> Self {
        Self {
            kind: BackProjectionKind::Adjoint,
            operator,
        }
    }

    /// Mask entries must be exactly 0 or 1.
    pub fn masked(operator: &'a MeasurementOperator, mask: Vec<f64>) -> Result<Self> {
        check_dim("back-projection mask", operator.m(), mask.len())?;
        if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            kind: BackProjectionKind::MaskedAdjoint { mask },
            operator,
        })
    }

    /// Mask that zeroes the support of `e`, i.e. `diag(1_{supp(e)^c})`.
    pub fn masking_support_of(operator: &'a MeasurementOperator, e: &[f64]) -> Result<Self> {
        let mask = e.iter().map(|&v| if v != 0.0 { 0.0 } else { 1.0 }).collect();
        Self::masked(operator, mask)
    }

    pub fn residual_threshold(operator: &'a MeasurementOperator, keep: usize) -> Result<Self> {
        if keep > operator.m() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {keep} of {} residual entries",
                operator.m()
            )));
        }
        Ok(Self {
            kind: BackProjectionKind::ResidualThreshold { keep },
            operator,
        })
    }

    pub fn kind(&self) -> &BackProjectionKind {
        &self.kind
    }

    pub fn operator(&self) -> &'a MeasurementOperator {
        self.operator
    }

    /// The selection applied to `residual` before the adjoint.
    pub fn selected_residual(&self, residual: &[f64]) -> Result<Vec<f64>> {
        check_dim("back-projection residual", self.operator.m(), residual.len())?;
        Ok(match &self.kind {
            BackProjectionKind::Adjoint => residual.to_vec(),
            BackProjectionKind::MaskedAdjoint { mask } => residual.iter().zip(mask).map(|(r, s)| r * s).collect(),
            BackProjectionKind::ResidualThreshold { keep } => {
                let kept = smallest_magnitude_indices(residual, *keep);
                let mut out = vec![0.0; residual.len()];
                for i in kept {
                    out[i] = residual[i];
                }
                out
            }
        })
    }

    pub fn back_project(&self, residual: &[f64]) -> Result<Vec<f64>> {
        let selected = self.selected_residual(residual)?;
        self.operator.adjoint(&selected)
    }

    /// The `N x m` matrix `L` for a fixed selection. Residual thresholding
    /// has no fixed matrix and returns `None`.
    pub fn matrix(&self) -> Option<Matrix> {
        let at = self.operator.matrix().transpose();
        match &self.kind {
            BackProjectionKind::Adjoint => Some(at),
            BackProjectionKind::MaskedAdjoint { mask } => {
                let mut l = at;
                for i in 0..l.rows() {
                    for (j, s) in mask.iter().enumerate() {
                        l.set(i, j, l.get(i, j) * s);
                    }
                }
                Some(l)
            }
            BackProjectionKind::ResidualThreshold { .. } => None,
        }
    }
}

/// Indices of the `keep` entries with smallest magnitude. Ties keep the
/// lower index.
fn smallest_magnitude_indices(r: &[f64], keep: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r.len()).collect();
    if keep < r.len() {
        idx.select_nth_unstable_by(keep, |&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
        idx.truncate(keep);
    }
    idx
}

/// `(A, I)` acting on stacked `(x, e)`.
#[derive(Clone, Debug)]
pub struct JointOperator {
    base: MeasurementOperator,
    stacked: MeasurementOperator,
}

impl JointOperator {
    pub fn base(&self) -> &MeasurementOperator {
        &self.base
    }

    /// The explicit `m x (N + m)` operator, usable anywhere a
    /// [`MeasurementOperator`] is expected.
    pub fn as_operator(&self) -> &MeasurementOperator {
        &self.stacked
    }

    pub fn apply(&self, x: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        check_dim("joint noise block", self.base.m(), e.len())?;
        let mut out = self.base.apply(x)?;
        for (o, v) in out.iter_mut().zip(e) {
            *o += v;
        }
        Ok(out)
    }

    /// Returns the stacked `(A^T r, r)`.
    pub fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.base.adjoint(r)?;
        out.extend_from_slice(r);
        Ok(out)
    }
}

pub fn joint_operator(base: &MeasurementOperator) -> JointOperator {
    let (m, n) = (base.m(), base.n_ambient());
    let mut data = Vec::with_capacity(m * (n + m));
    for i in 0..m {
        data.extend_from_slice(base.matrix().row(i));
        data.extend((0..m).map(|j| if i == j { 1.0 } else { 0.0 }));
    }
    let stacked = MeasurementOperator {
        matrix: Matrix::new(m, n + m, data).expect("finite entries"),
        seed: base.seed(),
        kind: OperatorKind::Joint,
    };
    JointOperator {
        base: base.clone(),
        stacked,
    }
}
