//! Triangular-dominance matrix gate: an explicit ε-schedule with inverse-norm
//! budgets R_N, exact class-membership checks, and a measured spectral-norm
//! verifier. Jacobians must clear both the structural gate and the measured
//! bound before a Newton solve is attempted.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

const PIVOT_FLOOR: f64 = 1e-14;

/// Column bounds ε_2..ε_{N_max} and inverse-norm budgets R_1..R_{N_max} for
/// the class of N×N matrices with entries bounded by 2, diagonal at least C
/// in magnitude, and |a_{i,j}| ≤ ε_j above the diagonal.
///
/// With B the lower-triangular part (diagonal included) and E the strict
/// upper part, forward substitution gives ‖B^{-1}‖₂ ≤ β_N = (√N/C)(1+2/C)^{N-1}
/// and the schedule keeps ‖E‖_F ≤ C/12, far below the diagonal scale. The
/// budgets R_N = 2β_N are deliberately loose; the builder never relies on
/// them alone and always measures ‖A^{-1}‖₂ per instance.
#[derive(Debug, Clone)]
pub struct EpsSchedule {
    c: f64,
    n_max: usize,
    eps: Vec<f64>,
    r: Vec<f64>,
}

impl EpsSchedule {
    pub fn new(c: f64, n_max: usize) -> Result<Self> {
        if !(c > 0.0 && c < 1.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "schedule constant C = {c} must lie in (0, 1)"
            )));
        }
        if n_max < 1 {
            return Err(Error::InvalidParameter("N_max must be >= 1".into()));
        }
        let root_n = (n_max as f64).sqrt();
        let eps: Vec<f64> = (2..=n_max)
            .map(|j| (c * 2f64.powi(-(j as i32 + 2)) / root_n).min(0.5))
            .collect();
        let r: Vec<f64> = (1..=n_max)
            .map(|n| {
                if n == 1 {
                    1.0 / c
                } else {
                    let beta = ((n as f64).sqrt() / c) * (1.0 + 2.0 / c).powi(n as i32 - 1);
                    2.0 * beta
                }
            })
            .collect();
        Ok(EpsSchedule { c, n_max, eps, r })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// ε_j for 2 ≤ j ≤ N_max (column index, 1-based).
    pub fn eps(&self, j: usize) -> Result<f64> {
        if j < 2 || j > self.n_max {
            return Err(Error::InvalidParameter(format!(
                "eps index {j} outside [2, {}]",
                self.n_max
            )));
        }
        Ok(self.eps[j - 2])
    }

    /// R_N for 1 ≤ N ≤ N_max.
    pub fn r(&self, n: usize) -> Result<f64> {
        if n < 1 || n > self.n_max {
            return Err(Error::InvalidParameter(format!(
                "R index {n} outside [1, {}]",
                self.n_max
            )));
        }
        Ok(self.r[n - 1])
    }

    /// ε_2..ε_{N_max} in order.
    pub fn eps_all(&self) -> &[f64] {
        &self.eps
    }

    /// R_1..R_{N_max} in order.
    pub fn r_all(&self) -> &[f64] {
        &self.r
    }
}

/// Dense square matrix destined for the class gate. Entry access is 0-based;
/// the class conditions are stated in the 1-based indexing of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    entries: DMatrix<f64>,
}

impl GateMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty matrix".into()));
        }
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { index: j });
                }
            }
        }
        Ok(GateMatrix {
            entries: DMatrix::from_fn(n, n, |i, j| rows[i][j]),
        })
    }

    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64,
    {
        GateMatrix {
            entries: DMatrix::from_fn(n, n, f),
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn transposed(&self) -> GateMatrix {
        GateMatrix {
            entries: self.entries.transpose(),
        }
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Exact entrywise membership test for the class A_{N×N}(C, (ε_j)): entries
/// bounded by 2, diagonal at least C in magnitude, column-j entries above the
/// diagonal at most ε_j. Matrices larger than the schedule horizon cannot be
/// certified and report false.
pub fn in_class(a: &GateMatrix, c: f64, sched: &EpsSchedule) -> bool {
    let n = a.n();
    if n > sched.n_max() {
        return false;
    }
    for i in 0..n {
        for j in 0..n {
            let v = a.entry(i, j).abs();
            if !(v <= 2.0) {
                return false;
            }
            if i == j && !(v >= c) {
                return false;
            }
            if i < j {
                let eps_j = sched.eps(j + 1).expect("j+1 in [2, n] <= n_max");
                if !(v <= eps_j) {
                    return false;
                }
            }
        }
    }
    true
}

/// Dense LU inversion with partial pivoting followed by a spectral-norm
/// measurement of the inverse. Returns (measured ≤ bound, measured).
pub fn inverse_norm_check(a: &GateMatrix, bound: f64) -> Result<(bool, f64)> {
    let measured = inverse_spectral_norm(a.as_dmatrix())?;
    Ok((measured <= bound, measured))
}

pub(crate) fn inverse_spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let inv = invert(m)?;
    Ok(spectral_norm(&inv))
}

pub(crate) fn invert(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = m.clone().lu();
    let u = lu.u();
    for i in 0..u.nrows().min(u.ncols()) {
        let pivot = u[(i, i)];
        if pivot.abs() < PIVOT_FLOOR {
            return Err(Error::SingularMatrix { pivot });
        }
    }
    lu.try_inverse().ok_or(Error::SingularMatrix { pivot: 0.0 })
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |acc, s| acc.max(*s))
}

/// Seeded random member of the class: diagonal of magnitude in [C, 2] with
/// random sign, lower entries uniform in [-2, 2], upper entries uniform within
/// the column budget.
pub fn sample_class_member<R: Rng>(sched: &EpsSchedule, n: usize, rng: &mut R) -> Result<GateMatrix> {
    if n < 1 || n > sched.n_max() {
        return Err(Error::InvalidParameter(format!(
            "sample size {n} outside [1, {}]",
            sched.n_max()
        )));
    }
    let c = sched.c();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            rows[i][j] = if i == j {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * rng.random_range(c..=2.0)
            } else if i > j {
                rng.random_range(-2.0..=2.0)
            } else {
                let eps_j = sched.eps(j + 1)?;
                rng.random_range(-eps_j..=eps_j)
            };
        }
    }
    GateMatrix::from_rows(&rows)
}
