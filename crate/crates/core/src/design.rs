use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows, Matrix};

/// The `n × p` covariate matrix; row `i` is the covariate vector `xᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Design {
    x: Matrix,
    rows: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::input("design needs at least one row"));
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(Error::input("design needs at least one column"));
        }
        for r in &rows {
            check_dim(p, r.len())?;
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("design has non-finite entries"));
            }
        }
        Ok(Design {
            x: matrix_from_rows(&rows)?,
            rows,
        })
    }

    pub fn from_matrix(x: &Matrix) -> Result<Self> {
        Design::new(matrix_to_rows(x))
    }

    /// Single-column design with every covariate equal to `value`.
    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Design::new(vec![vec![value]; n])
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    /// Geodesic smoothness constant `η = (2/n) Σ‖xᵢ‖²` of the least-squares objective.
    pub fn smoothness(&self) -> f64 {
        2.0 * self.rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
            / self.n() as f64
    }

    pub fn select(&self, idx: &[usize]) -> Result<Design> {
        Design::new(idx.iter().map(|&i| self.rows[i].clone()).collect())
    }

    pub fn without_row(&self, skip: usize) -> Result<Design> {
        Design::new(
            self.rows
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, r)| r.clone())
                .collect(),
        )
    }
}

impl TryFrom<Vec<Vec<f64>>> for Design {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Design::new(rows)
    }
}

impl From<Design> for Vec<Vec<f64>> {
    fn from(d: Design) -> Self {
        d.rows
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
