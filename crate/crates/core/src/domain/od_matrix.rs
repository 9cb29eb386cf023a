use std::fmt;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Row-sum tolerance applied when an OD matrix is constructed.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Row-sum tolerance for matrices decoded from posterior draws.
pub const DRAW_SIMPLEX_TOL: f64 = 1e-10;

/// Boolean S×S mask of forbidden origin-destination pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralZeros {
    size: usize,
    mask: Vec<bool>,
}

impl StructuralZeros {
    pub fn none(size: usize) -> Self {
        Self {
            size,
            mask: vec![false; size * size],
        }
    }

    pub fn from_pairs(size: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut z = Self::none(size);
        for &(i, j) in pairs {
            if i >= size || j >= size {
                return Err(Error::InvalidInput(format!(
                    "structural zero ({i}, {j}) out of range for {size} stations"
                )));
            }
            z.mask[i * size + j] = true;
        }
        Ok(z)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn is_zero(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, zero: bool) {
        self.mask[i * self.size + j] = zero;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Destinations that may carry flow from origin `i` (excludes `i` itself).
    pub fn free_destinations(&self, i: usize) -> Vec<usize> {
        (0..self.size)
            .filter(|&j| j != i && !self.is_zero(i, j))
            .collect()
    }
}

/// Which invariant an OD matrix broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    Shape,
    NonFinite,
    Diagonal,
    Negative,
    StructuralZero,
    SumToOne,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::Shape => "shape",
            Constraint::NonFinite => "non-finite",
            Constraint::Diagonal => "diagonal != 0",
            Constraint::Negative => "negative coefficient",
            Constraint::StructuralZero => "structural zero violated",
            Constraint::SumToOne => "sum-to-one",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub row: usize,
    pub constraint: Constraint,
    pub residual: f64,
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::InvalidOdMatrix {
            row: v.row,
            constraint: v.constraint.to_string(),
            residual: v.residual,
        }
    }
}

/// S×S matrix of split coefficients; each row is a probability simplex with a
/// zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdMatrix {
    alpha: Matrix,
    structural_zeros: Option<StructuralZeros>,
}

impl OdMatrix {
    /// Builds a matrix and checks every invariant at [`SIMPLEX_TOL`].
    pub fn new(alpha: Matrix, structural_zeros: Option<StructuralZeros>) -> Result<Self> {
        let m = Self::new_unchecked(alpha, structural_zeros);
        m.check(SIMPLEX_TOL)?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, None)
    }

    /// No validation; pair with [`validate_od_matrix`].
    pub fn new_unchecked(alpha: Matrix, structural_zeros: Option<StructuralZeros>) -> Self {
        Self {
            alpha,
            structural_zeros,
        }
    }

    /// Equal split over every admissible destination.
    pub fn uniform(size: usize, structural_zeros: Option<StructuralZeros>) -> Result<Self> {
        let zeros = structural_zeros
            .clone()
            .unwrap_or_else(|| StructuralZeros::none(size));
        let mut alpha = Matrix::zeros(size, size);
        for i in 0..size {
            let free = zeros.free_destinations(i);
            if free.is_empty() {
                return Err(Error::InvalidInput(format!("row {i} has no admissible destination")));
            }
            let w = 1.0 / free.len() as f64;
            for j in free {
                alpha.set(i, j, w);
            }
        }
        Self::new(alpha, structural_zeros)
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        validate_with_tol(self, tol).map_err(Error::from)
    }

    pub fn size(&self) -> usize {
        self.alpha.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.alpha.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.alpha.row(i)
    }

    pub fn alpha(&self) -> &Matrix {
        &self.alpha
    }

    pub fn structural_zeros(&self) -> Option<&StructuralZeros> {
        self.structural_zeros.as_ref()
    }

    pub fn zeros_or_none(&self) -> StructuralZeros {
        self.structural_zeros
            .clone()
            .unwrap_or_else(|| StructuralZeros::none(self.size()))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.alpha.to_rows()
    }
}

/// Returns the first violated invariant, scanning rows in order and, within a
/// row, checking finiteness, the diagonal, signs, structural zeros and finally
/// the row sum at tolerance [`SIMPLEX_TOL`].
pub fn validate_od_matrix(m: &OdMatrix) -> std::result::Result<(), Violation> {
    validate_with_tol(m, SIMPLEX_TOL)
}

pub fn validate_with_tol(m: &OdMatrix, tol: f64) -> std::result::Result<(), Violation> {
    let s = m.alpha.rows();
    if m.alpha.cols() != s || s < 2 {
        return Err(Violation {
            row: 0,
            constraint: Constraint::Shape,
            residual: s as f64 - m.alpha.cols() as f64,
        });
    }
    if let Some(z) = &m.structural_zeros {
        if z.size() != s {
            return Err(Violation {
                row: 0,
                constraint: Constraint::Shape,
                residual: z.size() as f64 - s as f64,
            });
        }
    }
    for i in 0..s {
        let row = m.alpha.row(i);
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Violation {
                row: i,
                constraint: Constraint::NonFinite,
                residual: *v,
            });
        }
        if row[i] != 0.0 {
            return Err(Violation {
                row: i,
                constraint: Constraint::Diagonal,
                residual: row[i],
            });
        }
        if let Some(v) = row.iter().find(|&&v| v < 0.0) {
            return Err(Violation {
                row: i,
                constraint: Constraint::Negative,
                residual: *v,
            });
        }
        if let Some(z) = &m.structural_zeros {
            if let Some(j) = (0..s).find(|&j| z.is_zero(i, j) && row[j] != 0.0) {
                return Err(Violation {
                    row: i,
                    constraint: Constraint::StructuralZero,
                    residual: row[j],
                });
            }
        }
        let sum: f64 = row.iter().sum();
        let residual = sum - 1.0;
        if residual.abs() > tol {
            return Err(Violation {
                row: i,
                constraint: Constraint::SumToOne,
                residual,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unchecked(rows: &[Vec<f64>]) -> OdMatrix {
        OdMatrix::new_unchecked(Matrix::from_rows(rows).unwrap(), None)
    }

    #[test]
    fn two_station_swap_is_valid() {
        let m = unchecked(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(validate_od_matrix(&m), Ok(()));
    }

    #[test]
    fn nonzero_diagonal_reported_on_row_zero() {
        let m = unchecked(&[vec![0.1, 0.9], vec![1.0, 0.0]]);
        let v = validate_od_matrix(&m).unwrap_err();
        assert_eq!(v.row, 0);
        assert_eq!(v.constraint, Constraint::Diagonal);
        assert_eq!(v.residual, 0.1);
    }

    #[test]
    fn row_sum_just_outside_tolerance() {
        let m = unchecked(&[
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.499999],
            vec![0.5, 0.5, 0.0],
        ]);
        let v = validate_od_matrix(&m).unwrap_err();
        assert_eq!(v.row, 1);
        assert_eq!(v.constraint, Constraint::SumToOne);
        assert!((v.residual + 1e-6).abs() < 1e-12);
    }

    #[test]
    fn structural_zero_must_hold() {
        let z = StructuralZeros::from_pairs(3, &[(0, 2)]).unwrap();
        let m = OdMatrix::new_unchecked(
            Matrix::from_rows(&[
                vec![0.0, 0.5, 0.5],
                vec![0.5, 0.0, 0.5],
                vec![0.5, 0.5, 0.0],
            ])
            .unwrap(),
            Some(z.clone()),
        );
        assert_eq!(
            validate_od_matrix(&m).unwrap_err().constraint,
            Constraint::StructuralZero
        );
        let u = OdMatrix::uniform(3, Some(z)).unwrap();
        assert_eq!(u.get(0, 1), 1.0);
        assert_eq!(u.get(0, 2), 0.0);
    }

    #[test]
    fn negative_and_non_square_rejected() {
        let m = unchecked(&[vec![0.0, 1.5, -0.5], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]]);
        assert_eq!(validate_od_matrix(&m).unwrap_err().constraint, Constraint::Negative);
        let m = unchecked(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]);
        assert_eq!(validate_od_matrix(&m).unwrap_err().constraint, Constraint::Shape);
    }
}
