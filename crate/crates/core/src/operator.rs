//! Invertible operators on `R^d` with cached inverse and spectral norms.

use nalgebra::DMatrix;

use crate::error::{LabError, Result};

pub type Mat = DMatrix<f64>;

/// Smallest admissible `σ_min / σ_max`.
pub const INVERTIBILITY_TOL: f64 = 1e-12;

/// Largest singular value. Closed form for `d ≤ 2`, SVD otherwise.
pub fn spectral_norm(m: &Mat) -> f64 {
    singular_extremes(m).0
}

/// `(σ_max, σ_min)`.
pub fn singular_extremes(m: &Mat) -> (f64, f64) {
    match m.nrows() {
        0 => (0.0, 0.0),
        1 => {
            let a = m[(0, 0)].abs();
            (a, a)
        }
        2 => {
            let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let p = (a + d).hypot(c - b);
            let q = (a - d).hypot(b + c);
            (0.5 * (p + q), 0.5 * (p - q).abs())
        }
        _ => {
            let sv = m.clone().singular_values();
            let max = sv.iter().cloned().fold(0.0, f64::max);
            let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            (max, min)
        }
    }
}

pub fn identity(d: usize) -> Mat {
    Mat::identity(d, d)
}

pub(crate) fn invert(m: &Mat) -> Result<Mat> {
    if m.nrows() != m.ncols() {
        return Err(LabError::DimensionMismatch {
            left: m.nrows(),
            right: m.ncols(),
        });
    }
    let (smax, smin) = singular_extremes(m);
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(ratio > INVERTIBILITY_TOL) || !smax.is_finite() {
        return Err(LabError::SingularOperator { ratio });
    }
    if m.nrows() == 2 {
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let det = a * d - b * c;
        return Ok(Mat::from_row_slice(2, 2, &[d / det, -b / det, -c / det, a / det]));
    }
    m.clone()
        .try_inverse()
        .ok_or(LabError::SingularOperator { ratio })
}

/// An element of GL(d, R).
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    mat: Mat,
    inv: Mat,
    norm: f64,
    inv_norm: f64,
}

impl Operator {
    pub fn new(mat: Mat) -> Result<Self> {
        let inv = invert(&mat)?;
        Ok(Self::from_parts(mat, inv))
    }

    /// Trusts that `inv` is the inverse of `mat` (used for running products).
    pub fn from_pair(mat: Mat, inv: Mat) -> Result<Self> {
        if mat.shape() != inv.shape() {
            return Err(LabError::DimensionMismatch {
                left: mat.nrows(),
                right: inv.nrows(),
            });
        }
        Ok(Self::from_parts(mat, inv))
    }

    fn from_parts(mat: Mat, inv: Mat) -> Self {
        let norm = spectral_norm(&mat);
        let inv_norm = spectral_norm(&inv);
        Self {
            mat,
            inv,
            norm,
            inv_norm,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_parts(identity(d), identity(d))
    }

    pub fn from_rows(d: usize, entries: &[f64]) -> Result<Self> {
        Self::new(Mat::from_row_slice(d, d, entries))
    }

    pub fn diag(entries: &[f64]) -> Result<Self> {
        Self::new(Mat::from_diagonal(&nalgebra::DVector::from_row_slice(entries)))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn inv(&self) -> &Mat {
        &self.inv
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn inv_norm(&self) -> f64 {
        self.inv_norm
    }

    /// `‖A‖·‖A⁻¹‖`.
    pub fn distortion(&self) -> f64 {
        self.norm * self.inv_norm
    }

    pub fn inverse(&self) -> Self {
        Self {
            mat: self.inv.clone(),
            inv: self.mat.clone(),
            norm: self.inv_norm,
            inv_norm: self.norm,
        }
    }

    /// `self ∘ rhs`.
    pub fn compose(&self, rhs: &Operator) -> Result<Self> {
        check_dims(self.dim(), rhs.dim())?;
        Ok(Self::from_parts(&self.mat * &rhs.mat, &rhs.inv * &self.inv))
    }

    /// `‖self − Id‖`.
    pub fn dist_to_identity(&self) -> f64 {
        spectral_norm(&(&self.mat - identity(self.dim())))
    }

    /// `‖self − other‖` (plain operator norm).
    pub fn norm_diff(&self, other: &Operator) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(spectral_norm(&(&self.mat - &other.mat)))
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(LabError::DimensionMismatch { left: a, right: b })
    } else {
        Ok(())
    }
}

/// The GL(V) metric `‖A − B‖ + ‖A⁻¹ − B⁻¹‖`.
pub fn op_distance(a: &Operator, b: &Operator) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(spectral_norm(&(&a.mat - &b.mat)) + spectral_norm(&(&a.inv - &b.inv)))
}
