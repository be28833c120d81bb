use crate::error::{Error, Result};
use crate::tensorio::{Matrix, Vector};

/// Ridge regression sharing one thin SVD of the design across every
/// penalty and every target.
///
/// With `X = U S Vᵀ`, the solution for penalty `α` is
/// `W(α) = V diag(s / (s² + α)) Uᵀ Y`.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    u: Matrix,
    s: Vector,
    v: Matrix,
}

impl RidgeSolver {
    pub fn new(x: &Matrix) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Degenerate("empty design matrix".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::input("design matrix has non-finite entries"));
        }
        let (u, s, v) = thin_svd(x);
        if s.is_empty() {
            return Err(Error::Degenerate("design matrix has rank 0".into()));
        }
        Ok(Self { u, s, v })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn n_features(&self) -> usize {
        self.v.nrows()
    }

    pub fn singular_values(&self) -> &Vector {
        &self.s
    }

    /// `Uᵀ Y`, the only target-dependent quantity the solutions need.
    pub fn project_targets(&self, y: &Matrix) -> Result<Matrix> {
        if y.nrows() != self.u.nrows() {
            return Err(Error::input(format!(
                "targets have {} rows, design has {}",
                y.nrows(),
                self.u.nrows()
            )));
        }
        Ok(self.u.transpose() * y)
    }

    fn shrink(&self, alpha: f64) -> Vector {
        self.s.map(|s| s / (s * s + alpha))
    }

    pub fn weights(&self, y: &Matrix, alpha: f64) -> Result<Matrix> {
        let uty = self.project_targets(y)?;
        Ok(self.weights_from_projection(&uty, alpha))
    }

    pub fn weights_from_projection(&self, uty: &Matrix, alpha: f64) -> Matrix {
        let d = self.shrink(alpha);
        let mut scaled = uty.clone();
        for (mut row, di) in scaled.row_iter_mut().zip(d.iter()) {
            row *= *di;
        }
        &self.v * scaled
    }

    /// Solutions with a separate penalty per target column.
    pub fn weights_per_target(&self, y: &Matrix, alphas: &[f64]) -> Result<Matrix> {
        if alphas.len() != y.ncols() {
            return Err(Error::input(format!(
                "{} penalties for {} targets",
                alphas.len(),
                y.ncols()
            )));
        }
        let mut scaled = self.project_targets(y)?;
        for (j, &alpha) in alphas.iter().enumerate() {
            let d = self.shrink(alpha);
            for (i, di) in d.iter().enumerate() {
                scaled[(i, j)] *= di;
            }
        }
        Ok(&self.v * scaled)
    }

    /// Predictions for `x_new` under penalty `alpha`, given `x_new · V` and
    /// `Uᵀ Y` precomputed.
    pub fn predict_projected(&self, xv: &Matrix, uty: &Matrix, alpha: f64) -> Matrix {
        let d = self.shrink(alpha);
        let mut scaled = uty.clone();
        for (mut row, di) in scaled.row_iter_mut().zip(d.iter()) {
            row *= *di;
        }
        xv * scaled
    }

    pub fn right_vectors(&self) -> &Matrix {
        &self.v
    }
}

/// Relative eigenvalue floor of the Gram matrix; directions below it are
/// treated as null.
const GRAM_RTOL: f64 = 1e-12;

/// Thin SVD `X = U S Vᵀ` restricted to non-null directions, from the
/// eigendecomposition of the smaller Gram matrix (`XᵀX` or `XXᵀ`).
fn thin_svd(x: &Matrix) -> (Matrix, Vector, Matrix) {
    let tall = x.nrows() >= x.ncols();
    let gram = if tall {
        x.transpose() * x
    } else {
        x * x.transpose()
    };
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let mut keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| lmax > 0.0 && eig.eigenvalues[i] > lmax * GRAM_RTOL)
        .collect();
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s = Vector::from_iterator(keep.len(), keep.iter().map(|&i| eig.eigenvalues[i].sqrt()));
    let w = eig.eigenvectors.select_columns(keep.iter());
    let mut other = if tall { x * &w } else { x.transpose() * &w };
    for (mut col, si) in other.column_iter_mut().zip(s.iter()) {
        col /= *si;
    }
    if tall {
        (other, s, w)
    } else {
        (w, s, other)
    }
}

/// `argmin_W ‖XW − Y‖² + α‖W‖²`.
pub fn ridge_fit(x: &Matrix, y: &Matrix, alpha: f64) -> Result<Matrix> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::input(format!("alpha must be positive, got {alpha}")));
    }
    RidgeSolver::new(x)?.weights(y, alpha)
}
