//! Internal dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};

/// Convert an `ndarray` view to a nalgebra matrix (row-major copy).
pub(crate) fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().copied())
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
/// Returns `(eigenvalues, eigenvectors)` where column `j` of the matrix is
/// the eigenvector for eigenvalue `j`.
pub(crate) fn sym_eigen_desc(m: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>) {
    let p = m.nrows();
    debug_assert_eq!(p, m.ncols());
    let eig = to_na(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Array2::zeros((p, p));
    for (c, &i) in order.iter().enumerate() {
        for r in 0..p {
            vectors[[r, c]] = eig.eigenvectors[(r, i)];
        }
    }
    (values, vectors)
}

/// `U diag(f(lambda)) U^T` for a symmetric matrix given by its
/// eigendecomposition in descending order.
pub(crate) fn sym_apply(
    values: &[f64],
    vectors: &Array2<f64>,
    f: impl Fn(f64) -> f64,
) -> Array2<f64> {
    let p = values.len();
    let mut out = Array2::zeros((p, p));
    for (c, &v) in values.iter().enumerate() {
        let fv = f(v);
        if fv == 0.0 {
            continue;
        }
        for r in 0..p {
            let vr = vectors[[r, c]];
            for s in 0..p {
                out[[r, s]] += fv * vr * vectors[[s, c]];
            }
        }
    }
    out
}

/// Ordinary least squares via normal equations. Returns `None` when `X'X`
/// is not positive definite (rank-deficient design).
pub(crate) struct OlsFit {
    pub beta: DVector<f64>,
    /// Diagonal of `(X'X)^{-1}`, for coefficient standard errors.
    pub xtx_inv_diag: DVector<f64>,
    /// Residual sum of squares.
    pub rss: f64,
}

pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<OlsFit> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = xtx.clone().cholesky()?;
    let beta = chol.solve(&xty);
    let inv = chol.inverse();
    if !beta.iter().all(|v| v.is_finite()) || !inv.iter().all(|v| v.is_finite()) {
        return None;
    }
    let resid = y - x * &beta;
    let rss = resid.dot(&resid);
    Some(OlsFit {
        beta,
        xtx_inv_diag: DVector::from_iterator(xtx.nrows(), (0..xtx.nrows()).map(|i| inv[(i, i)])),
        rss,
    })
}

/// Least squares with a ridge fallback: if the normal equations are
/// singular, retries with `X'X + ridge * I`.
pub(crate) fn ols_with_ridge_fallback(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    ridge: f64,
) -> Option<DVector<f64>> {
    if let Some(fit) = ols(x, y) {
        return Some(fit.beta);
    }
    let mut xtx = x.transpose() * x;
    for i in 0..xtx.nrows() {
        xtx[(i, i)] += ridge;
    }
    let xty = x.transpose() * y;
    xtx.cholesky().map(|c| c.solve(&xty))
}

/// Weighted least squares solved by rescaling with sqrt-weights and using a
/// rank-revealing SVD. Returns `None` when the weighted design is
/// numerically rank-deficient. Weights must be non-negative.
pub(crate) fn wls(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Option<DVector<f64>> {
    let (n, m) = (x.nrows(), x.ncols());
    debug_assert_eq!(n, y.len());
    debug_assert_eq!(n, w.len());
    let mut xs = x.clone();
    let mut ys = y.clone();
    for i in 0..n {
        let s = w[i].sqrt();
        ys[i] *= s;
        for j in 0..m {
            xs[(i, j)] *= s;
        }
    }
    let svd = xs.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if smax <= 0.0 {
        return None;
    }
    let tol = smax * (n.max(m) as f64) * f64::EPSILON;
    if svd.singular_values.iter().filter(|&&s| s > tol).count() < m {
        return None;
    }
    svd.solve(&ys, tol).ok()
}
