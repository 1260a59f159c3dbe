//! Shared dense linear-algebra kernels: symmetric eigendecomposition with a
//! deterministic ordering, principal components via the smaller Gram matrix,
//! least squares, and quantiles.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("design matrix is singular (column {0} has no pivot)")]
    Singular(usize),
    #[error("matrix is rank deficient: component {0} has a non-positive eigenvalue")]
    RankDeficient(usize),
    #[error("requested {requested} components but at most {available} are available")]
    TooManyComponents { requested: usize, available: usize },
}

/// Eigenvalues and eigenvectors of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen_desc(a: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Principal-component decomposition of a standardized panel.
#[derive(Debug, Clone)]
pub struct Pca {
    /// N×r loading matrix, scaled to `loadings' * loadings / N = I`.
    pub loadings: DMatrix<f64>,
    /// T×r factor matrix, obtained by projecting loadings onto the data.
    pub factors: DMatrix<f64>,
    /// All `min(N, T)` eigenvalues of the sample covariance, descending.
    pub eigenvalues: DVector<f64>,
}

/// PCA of `z` (N×T, rows = series, columns = time, already standardized).
///
/// The sample covariance is `z z' / T`; its eigendecomposition is computed
/// through whichever Gram matrix (N×N or T×T) is smaller. Loadings are
/// `sqrt(N)` times the top-`r` unit eigenvectors, and factors are
/// `z' loadings / N`. Each loading column is sign-fixed so its
/// largest-magnitude entry is positive.
pub fn pca(z: &DMatrix<f64>, r: usize) -> Result<Pca, LinalgError> {
    let (n, t) = (z.nrows(), z.ncols());
    let rank_cap = n.min(t);
    if r > rank_cap {
        return Err(LinalgError::TooManyComponents { requested: r, available: rank_cap });
    }
    let tf = t as f64;
    let scale = (n as f64).sqrt();

    let (eigenvalues, mut loadings) = if n <= t {
        let gram = z * z.transpose() / tf;
        let (vals, vecs) = sym_eigen_desc(gram);
        (vals, vecs.columns(0, r).into_owned() * scale)
    } else {
        let gram = z.transpose() * z / tf;
        let (vals, vecs) = sym_eigen_desc(gram);
        let mut lam = DMatrix::zeros(n, r);
        for k in 0..r {
            let ev = vals[k];
            if ev <= f64::EPSILON * vals.max().max(1.0) {
                return Err(LinalgError::RankDeficient(k));
            }
            let v = z * vecs.column(k) / (tf * ev).sqrt();
            lam.set_column(k, &(v * scale));
        }
        (vals, lam)
    };

    for k in 0..r {
        let col = loadings.column(k);
        let mut arg = 0;
        let mut best = -1.0;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                arg = i;
            }
        }
        if col[arg] < 0.0 {
            loadings.column_mut(k).neg_mut();
        }
    }

    let factors = z.transpose() * &loadings / n as f64;
    Ok(Pca { loadings, factors, eigenvalues })
}

/// Ordinary least squares via a QR factorization.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// k×m coefficients (one column per response).
    pub coef: DMatrix<f64>,
    pub fitted: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
}

/// Solve `min ||y - x b||` column by column. `x` is n×k with n ≥ k.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<OlsFit, LinalgError> {
    assert_eq!(x.nrows(), y.nrows(), "ols: row mismatch");
    let k = x.ncols();
    let qr = x.clone().qr();
    let rm = qr.r();
    let max_diag = (0..k).map(|j| rm[(j, j)].abs()).fold(0.0f64, f64::max);
    let tol = max_diag * (x.nrows().max(k) as f64) * f64::EPSILON;
    for j in 0..k {
        if rm[(j, j)].abs() <= tol {
            return Err(LinalgError::Singular(j));
        }
    }
    let qty = qr.q().transpose() * y;
    let coef = rm
        .solve_upper_triangular(&qty)
        .ok_or(LinalgError::Singular(0))?;
    let fitted = x * &coef;
    let residuals = y - &fitted;
    Ok(OlsFit { coef, fitted, residuals })
}

/// Lower-triangular Cholesky factor of an SPD matrix.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.l())
}

/// Orthogonal factor of a QR decomposition with the sign fixed so that the
/// diagonal of R is positive. For a standard-normal input this draws from
/// the Haar measure on the orthogonal group.
pub fn qr_positive_diag(w: DMatrix<f64>) -> DMatrix<f64> {
    let n = w.ncols();
    let qr = w.qr();
    let rm = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if rm[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Linear-interpolation quantile (type 7) of already-sorted data.
pub fn quantile_type7_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level out of range");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// Type-7 quantile of unsorted data (NaNs must be filtered by the caller).
pub fn quantile_type7(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_type7_sorted(&v, p)
}

/// Spectral radius of a square matrix (largest eigenvalue modulus).
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eigen_descending_and_orthonormal() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let (vals, vecs) = sym_eigen_desc(a.clone());
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let id = vecs.transpose() * &vecs;
        assert_abs_diff_eq!(id, DMatrix::identity(3, 3), epsilon = 1e-12);
        let rec = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert_abs_diff_eq!(rec, a, epsilon = 1e-12);
    }

    #[test]
    fn pca_dual_paths_agree() {
        // 4 series, 6 periods: the T×T route; transpose gives the N×N route.
        let z = DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let zc = center_rows(z.transpose());
        let wide = pca(&zc, 2).unwrap(); // N=4 <= T=6
        let tall = pca(&zc.transpose().transpose(), 2).unwrap();
        assert_abs_diff_eq!(wide.loadings, tall.loadings, epsilon = 1e-10);
        // loadings' loadings / N = I
        let g = wide.loadings.transpose() * &wide.loadings / 4.0;
        assert_abs_diff_eq!(g, DMatrix::identity(2, 2), epsilon = 1e-10);
    }

    fn center_rows(mut z: DMatrix<f64>) -> DMatrix<f64> {
        for mut row in z.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        z
    }

    #[test]
    fn ols_exact_on_exact_data() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 3.0, 5.0, 7.0]);
        let fit = ols(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.coef[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coef[(1, 0)], 2.0, epsilon = 1e-12);
        assert!(fit.residuals.amax() < 1e-12);
    }

    #[test]
    fn ols_rejects_collinear_columns() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(ols(&x, &y), Err(LinalgError::Singular(_))));
    }

    #[test]
    fn quantiles_match_known_values() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile_type7(&v, 0.5), 2.5);
        assert_abs_diff_eq!(quantile_type7(&v, 0.25), 1.75);
        assert_abs_diff_eq!(quantile_type7(&v, 0.0), 1.0);
        assert_abs_diff_eq!(quantile_type7(&v, 1.0), 4.0);
    }

    #[test]
    fn qr_rotation_is_orthogonal() {
        let w = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 0.7, 2.0, 0.1, -0.5, -0.9, 0.4, 1.1]);
        let q = qr_positive_diag(w);
        assert_abs_diff_eq!(&q * q.transpose(), DMatrix::identity(3, 3), epsilon = 1e-12);
    }
}
