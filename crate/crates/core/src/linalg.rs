//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols() && all_finite_mat(m) && cholesky(m).is_some()
}

/// Symmetrize `m` and add `eps * I` when its smallest eigenvalue is below `eps`.
pub fn symmetrize_with_jitter(m: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let mut s = symmetrize(m);
    if s.nrows() == 0 {
        return s;
    }
    let min_eig = SymmetricEigen::new(s.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < eps {
        for i in 0..s.nrows() {
            s[(i, i)] += eps;
        }
    }
    s
}

/// A square-root factor `F` with `F Fᵀ = m` for a symmetric PSD matrix.
///
/// Uses Cholesky when possible and falls back to an eigendecomposition with
/// negative eigenvalues clamped to zero, so singular covariances are allowed.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = symmetrize(m);
    if let Some(ch) = cholesky(&s) {
        return ch.l();
    }
    let eig = SymmetricEigen::new(s);
    let mut f = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let scale = lam.max(0.0).sqrt();
        f.column_mut(j).scale_mut(scale);
    }
    f
}

pub fn block(m: &DMatrix<f64>, bi: usize, bj: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    m.view((bi * rows, bj * cols), (rows, cols)).into_owned()
}

pub fn set_block(m: &mut DMatrix<f64>, row: usize, col: usize, b: &DMatrix<f64>) {
    m.view_mut((row, col), (b.nrows(), b.ncols())).copy_from(b);
}

pub fn segment(v: &DVector<f64>, i: usize, len: usize) -> DVector<f64> {
    v.rows(i * len, len).into_owned()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_only_when_needed() {
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(symmetrize_with_jitter(&pd, 1e-9), pd);
        let zero = DMatrix::<f64>::zeros(2, 2);
        let j = symmetrize_with_jitter(&zero, 1e-9);
        assert!(is_positive_definite(&j));
    }

    #[test]
    fn psd_sqrt_of_singular_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = psd_sqrt(&m);
        assert!(max_abs_diff(&(&f * f.transpose()), &m) < 1e-12);
    }
}
