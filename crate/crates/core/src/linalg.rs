//! Small dense helpers shared across modules.
//!
//! Kernels are stored as complex Hermitian matrices; real kernels simply
//! carry zero imaginary parts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `|z|_1 = |Re z| + |Im z|`, the norm used by the diagonal-dominance margin.
pub fn abs1(z: C64) -> f64 {
    z.re.abs() + z.im.abs()
}

/// Principal submatrix `A(idx, idx)` in the order given by `idx`.
pub fn principal(a: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

/// Rectangular block `A(rows, cols)`.
pub fn block(a: &CMatrix, rows: &[usize], cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Column `A(rows, col)`.
pub fn column(a: &CMatrix, rows: &[usize], col: usize) -> CVector {
    CVector::from_fn(rows.len(), |i, _| a[(rows[i], col)])
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn real_symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn cholesky(a: &CMatrix) -> Option<Cholesky<C64, Dyn>> {
    Cholesky::new(a.clone())
}

/// Determinant through LU; for Hermitian arguments the imaginary part is
/// round-off and is dropped.
pub fn det_real(a: &CMatrix) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    a.clone().lu().determinant().re
}

/// `log det` of a Hermitian positive definite matrix, `None` if the
/// Cholesky factorization fails.
pub fn logdet_hpd(a: &CMatrix) -> Option<f64> {
    if a.nrows() == 0 {
        return Some(0.0);
    }
    let ch = cholesky(a)?;
    let l = ch.l_dirty();
    Some((0..a.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

pub fn is_real(a: &CMatrix) -> bool {
    a.iter().all(|z| z.im == 0.0)
}

pub fn to_real(a: &CMatrix) -> DMatrix<f64> {
    a.map(|z| z.re)
}

pub fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(c)
}

/// Sites encoded in the low bits of `mask`, ascending.
pub fn mask_sites(mask: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(mask.count_ones() as usize);
    let mut m = mask;
    while m != 0 {
        let i = m.trailing_zeros() as usize;
        out.push(i);
        m &= m - 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_sites_ascending() {
        assert_eq!(mask_sites(0b1011_0000_0001), vec![0, 8, 9, 11]);
        assert!(mask_sites(0).is_empty());
    }

    #[test]
    fn empty_determinant_is_one() {
        assert_eq!(det_real(&CMatrix::zeros(0, 0)), 1.0);
        assert_eq!(logdet_hpd(&CMatrix::zeros(0, 0)), Some(0.0));
    }

    #[test]
    fn abs1_is_not_modulus() {
        let z = C64::new(0.6, 0.6);
        assert!((abs1(z) - 1.2).abs() < 1e-15);
        assert!(z.norm() < 0.85);
    }
}
