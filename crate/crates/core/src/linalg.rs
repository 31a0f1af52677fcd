//! Small dense linear-algebra helpers shared by the covariance, conversion
//! and metrics modules.

use std::cmp::Ordering;

use nalgebra::SymmetricEigen;

use crate::{CMatrix, Complex, RMatrix};

/// Eigenpairs of a Hermitian matrix sorted by eigenvalue, largest first.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: CMatrix,
}

/// Relative gap under which two eigenvalues are treated as tied.
pub const EIGEN_TIE_TOLERANCE: f64 = 1e-12;

/// Eigendecomposition of the Hermitian part of `m`, sorted descending.
///
/// Eigenvalues tied within [`EIGEN_TIE_TOLERANCE`] (relative to the largest
/// magnitude) are ordered by their phase-canonicalized eigenvectors compared
/// lexicographically, so the ordering is deterministic.
pub fn hermitian_eigen(m: &CMatrix) -> HermitianEigen {
    let h = hermitian_part(m);
    let eig = SymmetricEigen::new(h);
    let n = eig.eigenvalues.len();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);

    let mut cols: Vec<(f64, Vec<Complex>)> = (0..n)
        .map(|i| (eig.eigenvalues[i], canonical_phase(eig.eigenvectors.column(i).iter().copied().collect())))
        .collect();
    cols.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= EIGEN_TIE_TOLERANCE * scale {
            lexicographic_desc(&a.1, &b.1)
        } else {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal)
        }
    });

    let values = cols.iter().map(|c| c.0).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| cols[c].1[r]);
    HermitianEigen { values, vectors }
}

/// Rotates `v` so its first non-negligible component is real and positive.
fn canonical_phase(mut v: Vec<Complex>) -> Vec<Complex> {
    if let Some(pivot) = v.iter().find(|z| z.norm() > 1e-12).copied() {
        let rot = pivot.conj() / pivot.norm();
        for z in &mut v {
            *z *= rot;
        }
    }
    v
}

fn lexicographic_desc(a: &[Complex], b: &[Complex]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.re.partial_cmp(&x.re) {
            Some(Ordering::Equal) | None => {}
            Some(o) => return o,
        }
        match y.im.partial_cmp(&x.im) {
            Some(Ordering::Equal) | None => {}
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// `(m + m^H) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// `max |m − m^H|` entrywise.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Frobenius norm of a complex matrix.
pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `v diag(λ) v^H` for the retained eigenpairs.
pub fn reconstruct(values: &[f64], vectors: &CMatrix) -> CMatrix {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (c, lam) in values.iter().enumerate() {
        scaled.column_mut(c).scale_mut(*lam);
    }
    let mut out = &scaled * vectors.adjoint();
    // Exact Hermitian symmetry.
    for j in 0..n {
        out[(j, j)].im = 0.0;
        for i in 0..j {
            let z = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
            out[(i, j)] = z;
            out[(j, i)] = z.conj();
        }
    }
    out
}

/// Eigenpairs of a real symmetric matrix, sorted descending.
pub fn symmetric_eigen_desc(m: RMatrix) -> (Vec<f64>, RMatrix) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = RMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = CMatrix::from_row_slice(
            3,
            3,
            &[
                Complex::new(2.0, 0.0),
                Complex::new(0.0, 1.0),
                Complex::new(0.0, 0.0),
                Complex::new(0.0, -1.0),
                Complex::new(2.0, 0.0),
                Complex::new(0.0, 0.0),
                Complex::new(0.0, 0.0),
                Complex::new(0.0, 0.0),
                Complex::new(5.0, 0.0),
            ],
        );
        let e = hermitian_eigen(&m);
        assert!((e.values[0] - 5.0).abs() < 1e-12);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
        assert!((e.values[2] - 1.0).abs() < 1e-12);
        let back = reconstruct(&e.values, &e.vectors);
        assert!(frobenius(&(back - &m)) < 1e-12);
    }

    #[test]
    fn tie_break_is_deterministic() {
        let m = CMatrix::identity(4, 4);
        let a = hermitian_eigen(&m);
        let b = hermitian_eigen(&m);
        assert_eq!(a.vectors, b.vectors);
    }
}
