//! Covariance estimation error metrics.

use crate::error::{Error, Result};
use crate::linalg::{frobenius, hermitian_eigen, EIGEN_TIE_TOLERANCE};
use crate::CMatrix;

/// Default energy fraction defining the principal subspace.
pub const DEFAULT_ENERGY_FRACTION: f64 = 0.9;

fn check_same_shape(a: &CMatrix, b: &CMatrix) -> Result<()> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    Ok(())
}

/// `‖R − R̂‖_F² / ‖R‖_F²`.
pub fn normalized_frobenius_se(r_true: &CMatrix, r_est: &CMatrix) -> Result<f64> {
    check_same_shape(r_true, r_est)?;
    let norm = frobenius(r_true);
    if norm == 0.0 {
        return Err(Error::InvalidParameter("reference covariance is zero".into()));
    }
    Ok((frobenius(&(r_true - r_est)) / norm).powi(2))
}

/// Principal-subspace error with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrassmannError {
    /// `‖U Uᴴ − Û Ûᴴ‖_F² / (2r)`, in `[0, 1]`.
    pub value: f64,
    /// Subspace dimension fixed by the reference matrix.
    pub rank: usize,
    /// Set when the estimate's eigenvalues `r` and `r+1` tie, so its
    /// subspace was fixed by the deterministic tie-break.
    pub tie: bool,
}

/// Smallest `r` whose leading eigenvalues hold `fraction` of the trace.
pub fn energy_rank(values: &[f64], fraction: f64) -> usize {
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= fraction * total {
            return i + 1;
        }
    }
    values.len()
}

/// Chordal distance between the leading-`r` eigenspaces, `r` taken from
/// `r_true` at the given energy fraction.
pub fn grassmann_se(r_true: &CMatrix, r_est: &CMatrix, energy_fraction: f64) -> Result<GrassmannError> {
    check_same_shape(r_true, r_est)?;
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("energy fraction {energy_fraction} must lie in (0, 1]")));
    }
    let et = hermitian_eigen(r_true);
    if et.values.iter().all(|v| *v <= 0.0) {
        return Err(Error::InvalidParameter("reference covariance has no positive energy".into()));
    }
    let r = energy_rank(&et.values, energy_fraction);
    let ee = hermitian_eigen(r_est);
    let scale = ee.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tie = r < ee.values.len() && (ee.values[r - 1] - ee.values[r]).abs() <= EIGEN_TIE_TOLERANCE * scale;

    let u = et.vectors.columns(0, r);
    let v = ee.vectors.columns(0, r);
    // ‖UUᴴ − VVᴴ‖_F² = 2r − 2‖UᴴV‖_F².
    let overlap = (u.adjoint() * v).iter().map(|z| z.norm_sqr()).sum::<f64>();
    let value = ((2.0 * r as f64 - 2.0 * overlap) / (2.0 * r as f64)).clamp(0.0, 1.0);
    Ok(GrassmannError { value, rank: r, tie })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{CVector, Complex};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real(rows: usize, data: &[f64]) -> CMatrix {
        CMatrix::from_row_slice(rows, rows, &data.iter().map(|x| Complex::new(*x, 0.0)).collect::<Vec<_>>())
    }

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        &a * a.adjoint()
    }

    fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        a.qr().q()
    }

    #[test]
    fn frobenius_examples() {
        let r = real(2, &[3.0, 0.0, 0.0, 4.0]);
        assert_eq!(normalized_frobenius_se(&r, &r).unwrap(), 0.0);
        assert_eq!(normalized_frobenius_se(&r, &CMatrix::zeros(2, 2)).unwrap(), 1.0);
        let est = real(2, &[3.0, 0.0, 0.0, 0.0]);
        assert!((normalized_frobenius_se(&r, &est).unwrap() - 16.0 / 25.0).abs() < 1e-15);
        assert!(normalized_frobenius_se(&CMatrix::zeros(2, 2), &r).is_err());
    }

    #[test]
    fn grassmann_examples() {
        let u = real(2, &[1.0, 0.0, 0.0, 0.0]);
        let v = real(2, &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(grassmann_se(&u, &u, 0.9).unwrap().value, 0.0);
        assert!((grassmann_se(&u, &v, 0.9).unwrap().value - 1.0).abs() < 1e-15);
        for phi in [0.1, std::f64::consts::FRAC_PI_4, 1.3] {
            let w = CVector::from_vec(vec![Complex::new(phi.cos(), 0.0), Complex::new(phi.sin(), 0.0)]);
            let rw = &w * w.adjoint();
            let g = grassmann_se(&u, &rw, 0.9).unwrap();
            assert_eq!(g.rank, 1);
            assert!((g.value - phi.sin().powi(2)).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_rank_counts_leading_values() {
        assert_eq!(energy_rank(&[5.0, 3.0, 1.0, 1.0], 0.9), 3);
        assert_eq!(energy_rank(&[1.0, 0.0], 0.9), 1);
        assert_eq!(energy_rank(&[1.0, 1.0, 1.0, 1.0], 1.0), 4);
    }

    #[test]
    fn metrics_are_unitarily_invariant_and_scale_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let r = random_psd(6, &mut rng);
            let e = random_psd(6, &mut rng);
            let q = random_unitary(6, &mut rng);
            let rq = &q * &r * q.adjoint();
            let eq = &q * &e * q.adjoint();
            let f0 = normalized_frobenius_se(&r, &e).unwrap();
            let g0 = grassmann_se(&r, &e, 0.9).unwrap().value;
            assert!((normalized_frobenius_se(&rq, &eq).unwrap() - f0).abs() <= 1e-10);
            assert!((grassmann_se(&rq, &eq, 0.9).unwrap().value - g0).abs() <= 1e-10);
            assert!((grassmann_se(&r, &e.scale(7.5), 0.9).unwrap().value - g0).abs() <= 1e-12);
            assert!((0.0..=1.0).contains(&g0));
        }
    }

    #[test]
    fn tied_estimate_is_flagged_and_deterministic() {
        let r = real(3, &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.1]);
        let e = CMatrix::identity(3, 3);
        let a = grassmann_se(&r, &e, 0.5).unwrap();
        let b = grassmann_se(&r, &e, 0.5).unwrap();
        assert!(a.tie);
        assert_eq!(a, b);
    }
}
