use fddcov::covariance::{psd_projection, upa_average, CovarianceMatrix, UpaStructure};
use fddcov::geometry::UpaGeometry;
use fddcov::linalg::{frobenius, hermitian_eigen};
use fddcov::metrics::{grassmann_se, normalized_frobenius_se};
use fddcov::simharness::{cdf_csv, CampaignConfig};
use fddcov::{CMatrix, Complex};
use proptest::prelude::*;

fn matrix(n: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n)
        .prop_map(move |v| CMatrix::from_iterator(n, n, v.into_iter().map(|(re, im)| Complex::new(re, im))))
}

fn psd(n: usize) -> impl Strategy<Value = CMatrix> {
    matrix(n).prop_map(|a| &a * a.adjoint() + CMatrix::identity(a.nrows(), a.nrows()).scale(1e-3))
}

fn hermitian(n: usize) -> impl Strategy<Value = CMatrix> {
    matrix(n).prop_map(|a| (&a + a.adjoint()).scale(0.5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn psd_projection_is_psd_and_idempotent(h in hermitian(6)) {
        let p = psd_projection(&h).unwrap();
        let scale = frobenius(&h).max(1.0);
        prop_assert!(hermitian_eigen(p.matrix()).values.iter().all(|l| *l >= -1e-12 * scale));
        let again = psd_projection(p.matrix()).unwrap();
        prop_assert!(frobenius(&(again.matrix() - p.matrix())) <= 1e-10 * scale);
    }

    #[test]
    fn upa_averaging_is_an_orthogonal_projection(a in psd(8), b in psd(8)) {
        let geom = UpaGeometry::half_wavelength(2, 2, 1.8e9).unwrap();
        let s = UpaStructure::new(&geom);
        let pa = s.average(&a).unwrap();
        let pb = s.average(&b).unwrap();
        // Idempotent, Hermitian, and the residual is orthogonal to the range.
        prop_assert!(frobenius(&(s.average(&pa).unwrap() - &pa)) <= 1e-12 * frobenius(&a));
        prop_assert!(frobenius(&(&pa - pa.adjoint())) <= 1e-12 * frobenius(&a));
        let inner: Complex = (&a - &pa).iter().zip(pb.iter()).map(|(x, y)| x.conj() * y).sum();
        prop_assert!(inner.norm() <= 1e-10 * frobenius(&a) * frobenius(&b));
        let v = s.vectorize(&pa).unwrap();
        prop_assert_eq!(s.devectorize(&v).unwrap(), pa.clone());
        let ca = CovarianceMatrix::new(a.clone()).unwrap();
        prop_assert_eq!(upa_average(&ca, &geom).unwrap().into_matrix(), pa);
    }

    #[test]
    fn metrics_are_bounded_and_scale_free(r in psd(5), e in psd(5), c in 0.01f64..100.0) {
        let g = grassmann_se(&r, &e, 0.9).unwrap();
        prop_assert!((0.0..=1.0).contains(&g.value));
        let gs = grassmann_se(&r, &e.scale(c), 0.9).unwrap();
        prop_assert!((g.value - gs.value).abs() <= 1e-12);
        prop_assert!(normalized_frobenius_se(&r, &e).unwrap() >= 0.0);
        prop_assert_eq!(normalized_frobenius_se(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn config_parser_never_panics(text in "[a-z_ =#0-9.\\n]{0,80}") {
        let _ = CampaignConfig::parse(&text);
    }

    #[test]
    fn cdf_tables_are_distribution_functions(mut v in prop::collection::vec(0.0f64..1.0, 1..40)) {
        v.sort_by(f64::total_cmp);
        let rows: Vec<(f64, f64)> = cdf_csv(&v)
            .lines()
            .skip(1)
            .map(|l| {
                let (a, b) = l.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect();
        prop_assert_eq!(rows.len(), v.len());
        prop_assert!(rows.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
        prop_assert_eq!(rows.last().unwrap().1, 1.0);
        prop_assert!(rows[0].1 > 0.0);
    }
}
