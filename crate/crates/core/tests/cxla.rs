mod common;

use common::*;
use convbeam::cxla::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn inverse_matches_cofactor_oracle() {
    let mut r = rng(11);
    for m in 1..=6 {
        for _ in 0..20 {
            let phi = diag_load(&random_psd(&mut r, m, m), 1e-6).unwrap();
            let inv = cinv(&phi).unwrap();
            let oracle = cofactor_inverse(&phi);
            let rel = max_abs_diff(&inv, &oracle) / oracle.max_abs();
            assert!(rel <= 1e-10, "m = {m}: relative error {rel:e}");
        }
    }
}

#[test]
fn solve_residual_is_small() {
    let mut r = rng(12);
    for m in 1..=6 {
        for k in [1, 3] {
            let phi = diag_load(&random_psd(&mut r, m, m), 1e-6).unwrap();
            let rhs = random_cmatrix(&mut r, m, k);
            let x = csolve(&phi, &rhs).unwrap();
            let resid = phi.matmul(&x).unwrap();
            let err = max_abs_diff(&resid, &rhs);
            let scale = rhs.frobenius_norm();
            assert!(err / scale <= 1e-10, "m = {m}: {}", err / scale);
        }
    }
}

#[test]
fn loading_lifts_smallest_eigenvalue_to_eps_trace() {
    let mut r = rng(13);
    for m in 2..=3 {
        for _ in 0..50 {
            // rank m - 1 keeps the lifted eigenvalue a simple root
            let phi = random_psd(&mut r, m, m - 1);
            let eps = 1e-8;
            let loaded = diag_load(&phi, eps).unwrap();
            let eigs = hermitian_eigenvalues(&loaded);
            let expected = eps * phi.trace().re;
            let smallest = *eigs.last().unwrap();
            assert!(
                (smallest - expected).abs() <= 1e-6 * expected.max(1e-300) + 1e-15 * phi.trace().re,
                "{smallest:e} vs {expected:e}"
            );
        }
    }
}

#[test]
fn power_iteration_converges_with_eigengap() {
    let mut r = rng(14);
    for _ in 0..100 {
        let top: f64 = r.random_range(2.0..10.0);
        let low: f64 = r.random_range(0.0..1.0);
        let phi = hermitian_with_eigs(&mut r, &[top, 1.0, low]);
        let v = power_iter_maxeig(&phi, 50, &CVector::uniform(3)).unwrap();
        let truth = principal_eigenvector(&phi);
        let align = truth.dot(&v).norm();
        assert!(align >= 1.0 - 1e-8, "alignment {align}");
    }
}

#[test]
fn eigen_oracle_agrees_with_construction() {
    let mut r = rng(15);
    for _ in 0..50 {
        let eigs = [5.0, 2.0, 0.5];
        let phi = hermitian_with_eigs(&mut r, &eigs);
        let got = hermitian_eigenvalues(&phi);
        for (a, b) in got.iter().zip(eigs) {
            assert!((a - b).abs() < 1e-10);
        }
        let v = principal_eigenvector(&phi);
        let pv = phi.mul_vec(&v).unwrap();
        let resid: f64 = pv
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(a, b)| (a - b * 5.0).norm())
            .fold(0.0, f64::max);
        assert!(resid < 1e-10);
    }
}

#[test]
fn inverse_residual_is_backward_stable_when_ill_conditioned() {
    let mut r = rng(18);
    for m in 2..=6 {
        for rank in 1..m {
            let phi = diag_load(&random_psd(&mut r, m, rank), 1e-8).unwrap();
            let inv = cinv(&phi).unwrap();
            let resid = phi.matmul(&inv).unwrap().add(&CMatrix::identity(m).scale(c(-1.0, 0.0))).unwrap();
            let bound = 100.0 * f64::EPSILON * phi.norm_inf() * inv.norm_inf();
            assert!(resid.norm_inf() <= bound, "m {m} rank {rank}: {:e} > {bound:e}", resid.norm_inf());
        }
    }
}

#[test]
fn jacobi_oracle_resolves_repeated_eigenvalues() {
    let mut r = rng(17);
    for eigs in [[3.0, 0.0, 0.0], [2.0, 2.0, 1e-9], [1.0, 1.0, 1.0], [4.0, 1.0, 0.25]] {
        let phi = hermitian_with_eigs(&mut r, &eigs);
        for (a, b) in jacobi_eigenvalues(&phi).iter().zip(eigs) {
            assert!((a - b).abs() < 1e-13, "{eigs:?}");
        }
    }
}

#[test]
fn embedding_block_structure() {
    let mut r = rng(16);
    let phi = random_cmatrix(&mut r, 3, 3);
    let e = real_embed(&phi).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let z = phi[(i, j)];
            assert_eq!(e[(i, j)], z.re);
            assert_eq!(e[(i + 3, j + 3)], z.re);
            assert_eq!(e[(i, j + 3)], z.im);
            assert_eq!(e[(i + 3, j)], -z.im);
        }
    }
}

#[test]
fn singular_matrix_is_an_error_not_garbage() {
    let mut r = rng(17);
    let phi = random_psd(&mut r, 4, 2);
    let zero = CMatrix::zeros(3, 3);
    assert!(cinv(&zero).is_err());
    // the loaded version of a rank-deficient matrix is always invertible
    assert!(cinv(&diag_load(&phi, 1e-8).unwrap()).is_ok());
}

fn arb_matrix(m: usize) -> impl Strategy<Value = CMatrix> {
    proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), m * m)
        .prop_map(move |v| CMatrix::new(m, m, v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap())
}

proptest! {
    #[test]
    fn hermitize_is_exactly_hermitian(phi in (1usize..6).prop_flat_map(arb_matrix)) {
        let h = hermitize(&phi).unwrap();
        for i in 0..h.rows() {
            for j in 0..h.cols() {
                prop_assert_eq!(h[(i, j)], h[(j, i)].conj());
            }
        }
        prop_assert_eq!(hermitize(&h).unwrap(), h);
    }

    #[test]
    fn loaded_gram_matrices_invert(b in (1usize..6).prop_flat_map(arb_matrix), eps in 1e-8..1e-1f64) {
        let phi = b.matmul(&b.conj_transpose()).unwrap();
        prop_assume!(phi.trace().re > 1e-6);
        let loaded = diag_load(&phi, eps).unwrap();
        let inv = cinv(&loaded).unwrap();
        let prod = loaded.matmul(&inv).unwrap();
        let err = max_abs_diff(&prod, &CMatrix::identity(phi.rows()));
        // backward-stable solve: error bounded by the loaded condition number
        prop_assert!(err <= 1e-13 * (1.0 + eps) / eps, "{}", err);
    }

    #[test]
    fn power_iteration_output_is_unit(phi in (1usize..5).prop_flat_map(arb_matrix), iters in 1usize..20) {
        let gram = phi.matmul(&phi.conj_transpose()).unwrap();
        prop_assume!(gram.max_abs() > 1e-3);
        if let Ok(v) = power_iter_maxeig(&gram, iters, &CVector::uniform(gram.rows())) {
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}
