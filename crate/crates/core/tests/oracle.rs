use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use kalmanopt::optim::{compute_alpha, koala_init_step, koala_pp_step, KoalaHyper, RMode, Variant, DEFAULT_EPS};
use kalmanopt::oracle::{
    dense_ekf_step, eig_closed_form, ground_truth_m, min_norm_p_symmetric, min_norm_p_vanilla,
    numeric_min_norm_solve_full, numeric_min_norm_solve_schur, psd_direction_check, DenseCov, DiagnosticsRow,
};
use kalmanopt::{GradVector, ParamVector};

fn pair(lo: usize, hi: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (lo..=hi).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0..3.0f64, n).prop_filter("nonzero h", |h| h.iter().map(|x| x * x).sum::<f64>() > 1e-3),
            prop::collection::vec(-3.0..3.0f64, n),
        )
    })
}

fn row(h: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, h.len(), h)
}

proptest! {
    #[test]
    fn closed_forms_match_both_numeric_routes((h, v) in pair(1, 12)) {
        for symmetric in [false, true] {
            let closed = if symmetric { min_norm_p_symmetric(&h, &v) } else { min_norm_p_vanilla(&h, &v) }.unwrap();
            let full = numeric_min_norm_solve_full(&h, &v, symmetric).unwrap();
            let schur = numeric_min_norm_solve_schur(&h, &v, symmetric).unwrap();
            prop_assert!((&closed - full).norm() < 1e-8);
            prop_assert!((&closed - schur).norm() < 1e-8);
        }
    }

    #[test]
    fn reconstructions_satisfy_the_constraint((h, v) in pair(1, 40)) {
        for p in [min_norm_p_vanilla(&h, &v).unwrap(), min_norm_p_symmetric(&h, &v).unwrap()] {
            let hp = row(&h) * &p;
            for (a, b) in hp.iter().zip(&v) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
        let ps = min_norm_p_symmetric(&h, &v).unwrap();
        prop_assert_eq!(&ps, &ps.transpose());
    }

    #[test]
    fn feasible_perturbations_only_increase_the_norm((h, v) in pair(2, 10), seed in any::<u64>()) {
        // N = (I - h^T h / |h|^2) E stays feasible for h P = v
        let n = h.len();
        let x: f64 = h.iter().map(|a| a * a).sum();
        let proj = DMatrix::identity(n, n) - row(&h).transpose() * row(&h) / x;
        let e = DMatrix::from_fn(n, n, |i, j| (((seed as usize).wrapping_add(7 * i + 13 * j) % 17) as f64 - 8.0) / 8.0);
        let p = min_norm_p_vanilla(&h, &v).unwrap();
        let pert = &p + &proj * &e * 0.1;
        prop_assert!(pert.norm() >= p.norm() - 1e-12);
        let ps = min_norm_p_symmetric(&h, &v).unwrap();
        let sym_pert = &proj * (&e + e.transpose()) * &proj * 0.1;
        prop_assert!((&ps + sym_pert).norm() >= ps.norm() - 1e-12);
    }

    #[test]
    fn closed_form_eigenvalues_match_dense((h, v) in pair(2, 30)) {
        let e = eig_closed_form(&h, &v).unwrap();
        prop_assert!(e.lambda1 >= e.lambda2);
        let mut dense: Vec<f64> = SymmetricEigen::new(min_norm_p_symmetric(&h, &v).unwrap()).eigenvalues.iter().copied().collect();
        dense.sort_by(|a, b| b.total_cmp(a));
        let scale = e.lambda1.abs().max(e.lambda2.abs()).max(1e-300);
        prop_assert!((dense[0] - e.lambda1).abs() / scale < 1e-8);
        prop_assert!((dense[dense.len() - 1] - e.lambda2).abs() / scale < 1e-8);
    }

    #[test]
    fn ground_truth_reproduces_the_surrogate(
        (h1, h2) in pair(2, 15).prop_map(|(a, b)| (a, b)),
        h3 in prop::collection::vec(-3.0..3.0f64, 15),
        q in 0.0..0.5f64, r in 0.05..2.0f64, sigma0 in 0.05..1.0f64,
    ) {
        let n = h1.len();
        prop_assume!(h2.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let hyper = KoalaHyper { q, sigma0, r_mode: RMode::Fixed { r }, variant: Variant::Symmetric, eps: DEFAULT_EPS, weight_decay: 0.0 };
        let (_, s1) = koala_init_step(&hyper, 1.0, &GradVector::new(h1), 0.1).unwrap();
        let (_, s2) = koala_pp_step(&s1, &hyper, 1.0, &GradVector::new(h2), 0.1).unwrap();
        let h3 = GradVector::new(h3[..n].to_vec());
        let gt = ground_truth_m(&s2.h_prev, &s2.v, q, r, DEFAULT_EPS).unwrap();
        let (_, s3) = koala_pp_step(&s2, &hyper, 1.0, &h3, 0.1).unwrap();
        let hm = row(&h3) * &gt.m;
        let scale = s3.v.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        for (a, b) in hm.iter().zip(s3.v.iter()) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn step2_surrogate_differs_from_dense_by_the_unseen_prior(
        (h1, h2) in pair(1, 20), q in 0.0..0.5f64, r in 0.05..2.0f64, sigma0 in 0.05..1.5f64,
    ) {
        let n = h1.len();
        let s0 = sigma0 * sigma0;
        let hyper = KoalaHyper { q, sigma0, r_mode: RMode::Fixed { r }, variant: Variant::Symmetric, eps: DEFAULT_EPS, weight_decay: 0.0 };
        let (g1, g2) = (GradVector::new(h1.clone()), GradVector::new(h2.clone()));
        let (_, s1) = koala_init_step(&hyper, 1.0, &g1, 0.1).unwrap();
        let (_, s2) = koala_pp_step(&s1, &hyper, 1.0, &g2, 0.1).unwrap();
        let dense = dense_ekf_step(&ParamVector::zeros(n), &DenseCov::isotropic(n, s0), q, r, 1.0, 0.9, &g1, DEFAULT_EPS).unwrap();
        let v2 = row(&h2) * dense.p.matrix();
        let alpha = compute_alpha(&h2, &h1, DEFAULT_EPS).unwrap();
        let scale = v2.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        for i in 0..n {
            prop_assert!((v2[i] - s2.v[i] - s0 * (h2[i] - alpha * h1[i])).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn dense_filter_agrees_with_scalar_path_in_one_dimension(
        theta0 in -3.0..3.0f64, sigma0 in 0.1..2.0f64, q in 0.0..0.5f64, r in 0.1..2.0f64, eta in 0.01..0.5f64,
    ) {
        let hyper = KoalaHyper { q, sigma0, r_mode: RMode::Fixed { r }, variant: Variant::Symmetric, eps: DEFAULT_EPS, weight_decay: 0.0 };
        let (mut theta, mut dense_theta) = (theta0, ParamVector::new(vec![theta0]));
        let mut p = DenseCov::isotropic(1, sigma0 * sigma0);
        let mut state = None;
        for _ in 0..6 {
            let (loss, h) = (0.5 * theta * theta, GradVector::new(vec![theta]));
            let (delta, next) = match &state {
                None => koala_init_step(&hyper, loss, &h, eta).unwrap(),
                Some(s) => koala_pp_step(s, &hyper, loss, &h, eta).unwrap(),
            };
            state = Some(next);
            theta += delta[0];
            let dl = 0.5 * dense_theta[0] * dense_theta[0];
            let dh = GradVector::new(vec![dense_theta[0]]);
            let step = dense_ekf_step(&dense_theta, &p, q, r, dl, (1.0 - eta) * dl, &dh, DEFAULT_EPS).unwrap();
            dense_theta = step.theta;
            p = step.p;
            prop_assert!((theta - dense_theta[0]).abs() < 1e-12 * (1.0 + theta.abs()));
        }
    }
}

#[test]
fn direction_check_examples() {
    assert_eq!(psd_direction_check(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), (0.0, 90.0));
    let (hv, angle) = psd_direction_check(&[1.0, 2.0], &[0.5, 1.0]).unwrap();
    assert_eq!(hv, 2.5);
    assert!(angle.abs() < 1e-6);
    assert!(psd_direction_check(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn first_diagnostics_row_is_parallel() {
    let h = GradVector::new(vec![0.5, -1.0, 2.0]);
    let hyper = KoalaHyper::default();
    let (_, s) = koala_init_step(&hyper, 1.0, &h, 0.1).unwrap();
    let row = DiagnosticsRow::from_step(1, &h, &s.v, s.s_prev, 0).unwrap();
    assert!(row.angle_deg.abs() < 1e-10, "{}", row.angle_deg);
    assert!(row.lambda1 >= row.lambda2);
}

#[test]
fn dense_cov_rejects_bad_input() {
    assert!(DenseCov::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, f64::NAN])).is_err());
    assert!(DenseCov::new(DMatrix::zeros(2, 3)).is_err());
    assert!(eig_closed_form(&[0.0, 0.0], &[1.0, 1.0]).is_err());
}
