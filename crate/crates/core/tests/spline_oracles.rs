mod common;

use approx::assert_abs_diff_eq;
use plsivc::spline::{gauss_legendre, make_knots};
use plsivc::KnotVector;

#[test]
fn kernel_matches_reference_on_random_knot_vectors() {
    let e = common::spline_suite(11, 100);
    assert!(e.partition_of_unity < 1e-12, "{e:?}");
    assert!(e.cox_de_boor < 1e-12, "{e:?}");
    assert!(e.derivative < 1e-6, "{e:?}");
    assert!(e.gram < 1e-6, "{e:?}");
    assert!(e.gram_asymmetry < 1e-14, "{e:?}");
    assert_eq!(e.support_violations, 0);
    assert_eq!(e.not_positive_definite, 0);
}

#[test]
fn linear_basis_gram_is_known() {
    // Two hat-function halves on [0, 1]: H = [[1/3, 1/6], [1/6, 1/3]].
    let kv = KnotVector::clamped(0.0, 1.0, vec![], 1).unwrap();
    let h = kv.gram();
    assert_abs_diff_eq!(h[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(h[(0, 1)], 1.0 / 6.0, epsilon = 1e-15);
    assert_abs_diff_eq!(h[(1, 1)], 1.0 / 3.0, epsilon = 1e-15);
}

#[test]
fn cubic_bernstein_values() {
    let kv = KnotVector::clamped(0.0, 1.0, vec![], 3).unwrap();
    let b = kv.eval(0.5);
    for (got, want) in b.iter().zip([0.125, 0.375, 0.375, 0.125]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
    }
}

#[test]
fn gram_integrates_polynomials_exactly() {
    // Σ_ij H_ij = ∫ (Σ B_i)(Σ B_j) = b − a.
    let kv = KnotVector::clamped(-1.0, 2.5, vec![-0.2, 0.4, 1.9], 3).unwrap();
    assert_abs_diff_eq!(kv.gram().sum(), 3.5, epsilon = 1e-13);
}

#[test]
fn extended_evaluation_agrees_inside_the_range() {
    let kv = KnotVector::clamped(0.0, 2.0, vec![0.5, 1.2], 3).unwrap();
    for j in 0..=50 {
        let u = 2.0 * j as f64 / 50.0;
        assert!((kv.eval(u) - kv.eval_extended(u)).amax() < 1e-14);
    }
    // Outside, extension continues the boundary cubic rather than clamping.
    assert!((kv.eval(2.3) - kv.eval_extended(2.3)).amax() > 1e-3);
    assert_abs_diff_eq!(kv.eval_extended(2.3).sum(), 1.0, epsilon = 1e-12);
}

#[test]
fn knots_cover_index_values() {
    let values = [0.3, -1.0, 2.0, 0.7, 1.1];
    let kv = make_knots(&values, 3, 3).unwrap();
    assert!(values.iter().all(|v| kv.contains(*v)));
    assert_eq!(kv.interior(), &[-0.25, 0.5, 1.25]);
    assert_eq!(kv.n_basis(), 7);
}

#[test]
fn gauss_legendre_is_exact_to_degree_2n_minus_1() {
    for n in 1..=8 {
        let (x, w) = gauss_legendre(n);
        for deg in 0..2 * n {
            let quad: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg + 1) as f64 };
            assert_abs_diff_eq!(quad, exact, epsilon = 1e-13);
        }
    }
}
