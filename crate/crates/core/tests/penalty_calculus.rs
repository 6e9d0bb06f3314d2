mod common;

use approx::assert_abs_diff_eq;
use plsivc::penalty::{build_weight_matrices, lqa_weight, scad_deriv, scad_value};
use plsivc::{PenaltyFamily, PenaltySpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

#[test]
fn derivative_and_tangency_on_random_triples() {
    let e = common::penalty_suite(5, 1000);
    assert!(e.checked > 900, "{e:?}");
    assert!(e.derivative < 1e-6, "{e:?}");
    assert!(e.tangency_value <= 4.0 * f64::EPSILON, "{e:?}");
    assert!(e.tangency_slope <= 4.0 * f64::EPSILON, "{e:?}");
}

#[test]
fn scad_pieces() {
    let (l, a) = (1.0, 3.7);
    assert_eq!(scad_deriv(l, a, 0.5).unwrap(), 1.0);
    assert_abs_diff_eq!(scad_deriv(l, a, 2.0).unwrap(), 1.7 / 2.7, epsilon = 1e-15);
    assert_eq!(scad_deriv(l, a, 5.0).unwrap(), 0.0);
    assert_abs_diff_eq!(scad_value(l, a, 10.0).unwrap(), 2.35, epsilon = 1e-15);
    // Continuity at both knots.
    for w in [l, a * l] {
        let left = scad_value(l, a, w - 1e-12).unwrap();
        let right = scad_value(l, a, w + 1e-12).unwrap();
        assert!((left - right).abs() < 1e-10);
    }
}

#[test]
fn domain_errors() {
    assert!(scad_deriv(1.0, 2.0, 1.0).is_err());
    assert!(scad_value(-1.0, 3.7, 1.0).is_err());
    assert!(lqa_weight(PenaltyFamily::Lasso, 1.0, 0.0).is_err());
}

#[test]
fn lqa_majorizes_the_penalty() {
    // p is concave in ω ≥ 0, so its quadratic tangent lies above it.
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
    for _ in 0..2000 {
        let lambda = rng.gen_range(0.01..3.0);
        let family = if rng.gen_bool(0.5) { PenaltyFamily::Scad { a: rng.gen_range(2.1..6.0) } } else { PenaltyFamily::Lasso };
        let w0 = rng.gen_range(0.01..6.0) * lambda;
        let w = rng.gen_range(0.0..6.0) * lambda;
        let c = lqa_weight(family, lambda, w0).unwrap();
        let q = family.value(lambda, w0) + 0.5 * c * (w * w - w0 * w0);
        assert!(q >= family.value(lambda, w) - 1e-12 * lambda * lambda);
    }
}

#[test]
fn weight_matrix_blocks() {
    let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let spec = PenaltySpec::uniform(PenaltyFamily::Lasso, 0.5, 1, 2, 2);
    let phi = DVector::from_vec(vec![0.25]);
    let theta = DVector::from_vec(vec![2.0, 0.0]);
    let gamma = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let w = build_weight_matrices(&phi, &theta, &gamma, &spec, &h).unwrap();
    assert_abs_diff_eq!(w.sigma_phi[0], 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(w.theta_weights[0], 0.25, epsilon = 1e-15);
    assert_eq!(w.theta_weights[1], 0.0);
    // ‖γ₁‖_H = √2.
    let g = 0.5 / 2f64.sqrt();
    assert_abs_diff_eq!(w.gamma_weights[0], g, epsilon = 1e-15);
    assert_eq!(w.gamma_weights[1], 0.0);
    assert_eq!(w.sigma_alpha.nrows(), 6);
    assert_abs_diff_eq!(w.sigma_alpha[(2, 2)], 2.0 * g, epsilon = 1e-15);
    assert_abs_diff_eq!(w.sigma_alpha[(2, 3)], 0.5 * g, epsilon = 1e-15);
    assert_eq!(w.sigma_alpha[(4, 4)], 0.0);
}

#[test]
fn penalty_total_scales_with_n() {
    let h = DMatrix::identity(1, 1);
    let spec = PenaltySpec::uniform(PenaltyFamily::Lasso, 0.1, 1, 1, 1);
    let one = DVector::from_vec(vec![1.0]);
    let g = DMatrix::from_element(1, 1, 2.0);
    // n · λ · (1 + 1 + 2).
    assert_abs_diff_eq!(spec.total(&one, &one, &g, &h, 10), 4.0, epsilon = 1e-12);
}
