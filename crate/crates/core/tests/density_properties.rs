use lingrow::densities::{
    data_term_deriv, data_term_value, density_gradient, density_hessian_form, density_value, ellipticity_audit, phi_deriv,
    phi_second, phi_value, AuditConfig, DataTermProfile, Density,
};
use lingrow::oracle::numeric_phi;
use proptest::prelude::*;

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn scaled(dir: &[f64], r: f64) -> Vec<f64> {
    let n = norm(dir);
    dir.iter().map(|v| v * r / n).collect()
}

fn density_strategy() -> impl Strategy<Value = Density<f64>> {
    prop_oneof![
        (1.05f64..3.0).prop_map(|mu| Density::mu_family(mu).unwrap()),
        Just(Density::minimal_surface()),
    ]
}

/// A 3x2 matrix (N = 3 channels, n = 2) with norm in `[1e-3, 1e3]`.
fn matrix_strategy() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, 6), -3.0f64..3.0)
        .prop_filter("nonzero direction", |(d, _)| norm(d) > 1e-3)
        .prop_map(|(d, e)| scaled(&d, 10f64.powf(e)))
}

/// Rotation by `theta` applied on the gradient index of every row.
fn rotate(z: &[f64], theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    z.chunks_exact(2).flat_map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rotation_invariance(d in density_strategy(), z in matrix_strategy(), theta in 0.0f64..6.3, flip in any::<bool>()) {
        let mut w = rotate(&z, theta);
        if flip {
            for r in w.chunks_exact_mut(2) {
                r[1] = -r[1];
            }
        }
        let (a, b) = (density_value(&d, &z).unwrap(), density_value(&d, &w).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn convexity(d in density_strategy(), z1 in matrix_strategy(), z2 in matrix_strategy(), theta in 0.0f64..1.0) {
        let mid: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
        let lhs = density_value(&d, &mid).unwrap();
        let rhs = theta * density_value(&d, &z1).unwrap() + (1.0 - theta) * density_value(&d, &z2).unwrap();
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()), "{lhs} > {rhs}");
    }

    #[test]
    fn gradient_bounded_and_parallel(d in density_strategy(), z in matrix_strategy()) {
        let g = density_gradient(&d, &z).unwrap();
        let nu1 = d.constants().nu1;
        prop_assert!(norm(&g) <= nu1 + 1e-12);
        let cos = g.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / (norm(&g) * norm(&z));
        prop_assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hessian_sandwich(d in density_strategy(), z in matrix_strategy(), x in prop::collection::vec(-1.0f64..1.0, 6)) {
        prop_assume!(norm(&x) > 1e-3);
        let t = norm(&z);
        let q = density_hessian_form(&d, &z, &x).unwrap() / norm(&x).powi(2);
        // Radial and tangential eigenvalues bound the Rayleigh quotient.
        let (radial, tangential) = (d.profile_second(t), d.profile_ratio(t));
        prop_assert!(q >= radial.min(tangential) * (1.0 - 1e-12));
        prop_assert!(q <= radial.max(tangential) * (1.0 + 1e-12));
        prop_assert!(q * (1.0 + t).powf(d.mu()) >= 1.0 - 1e-9);
        prop_assert!(q * (1.0 + t) <= 2.0 * d.constants().nu1.max(1.0));
    }

    #[test]
    fn linear_lower_bound(d in density_strategy(), z in matrix_strategy()) {
        let c = d.constants();
        let t = norm(&z);
        let f = density_value(&d, &z).unwrap();
        prop_assert!(f >= c.nu2 * t - c.nu3 - 1e-12 * (1.0 + f));
        prop_assert!(f <= c.nu1 * t + 1e-12 * (1.0 + f));
    }

    #[test]
    fn linear_growth_data_term(beta in 1e-2f64..10.0, t in 0.0f64..1e3) {
        let p = DataTermProfile::linear_growth(beta).unwrap();
        let v = data_term_value(&p, t).unwrap();
        let d = data_term_deriv(&p, t).unwrap();
        prop_assert!(v >= 0.0 && (0.0..1.0).contains(&d));
        prop_assert!(p.second(t) > 0.0);
    }
}

#[test]
fn quadrature_agrees_with_closed_form() {
    for &mu in &[1.05, 1.2, 1.5, 1.9, 2.0, 2.3, 3.0] {
        for &t in &[0.0, 1e-3, 0.5, 1.0, 3.0, 17.0, 250.0, 1e3] {
            let exact = numeric_phi(mu, t).unwrap();
            let closed = phi_value(mu, t).unwrap();
            assert!((closed - exact).abs() < 1e-8 * (1.0 + exact), "mu={mu} t={t}: {closed} vs {exact}");
        }
    }
}

#[test]
fn phi_examples_against_quadrature() {
    assert_eq!(phi_value(1.5, 0.0).unwrap(), 0.0);
    let q = numeric_phi(1.5, 3.0).unwrap();
    assert!((phi_value(1.5, 3.0).unwrap() - q).abs() < 1e-8);
    assert!((q - 2.0).abs() < 1e-8);
    assert!((phi_value(2.0, 1.0).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-15);
    assert!((numeric_phi(2.0, 1.0).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-8);

    assert_eq!(phi_deriv(1.5, 0.0).unwrap(), 0.0);
    assert!((phi_deriv(1.5f64, 3.0).unwrap() - 1.0).abs() < 1e-15);
    assert!((phi_deriv(2.0f64, 1.0).unwrap() - 0.5).abs() < 1e-15);
    assert_eq!(phi_second(1.5, 0.0).unwrap(), 1.0);
    assert!((phi_second(1.5f64, 3.0).unwrap() - 0.125).abs() < 1e-15);
    assert!((phi_second(3.0f64, 1.0).unwrap() - 0.125).abs() < 1e-15);
}

#[test]
fn density_examples() {
    let ms = Density::minimal_surface();
    let mu = Density::mu_family(1.5).unwrap();
    let z0 = [0.0; 4];
    assert_eq!(density_value(&ms, &z0).unwrap(), 0.0);
    assert_eq!(density_gradient(&ms, &z0).unwrap(), vec![0.0; 4]);
    assert_eq!(density_gradient(&mu, &z0).unwrap(), vec![0.0; 4]);

    let root3 = scaled(&[1.0, 1.0, 1.0, 0.0], 3f64.sqrt());
    assert!((density_value(&ms, &root3).unwrap() - 1.0).abs() < 1e-15);
    assert!((norm(&density_gradient(&ms, &root3).unwrap()) - 3f64.sqrt() / 2.0).abs() < 1e-15);
    let perp = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0, 0.0];
    assert!((density_hessian_form(&ms, &root3, &perp).unwrap() - 0.5).abs() < 1e-15);

    let three = scaled(&[2.0, -1.0, 0.5, 1.0], 3.0);
    let value = density_value(&mu, &three).unwrap();
    assert!((value - numeric_phi(1.5, 3.0).unwrap()).abs() < 1e-8);
    let g = density_gradient(&mu, &three).unwrap();
    assert!((norm(&g) - 1.0).abs() < 1e-14);
    let along = scaled(&three, 1.0);
    assert!((density_hessian_form(&mu, &three, &along).unwrap() - 0.125).abs() < 1e-14);
    let x = [0.3, -0.2, 0.7, 0.1];
    assert!((density_hessian_form(&mu, &z0, &x).unwrap() - norm(&x).powi(2)).abs() < 1e-15);
}

#[test]
fn audit_examples() {
    let cfg = AuditConfig::default();
    let r = ellipticity_audit(&Density::mu_family(1.5).unwrap(), 1.5, &cfg).unwrap();
    assert!(r.pass && r.nu4_hat > 0.0 && r.nu4_hat <= 1.0 + 1e-12 && r.nu5_hat >= 1.0);
    assert!(ellipticity_audit(&Density::minimal_surface(), 3.0, &cfg).unwrap().pass);
    let wrong = ellipticity_audit(&Density::mu_family(1.5).unwrap(), 1.1, &cfg).unwrap();
    assert!(!wrong.pass);
    assert!(wrong.nu4_hat_doubled < wrong.nu4_hat);
}

#[test]
fn data_term_examples() {
    let lg = DataTermProfile::linear_growth(3.0f64).unwrap();
    assert!((data_term_value(&lg, 4.0).unwrap() - 2.0).abs() < 1e-15);
    assert!((data_term_deriv(&lg, 4.0).unwrap() - 0.8).abs() < 1e-15);
    let lg1 = DataTermProfile::linear_growth(1.0).unwrap();
    assert_eq!(data_term_value(&lg1, 0.0).unwrap(), 0.0);
    assert_eq!(data_term_deriv(&lg1, 0.0).unwrap(), 0.0);
    let q = DataTermProfile::quadratic(2.0).unwrap();
    assert_eq!(data_term_value(&q, 3.0).unwrap(), 9.0);
    assert_eq!(data_term_deriv(&q, 3.0).unwrap(), 6.0);
    assert!(data_term_value(&q, -1.0).is_err());
}
