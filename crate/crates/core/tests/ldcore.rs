mod common;

use common::*;
use ldqos_core::ldcore::{growth, legendre, theta_star_with_grad};
use ldqos_core::*;

#[test]
fn lambda_a_examples() {
    let p = tm(&[&[0.7, 0.3], &[0.3, 0.7]]);
    let (arr, _) = base_model();
    assert!(lambda_a(0.0, &p, &arr).unwrap().abs() <= 1e-12);

    let one = tm(&[&[1.0]]);
    let a1 = ArrivalModel::deterministic(&[0.4]).unwrap();
    assert!((lambda_a(2.5, &one, &a1).unwrap() - 1.0).abs() <= 1e-12);

    // identical rows: rank one, rho = sum_j pi_j e^{theta r_j}
    let pi = [0.2, 0.5, 0.3];
    let rates = [0.1, 1.0, 3.0];
    let p = tm(&[&pi, &pi, &pi]);
    let arr = ArrivalModel::deterministic(&rates).unwrap();
    let theta = 1.3;
    let exact: f64 = pi
        .iter()
        .zip(rates)
        .map(|(w, r)| w * (theta * r).exp())
        .sum::<f64>()
        .ln();
    assert!((lambda_a(theta, &p, &arr).unwrap() - exact).abs() <= 1e-12);
}

#[test]
fn theta_star_matches_bisection_oracle() {
    // the base rates with a chain in I1 (p1 = (0.75, 0.25))
    let p = tm(&[&[0.9, 0.1], &[0.3, 0.7]]);
    let (arr, svc) = base_model();
    let ld = LdConfig {
        root_tol: 1e-13,
        ..LdConfig::default()
    };
    let ts = theta_star(&p, &arr, &svc, &ld).unwrap();
    let oracle = theta_star_oracle(&p, &arr, BASE_C, 100.0, 20_000);
    assert!(ts > 0.0);
    assert!((ts - oracle).abs() <= 1e-9, "{ts} vs {oracle}");
    assert!(growth(ts, &p, &arr, &svc).unwrap().abs() <= 1e-9);
}

#[test]
fn theta_star_limits() {
    let one = tm(&[&[1.0]]);
    let arr = ArrivalModel::deterministic(&[0.03]).unwrap();
    let svc = ServiceModel::deterministic(0.058).unwrap();
    assert_eq!(
        theta_star(&one, &arr, &svc, &LdConfig::default()).unwrap(),
        f64::INFINITY
    );

    let p = tm(&[&[0.9, 0.1], &[0.1, 0.9]]);
    let (arr, svc) = base_model();
    assert_eq!(theta_star(&p, &arr, &svc, &LdConfig::default()).unwrap(), 0.0);
}

#[test]
fn mean_rate_and_regions() {
    let (arr, svc) = base_model();
    let swap = tm(&[&[0.0, 1.0], &[1.0, 0.0]]);
    assert!((mean_arrival_rate(&swap, &arr).unwrap() - 0.0595).abs() <= 1e-15);
    for p in [tm(&[&[0.9, 0.1], &[0.1, 0.9]]), tm(&[&[0.99, 0.01], &[0.01, 0.99]])] {
        assert_eq!(classify_region(&p, &arr, &svc).unwrap(), RegionLabel::I2);
    }
    let p = tm(&[&[0.9, 0.1], &[0.3, 0.7]]);
    // p1(1) = (1 - p22) / (2 - p11 - p22)
    let p11 = (1.0 - 0.7) / (2.0 - 0.9 - 0.7);
    assert!((p11 - 0.75f64).abs() <= 1e-15);
    assert!((mean_arrival_rate(&p, &arr).unwrap() - 0.05075).abs() <= 1e-15);
    assert_eq!(classify_region(&p, &arr, &svc).unwrap(), RegionLabel::I1);

    let xi = tm(&[&[0.2, 0.6, 0.2], &[0.6, 0.2, 0.2], &[0.2, 0.4, 0.4]]);
    let arr3 = ArrivalModel::deterministic(&[0.2, 1.0, 2.5]).unwrap();
    let exact = (10.0 * 0.2 + 11.0 * 1.0 + 7.0 * 2.5) / 28.0;
    assert!((mean_arrival_rate(&xi, &arr3).unwrap() - exact).abs() <= 1e-14);
}

#[test]
fn legendre_examples() {
    let l = legendre(|t| 0.7 * t, 0.7, (-50.0, 50.0)).unwrap();
    assert!(l.value.abs() <= 1e-9);
    let l = legendre(|t| 0.5 * t * t, 1.3, (-50.0, 50.0)).unwrap();
    assert!((l.value - 0.5 * 1.3 * 1.3).abs() <= 1e-10);

    // iid arrivals: 0 w.p. 0.6, 2 w.p. 0.4
    let lam = |t: f64| (0.6 + 0.4 * (2.0 * t).exp()).ln();
    let a = 1.1;
    let grid = (0..=2_000_000)
        .map(|k| -50.0 + k as f64 * 5e-5)
        .map(|t| t * a - lam(t))
        .fold(f64::MIN, f64::max);
    let l = legendre(lam, a, (-50.0, 50.0)).unwrap();
    assert!((l.value - grid).abs() <= 1e-8, "{} vs {grid}", l.value);
    assert!(!l.at_edge);
}

#[test]
fn gradient_matches_differences_at_interior_point() {
    let p = tm(&[&[0.9, 0.1], &[0.3, 0.7]]);
    let (arr, svc) = base_model();
    let ld = LdConfig {
        root_tol: 1e-15,
        ..LdConfig::default()
    };
    let grad = grad_theta_star(&p, &arr, &svc, &ld).unwrap();
    let h = 1e-6;
    for i in 0..2 {
        let d = swap_direction(2, i, 0, 1);
        let fd = (theta_star(&shifted(&p, &d, h), &arr, &svc, &ld).unwrap()
            - theta_star(&shifted(&p, &d, -h), &arr, &svc, &ld).unwrap())
            / (2.0 * h);
        assert!(rel_err(grad.component_mul(&d).sum(), fd) <= 1e-4);
    }
}

#[test]
fn gradient_vanishes_on_i2_and_is_undefined_on_i3() {
    let (arr, svc) = base_model();
    let p = tm(&[&[0.7, 0.3], &[0.3, 0.7]]);
    assert_eq!(
        grad_theta_star(&p, &arr, &svc, &LdConfig::default()).unwrap().amax(),
        0.0
    );
    let boundary = tm(&[&[0.84, 0.16], &[0.19, 0.81]]);
    assert!(matches!(
        grad_theta_star(&boundary, &arr, &svc, &LdConfig::default()),
        Err(Error::Boundary)
    ));
}

#[test]
fn directional_derivative_is_gradient_contraction() {
    let p = tm(&[&[0.5, 0.3, 0.2], &[0.1, 0.6, 0.3], &[0.4, 0.4, 0.2]]);
    let arr = ArrivalModel::deterministic(&[0.1, 0.5, 1.2]).unwrap();
    let svc = ServiceModel::deterministic(0.7).unwrap();
    let g = theta_star_with_grad(&p, &arr, &svc, &LdConfig::default()).unwrap();
    let d = nalgebra::DMatrix::from_row_slice(3, 3, &[0.1, -0.3, 0.2, 0.0, 0.5, -0.5, -0.2, 0.1, 0.1]);
    assert!((g.directional(&d) - g.grad.component_mul(&d).sum()).abs() <= 1e-10 * g.grad.amax());
}

#[test]
fn i3_boundary_limit_of_directional_derivative() {
    // along a path into I1 the directional derivative settles at a finite
    // nonzero value while the largest partial derivative grows like 1/t
    let (arr, svc) = base_model();
    let r = tm(&[&[0.84, 0.16], &[0.19, 0.81]]);
    let d = swap_direction(2, 0, 0, 1);
    let mut dirs = Vec::new();
    let mut maxes = Vec::new();
    for t in [1e-2, 1e-3, 1e-4, 1e-5] {
        let p = shifted(&r, &d, t);
        let g = theta_star_with_grad(&p, &arr, &svc, &LdConfig::default()).unwrap();
        dirs.push(g.directional(&d));
        maxes.push(g.grad.amax());
        // theta* ~ t * directional derivative near the boundary
        assert!(rel_err(g.theta_star / t, g.directional(&d)) <= 0.05);
    }
    assert!(maxes.windows(2).all(|w| w[1] > 5.0 * w[0]));
    assert!(rel_err(dirs[3], dirs[2]) <= 1e-3);
    assert!(dirs[3] > 1.0);
}
