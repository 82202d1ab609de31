use proptest::prelude::*;
use proptest::test_runner::Config;
use scp_core::map_model::{evaluate, gram_factor, trace_contour, CONTOUR_RESIDUAL_TOL};
use scp_core::{BoxDomain, QoiMap};

fn square() -> BoxDomain {
    BoxDomain::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap()
}

fn powerlaw_domain() -> BoxDomain {
    BoxDomain::new(vec![4.0, -3.0], vec![14.0, -0.1]).unwrap()
}

/// Adaptive Simpson quadrature.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

#[test]
fn ellipse_perimeter_matches_quadrature() {
    let (a, b) = (2.0f64, 2.0 / 3f64.sqrt());
    let speed = |t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
    let perimeter = adaptive_simpson(&speed, 0.0, std::f64::consts::TAU, 1e-12);
    let c = trace_contour(&QoiMap::ellipse(), &square(), 4.0, 400).unwrap();
    let rel = (c.total_length() - perimeter).abs() / perimeter;
    assert!(rel <= 1e-3, "arc length {} vs perimeter {perimeter}", c.total_length());
}

#[test]
fn contour_points_satisfy_residual_bound() {
    let map = QoiMap::ellipse();
    for q in [0.5, 4.0, 16.0, 20.0, 40.0, 70.0] {
        let c = trace_contour(&map, &square(), q, 300).unwrap();
        for p in c.points() {
            assert!((evaluate(&map, p).unwrap() - q).abs() <= CONTOUR_RESIDUAL_TOL, "q={q} at {p:?}");
        }
    }
    let pl = QoiMap::powerlaw(0.3);
    for q in [20.0, 35.0, 60.0] {
        let c = trace_contour(&pl, &powerlaw_domain(), q, 300).unwrap();
        for p in c.points() {
            assert!((evaluate(&pl, p).unwrap() - q).abs() <= CONTOUR_RESIDUAL_TOL);
        }
    }
}

#[test]
fn arc_length_is_resolution_stable() {
    let cases = [
        (QoiMap::ellipse(), square(), vec![1.0, 4.0, 16.0, 30.0, 60.0]),
        (QoiMap::powerlaw(0.3), powerlaw_domain(), vec![15.0, 40.0, 80.0]),
    ];
    for (map, domain, qs) in cases {
        for q in qs {
            for n in [100, 400] {
                let l1 = trace_contour(&map, &domain, q, n).unwrap().total_length();
                let l2 = trace_contour(&map, &domain, q, 2 * n).unwrap().total_length();
                assert!((l1 - l2).abs() / l2 <= 0.01, "{} q={q} n={n}: {l1} vs {l2}", map.name());
            }
        }
    }
}

proptest! {
    #![proptest_config(Config { failure_persistence: None, ..Config::default() })]

    #[test]
    fn analytic_gram_factor_matches_finite_differences(x in -4.9f64..4.9, y in -4.9f64..4.9) {
        let map = QoiMap::ellipse();
        let g = gram_factor(&map, &[x, y]);
        if let Ok(g) = g {
            if g >= 1e-6 {
                let fd = map.fd_gradient(&[x, y]).unwrap();
                let fd_norm = (fd[0] * fd[0] + fd[1] * fd[1]).sqrt();
                prop_assert!((g - fd_norm).abs() / g <= 1e-5);
            }
        }
    }

    #[test]
    fn powerlaw_gram_factor_matches_finite_differences(a in 4.01f64..13.99, b in -2.99f64..-0.11) {
        let map = QoiMap::powerlaw(0.3);
        let g = gram_factor(&map, &[a, b]).unwrap();
        let fd = map.fd_gradient(&[a, b]).unwrap();
        let fd_norm = (fd[0] * fd[0] + fd[1] * fd[1]).sqrt();
        prop_assert!((g - fd_norm).abs() / g <= 1e-5);
    }
}
