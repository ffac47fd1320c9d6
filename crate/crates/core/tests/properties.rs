use metrise3d_core::expr::Expr;
use metrise3d_core::fixtures;
use metrise3d_core::projective::{projective_change, ConnectionSpec};
use metrise3d_core::solver::{decide, Gauge, Options, Verdict};
use metrise3d_core::tensor::{Epsilon, Sym2Contra, Tensor3Mixed};
use proptest::prelude::*;

fn metric_at(spec: &ConnectionSpec, p: [f64; 3], options: &Options) -> [f64; 6] {
    let d = decide(spec, p, options).unwrap();
    match d.verdict {
        Verdict::Metrisable { solution, .. } => solution.metric[0].g,
        other => panic!("expected Metrisable at {p:?}, got {}", other.name()),
    }
}

fn assert_proportional(a: &[f64; 6], b: &[f64; 6], tol: f64) {
    let k = a[0] / b[0];
    for i in 0..6 {
        assert_close(a[i], k * b[i], tol * a[0].abs());
    }
}

fn assert_close(x: f64, y: f64, tol: f64) {
    assert!((x - y).abs() <= tol, "{x} vs {y}");
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [0.6f64..1.4, 0.6f64..1.4, 0.6f64..1.4]
}

fn sym() -> impl Strategy<Value = Sym2Contra<f64>> {
    proptest::array::uniform6(-1.0f64..1.0).prop_map(Sym2Contra)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn metric_is_gauge_invariant(p in point(), a in 0.1f64..2.0, b in 0.1f64..2.0) {
        let spec = fixtures::example_connection();
        let plain = metric_at(&spec, p, &Options::default());
        let gauge = Gauge {
            rho: format!("1 + {a}*x^2").parse::<Expr>().unwrap(),
            sigma: format!("{b} + y^2").parse::<Expr>().unwrap(),
        };
        let gauged = metric_at(&spec, p, &Options { gauge: Some(gauge), ..Options::default() });
        assert_proportional(&plain, &gauged, 1e-8);
    }

    #[test]
    fn verdict_is_projectively_invariant(p in point(), u in proptest::array::uniform3(-1.0f64..1.0)) {
        let spec = fixtures::example_connection();
        let upsilon = [
            format!("{}*x*y", u[0]),
            format!("{}*sin(z)", u[1]),
            format!("{}*exp(x)", u[2]),
        ]
        .map(|s| s.parse::<Expr>().unwrap());
        let changed = ConnectionSpec::new(
            projective_change(spec.gamma(), &upsilon),
            Some(spec.epsilon().clone()),
        )
        .unwrap();
        let a = metric_at(&spec, p, &Options::default());
        let b = metric_at(&changed, p, &Options::default());
        assert_proportional(&a, &b, 1e-8);
    }

    #[test]
    fn metric_matches_closed_form(p in point()) {
        let spec = fixtures::example_connection();
        let g = metric_at(&spec, p, &Options::default());
        let want = fixtures::printed_metric().map(|e| e.eval(p).unwrap());
        assert_eq!([g[1], g[2], g[4]].map(|x| x.abs() < 1e-9 * g[3].abs()), [true; 3]);
        for i in [0, 3, 5] {
            assert_close(g[i] / g[3], want[i] / want[3], 1e-8 * want[i] / want[3]);
        }
    }

    #[test]
    fn decision_is_deterministic(p in point()) {
        let spec = fixtures::example_connection();
        let a = decide(&spec, p, &Options::default()).unwrap();
        let b = decide(&spec, p, &Options::default()).unwrap();
        prop_assert_eq!(a.diagnostics, b.diagnostics);
    }
}

proptest! {
    #[test]
    fn wedge_is_antisymmetric_and_simple(r in sym(), s in sym(), e in 0.5f64..2.0) {
        let eps = Epsilon::new(e);
        let v = Tensor3Mixed::wedge(&r, &s, &eps);
        let w = Tensor3Mixed::wedge(&s, &r, &eps);
        prop_assert!((v + w).max_abs_value() <= 1e-14 * v.max_abs_value().max(1.0));
        prop_assert!(v.plucker_square(&eps).max_abs_value() <= 1e-12 * e * v.max_abs_value().powi(2).max(1e-300));
    }

    #[test]
    fn wedge_only_sees_the_span(r in sym(), s in sym(), m in proptest::array::uniform4(-2.0f64..2.0)) {
        let det = m[0] * m[3] - m[1] * m[2];
        prop_assume!(det.abs() > 0.1);
        let eps = Epsilon::new(1.0);
        let r2 = r.scale_by(m[0]) + s.scale_by(m[1]);
        let s2 = r.scale_by(m[2]) + s.scale_by(m[3]);
        let v = Tensor3Mixed::wedge(&r, &s, &eps).scale_by(det);
        let v2 = Tensor3Mixed::wedge(&r2, &s2, &eps);
        prop_assert!((v - v2).max_abs_value() <= 1e-12 * v.max_abs_value().max(1.0));
    }
}
