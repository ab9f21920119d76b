use super::*;
use proptest::prelude::*;

fn ctx(pairs: &[(&str, f64)], seeds: &[&str]) -> EvalContext {
    let mut c = EvalContext::new();
    for (k, v) in pairs {
        c = c.bind(k, *v);
    }
    c.with_seeds(seeds)
}

#[test]
fn parses_free_vars_in_order() {
    assert_eq!(Expr::parse("y1*y1/2").unwrap().free_vars(), ["y1"]);
    assert_eq!(Expr::parse("sin(x1) + 2").unwrap().free_vars(), ["x1"]);
    assert_eq!(Expr::parse("b*a + b^c").unwrap().free_vars(), ["b", "a", "c"]);
}

#[test]
fn syntax_error_reports_offset() {
    match Expr::parse("x1 + ") {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
        other => panic!("expected parse error, got {other:?}"),
    }
    match Expr::parse("(x1 * 2") {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, 7),
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(matches!(Expr::parse(""), Err(Error::Parse { offset: 0, .. })));
    assert!(matches!(Expr::parse("   "), Err(Error::Parse { .. })));
    assert!(matches!(Expr::parse("2 3"), Err(Error::Parse { offset: 2, .. })));
    assert!(matches!(Expr::parse("x1 $ 2"), Err(Error::Parse { offset: 3, .. })));
}

#[test]
fn unknown_function_rejected() {
    match Expr::parse("1 + foo(x1)") {
        Err(Error::UnknownFunction { name, offset }) => {
            assert_eq!(name, "foo");
            assert_eq!(offset, 4);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn precedence_and_associativity() {
    let c = ctx(&[("x", 2.0)], &[]);
    let v = |s: &str| Expr::parse(s).unwrap().eval(&c).unwrap();
    assert_eq!(v("2^3^2"), 512.0);
    assert_eq!(v("-x^2"), -4.0);
    assert_eq!(v("2^-1"), 0.5);
    assert_eq!(v("2^-x^2"), 1.0 / 16.0);
    assert_eq!(v("1 - 2 - 3"), -4.0);
    assert_eq!(v("8 / 4 / 2"), 1.0);
    assert_eq!(v("1 + 2 * 3"), 7.0);
    assert_eq!(v("--x"), 2.0);
    assert_eq!(v("1.5e1 + .5"), 15.5);
}

#[test]
fn polynomial_jet() {
    let e = Expr::parse("y1*y1/2").unwrap();
    let j = e.eval_jet(&ctx(&[("y1", 3.0)], &["y1"])).unwrap();
    assert_eq!(j.value, 4.5);
    assert_eq!(j.grad, vec![3.0]);
    assert_eq!(j.hess[(0, 0)], 1.0);
}

#[test]
fn sine_jet_at_zero() {
    let e = Expr::parse("sin(x1)").unwrap();
    let j = e.eval_jet(&ctx(&[("x1", 0.0)], &["x1"])).unwrap();
    assert_eq!(j.value, 0.0);
    assert_eq!(j.grad, vec![1.0]);
    assert_eq!(j.hess[(0, 0)], 0.0);
}

#[test]
fn exp_product_jet_matches_fd() {
    let e = Expr::parse("exp(x1*y1)").unwrap();
    let c = ctx(&[("x1", 0.7), ("y1", -1.3)], &["x1", "y1"]);
    let j = e.eval_jet(&c).unwrap();
    let names = ["x1", "y1"];
    for (i, a) in names.iter().enumerate() {
        let g = fd_derivative(&e, &c, a, 1, 1e-5).unwrap();
        assert!((j.grad[i] - g).abs() <= 1e-6, "grad {a}");
        for (k, b) in names.iter().enumerate() {
            let h = fd_mixed(&e, &c, a, b, 1e-4).unwrap();
            assert!((j.hess[(i, k)] - h).abs() <= 1e-6, "hess {a}{b}");
        }
    }
}

#[test]
fn fd_oracle_examples() {
    let cube = Expr::parse("x1^3").unwrap();
    let c = ctx(&[("x1", 2.0)], &[]);
    assert!((fd_derivative(&cube, &c, "x1", 1, 1e-5).unwrap() - 12.0).abs() < 1e-8);
    assert!((fd_derivative(&cube, &c, "x1", 2, 1e-4).unwrap() - 12.0).abs() < 1e-5);
    let cos = Expr::parse("cos(x1)").unwrap();
    let c0 = ctx(&[("x1", 0.0)], &[]);
    assert!((fd_derivative(&cos, &c0, "x1", 2, 1e-4).unwrap() + 1.0).abs() < 1e-6);
    assert!(fd_derivative(&cos, &c0, "x1", 3, 1e-4).is_err());
    assert!(fd_derivative(&cos, &c0, "x1", 1, 0.0).is_err());
}

#[test]
fn domain_errors_are_hard() {
    let check = |s: &str, x: f64| {
        let e = Expr::parse(s).unwrap();
        let c = ctx(&[("x", x)], &["x"]);
        let r = e.eval_jet(&c);
        assert!(matches!(r, Err(Error::Domain { .. })), "{s} at {x}: {r:?}");
    };
    check("log(x)", 0.0);
    check("log(x)", -1.0);
    check("1/x", 0.0);
    check("sqrt(x)", -1.0);
    check("sqrt(x)", 0.0);
    check("x^-1", 0.0);
    check("x^0.5", -2.0);
    check("2^x * x^x", -1.0);
    match Expr::parse("1 + log(x - 1)").unwrap().eval(&ctx(&[("x", 1.0)], &[])) {
        Err(Error::Domain { subexpr, .. }) => assert_eq!(subexpr, "log((x-1.0))"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn constant_sqrt_of_zero_is_fine() {
    let e = Expr::parse("sqrt(0) + x").unwrap();
    let j = e.eval_jet(&ctx(&[("x", 1.0)], &["x"])).unwrap();
    assert_eq!(j.value, 1.0);
}

#[test]
fn abs_derivative_at_kink_is_zero() {
    let e = Expr::parse("abs(x)").unwrap();
    let j = e.eval_jet(&ctx(&[("x", 0.0)], &["x"])).unwrap();
    assert_eq!(j.grad, vec![0.0]);
    let j = e.eval_jet(&ctx(&[("x", -2.0)], &["x"])).unwrap();
    assert_eq!(j.grad, vec![-1.0]);
}

#[test]
fn unbound_variable_reported() {
    let e = Expr::parse("x1 + y1").unwrap();
    assert!(matches!(e.eval(&ctx(&[("x1", 1.0)], &[])), Err(Error::UnboundVariable(v)) if v == "y1"));
    let e = Expr::parse("x1").unwrap();
    assert!(matches!(e.eval_jet(&ctx(&[("x1", 1.0)], &["q"])), Err(Error::UnboundVariable(_))));
}

#[test]
fn variable_exponent_derivative() {
    // d/dx x^x = x^x (ln x + 1)
    let e = Expr::parse("x^x").unwrap();
    let j = e.eval_jet(&ctx(&[("x", 1.5)], &["x"])).unwrap();
    let v = 1.5f64.powf(1.5);
    assert!((j.grad[0] - v * (1.5f64.ln() + 1.0)).abs() < 1e-12);
}

#[test]
fn combinators_and_substitution() {
    let a = Expr::parse("x1*y1").unwrap();
    let b = Expr::parse("y2 + x1").unwrap();
    let s = a.add(&b).mul(&Expr::constant(2.0));
    assert_eq!(s.free_vars(), ["x1", "y1", "y2"]);
    let c = ctx(&[("x1", 2.0), ("y1", 3.0), ("y2", 5.0)], &[]);
    assert_eq!(s.eval(&c).unwrap(), 26.0);

    let mut map = HashMap::new();
    map.insert("y1".to_string(), Expr::parse("z + 1").unwrap());
    let sub = a.substitute(&map);
    assert_eq!(sub.free_vars(), ["x1", "z"]);
    assert_eq!(sub.eval(&ctx(&[("x1", 2.0), ("z", 1.0)], &[])).unwrap(), 4.0);

    assert!(Expr::scaled_sum(&[(0.0, &a), (1.0, &Expr::zero())]).is_zero());
    assert_eq!(Expr::constant(-2.0).to_string(), "(-2.0)");
    assert_eq!(Expr::constant(3.0).neg().as_literal(), Some(-3.0));
}

#[test]
fn bound_expression_slots() {
    let space = VarSpace::coordinates(1, 2, &["t"]);
    let mut params = BTreeMap::new();
    params.insert("k".to_string(), 3.0);
    let e = Expr::parse("k*y2*y2 + t*x1").unwrap().bind(&space, &params).unwrap();
    let z = [2.0, 0.0, 1.5, 4.0];
    assert_eq!(e.value(&z).unwrap(), 3.0 * 2.25 + 8.0);
    let j = e.jet(&z, &[2, 3]).unwrap();
    assert_eq!(j.grad, vec![9.0, 2.0]);
    assert_eq!(j.hess[(0, 0)], 6.0);
    assert!(e.depends_on(0) && !e.depends_on(1));
    assert!(Expr::parse("q").unwrap().bind(&space, &params).is_err());
}

/// Random expressions built from smooth pieces that stay bounded on [-1, 1]^3.
fn arb_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x1".to_string()),
        Just("x2".to_string()),
        Just("y1".to_string()),
        (-2.0f64..2.0).prop_map(|v| format!("({v})")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} / (2 + sin({b})))")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(sin({a}))")),
            inner.clone().prop_map(|a| format!("log(2 + cos({a}))")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("({a})^3")),
            inner.clone().prop_map(|a| format!("(-{a})")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jets_agree_with_finite_differences(
        src in arb_expr(),
        x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, y1 in -1.0f64..1.0,
    ) {
        let e = Expr::parse(&src).unwrap();
        let names = ["x1", "x2", "y1"];
        let c = ctx(&[("x1", x1), ("x2", x2), ("y1", y1)], &names);
        let j = e.eval_jet(&c).unwrap();
        for (i, a) in names.iter().enumerate() {
            let g = fd_derivative(&e, &c, a, 1, 1e-5).unwrap();
            prop_assert!((j.grad[i] - g).abs() <= 1e-6 * (1.0 + j.grad[i].abs()), "{src}: d/d{a}");
            for (k, b) in names.iter().enumerate() {
                prop_assert_eq!(j.hess[(i, k)], j.hess[(k, i)]);
                let h = fd_mixed(&e, &c, a, b, 1e-4).unwrap();
                prop_assert!((j.hess[(i, k)] - h).abs() <= 1e-4 * (1.0 + j.hess[(i, k)].abs()), "{src}: d2/d{a}d{b}");
            }
        }
    }

    #[test]
    fn print_parse_round_trip(src in arb_expr(), x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, y1 in -1.0f64..1.0) {
        let e = Expr::parse(&src).unwrap();
        let again = Expr::parse(&e.to_string()).unwrap();
        prop_assert_eq!(again.to_string(), e.to_string());
        let c = ctx(&[("x1", x1), ("x2", x2), ("y1", y1)], &[]);
        prop_assert_eq!(e.eval(&c).unwrap(), again.eval(&c).unwrap());
    }
}
