use super::*;
use crate::dynamics::{integrate, IntegratorConfig, System};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

fn identity_metric(m: usize) -> Vec<Vec<Expr>> {
    (0..m).map(|i| (0..m).map(|j| Expr::constant(if i == j { 1.0 } else { 0.0 })).collect()).collect()
}

#[test]
fn every_builtin_builds_and_has_its_declared_class() {
    for name in BUILTIN_NAMES {
        let sc = builtin(name, &BTreeMap::new()).unwrap();
        assert_eq!(sc.name, *name);
        let pts = random_points(sc.chart.n(), 20, 1);
        let rep = sc.chart.check_axioms(&pts, 4).unwrap();
        assert_eq!(rep.class(), sc.expect, "{name}: {rep:?}");
        assert_eq!(sc.initial.x.len(), sc.chart.n());
        assert_eq!(sc.initial.y.len(), sc.chart.m());
        match &sc.constraint {
            Some(ScenarioConstraint::Geometric(c)) => {
                assert!(c.residual(&sc.initial.x, &sc.initial.y).unwrap() <= 1e-14, "{name}");
                if sc.mode == Mode::Vakonomic {
                    assert_eq!(sc.initial.mu.len(), c.k());
                }
            }
            Some(ScenarioConstraint::Affine(_)) => unreachable!("no affine builtin"),
            None => assert_eq!(sc.mode, Mode::Free),
        }
    }
}

#[test]
fn builtin_parameters_are_checked() {
    let p: BTreeMap<String, f64> = [("Omega".to_string(), 0.0), ("t1".to_string(), 1.5)].into();
    let sc = builtin("rolling_ball", &p).unwrap();
    assert_eq!(sc.t1, 1.5);
    let bad: BTreeMap<String, f64> = [("omega".to_string(), 1.0)].into();
    let err = builtin("rolling_ball", &bad).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(ref s) if s.contains("omega") && s.contains("Omega")));
    assert!(matches!(builtin("double_pendulum", &BTreeMap::new()), Err(Error::InvalidInput(_))));
    let neg: BTreeMap<String, f64> = [("m".to_string(), -1.0)].into();
    assert!(builtin("free_sphere", &neg).is_err());
    let neg: BTreeMap<String, f64> = [("I2".to_string(), 0.0)].into();
    assert!(builtin("rigid_body", &neg).is_err());
}

#[test]
fn sphere_parameters() {
    let p = SphereParams::default();
    assert_eq!((p.mass, p.radius, p.k2, p.omega), (1.0, 1.0, 2.0, 3.0));
    assert_eq!(p.alpha(), 2.0);
    let q = SphereParams { k2: 0.4, radius: 2.0, omega: 1.0, ..p };
    assert!((q.alpha() - 0.4 / 4.4).abs() < 1e-15);
    let (_, _, c) = rolling_ball(&q).unwrap();
    let s = rolling_ball_initial(&q, 0.7, -0.2, 1.0);
    assert!(c.residual(&s.x, &s.y).unwrap() <= 1e-15);
}

#[test]
fn levi_civita_symbol() {
    assert_eq!(levi_civita(0, 1, 2), 1.0);
    assert_eq!(levi_civita(1, 2, 0), 1.0);
    assert_eq!(levi_civita(2, 1, 0), -1.0);
    assert_eq!(levi_civita(0, 0, 2), 0.0);
    let s = so3_chart().structure_at(&[0.0]).unwrap();
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.c(k, i, j), levi_civita(i, j, k));
            }
        }
    }
}

#[test]
fn free_sphere_conserves_all_five_momenta() {
    let p = SphereParams::default();
    let (a, l) = free_sphere(&p).unwrap();
    let s0 = SystemState::new(0.0, vec![0.2, -0.1], vec![0.7, -0.4, 1.1, 0.3, -0.9]);
    let traj = integrate(&a, &l, None, System::Free, &s0, 10.0, &IntegratorConfig::default()).unwrap();
    let weights = [p.mass, p.mass, p.mass * p.k2, p.mass * p.k2, p.mass * p.k2];
    let mut worst: f64 = 0.0;
    for s in &traj.states {
        for i in 0..5 {
            worst = worst.max((weights[i] * (s.y[i] - s0.y[i])).abs());
        }
    }
    assert!(worst <= 1e-10, "momentum drift {worst:e}");
    let last = traj.last().unwrap();
    assert!((last.x[0] - (0.2 + 0.7 * 10.0)).abs() < 1e-10);
}

#[test]
fn projection_onto_a_non_subalgebroid_is_quasi_lie_only() {
    let a = sphere_chart();
    let frame = vec![
        SectionExpr::constant(&[1.0, 0.0, 1.0, 0.0, 0.0]),
        SectionExpr::constant(&[0.0, 0.0, 0.0, 1.0, 0.0]),
        SectionExpr::constant(&[0.0, 0.0, 0.0, 0.0, 1.0]),
    ];
    let proj = projected_algebroid(&a, &identity_metric(5), &frame).unwrap();
    assert_eq!(proj.chart.m(), 3);
    let rep = proj.chart.check_axioms(&random_points(2, 10, 2), 4).unwrap();
    assert_eq!(rep.class(), "quasi_lie", "{rep:?}");
    // [f2, f3] = P e3 = ½(e1 + e3) = f1/√2.
    let s = proj.chart.structure_at(&[0.0, 0.0]).unwrap();
    assert!((s.c(0, 1, 2) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert!(rep.anchor_hom_residual >= 0.5 - 1e-12);

    let yhat = [0.3, -1.0, 2.0];
    let y = proj.embed(&yhat);
    assert_eq!(y.len(), 5);
    assert!((y[0] - y[2]).abs() < 1e-15 && y[1] == 0.0);
    let back = proj.coordinates(&y);
    for i in 0..3 {
        assert!((back[i] - yhat[i]).abs() < 1e-15);
    }
    let (_, l) = free_sphere(&SphereParams::default()).unwrap();
    let lr = proj.restrict(&l).unwrap();
    assert!((lr.value(&[0.0, 0.0], &yhat, 0.0).unwrap() - l.value(&[0.0, 0.0], &y, 0.0).unwrap()).abs() < 1e-14);
}

#[test]
fn projection_onto_the_whole_bundle_is_the_identity() {
    let a = frame_tm();
    let g = vec![vec![Expr::constant(2.0), Expr::constant(0.5)], vec![Expr::constant(0.5), Expr::constant(1.0)]];
    // A g-orthonormal frame keeps the structure up to the change of basis; with
    // the identity metric and the standard basis it is literally unchanged.
    let std = vec![SectionExpr::constant(&[1.0, 0.0]), SectionExpr::constant(&[0.0, 1.0])];
    let same = projected_algebroid(&a, &identity_metric(2), &std).unwrap();
    for x in random_points(2, 20, 3) {
        assert_eq!(same.chart.structure_at(&x).unwrap(), a.structure_at(&x).unwrap());
    }
    let other = projected_algebroid(&a, &g, &std).unwrap();
    let rep = other.chart.check_axioms(&random_points(2, 10, 4), 4).unwrap();
    assert!(rep.is_lie, "a full-rank projection is only a change of basis: {rep:?}");
}

#[test]
fn projection_input_errors() {
    let a = so3_chart();
    let e1 = SectionExpr::constant(&[1.0, 0.0, 0.0]);
    let bad_metric = vec![vec![Expr::parse("x1").unwrap(); 3]; 3];
    assert!(matches!(projected_algebroid(&a, &bad_metric, std::slice::from_ref(&e1)), Err(Error::InvalidInput(_))));
    let indefinite = (0..3)
        .map(|i| (0..3).map(|j| Expr::constant(if i == j { if i == 0 { -1.0 } else { 1.0 } } else { 0.0 })).collect())
        .collect::<Vec<_>>();
    assert!(matches!(projected_algebroid(&a, &indefinite, std::slice::from_ref(&e1)), Err(Error::InvalidInput(_))));
    let dep = vec![e1.clone(), SectionExpr::constant(&[2.0, 0.0, 0.0])];
    assert!(matches!(projected_algebroid(&a, &identity_metric(3), &dep), Err(Error::FrameDegenerate(_))));
    assert!(matches!(projected_algebroid(&a, &identity_metric(3), &[]), Err(Error::InvalidInput(_))));
    let varying = vec![SectionExpr::parse(&["x1", "0", "0"]).unwrap()];
    assert!(matches!(projected_algebroid(&a, &identity_metric(3), &varying), Err(Error::InvalidInput(_))));
    assert!(matches!(projected_algebroid(&a, &identity_metric(2), &[e1]), Err(Error::DimensionMismatch(_))));
}

#[test]
fn constructor_errors() {
    assert!(matches!(canonical_tm(&Expr::parse("y1").unwrap(), 1), Err(Error::InvalidInput(_))));
    assert!(matches!(lie_algebra_so3([1.0, -2.0, 3.0]), Err(Error::InvalidInput(_))));
    let (tr, _) = canonical_tm(&Expr::zero(), 1).unwrap();
    assert!(matches!(pontryagin_control(&tr, 1, &[], &Expr::zero()), Err(Error::DimensionMismatch(_))));
    assert!(matches!(pontryagin_control(&tr, 0, &[Expr::zero()], &Expr::zero()), Err(Error::DimensionMismatch(_))));
    assert!(matches!(
        pontryagin_control(&tr, 1, &[Expr::parse("u2").unwrap()], &Expr::zero()),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn control_chart_layout() {
    let (tr, _) = canonical_tm(&Expr::zero(), 1).unwrap();
    let (chart, lag, c) =
        pontryagin_control(&tr, 1, &[Expr::parse("x1 + u1").unwrap()], &Expr::parse("0.5*u1^2 + x1^2").unwrap()).unwrap();
    assert_eq!((chart.n(), chart.m()), (2, 2));
    let s = chart.structure_at(&[0.3, 0.1]).unwrap();
    assert_eq!(s.rho, nalgebra::DMatrix::identity(2, 2));
    assert_eq!(lag.value(&[2.0, 3.0], &[9.0, 9.0], 0.0).unwrap(), 4.5 + 4.0);
    assert_eq!(c.eval(&[2.0, 3.0], &[5.0, 0.0]).unwrap(), vec![0.0]);
}

#[test]
fn perturbed_and_sheared_charts() {
    let s = perturbed_so3(0.25).structure_at(&[0.0]).unwrap();
    assert_eq!(s.c(0, 0, 1), 0.25);
    assert_eq!(s.c(0, 1, 0), -0.25);
    assert_eq!(s.c(2, 0, 1), 1.0);
    let s = sigma_ne_rho(0.5).structure_at(&[0.0, 0.0]).unwrap();
    assert_eq!(s.sigma[(0, 1)], 0.5);
    assert_eq!(s.rho[(0, 1)], 0.0);
    let s = frame_tm().structure_at(&[3.0, 0.0]).unwrap();
    assert_eq!(s.rho[(0, 1)], 3.0);
    assert_eq!(s.bracket(&[1.0, 0.0], &[0.0, 1.0]), vec![1.0, 0.0]);
}
