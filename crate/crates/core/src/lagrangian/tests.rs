use super::*;
use crate::expr::{fd_derivative, fd_mixed, EvalContext};
use crate::scenarios::{canonical_tm, frame_tm, lie_algebra_so3};
use crate::trajectory::SystemState;
use std::f64::consts::PI;

const TIME_DEPENDENT: &str = "0.5*exp(0.3*t)*(1 + x1^2)*y1^2 + y1*y2*x2 + 0.25*y2^2 - cos(x1)*x2 + t*y2";

fn ctx(x: &[f64], y: &[f64], t: f64) -> EvalContext {
    let mut c = EvalContext::new().bind("t", t);
    for (i, v) in x.iter().enumerate() {
        c = c.bind(&format!("x{}", i + 1), *v);
    }
    for (i, v) in y.iter().enumerate() {
        c = c.bind(&format!("y{}", i + 1), *v);
    }
    c
}

#[test]
fn legendre_jet_matches_finite_differences() {
    let lag = Lagrangian::parse(TIME_DEPENDENT, 2, 2, &[]).unwrap();
    let (x, y, t) = ([0.4, -0.9], [1.1, 0.3], 0.7);
    let j = lag.legendre_jet(&x, &y, t).unwrap();
    let e = Expr::parse(TIME_DEPENDENT).unwrap();
    let c = ctx(&x, &y, t);
    let h = 1e-5;
    assert!((j.value - lag.value(&x, &y, t).unwrap()).abs() < 1e-15);
    for i in 0..2 {
        let yi = format!("y{}", i + 1);
        let xi = format!("x{}", i + 1);
        assert!((j.lam[i] - fd_derivative(&e, &c, &yi, 1, h).unwrap()).abs() < 1e-8);
        assert!((j.dldx[i] - fd_derivative(&e, &c, &xi, 1, h).unwrap()).abs() < 1e-8);
        assert!((j.wty[i] - fd_mixed(&e, &c, "t", &yi, 1e-4).unwrap()).abs() < 1e-6);
        for k in 0..2 {
            let yk = format!("y{}", k + 1);
            assert!((j.w[(k, i)] - fd_mixed(&e, &c, &yk, &yi, 1e-4).unwrap()).abs() < 1e-6);
            assert!((j.wxy[(k, i)] - fd_mixed(&e, &c, &format!("x{}", k + 1), &yi, 1e-4).unwrap()).abs() < 1e-6);
        }
    }
    assert!((j.dldt - fd_derivative(&e, &c, "t", 1, h).unwrap()).abs() < 1e-8);
}

/// On `TR^n`, `δL = ∂L/∂x − d/dt ∂L/∂y` with `y = ẋ`; the oracle takes the
/// time derivative of the Legendre map by differences along the curve.
#[test]
fn delta_l_on_tm_is_the_classical_euler_lagrange_expression() {
    let chart = canonical_tm(&Expr::zero(), 2).unwrap().0;
    let lag = Lagrangian::parse(TIME_DEPENDENT, 2, 2, &[]).unwrap();
    let curve = |t: f64| (vec![t.sin(), 0.5 * t * t], vec![t.cos(), t]);
    let accel = |t: f64| vec![-t.sin(), 1.0];
    let h = 1e-4;
    for &t in &[0.1, 0.8, 1.7] {
        let (x, y) = curve(t);
        let dl = delta_l(&chart, &lag, &x, &y, &accel(t), t).unwrap();
        let lam = |s: f64| {
            let (x, y) = curve(s);
            lag.legendre_jet(&x, &y, s).unwrap().lam
        };
        let (lp, lm) = (lam(t + h), lam(t - h));
        let dldx = lag.legendre_jet(&x, &y, t).unwrap().dldx;
        for i in 0..2 {
            let oracle = dldx[i] - (lp[i] - lm[i]) / (2.0 * h);
            assert!((dl[i] - oracle).abs() < 1e-6, "t = {t}, i = {i}: {} vs {oracle}", dl[i]);
        }
    }
}

/// In the frame `e1 = ∂1`, `e2 = x1 ∂1 + ∂2` the Euler–Lagrange operator is
/// the classical one pulled back by the anchor: `δL = ρᵀ(−∇V − ẍ)` for
/// `L = ½|ρy|² − V`.
#[test]
fn delta_l_in_a_moving_frame_is_the_pulled_back_newton_equation() {
    let chart = frame_tm();
    let lag = Lagrangian::parse("0.5*((y1 + x1*y2)^2 + y2^2) - (x1^2*x2 + 0.5*x2^2)", 2, 2, &[]).unwrap();
    for &t in &[0.0f64, 0.4, 1.3] {
        let x = [t.cos(), t * t];
        let xd = [-t.sin(), 2.0 * t];
        let xdd = [-t.cos(), 2.0];
        let y = [xd[0] - x[0] * xd[1], xd[1]];
        let yd = [xdd[0] - xd[0] * xd[1] - x[0] * xdd[1], xdd[1]];
        let dl = delta_l(&chart, &lag, &x, &y, &yd, t).unwrap();
        let grad_v = [2.0 * x[0] * x[1], x[0] * x[0] + x[1]];
        let f = [-grad_v[0] - xdd[0], -grad_v[1] - xdd[1]];
        let oracle = [f[0], x[0] * f[0] + f[1]];
        for i in 0..2 {
            assert!((dl[i] - oracle[i]).abs() < 1e-12, "t = {t}: {dl:?} vs {oracle:?}");
        }
    }
}

#[test]
fn delta_l_on_so3_is_the_euler_equation() {
    let inertia = [1.0, 2.0, 3.0];
    let (chart, lag) = lie_algebra_so3(inertia).unwrap();
    let w = [0.3, -1.0, 0.8];
    let wd = [0.1, 0.2, -0.5];
    let dl = delta_l(&chart, &lag, &[0.0], &w, &wd, 0.0).unwrap();
    let iw = [inertia[0] * w[0], inertia[1] * w[1], inertia[2] * w[2]];
    let cross = [iw[1] * w[2] - iw[2] * w[1], iw[2] * w[0] - iw[0] * w[2], iw[0] * w[1] - iw[1] * w[0]];
    for j in 0..3 {
        assert!((dl[j] - (cross[j] - inertia[j] * wd[j])).abs() < 1e-14);
    }
}

#[test]
fn tulczyjew_differential_on_tm() {
    let (chart, lag) = canonical_tm(&Expr::parse("0.5*x1^2").unwrap(), 1).unwrap();
    let d = tulczyjew_differential(&chart, &lag, &[2.0], &[3.0], 0.0).unwrap();
    assert_eq!(d, TangentEDualPoint { x: vec![2.0], xi: vec![3.0], xdot: vec![3.0], xidot: vec![-2.0] });
}

#[test]
fn action_of_closed_form_curves() {
    let (_, lag) = canonical_tm(&Expr::zero(), 1).unwrap();
    let n = 2000;
    let h = 2.0 * PI / n as f64;
    let g = Trajectory::sample(0.0, h, n, |t| (vec![t.cos()], vec![-t.sin()]));
    assert!((action(&lag, &g).unwrap() - PI / 2.0).abs() < 1e-12);
    let g1 = Trajectory::sample(0.0, h, 1001, |t| (vec![t], vec![2.0]));
    assert!((action(&lag, &g1).unwrap() - 2.0 * 1001.0 * h).abs() < 1e-12);
    let lone = Trajectory::sample(0.0, h, 0, |t| (vec![t], vec![0.0]));
    assert!(matches!(action(&lag, &lone), Err(Error::TooFewSamples { .. })));
}

fn oscillator_solution(h: f64, n: usize, eps: f64) -> Trajectory {
    Trajectory::sample(0.0, h, n, |t| {
        let x = t.cos() + eps * (3.0 * t).sin();
        let y = -t.sin() + 3.0 * eps * (3.0 * t).cos();
        (vec![x], vec![y])
    })
}

fn bump(t: f64, t1: f64, k: usize) -> f64 {
    (k as f64 * PI * t / t1).sin()
}

#[test]
fn dw_vanishes_on_solutions_and_flags_perturbations() {
    let (chart, lag) = canonical_tm(&Expr::parse("0.5*x1^2").unwrap(), 1).unwrap();
    let (h, n) = (1e-3, 2000);
    let t1 = h * n as f64;
    let sol = oscillator_solution(h, n, 0.0);
    let scale = |g: &Trajectory| 1.0 + g.states.iter().map(|s| s.y[0].abs() + s.x[0].abs()).fold(0.0, f64::max);
    let mut flagged = 0;
    let pert = oscillator_solution(h, n, 0.01);
    for k in 1..=20 {
        let f: Vec<Vec<f64>> = sol.times().iter().map(|&t| vec![bump(t, t1, k)]).collect();
        let d = dw_pairing(&chart, &lag, &sol, &f).unwrap();
        assert!(d.boundary.abs() < 1e-12);
        assert!(d.total.abs() <= 1e-5 * scale(&sol), "k = {k}: {d:?}");
        assert!((d.total - d.direct).abs() <= 1e-5, "k = {k}: {d:?}");
        let dp = dw_pairing(&chart, &lag, &pert, &f).unwrap();
        assert!((dp.total - dp.direct).abs() <= 1e-5, "k = {k}: {dp:?}");
        if dp.total.abs() >= 1e-2 * scale(&pert) {
            flagged += 1;
        }
    }
    assert!(flagged >= 1);
}

#[test]
fn dw_routes_agree_on_a_nonlinear_chart() {
    // Free motion on so(3): any curve is admissible; variations need not vanish at the ends.
    let (chart, lag) = lie_algebra_so3([1.0, 2.0, 3.0]).unwrap();
    let h = 1e-3;
    let g = Trajectory::sample(0.0, h, 1000, |t| (vec![0.0], vec![t.cos(), (2.0 * t).sin(), 0.5 + t]));
    let f: Vec<Vec<f64>> = g.times().iter().map(|&t| vec![t, 1.0 - t * t, (3.0 * t).cos()]).collect();
    let d = dw_pairing(&chart, &lag, &g, &f).unwrap();
    assert!(d.boundary.abs() > 0.1);
    assert!((d.total - d.direct).abs() <= 1e-5, "{d:?}");
}

#[test]
fn dw_rejects_inadmissible_curves_and_bad_grids() {
    let (chart, lag) = canonical_tm(&Expr::zero(), 1).unwrap();
    let g = Trajectory::sample(0.0, 1e-2, 100, |t| (vec![t], vec![2.0]));
    let f = vec![vec![0.0]; 101];
    assert!(matches!(dw_pairing(&chart, &lag, &g, &f), Err(Error::NotAdmissible(_))));
    assert!(matches!(dw_pairing(&chart, &lag, &g, &f[..50]), Err(Error::GridMismatch(_))));
}

#[test]
fn construction_errors() {
    assert!(matches!(Lagrangian::parse("y1^2 + q", 1, 1, &[]), Err(Error::InvalidInput(_))));
    assert!(Lagrangian::parse("y1^2 + q", 1, 1, &[("q", 2.0)]).is_ok());
    assert!(matches!(Lagrangian::parse("y1^2 +", 1, 1, &[]), Err(Error::Parse { .. })));
    let lag = Lagrangian::parse("y1^2", 1, 1, &[]).unwrap();
    assert!(matches!(lag.value(&[0.0, 1.0], &[1.0], 0.0), Err(Error::DimensionMismatch(_))));
    let (chart, _) = canonical_tm(&Expr::zero(), 2).unwrap();
    assert!(matches!(delta_l(&chart, &lag, &[0.0], &[0.0], &[0.0], 0.0), Err(Error::DimensionMismatch(_))));
    assert!(matches!(ForceField::parse(&["x1"], 1, 2, &[]), Err(Error::DimensionMismatch(_))));
    let force = ForceField::parse(&["-c*y1 + sin(t)"], 1, 1, &[("c", 0.5)]).unwrap();
    assert!((force.eval(&[0.0], &[2.0], PI / 2.0).unwrap()[0] - 0.0).abs() < 1e-15);
    let with = lag.plus(&Expr::parse("x1").unwrap()).unwrap();
    assert_eq!(with.value(&[3.0], &[1.0], 0.0).unwrap(), 4.0);
}

#[test]
fn el_parts_split_delta_l() {
    let (chart, lag) = lie_algebra_so3([1.0, 2.0, 3.0]).unwrap();
    let s = SystemState::new(0.0, vec![0.0], vec![0.2, 0.4, -0.6]);
    let p = el_parts(&chart, &lag, &s.x, &s.y, s.t).unwrap();
    let yd = [1.0, -1.0, 0.5];
    let dl = delta_l(&chart, &lag, &s.x, &s.y, &yd, s.t).unwrap();
    for j in 0..3 {
        let wy: f64 = (0..3).map(|k| p.jet.w[(j, k)] * yd[k]).sum();
        assert!((p.b[j] - wy - dl[j]).abs() < 1e-15);
    }
}
