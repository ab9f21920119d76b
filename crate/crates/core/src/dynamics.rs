//! Time integration of the Euler–Lagrange equations, free or constrained.
//!
//! The scheme is classical RK4 on the uniform grid `t0 + k h`. After each
//! step the algebraic parts of the state (nonholonomic multipliers,
//! degenerate vakonomic velocities) are re-solved at the new sample, the
//! constraint drift is checked and, if configured, the fiber point is
//! projected back onto the constraint set.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::algebroid::AlgebroidChart;
use crate::constraints::{
    affine_reduced_rhs, consistency_project, nonholonomic_rhs, vakonomic_identity_residual, vakonomic_rhs,
    AffineConstraint, GeometricConstraint,
};
use crate::error::{Error, Result};
use crate::lagrangian::{delta_l, el_parts, ForceField, Lagrangian};
use crate::linalg::{max_abs, solve_with_cond};
use crate::trajectory::{differentiate, SampleDiagnostics, SystemState, Trajectory};

/// Step size and safety thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub h: f64,
    /// Largest accepted condition estimate of any linear solve.
    pub cond_max: f64,
    /// Largest accepted `max |Φ|` at a sample.
    pub drift_tol: f64,
    /// Project onto the constraint set every this many steps (0 = never).
    pub project_every: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { h: 1e-3, cond_max: 1e8, drift_tol: 1e-6, project_every: 0 }
    }
}

/// Kind of dynamics, as named in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Free,
    Nonholonomic,
    Vakonomic,
    AffineReduced,
}

/// Dynamics to integrate, with the constraint data it needs.
#[derive(Clone, Copy, Debug)]
pub enum System<'a> {
    Free,
    Nonholonomic(&'a GeometricConstraint),
    Vakonomic(&'a GeometricConstraint),
    AffineReduced(&'a AffineConstraint),
}

impl System<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            System::Free => Mode::Free,
            System::Nonholonomic(_) => Mode::Nonholonomic,
            System::Vakonomic(_) => Mode::Vakonomic,
            System::AffineReduced(_) => Mode::AffineReduced,
        }
    }
}

/// Solution of `W ẏ = b − η`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElRhs {
    pub xdot: Vec<f64>,
    pub ydot: Vec<f64>,
    pub cond: f64,
}

/// Free (or forced) Euler–Lagrange right-hand side.
pub fn el_rhs(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    s: &SystemState,
    cond_max: f64,
) -> Result<ElRhs> {
    let p = el_parts(a, lag, &s.x, &s.y, s.t)?;
    let mut rhs = p.b.clone();
    if let Some(f) = force {
        rhs -= DVector::from_vec(f.eval(&s.x, &s.y, s.t)?);
    }
    let (ydot, cond) = solve_with_cond(&p.jet.w, &rhs).ok_or(Error::SingularLagrangian { t: s.t, cond: f64::INFINITY })?;
    if cond > cond_max {
        return Err(Error::SingularLagrangian { t: s.t, cond });
    }
    Ok(ElRhs { xdot: p.xdot, ydot: ydot.as_slice().to_vec(), cond })
}

/// One evaluation of the vector field.
struct Eval {
    xdot: Vec<f64>,
    ydot: Vec<f64>,
    /// Derivative of integrated multipliers (vakonomic only).
    mudot: Vec<f64>,
    /// Algebraic multipliers (nonholonomic only).
    mu: Option<Vec<f64>>,
    y_fixed: Vec<(usize, f64)>,
    cond: f64,
}

struct Integrand<'a> {
    a: &'a AlgebroidChart,
    lag: &'a Lagrangian,
    force: Option<&'a ForceField>,
    sys: System<'a>,
    cfg: IntegratorConfig,
}

impl Integrand<'_> {
    fn eval(&self, s: &SystemState) -> Result<Eval> {
        let (a, lag, force, cm) = (self.a, self.lag, self.force, self.cfg.cond_max);
        Ok(match self.sys {
            System::Free => {
                let r = el_rhs(a, lag, force, s, cm)?;
                Eval { xdot: r.xdot, ydot: r.ydot, mudot: Vec::new(), mu: None, y_fixed: Vec::new(), cond: r.cond }
            }
            System::Nonholonomic(c) => {
                let r = nonholonomic_rhs(a, lag, force, c, s, cm)?;
                Eval { xdot: r.xdot, ydot: r.ydot, mudot: Vec::new(), mu: Some(r.mu), y_fixed: Vec::new(), cond: r.cond }
            }
            System::Vakonomic(c) => {
                let r = vakonomic_rhs(a, lag, force, c, s, cm)?;
                Eval { xdot: r.xdot, ydot: r.ydot, mudot: r.mudot, mu: None, y_fixed: r.y_fixed, cond: r.cond }
            }
            System::AffineReduced(aff) => {
                let r = affine_reduced_rhs(a, lag, force, aff, s, cm)?;
                Eval { xdot: r.xdot, ydot: r.ydot, mudot: Vec::new(), mu: None, y_fixed: Vec::new(), cond: r.cond }
            }
        })
    }

    fn constraint(&self) -> Option<&GeometricConstraint> {
        match self.sys {
            System::Nonholonomic(c) | System::Vakonomic(c) => Some(c),
            _ => None,
        }
    }

    /// Re-solve algebraic state parts at a sample and return the field there.
    fn settle(&self, s: &mut SystemState) -> Result<Eval> {
        let ev = self.eval(s)?;
        for &(d, v) in &ev.y_fixed {
            s.y[d] = v;
        }
        if let Some(mu) = &ev.mu {
            s.mu = mu.clone();
        }
        Ok(ev)
    }

    fn stage(&self, s: &SystemState, k: &Eval, c: f64, t: f64) -> SystemState {
        let axpy = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a + c * b).collect::<Vec<_>>();
        let mu = if k.mudot.is_empty() { s.mu.clone() } else { axpy(&s.mu, &k.mudot) };
        SystemState { t, x: axpy(&s.x, &k.xdot), y: axpy(&s.y, &k.ydot), mu }
    }

    /// Relative residual of the defining identity with solver velocities.
    fn solve_residual(&self, s: &SystemState, ev: &Eval) -> Result<f64> {
        match self.sys {
            System::Free => {
                let dl = delta_l(self.a, self.lag, &s.x, &s.y, &ev.ydot, s.t)?;
                let eta = self.eta(s)?;
                let p = el_parts(self.a, self.lag, &s.x, &s.y, s.t)?;
                let scale = 1.0 + p.b.amax();
                Ok(dl.iter().zip(&eta).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max) / scale)
            }
            System::Nonholonomic(c) => {
                let dl = delta_l(self.a, self.lag, &s.x, &s.y, &ev.ydot, s.t)?;
                let eta = self.eta(s)?;
                let (_, phi_y) = c.jacobian(&s.x, &s.y)?;
                let react = phi_y.transpose() * DVector::from_column_slice(&s.mu);
                let p = el_parts(self.a, self.lag, &s.x, &s.y, s.t)?;
                let scale = 1.0 + p.b.amax() + react.amax();
                let mut worst: f64 = 0.0;
                for j in 0..dl.len() {
                    worst = worst.max((dl[j] - eta[j] + react[j]).abs());
                }
                Ok(worst / scale)
            }
            System::Vakonomic(c) => {
                let (res, scale) = vakonomic_identity_residual(self.a, self.lag, self.force, c, s, &ev.ydot, &ev.mudot)?;
                Ok(res / (1.0 + scale))
            }
            System::AffineReduced(_) => Ok(0.0),
        }
    }

    fn eta(&self, s: &SystemState) -> Result<Vec<f64>> {
        match self.force {
            Some(f) => f.eval(&s.x, &s.y, s.t),
            None => Ok(vec![0.0; self.a.m()]),
        }
    }
}

/// Number of steps of size `h` covering `[t0, t1]`; the interval must be an
/// integer multiple of `h`.
pub fn step_count(t0: f64, t1: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("step size must be positive, got {h}")));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidInput(format!("end time {t1} must exceed start time {t0}")));
    }
    let ratio = (t1 - t0) / h;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::GridMismatch(format!("interval {} is not an integer multiple of h = {h}", t1 - t0)));
    }
    Ok(steps as usize)
}

/// Integrate from `s0` to `t1`.
///
/// For nonholonomic systems the multipliers in `s0` are ignored and
/// recomputed; for vakonomic systems they are initial data (an empty vector
/// means zero). Affine-reduced states carry reduced fiber coordinates.
pub fn integrate(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    sys: System<'_>,
    s0: &SystemState,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let steps = step_count(s0.t, t1, cfg.h)?;
    let (n, m) = (a.n(), a.m());
    let fiber = match sys {
        System::AffineReduced(aff) => aff.r(),
        _ => m,
    };
    if s0.x.len() != n || s0.y.len() != fiber {
        return Err(Error::DimensionMismatch(format!(
            "initial state has ({}, {}) coordinates, expected ({n}, {fiber})",
            s0.x.len(),
            s0.y.len()
        )));
    }
    if !s0.is_finite() {
        return Err(Error::NonFiniteState(s0.t));
    }
    let ig = Integrand { a, lag, force, sys, cfg: *cfg };
    let mut s = s0.clone();
    match sys {
        System::Nonholonomic(c) => s.mu = vec![0.0; c.k()],
        System::Vakonomic(c) => {
            if s.mu.is_empty() {
                s.mu = vec![0.0; c.k()];
            } else if s.mu.len() != c.k() {
                return Err(Error::DimensionMismatch(format!("{} initial multipliers for {} constraints", s.mu.len(), c.k())));
            }
        }
        _ => s.mu.clear(),
    }
    if let Some(c) = ig.constraint() {
        let drift = c.residual(&s.x, &s.y)?;
        if drift > cfg.drift_tol {
            return Err(Error::ConstraintDrift { t: s.t, residual: drift });
        }
    }

    let t0 = s0.t;
    let h = cfg.h;
    let mut k1 = ig.settle(&mut s).map_err(|e| e.at_time(t0))?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut diags = Vec::with_capacity(steps + 1);
    let record = |s: &SystemState, ev: &Eval, diags: &mut Vec<SampleDiagnostics>| -> Result<()> {
        let constraint_residual = match ig.constraint() {
            Some(c) => c.residual(&s.x, &s.y)?,
            None => 0.0,
        };
        diags.push(SampleDiagnostics {
            constraint_residual,
            hessian_cond: ev.cond,
            delta_l_residual: 0.0,
            solve_residual: ig.solve_residual(s, ev)?,
        });
        Ok(())
    };
    record(&s, &k1, &mut diags)?;
    states.push(s.clone());

    for step in 0..steps {
        let t = t0 + step as f64 * h;
        let th = t + 0.5 * h;
        let tn = t0 + (step + 1) as f64 * h;
        let stage_eval = |st: SystemState| -> Result<Eval> {
            if !st.is_finite() {
                return Err(Error::NonFiniteState(st.t));
            }
            ig.eval(&st).map_err(|e| e.at_time(st.t))
        };
        let k2 = stage_eval(ig.stage(&s, &k1, 0.5 * h, th))?;
        let k3 = stage_eval(ig.stage(&s, &k2, 0.5 * h, th))?;
        let k4 = stage_eval(ig.stage(&s, &k3, h, tn))?;
        let comb = |f: fn(&Eval) -> &Vec<f64>, base: &[f64]| -> Vec<f64> {
            if f(&k1).is_empty() {
                return base.to_vec();
            }
            (0..base.len())
                .map(|i| base[i] + h / 6.0 * (f(&k1)[i] + 2.0 * f(&k2)[i] + 2.0 * f(&k3)[i] + f(&k4)[i]))
                .collect()
        };
        let mut next = SystemState {
            t: tn,
            x: comb(|e| &e.xdot, &s.x),
            y: comb(|e| &e.ydot, &s.y),
            mu: comb(|e| &e.mudot, &s.mu),
        };
        if !next.is_finite() {
            return Err(Error::NonFiniteState(tn));
        }
        if let Some(c) = ig.constraint() {
            if cfg.project_every > 0 && (step + 1) % cfg.project_every == 0 {
                next.y = consistency_project(c, &next.x, &next.y).map_err(|e| e.at_time(tn))?;
            }
            let drift = c.residual(&next.x, &next.y)?;
            if drift > cfg.drift_tol {
                return Err(Error::ConstraintDrift { t: tn, residual: drift });
            }
        }
        k1 = ig.settle(&mut next).map_err(|e| e.at_time(tn))?;
        if !next.is_finite() {
            return Err(Error::NonFiniteState(tn));
        }
        record(&next, &k1, &mut diags)?;
        states.push(next.clone());
        s = next;
    }

    let mut traj = Trajectory { h, states, diagnostics: diags };
    let post = delta_l_diagnostics(a, lag, force, sys, &traj)?;
    for (d, v) in traj.diagnostics.iter_mut().zip(post) {
        d.delta_l_residual = v;
    }
    Ok(traj)
}

/// Post-hoc per-sample equation residual with finite-difference velocities:
/// `|δL − η|` (free), `|δL − η + Φ_yᵀμ|` (nonholonomic), the assembled
/// vakonomic identity (vakonomic) and `|Eᵀ(δL − η)|` at the embedded point
/// (affine-reduced).
pub fn delta_l_diagnostics(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    sys: System<'_>,
    traj: &Trajectory,
) -> Result<Vec<f64>> {
    if traj.len() < 2 {
        return Ok(vec![0.0; traj.len()]);
    }
    let eta = |x: &[f64], y: &[f64], t: f64| -> Result<Vec<f64>> {
        match force {
            Some(f) => f.eval(x, y, t),
            None => Ok(vec![0.0; a.m()]),
        }
    };
    let sub = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p - q).collect::<Vec<_>>();
    match sys {
        System::AffineReduced(aff) => {
            let full = embed_states(aff, traj)?;
            let ydot = differentiate(&full.ys(), traj.h)?;
            full.states
                .iter()
                .zip(&ydot)
                .map(|(s, yd)| {
                    let dl = delta_l(a, lag, &s.x, &s.y, yd, s.t)?;
                    let v = DVector::from_vec(sub(&dl, &eta(&s.x, &s.y, s.t)?));
                    let (_, e) = aff.eval(&s.x)?;
                    Ok((e.transpose() * v).amax())
                })
                .collect()
        }
        _ => {
            let ydot = differentiate(&traj.ys(), traj.h)?;
            let mudot = if matches!(sys, System::Vakonomic(_)) { differentiate(&traj.mus(), traj.h)? } else { Vec::new() };
            traj.states
                .iter()
                .enumerate()
                .map(|(k, s)| match sys {
                    System::Vakonomic(c) => Ok(vakonomic_identity_residual(a, lag, force, c, s, &ydot[k], &mudot[k])?.0),
                    System::Nonholonomic(c) => {
                        let dl = delta_l(a, lag, &s.x, &s.y, &ydot[k], s.t)?;
                        let (_, phi_y) = c.jacobian(&s.x, &s.y)?;
                        let react = phi_y.transpose() * DVector::from_column_slice(&s.mu);
                        let v = DVector::from_vec(sub(&dl, &eta(&s.x, &s.y, s.t)?)) + react;
                        Ok(v.amax())
                    }
                    _ => {
                        let dl = delta_l(a, lag, &s.x, &s.y, &ydot[k], s.t)?;
                        Ok(max_abs(&sub(&dl, &eta(&s.x, &s.y, s.t)?)))
                    }
                })
                .collect()
        }
    }
}

/// Replace reduced fiber coordinates by the embedded points `e0 + y^a E_a`.
pub fn embed_states(aff: &AffineConstraint, traj: &Trajectory) -> Result<Trajectory> {
    let mut out = traj.clone();
    for s in &mut out.states {
        s.y = aff.embed(&s.x, &s.y)?;
    }
    Ok(out)
}

/// Tangency defect of the admissible variation generated by `f` along `γ`:
/// per sample,
/// `ḟ^j (σ−ρ)^b_j + f^j y^i (∂_aσ^b_j ρ^a_i − ∂_aρ^b_i σ^a_j − c^k_{ij} ρ^b_k)`.
/// It vanishes identically when `ρ = σ` and the anchor is a bracket
/// homomorphism, i.e. then the variations stay tangent to admissible curves.
pub fn theorem3_tangency_residual(a: &AlgebroidChart, gamma: &Trajectory, f: &[Vec<f64>]) -> Result<f64> {
    Ok(theorem3_tangency_profile(a, gamma, f)?.iter().map(|v| max_abs(v)).fold(0.0, f64::max))
}

/// Per-sample tangency defect vectors (length n) behind
/// [`theorem3_tangency_residual`].
pub fn theorem3_tangency_profile(a: &AlgebroidChart, gamma: &Trajectory, f: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if f.len() != gamma.len() {
        return Err(Error::GridMismatch(format!("{} variation samples for {} curve samples", f.len(), gamma.len())));
    }
    gamma.check_grid()?;
    let fdot = differentiate(f, gamma.h)?;
    let (n, m) = (a.n(), a.m());
    let mut out = Vec::with_capacity(gamma.len());
    for (k, s) in gamma.states.iter().enumerate() {
        let d = a.structure_derivs_at(&s.x)?;
        let st = &d.value;
        let mut defect = vec![0.0; n];
        for b in 0..n {
            let mut v = 0.0;
            for j in 0..m {
                v += fdot[k][j] * (st.sigma[(b, j)] - st.rho[(b, j)]);
                if f[k][j] == 0.0 {
                    continue;
                }
                for i in 0..m {
                    let yi = s.y[i];
                    if yi == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for aa in 0..n {
                        inner += d.d_sigma[aa][(b, j)] * st.rho[(aa, i)] - d.d_rho[aa][(b, i)] * st.sigma[(aa, j)];
                    }
                    for kk in 0..m {
                        inner -= st.c(kk, i, j) * st.rho[(b, kk)];
                    }
                    v += f[k][j] * yi * inner;
                }
            }
            defect[b] = v;
        }
        out.push(defect);
    }
    Ok(out)
}
