//! Constrained dynamics: vakonomic (multipliers evolve), nonholonomic
//! (Chetaev reaction forces), and affine-subbundle reduction, together with
//! the residual checks that certify each solution type.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebroid::{bracket_from_jets, AlgebroidChart, CotangentEPoint, SectionExpr, TOL_AXIOM};
use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expr, VarSpace};
use crate::lagrangian::{el_parts, ForceField, Lagrangian};
use crate::linalg::{max_abs, min_norm_solve, orthogonal_remainder, rank, solve_with_cond};
use crate::trajectory::{differentiate, SystemState, Trajectory};

/// Level-set constraint `Φ^k(x, y) = 0`, `k = 1..K`, `1 ≤ K ≤ m`.
#[derive(Clone, Debug)]
pub struct GeometricConstraint {
    phi: Vec<Expr>,
    bound: Vec<BoundExpr>,
    n: usize,
    m: usize,
}

/// First and second derivatives of one constraint function.
#[derive(Clone, Debug)]
pub struct ConstraintJet {
    pub value: f64,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    /// m×m
    pub dyy: DMatrix<f64>,
    /// n×m
    pub dxy: DMatrix<f64>,
}

impl GeometricConstraint {
    pub fn new(phi: Vec<Expr>, n: usize, m: usize, params: &BTreeMap<String, f64>) -> Result<Self> {
        if phi.is_empty() || phi.len() > m {
            return Err(Error::InvalidInput(format!("need 1 ≤ K ≤ m constraints, got K = {} with m = {m}", phi.len())));
        }
        let space = VarSpace::coordinates(n, m, &[]);
        let bound = phi
            .iter()
            .map(|e| {
                e.bind(&space, params).map_err(|err| match err {
                    Error::UnboundVariable(v) => Error::InvalidInput(format!("constraint `{e}` mentions unknown `{v}`")),
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        Ok(GeometricConstraint { phi, bound, n, m })
    }

    pub fn parse(srcs: &[&str], n: usize, m: usize, params: &[(&str, f64)]) -> Result<Self> {
        let params: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self::new(srcs.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()?, n, m, &params)
    }

    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.phi
    }

    fn point(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n || y.len() != self.m {
            return Err(Error::DimensionMismatch("constraint evaluated at a point of the wrong shape".into()));
        }
        let mut z = x.to_vec();
        z.extend_from_slice(y);
        Ok(z)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let z = self.point(x, y)?;
        self.bound.iter().map(|b| b.value(&z)).collect()
    }

    pub fn residual(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(max_abs(&self.eval(x, y)?))
    }

    /// `(Φ_x, Φ_y)` as K×n and K×m matrices.
    pub fn jacobian(&self, x: &[f64], y: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let z = self.point(x, y)?;
        let seeds: Vec<usize> = (0..self.n + self.m).collect();
        let k = self.k();
        let mut jx = DMatrix::zeros(k, self.n);
        let mut jy = DMatrix::zeros(k, self.m);
        for (r, b) in self.bound.iter().enumerate() {
            let (_, g) = b.gradient(&z, &seeds)?;
            for a in 0..self.n {
                jx[(r, a)] = g[a];
            }
            for i in 0..self.m {
                jy[(r, i)] = g[self.n + i];
            }
        }
        Ok((jx, jy))
    }

    pub fn jets(&self, x: &[f64], y: &[f64]) -> Result<Vec<ConstraintJet>> {
        let z = self.point(x, y)?;
        let (n, m) = (self.n, self.m);
        let seeds: Vec<usize> = (0..n + m).collect();
        self.bound
            .iter()
            .map(|b| {
                let j = b.jet(&z, &seeds)?;
                Ok(ConstraintJet {
                    value: j.value,
                    dx: j.grad[..n].to_vec(),
                    dy: j.grad[n..].to_vec(),
                    dyy: j.hess.view((n, n), (m, m)).into_owned(),
                    dxy: j.hess.view((0, n), (n, m)).into_owned(),
                })
            })
            .collect()
    }
}

/// Affine subbundle `A = e0 + span{E_1..E_r}` over the whole base.
#[derive(Clone, Debug)]
pub struct AffineConstraint {
    e0: SectionExpr,
    basis: Vec<SectionExpr>,
    n: usize,
    m: usize,
}

/// Outcome of [`is_holonomic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolonomicityReport {
    pub max_offspan_residual: f64,
    pub is_holonomic: bool,
    pub samples: usize,
}

impl AffineConstraint {
    pub fn new(e0: Vec<Expr>, basis: Vec<Vec<Expr>>, n: usize, m: usize, params: &BTreeMap<String, f64>) -> Result<Self> {
        let r = basis.len();
        if r == 0 || r >= m {
            return Err(Error::InvalidInput(format!("affine constraint needs 1 ≤ r < m, got r = {r}, m = {m}")));
        }
        if e0.len() != m || basis.iter().any(|b| b.len() != m) {
            return Err(Error::DimensionMismatch(format!("affine constraint sections must have {m} components")));
        }
        let space = VarSpace::coordinates(n, 0, &[]);
        let sub = |v: Vec<Expr>| -> Result<SectionExpr> {
            let comps: Vec<Expr> = v.into_iter().map(|e| e.substitute_values(params)).collect();
            for e in &comps {
                e.bind(&space, &BTreeMap::new()).map_err(|err| match err {
                    Error::UnboundVariable(v) => {
                        Error::InvalidInput(format!("affine section entry `{e}` depends on `{v}`, expected only x1..x{n}"))
                    }
                    other => other,
                })?;
            }
            Ok(SectionExpr::new(comps))
        };
        Ok(AffineConstraint { e0: sub(e0)?, basis: basis.into_iter().map(sub).collect::<Result<_>>()?, n, m })
    }

    pub fn parse(e0: &[&str], basis: &[Vec<&str>], n: usize, m: usize) -> Result<Self> {
        let p = |v: &[&str]| v.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>();
        Self::new(p(e0)?, basis.iter().map(|b| p(b)).collect::<Result<_>>()?, n, m, &BTreeMap::new())
    }

    pub fn r(&self) -> usize {
        self.basis.len()
    }

    pub fn e0(&self) -> &SectionExpr {
        &self.e0
    }

    pub fn basis(&self) -> &[SectionExpr] {
        &self.basis
    }

    fn eval_section(s: &SectionExpr, x: &[f64]) -> Result<Vec<f64>> {
        let space = VarSpace::coordinates(x.len(), 0, &[]);
        s.components.iter().map(|e| e.bind(&space, &BTreeMap::new())?.value(x)).collect()
    }

    /// `(e0(x), E(x))` with `E` as an m×r matrix whose columns are the basis.
    pub fn eval(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch("affine constraint evaluated at a base point of the wrong size".into()));
        }
        let e0 = Self::eval_section(&self.e0, x)?;
        let mut e = DMatrix::zeros(self.m, self.r());
        for (c, b) in self.basis.iter().enumerate() {
            let v = Self::eval_section(b, x)?;
            e.set_column(c, &DVector::from_vec(v));
        }
        Ok((e0, e))
    }

    /// Fiber point `e0(x) + y^c E_c(x)` for reduced coordinates `y`.
    pub fn embed(&self, x: &[f64], y_red: &[f64]) -> Result<Vec<f64>> {
        if y_red.len() != self.r() {
            return Err(Error::DimensionMismatch(format!("reduced state has {} components, expected {}", y_red.len(), self.r())));
        }
        let (e0, e) = self.eval(x)?;
        let v = DVector::from_vec(e0) + &e * DVector::from_column_slice(y_red);
        Ok(v.as_slice().to_vec())
    }

    /// Least-squares reduced coordinates of a full fiber point.
    pub fn reduce(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let (e0, e) = self.eval(x)?;
        let rhs = e.transpose() * (DVector::from_column_slice(y) - DVector::from_vec(e0));
        let g = e.transpose() * &e;
        let sol = g.lu().solve(&rhs).ok_or_else(|| Error::FrameDegenerate("basis is rank deficient".into()))?;
        Ok(sol.as_slice().to_vec())
    }

    /// Level functions `Φ^α = n_α·(y − e0(x))` with `n_α` spanning the
    /// annihilator of the basis. Requires a constant basis.
    pub fn level_functions(&self) -> Result<GeometricConstraint> {
        for b in &self.basis {
            if b.components.iter().any(|e| !e.free_vars().is_empty()) {
                return Err(Error::InvalidInput("level functions need a basis that does not depend on x".into()));
            }
        }
        let x0 = vec![0.0; self.n];
        let (_, e) = self.eval(&x0)?;
        // Orthonormal complement of span(E) from the full SVD of E.
        let mut ext = DMatrix::zeros(self.m, self.m);
        ext.view_mut((0, 0), (self.m, self.r())).copy_from(&e);
        let svd = ext.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..self.m).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
        let annihilator: Vec<usize> = order[self.r()..].to_vec();
        let mut phis = Vec::new();
        for &col in &annihilator {
            let nv = u.column(col);
            let mut terms = Vec::new();
            for i in 0..self.m {
                let diff = Expr::var(&format!("y{}", i + 1)).sub(&self.e0.components[i]);
                terms.push((nv[i], diff));
            }
            let refs: Vec<(f64, &Expr)> = terms.iter().map(|(k, e)| (*k, e)).collect();
            phis.push(Expr::scaled_sum(&refs));
        }
        GeometricConstraint::new(phis, self.n, self.m, &BTreeMap::new())
    }
}

/// Gauss–Newton projection of `y_guess` onto `{Φ(x, ·) = 0}` with
/// minimum-norm steps.
pub fn consistency_project(c: &GeometricConstraint, x: &[f64], y_guess: &[f64]) -> Result<Vec<f64>> {
    const MAX_IT: usize = 50;
    const TOL: f64 = 1e-12;
    let mut y = y_guess.to_vec();
    let (_, jy) = c.jacobian(x, &y)?;
    let rk = rank(&jy, 1e-12);
    if rk < c.k() {
        return Err(Error::RankDeficientConstraint { rank: rk, expected: c.k() });
    }
    let mut res = c.eval(x, &y)?;
    for _ in 0..MAX_IT {
        if max_abs(&res) <= TOL {
            return Ok(y);
        }
        let (_, jy) = c.jacobian(x, &y)?;
        if rank(&jy, 1e-12) < c.k() {
            break;
        }
        let Some(d) = min_norm_solve(&jy, &DVector::from_vec(res.clone())) else { break };
        for (yi, di) in y.iter_mut().zip(d.iter()) {
            *yi -= di;
        }
        res = match c.eval(x, &y) {
            Ok(r) => r,
            Err(_) => break,
        };
    }
    if max_abs(&res) <= TOL {
        return Ok(y);
    }
    Err(Error::NoConvergence { iterations: MAX_IT, residual: max_abs(&res) })
}

/// Output of [`nonholonomic_rhs`].
#[derive(Clone, Debug, PartialEq)]
pub struct NonholonomicRhs {
    pub xdot: Vec<f64>,
    pub ydot: Vec<f64>,
    pub mu: Vec<f64>,
    pub cond: f64,
    /// Max residual of the saddle system after the solve.
    pub solve_residual: f64,
}

fn force_at(force: Option<&ForceField>, x: &[f64], y: &[f64], t: f64, m: usize) -> Result<DVector<f64>> {
    match force {
        Some(f) => Ok(DVector::from_vec(f.eval(x, y, t)?)),
        None => Ok(DVector::zeros(m)),
    }
}

fn saddle(w: &DMatrix<f64>, phi_y: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = (w.nrows(), phi_y.nrows());
    let mut s = DMatrix::zeros(m + k, m + k);
    s.view_mut((0, 0), (m, m)).copy_from(w);
    s.view_mut((0, m), (m, k)).copy_from(&(-phi_y.transpose()));
    s.view_mut((m, 0), (k, m)).copy_from(phi_y);
    s
}

/// Chetaev dynamics: `W ẏ − Φ_yᵀ μ = b − η` together with
/// `Φ_y ẏ = −Φ_x ρ y`.
pub fn nonholonomic_rhs(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    c: &GeometricConstraint,
    s: &SystemState,
    cond_max: f64,
) -> Result<NonholonomicRhs> {
    let (m, k) = (a.m(), c.k());
    let p = el_parts(a, lag, &s.x, &s.y, s.t)?;
    let eta = force_at(force, &s.x, &s.y, s.t, m)?;
    let (phi_x, phi_y) = c.jacobian(&s.x, &s.y)?;
    let sm = saddle(&p.jet.w, &phi_y);
    let mut rhs = DVector::zeros(m + k);
    rhs.rows_mut(0, m).copy_from(&(&p.b - &eta));
    rhs.rows_mut(m, k).copy_from(&(-(&phi_x * DVector::from_column_slice(&p.xdot))));
    let (sol, cond) = solve_with_cond(&sm, &rhs).ok_or(Error::SingularSaddle { t: s.t, cond: f64::INFINITY })?;
    if cond > cond_max {
        return Err(Error::SingularSaddle { t: s.t, cond });
    }
    let solve_residual = (&sm * &sol - &rhs).amax();
    Ok(NonholonomicRhs {
        xdot: p.xdot,
        ydot: sol.rows(0, m).iter().copied().collect(),
        mu: sol.rows(m, k).iter().copied().collect(),
        cond,
        solve_residual,
    })
}

/// Output of [`vakonomic_rhs`].
#[derive(Clone, Debug, PartialEq)]
pub struct VakonomicRhs {
    pub xdot: Vec<f64>,
    /// `ẏ`; zero on degenerate directions.
    pub ydot: Vec<f64>,
    pub mudot: Vec<f64>,
    pub cond: f64,
    /// Fiber directions that are algebraic (no inertia, not constrained).
    pub degenerate: Vec<usize>,
    /// Solved values of the degenerate fiber coordinates.
    pub y_fixed: Vec<(usize, f64)>,
}

/// Everything entering the vakonomic equations for `L̃ = L − μ_k Φ^k`
/// (multipliers frozen).
struct TildeParts {
    xdot: Vec<f64>,
    w: DMatrix<f64>,
    /// `b̃ − η`
    rhs: DVector<f64>,
    phi_x: DMatrix<f64>,
    phi_y: DMatrix<f64>,
}

fn tilde_parts(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    c: &GeometricConstraint,
    x: &[f64],
    y: &[f64],
    mu: &[f64],
    t: f64,
) -> Result<TildeParts> {
    let (n, m, k) = (a.n(), a.m(), c.k());
    if mu.len() != k {
        return Err(Error::DimensionMismatch(format!("state carries {} multipliers, constraint has {k}", mu.len())));
    }
    let jet = lag.legendre_jet(x, y, t)?;
    let st = a.structure_at(x)?;
    let cj = c.jets(x, y)?;
    let mut lam = jet.lam.clone();
    let mut lx = jet.dldx.clone();
    let mut w = jet.w.clone();
    let mut wxy = jet.wxy.clone();
    let mut phi_x = DMatrix::zeros(k, n);
    let mut phi_y = DMatrix::zeros(k, m);
    for (r, j) in cj.iter().enumerate() {
        for i in 0..m {
            lam[i] -= mu[r] * j.dy[i];
            phi_y[(r, i)] = j.dy[i];
        }
        for aa in 0..n {
            lx[aa] -= mu[r] * j.dx[aa];
            phi_x[(r, aa)] = j.dx[aa];
        }
        w -= &j.dyy * mu[r];
        wxy -= &j.dxy * mu[r];
    }
    let xdot = st.anchor(y);
    let coad = st.coadjoint(y, &lam);
    let eta = force_at(force, x, y, t, m)?;
    let rhs = DVector::from_fn(m, |j, _| {
        let mut v = coad[j] - jet.wty[j] - eta[j];
        for aa in 0..n {
            v += st.sigma[(aa, j)] * lx[aa] - xdot[aa] * wxy[(aa, j)];
        }
        v
    });
    Ok(TildeParts { xdot, w, rhs, phi_x, phi_y })
}

/// Vakonomic dynamics: `W̃ ẏ − Φ_yᵀ μ̇ = b̃ − η`, `Φ_y ẏ = −Φ_x ρ y`.
///
/// Fiber directions with neither inertia nor constraint dependence (as in
/// control systems, where the Lagrangian does not depend on the control
/// velocities) make the saddle singular. Those coordinates are algebraic:
/// they are solved from the time derivative of the hidden condition
/// `(b̃ − η)_D = 0` jointly with the remaining equations.
pub fn vakonomic_rhs(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    c: &GeometricConstraint,
    s: &SystemState,
    cond_max: f64,
) -> Result<VakonomicRhs> {
    let (m, k) = (a.m(), c.k());
    let tp = tilde_parts(a, lag, force, c, &s.x, &s.y, &s.mu, s.t)?;
    let degenerate: Vec<usize> = (0..m)
        .filter(|&j| (0..m).all(|i| tp.w[(j, i)] == 0.0) && (0..k).all(|r| tp.phi_y[(r, j)] == 0.0))
        .collect();
    if !degenerate.is_empty() {
        return vakonomic_degenerate(a, lag, force, c, s, &degenerate, cond_max);
    }
    let sm = saddle(&tp.w, &tp.phi_y);
    let mut rhs = DVector::zeros(m + k);
    rhs.rows_mut(0, m).copy_from(&tp.rhs);
    rhs.rows_mut(m, k).copy_from(&(-(&tp.phi_x * DVector::from_column_slice(&tp.xdot))));
    let (sol, cond) = solve_with_cond(&sm, &rhs).ok_or(Error::SingularSaddle { t: s.t, cond: f64::INFINITY })?;
    if cond > cond_max {
        return Err(Error::SingularSaddle { t: s.t, cond });
    }
    Ok(VakonomicRhs {
        xdot: tp.xdot,
        ydot: sol.rows(0, m).iter().copied().collect(),
        mudot: sol.rows(m, k).iter().copied().collect(),
        cond,
        degenerate,
        y_fixed: Vec::new(),
    })
}

fn vakonomic_degenerate(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    c: &GeometricConstraint,
    s: &SystemState,
    dset: &[usize],
    cond_max: f64,
) -> Result<VakonomicRhs> {
    let (n, m, k) = (a.n(), a.m(), c.k());
    let rset: Vec<usize> = (0..m).filter(|j| !dset.contains(j)).collect();
    let (nr, nd) = (rset.len(), dset.len());
    let nu = nr + k + nd;

    // Hidden condition r_D(x, y, μ, t) = (b̃ − η)_D.
    let hidden = |x: &[f64], y: &[f64], mu: &[f64], t: f64| -> Result<Vec<f64>> {
        let tp = tilde_parts(a, lag, force, c, x, y, mu, t)?;
        Ok(dset.iter().map(|&d| tp.rhs[d]).collect())
    };
    // Central-difference gradient of r_D with respect to every state slot.
    let hidden_grad = |x: &[f64], y: &[f64], mu: &[f64], t: f64| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let mut z: Vec<f64> = x.iter().chain(y).chain(mu).copied().collect();
        z.push(t);
        let r0 = hidden(x, y, mu, t)?;
        let mut g = DMatrix::zeros(nd, z.len());
        for col in 0..z.len() {
            let step = 1e-6 * (1.0 + z[col].abs());
            let orig = z[col];
            z[col] = orig + step;
            let rp = hidden(&z[..n], &z[n..n + m], &z[n + m..n + m + k], z[n + m + k])?;
            z[col] = orig - step;
            let rm = hidden(&z[..n], &z[n..n + m], &z[n + m..n + m + k], z[n + m + k])?;
            z[col] = orig;
            for d in 0..nd {
                g[(d, col)] = (rp[d] - rm[d]) / (2.0 * step);
            }
        }
        Ok((r0, g))
    };

    // Residual of the combined system for u = (ẏ_R, μ̇, y_D).
    let residual = |u: &[f64]| -> Result<DVector<f64>> {
        let mut y = s.y.clone();
        for (q, &d) in dset.iter().enumerate() {
            y[d] = u[nr + k + q];
        }
        let mut ydot = vec![0.0; m];
        for (q, &r) in rset.iter().enumerate() {
            ydot[r] = u[q];
        }
        let mudot = &u[nr..nr + k];
        let tp = tilde_parts(a, lag, force, c, &s.x, &y, &s.mu, s.t)?;
        let mut out = DVector::zeros(nu);
        let yd = DVector::from_column_slice(&ydot);
        let md = DVector::from_column_slice(mudot);
        let mom = &tp.w * &yd - tp.phi_y.transpose() * &md - &tp.rhs;
        for (q, &r) in rset.iter().enumerate() {
            out[q] = mom[r];
        }
        let cons = &tp.phi_y * &yd + &tp.phi_x * DVector::from_column_slice(&tp.xdot);
        for r in 0..k {
            out[nr + r] = cons[r];
        }
        let (_, g) = hidden_grad(&s.x, &y, &s.mu, s.t)?;
        for q in 0..nd {
            let mut v = g[(q, n + m + k)];
            for aa in 0..n {
                v += g[(q, aa)] * tp.xdot[aa];
            }
            for &r in &rset {
                v += g[(q, n + r)] * ydot[r];
            }
            for r in 0..k {
                v += g[(q, n + m + r)] * mudot[r];
            }
            out[nr + k + q] = v;
        }
        Ok(out)
    };

    // The hidden condition must not involve the algebraic directions
    // themselves, otherwise the reduction above has the wrong index.
    let (_, g0) = hidden_grad(&s.x, &s.y, &s.mu, s.t)?;
    let gscale = 1.0 + g0.amax();
    for q in 0..nd {
        for &d in dset {
            if g0[(q, n + d)].abs() > 1e-6 * gscale {
                return Err(Error::InvalidInput(format!(
                    "degenerate direction y{} enters its own hidden constraint; this index is not supported",
                    d + 1
                )));
            }
        }
    }

    let mut u = vec![0.0; nu];
    for (q, &d) in dset.iter().enumerate() {
        u[nr + k + q] = s.y[d];
    }
    let mut f = residual(&u)?;
    let mut cond_seen: f64 = 1.0;
    let mut best = f.amax();
    let mut best_u = u.clone();
    for _ in 0..25 {
        let scale = 1.0 + max_abs(&u);
        if f.amax() <= 1e-12 * scale {
            break;
        }
        let mut jac = DMatrix::zeros(nu, nu);
        for col in 0..nu {
            let step = 1e-6 * (1.0 + u[col].abs());
            let mut up = u.clone();
            up[col] += step;
            let mut um = u.clone();
            um[col] -= step;
            let d = (residual(&up)? - residual(&um)?) / (2.0 * step);
            jac.set_column(col, &d);
        }
        let (delta, cond) =
            solve_with_cond(&jac, &(-&f)).ok_or(Error::SingularSaddle { t: s.t, cond: f64::INFINITY })?;
        if cond > cond_max {
            return Err(Error::SingularSaddle { t: s.t, cond });
        }
        cond_seen = cond;
        for (ui, di) in u.iter_mut().zip(delta.iter()) {
            *ui += di;
        }
        f = residual(&u)?;
        if f.amax() < best {
            best = f.amax();
            best_u = u.clone();
        }
        if delta.amax() <= 1e-14 * (1.0 + max_abs(&u)) {
            break;
        }
    }
    if best > 1e-8 * (1.0 + max_abs(&best_u)) {
        return Err(Error::NoConvergence { iterations: 25, residual: best });
    }
    let u = best_u;
    let mut y = s.y.clone();
    let mut y_fixed = Vec::with_capacity(nd);
    for (q, &d) in dset.iter().enumerate() {
        y[d] = u[nr + k + q];
        y_fixed.push((d, u[nr + k + q]));
    }
    let xdot = a.structure_at(&s.x)?.anchor(&y);
    let mut ydot = vec![0.0; m];
    for (q, &r) in rset.iter().enumerate() {
        ydot[r] = u[q];
    }
    Ok(VakonomicRhs {
        xdot,
        ydot,
        mudot: u[nr..nr + k].to_vec(),
        cond: cond_seen,
        degenerate: dset.to_vec(),
        y_fixed,
    })
}

/// Residual of the vakonomic equation assembled term by term from the
/// jets of `L` and `Φ` (not from `L̃`):
///
/// `λ̇ − c(y)ᵀλ − σᵀL_x − [μ̇ Φ_y + μ (Φ̇_y − c(y)ᵀΦ_y − σᵀΦ_x)] + η`.
///
/// Returns `(residual, scale)` with `scale` the largest term magnitude.
pub fn vakonomic_identity_residual(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    c: &GeometricConstraint,
    s: &SystemState,
    ydot: &[f64],
    mudot: &[f64],
) -> Result<(f64, f64)> {
    let (n, m) = (a.n(), a.m());
    let jet = lag.legendre_jet(&s.x, &s.y, s.t)?;
    let st = a.structure_at(&s.x)?;
    let cj = c.jets(&s.x, &s.y)?;
    let xdot = st.anchor(&s.y);
    let eta = force_at(force, &s.x, &s.y, s.t, m)?;
    let yd = DVector::from_column_slice(ydot);
    let xd = DVector::from_column_slice(&xdot);
    let lamdot = &jet.w * &yd + jet.wxy.transpose() * &xd + DVector::from_column_slice(&jet.wty);
    let coad_l = st.coadjoint(&s.y, &jet.lam);
    let mut scale: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for j in 0..m {
        let sig_lx: f64 = (0..n).map(|aa| st.sigma[(aa, j)] * jet.dldx[aa]).sum();
        let lhs = lamdot[j] - coad_l[j] - sig_lx;
        let mut rhs = 0.0;
        for (r, cjr) in cj.iter().enumerate() {
            let phidot_y = (&cjr.dyy * &yd + cjr.dxy.transpose() * &xd)[j];
            let coad_p = st.coadjoint(&s.y, &cjr.dy)[j];
            let sig_px: f64 = (0..n).map(|aa| st.sigma[(aa, j)] * cjr.dx[aa]).sum();
            rhs += mudot[r] * cjr.dy[j] + s.mu[r] * (phidot_y - coad_p - sig_px);
            scale = scale.max((mudot[r] * cjr.dy[j]).abs()).max((s.mu[r] * phidot_y).abs());
        }
        scale = scale.max(lamdot[j].abs()).max(coad_l[j].abs()).max(sig_lx.abs());
        worst = worst.max((lhs - rhs + eta[j]).abs());
    }
    Ok((worst, scale))
}

/// Residual of the algebraic condition carried by the degenerate fiber
/// directions of a vakonomic system (no inertia, no constraint
/// dependence): `max_D |(b̃ − η)_D|`. For a control system written as
/// `Φ = y − f(x, u)` with `L` independent of the fiber, this is the
/// stationarity condition `∂L/∂u − ξ·∂f/∂u` of the Hamiltonian with the
/// costate `ξ = −μ`. Zero when no direction is degenerate.
pub fn vakonomic_stationarity_residual(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    c: &GeometricConstraint,
    s: &SystemState,
) -> Result<f64> {
    let (m, k) = (a.m(), c.k());
    let tp = tilde_parts(a, lag, force, c, &s.x, &s.y, &s.mu, s.t)?;
    Ok((0..m)
        .filter(|&j| (0..m).all(|i| tp.w[(j, i)] == 0.0) && (0..k).all(|r| tp.phi_y[(r, j)] == 0.0))
        .map(|j| tp.rhs[j].abs())
        .fold(0.0, f64::max))
}

/// Admissibility residual of `ε(dL − μ dΦ)` along a vakonomic trajectory:
/// the covector path must project to an admissible curve in `TE*`.
/// Pass `None` for an unconstrained trajectory.
pub fn theorem5_lift_residual(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    c: Option<&GeometricConstraint>,
    gamma: &Trajectory,
) -> Result<f64> {
    if gamma.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: gamma.len() });
    }
    gamma.check_grid()?;
    let mut xs = Vec::with_capacity(gamma.len());
    let mut xis = Vec::with_capacity(gamma.len());
    let mut images = Vec::with_capacity(gamma.len());
    for s in &gamma.states {
        let jet = lag.legendre_jet(&s.x, &s.y, s.t)?;
        let mut p = jet.dldx.clone();
        let mut xi = jet.lam.clone();
        if let Some(c) = c {
            if s.mu.len() != c.k() {
                return Err(Error::GridMismatch("trajectory samples do not carry one multiplier per constraint".into()));
            }
            for (r, j) in c.jets(&s.x, &s.y)?.iter().enumerate() {
                for (pa, d) in p.iter_mut().zip(&j.dx) {
                    *pa -= s.mu[r] * d;
                }
                for (xk, d) in xi.iter_mut().zip(&j.dy) {
                    *xk -= s.mu[r] * d;
                }
            }
        }
        let img = a.epsilon_map(&CotangentEPoint { x: s.x.clone(), y: s.y.clone(), p, xi: xi.clone() })?;
        xs.push(s.x.clone());
        xis.push(xi);
        images.push(img);
    }
    let dx = differentiate(&xs, gamma.h)?;
    let dxi = differentiate(&xis, gamma.h)?;
    let mut worst: f64 = 0.0;
    for k in 1..gamma.len() - 1 {
        for (u, v) in dx[k].iter().zip(&images[k].xdot) {
            worst = worst.max((u - v).abs());
        }
        for (u, v) in dxi[k].iter().zip(&images[k].xidot) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}

/// Max over samples of the part of `δL − η` (with finite-difference `ẏ`)
/// that lies outside `span{∂Φ^k/∂y}`.
pub fn dalembert_residual(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    c: &GeometricConstraint,
    gamma: &Trajectory,
    drift_tol: f64,
) -> Result<f64> {
    let ydot = differentiate(&gamma.ys(), gamma.h)?;
    let mut worst: f64 = 0.0;
    for (s, yd) in gamma.states.iter().zip(&ydot) {
        let drift = c.residual(&s.x, &s.y)?;
        if drift > drift_tol {
            return Err(Error::ConstraintDrift { t: s.t, residual: drift });
        }
        let dl = crate::lagrangian::delta_l(a, lag, &s.x, &s.y, yd, s.t)?;
        let eta = force_at(force, &s.x, &s.y, s.t, a.m())?;
        let v = DVector::from_vec(dl) - eta;
        let (_, phi_y) = c.jacobian(&s.x, &s.y)?;
        let rk = rank(&phi_y, 1e-12);
        if rk < c.k() {
            return Err(Error::RankDeficientConstraint { rank: rk, expected: c.k() });
        }
        let rem = orthogonal_remainder(&phi_y.transpose(), &v);
        worst = worst.max(rem.amax());
    }
    Ok(worst)
}

/// Bracket closure test for an affine subbundle of a quasi-Lie algebroid:
/// brackets `[e0+E_a, e0+E_b]` and `[e0+E_a, e0]` must lie in
/// `span{E_c}`.
pub fn is_holonomic(a: &AlgebroidChart, aff: &AffineConstraint, sample_points: &[Vec<f64>]) -> Result<HolonomicityReport> {
    if sample_points.is_empty() {
        return Err(Error::InvalidInput("is_holonomic needs at least one sample point".into()));
    }
    let m = a.m();
    let mut skew: f64 = 0.0;
    let mut rs: f64 = 0.0;
    for x in sample_points {
        let st = a.structure_at(x).map_err(|e| e.at_point(x))?;
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    skew = skew.max((st.c(k, i, j) + st.c(k, j, i)).abs());
                }
            }
        }
        rs = rs.max((&st.rho - &st.sigma).abs().max());
    }
    if skew > TOL_AXIOM || rs > TOL_AXIOM {
        return Err(Error::NotQuasiLie { skew, rho_sigma: rs });
    }
    let gens: Vec<SectionExpr> = aff
        .basis
        .iter()
        .map(|b| SectionExpr::new(b.components.iter().zip(&aff.e0.components).map(|(u, v)| u.add(v)).collect()))
        .collect();
    let mut worst: f64 = 0.0;
    for x in sample_points {
        let (_, e) = aff.eval(x)?;
        let st = a.structure_at(x)?;
        let jets = gens.iter().map(|g| a.section_jet(g, x)).collect::<Result<Vec<_>>>()?;
        let e0j = a.section_jet(&aff.e0, x)?;
        let mut check = |v: Vec<f64>| {
            let rem = orthogonal_remainder(&e, &DVector::from_vec(v));
            worst = worst.max(rem.amax());
        };
        for p in 0..gens.len() {
            for q in 0..gens.len() {
                check(bracket_from_jets(&st, &jets[p].0, &jets[p].1, &jets[q].0, &jets[q].1));
            }
            check(bracket_from_jets(&st, &jets[p].0, &jets[p].1, &e0j.0, &e0j.1));
        }
    }
    Ok(HolonomicityReport { max_offspan_residual: worst, is_holonomic: worst <= TOL_AXIOM, samples: sample_points.len() })
}

/// Output of [`affine_reduced_rhs`].
#[derive(Clone, Debug, PartialEq)]
pub struct AffineRhs {
    pub xdot: Vec<f64>,
    pub ydot: Vec<f64>,
    pub cond: f64,
}

/// Adapted frame `[e0?, E_1..E_r, completion]` at a base point. `e0` is a
/// frame vector only where it is independent of the basis; where the
/// affine subbundle passes through the zero section the frame starts with
/// the basis.
struct AdaptedFrame {
    f: DMatrix<f64>,
    finv: DMatrix<f64>,
}

fn adapted_frame(e0: &[f64], e: &DMatrix<f64>) -> Result<AdaptedFrame> {
    let (m, r) = (e.nrows(), e.ncols());
    if rank(e, 1e-10) < r {
        return Err(Error::FrameDegenerate("basis sections are linearly dependent".into()));
    }
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m);
    let e0v = DVector::from_column_slice(e0);
    if orthogonal_remainder(e, &e0v).amax() > 1e-10 * (1.0 + e0v.amax()) {
        cols.push(e0v);
    }
    for c in 0..r {
        cols.push(e.column(c).into_owned());
    }
    // Gram–Schmidt completion against the standard basis.
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    for v in &cols {
        let mut w = v.clone();
        for q in &ortho {
            w -= q * q.dot(&w);
        }
        ortho.push(&w / w.norm());
    }
    for i in 0..m {
        if cols.len() == m {
            break;
        }
        let mut w = DVector::zeros(m);
        w[i] = 1.0;
        for q in &ortho {
            w -= q * q.dot(&w);
        }
        let nw = w.norm();
        if nw > 1e-8 {
            let w = w / nw;
            ortho.push(w.clone());
            cols.push(w);
        }
    }
    let f = DMatrix::from_columns(&cols);
    let finv = f.clone().try_inverse().ok_or_else(|| Error::FrameDegenerate("adapted frame is singular".into()))?;
    Ok(AdaptedFrame { f, finv })
}

/// Reduced nonholonomic dynamics on an affine subbundle, assembled in the
/// adapted frame `(e0, E_a, completion)`: the transformed structure
/// coefficients `ĉ^D_{IJ} = (F⁻¹[ê_I, ê_J])^D` come from brackets of the
/// frame sections, the transformed Lagrangian derivatives from the chain
/// rule through `Y = e0 + y^a E_a`. The `ĉ_{0b}` terms are kept wherever
/// the section `e0` is not identically zero, including points where its
/// value vanishes but its derivatives do not.
pub fn affine_reduced_rhs(
    a: &AlgebroidChart,
    lag: &Lagrangian,
    force: Option<&ForceField>,
    aff: &AffineConstraint,
    s: &SystemState,
    cond_max: f64,
) -> Result<AffineRhs> {
    let (n, m, r) = (a.n(), a.m(), aff.r());
    if s.y.len() != r {
        return Err(Error::DimensionMismatch(format!("reduced state has {} components, expected {r}", s.y.len())));
    }
    let x = &s.x;
    let y = &s.y;
    let e0j = a.section_jet(&aff.e0, x)?;
    let ej = aff.basis.iter().map(|b| a.section_jet(b, x)).collect::<Result<Vec<_>>>()?;
    let mut emat = DMatrix::zeros(m, r);
    for (c, (v, _)) in ej.iter().enumerate() {
        emat.set_column(c, &DVector::from_column_slice(v));
    }
    let frame = adapted_frame(&e0j.0, &emat)?;
    let affine = aff.e0.components.iter().any(|e| !e.is_zero());

    // Embedded fiber point and its x-Jacobian.
    let mut yfull = DVector::from_column_slice(&e0j.0);
    let mut dy_dx = DMatrix::from_fn(m, n, |kk, aa| e0j.1[kk][aa]);
    for (c, (v, d)) in ej.iter().enumerate() {
        yfull += DVector::from_column_slice(v) * y[c];
        dy_dx += DMatrix::from_fn(m, n, |kk, aa| d[kk][aa]) * y[c];
    }
    let yfull_v: Vec<f64> = yfull.iter().copied().collect();
    let st = a.structure_at(x)?;
    let xdot = st.anchor(&yfull_v);
    let xd = DVector::from_column_slice(&xdot);
    let jet = lag.legendre_jet(x, &yfull_v, s.t)?;
    let lam = DVector::from_column_slice(&jet.lam);

    // Lagrangian derivatives in the adapted frame.
    let lhat = frame.f.transpose() * &lam;
    let lhat_x = DVector::from_column_slice(&jet.dldx) + dy_dx.transpose() * &lam;

    // Bracket coefficients ĉ^D_{I b} for I ∈ {0, 1..r}, b ∈ 1..r.
    let bracket_hat = |p: (&Vec<f64>, &Vec<Vec<f64>>), q: (&Vec<f64>, &Vec<Vec<f64>>)| -> DVector<f64> {
        let br = bracket_from_jets(&st, p.0, p.1, q.0, q.1);
        &frame.finv * DVector::from_vec(br)
    };
    let eta = force_at(force, x, &yfull_v, s.t, m)?;
    let sig_e = &st.sigma * &emat;
    let mut rhs = DVector::zeros(r);
    for b in 0..r {
        let eb = (&ej[b].0, &ej[b].1);
        let mut coeff = DVector::zeros(m);
        for (e, je) in ej.iter().enumerate() {
            coeff += bracket_hat((&je.0, &je.1), eb) * y[e];
        }
        if affine {
            coeff += bracket_hat((&e0j.0, &e0j.1), eb);
        }
        let mut v = coeff.dot(&lhat);
        for aa in 0..n {
            v += sig_e[(aa, b)] * lhat_x[aa];
        }
        // Move the known parts of d/dt (E_b · λ) to the right-hand side.
        let deb_xdot = DVector::from_fn(m, |kk, _| (0..n).map(|aa| ej[b].1[kk][aa] * xdot[aa]).sum::<f64>());
        v -= deb_xdot.dot(&lam);
        let known = jet.wxy.transpose() * &xd + &jet.w * (&dy_dx * &xd) + DVector::from_column_slice(&jet.wty) + &eta;
        v -= emat.column(b).dot(&known);
        rhs[b] = v;
    }
    let mred = emat.transpose() * &jet.w * &emat;
    let (ydot, cond) =
        solve_with_cond(&mred, &rhs).ok_or(Error::SingularReducedHessian { t: s.t, cond: f64::INFINITY })?;
    if cond > cond_max {
        return Err(Error::SingularReducedHessian { t: s.t, cond });
    }
    Ok(AffineRhs { xdot, ydot: ydot.iter().copied().collect(), cond })
}
