//! Lagrangians on an algebroid chart: Legendre map, Tulczyjew
//! differential, the Euler–Lagrange operator `δL`, the action and the
//! boundary/bulk decomposition of its differential.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::algebroid::{AlgebroidChart, CotangentEPoint, Structure, TangentEDualPoint};
use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expr, VarSpace};
use crate::linalg::max_abs;
use crate::trajectory::{differentiate, quadrature, Trajectory};

/// A (possibly time-dependent) Lagrangian `L(x, y, t; params)`.
#[derive(Clone, Debug)]
pub struct Lagrangian {
    expr: Expr,
    params: BTreeMap<String, f64>,
    n: usize,
    m: usize,
    bound: BoundExpr,
}

/// Coordinate space `x1..xn, y1..ym, t` shared by Lagrangians, forces and
/// constraints.
pub fn phase_space(n: usize, m: usize) -> VarSpace {
    VarSpace::coordinates(n, m, &["t"])
}

impl Lagrangian {
    pub fn new(expr: Expr, n: usize, m: usize, params: BTreeMap<String, f64>) -> Result<Self> {
        let bound = expr.bind(&phase_space(n, m), &params).map_err(|e| match e {
            Error::UnboundVariable(v) => {
                Error::InvalidInput(format!("Lagrangian mentions `{v}`, which is neither a coordinate nor a parameter"))
            }
            other => other,
        })?;
        Ok(Lagrangian { expr, params, n, m, bound })
    }

    pub fn parse(src: &str, n: usize, m: usize, params: &[(&str, f64)]) -> Result<Self> {
        let params = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self::new(Expr::parse(src)?, n, m, params)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Same expression with extra terms added.
    pub fn plus(&self, extra: &Expr) -> Result<Self> {
        Self::new(self.expr.add(extra), self.n, self.m, self.params.clone())
    }

    fn point(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.n || y.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "Lagrangian expects (x, y) of sizes ({}, {}), got ({}, {})",
                self.n,
                self.m,
                x.len(),
                y.len()
            )));
        }
        let mut z = Vec::with_capacity(self.n + self.m + 1);
        z.extend_from_slice(x);
        z.extend_from_slice(y);
        z.push(t);
        Ok(z)
    }

    pub fn value(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        self.bound.value(&self.point(x, y, t)?)
    }

    /// All first and second derivative blocks at `(x, y, t)`.
    pub fn legendre_jet(&self, x: &[f64], y: &[f64], t: f64) -> Result<LegendreJet> {
        let z = self.point(x, y, t)?;
        let (n, m) = (self.n, self.m);
        let seeds: Vec<usize> = (0..n + m + 1).collect();
        let j = self.bound.jet(&z, &seeds)?;
        let lam = j.grad[n..n + m].to_vec();
        let dldx = j.grad[..n].to_vec();
        let w = j.hess.view((n, n), (m, m)).into_owned();
        let wxy = j.hess.view((0, n), (n, m)).into_owned();
        let wty = (0..m).map(|i| j.hess[(n + m, n + i)]).collect();
        Ok(LegendreJet { value: j.value, lam, dldx, dldt: j.grad[n + m], w, wxy, wty })
    }
}

/// Derivatives of `L` at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct LegendreJet {
    pub value: f64,
    /// `∂L/∂y` — the Legendre map.
    pub lam: Vec<f64>,
    /// `∂L/∂x`
    pub dldx: Vec<f64>,
    /// `∂L/∂t`
    pub dldt: f64,
    /// `∂²L/∂y∂y` (m×m, symmetric)
    pub w: DMatrix<f64>,
    /// `∂²L/∂x∂y` (n×m)
    pub wxy: DMatrix<f64>,
    /// `∂²L/∂t∂y`
    pub wty: Vec<f64>,
}

/// Covector-valued force `η(x, y, t)`.
#[derive(Clone, Debug)]
pub struct ForceField {
    exprs: Vec<Expr>,
    bound: Vec<BoundExpr>,
    n: usize,
    m: usize,
}

impl ForceField {
    pub fn new(exprs: Vec<Expr>, n: usize, m: usize, params: &BTreeMap<String, f64>) -> Result<Self> {
        if exprs.len() != m {
            return Err(Error::DimensionMismatch(format!("force has {} components, expected {m}", exprs.len())));
        }
        let space = phase_space(n, m);
        let bound = exprs.iter().map(|e| e.bind(&space, params)).collect::<Result<_>>()?;
        Ok(ForceField { exprs, bound, n, m })
    }

    pub fn parse(srcs: &[&str], n: usize, m: usize, params: &[(&str, f64)]) -> Result<Self> {
        let params: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self::new(srcs.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()?, n, m, &params)
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn eval(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.n || y.len() != self.m {
            return Err(Error::DimensionMismatch("force evaluated at a point of the wrong shape".into()));
        }
        let mut z = x.to_vec();
        z.extend_from_slice(y);
        z.push(t);
        self.bound.iter().map(|b| b.value(&z)).collect()
    }
}

/// The Euler–Lagrange operator split as `δL = b − W ẏ`.
#[derive(Clone, Debug)]
pub struct ElParts {
    pub jet: LegendreJet,
    pub structure: Structure,
    /// `ẋ = ρ(x) y`
    pub xdot: Vec<f64>,
    /// `b_j = σ^a_j L_{x^a} + y^i c^k_{ij} λ_k − (ρy)^a Wxy_{aj} − Wty_j`
    pub b: DVector<f64>,
}

fn check_dims(a: &AlgebroidChart, lag: &Lagrangian) -> Result<()> {
    if a.n() != lag.n() || a.m() != lag.m() {
        return Err(Error::DimensionMismatch(format!(
            "chart is ({}, {}) but Lagrangian is ({}, {})",
            a.n(),
            a.m(),
            lag.n(),
            lag.m()
        )));
    }
    Ok(())
}

/// Everything in `δL` except the `−W ẏ` term.
pub fn el_parts(a: &AlgebroidChart, lag: &Lagrangian, x: &[f64], y: &[f64], t: f64) -> Result<ElParts> {
    check_dims(a, lag)?;
    let jet = lag.legendre_jet(x, y, t)?;
    let structure = a.structure_at(x)?;
    let xdot = structure.anchor(y);
    let coad = structure.coadjoint(y, &jet.lam);
    let m = a.m();
    let b = DVector::from_fn(m, |j, _| {
        let mut v = coad[j] - jet.wty[j];
        for aa in 0..a.n() {
            v += structure.sigma[(aa, j)] * jet.dldx[aa] - xdot[aa] * jet.wxy[(aa, j)];
        }
        v
    });
    Ok(ElParts { jet, structure, xdot, b })
}

/// Tulczyjew differential: `ε(x, y, ∂L/∂x, ∂L/∂y)`.
pub fn tulczyjew_differential(a: &AlgebroidChart, lag: &Lagrangian, x: &[f64], y: &[f64], t: f64) -> Result<TangentEDualPoint> {
    check_dims(a, lag)?;
    let jet = lag.legendre_jet(x, y, t)?;
    a.epsilon_map(&CotangentEPoint { x: x.to_vec(), y: y.to_vec(), p: jet.dldx, xi: jet.lam })
}

/// `δL_j = σ^a_j L_{x^a} + y^i c^k_{ij} λ_k − y^i ρ^a_i Wxy_{aj} − ẏ^k W_{kj} − Wty_j`.
pub fn delta_l(a: &AlgebroidChart, lag: &Lagrangian, x: &[f64], y: &[f64], ydot: &[f64], t: f64) -> Result<Vec<f64>> {
    if ydot.len() != a.m() {
        return Err(Error::DimensionMismatch("ydot has the wrong length".into()));
    }
    let p = el_parts(a, lag, x, y, t)?;
    let wy = &p.jet.w * DVector::from_column_slice(ydot);
    Ok((p.b - wy).as_slice().to_vec())
}

/// `δL` along a sampled curve with `ẏ` from finite differences.
pub fn delta_l_along(a: &AlgebroidChart, lag: &Lagrangian, gamma: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let ydot = differentiate(&gamma.ys(), gamma.h)?;
    gamma.states.iter().zip(&ydot).map(|(s, yd)| delta_l(a, lag, &s.x, &s.y, yd, s.t)).collect()
}

/// Action `∫ L dt` by composite quadrature on the curve's grid.
pub fn action(lag: &Lagrangian, gamma: &Trajectory) -> Result<f64> {
    if gamma.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: gamma.len() });
    }
    gamma.check_grid()?;
    let vals = gamma.states.iter().map(|s| lag.value(&s.x, &s.y, s.t)).collect::<Result<Vec<_>>>()?;
    quadrature(&vals, gamma.h)
}

/// Differential of the action along an admissible variation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DwPairing {
    /// `f·λ |_{t0}^{t1}`
    pub boundary: f64,
    /// `∫ f·δL dt`
    pub bulk: f64,
    pub total: f64,
    /// Direct quadrature of `⟨δ_ζγ, dL⟩` for cross-validation.
    pub direct: f64,
}

/// Admissibility tolerance used when a curve is required to be admissible:
/// `max(1e-6, 10 h²)·(1 + max|ẋ|)`, i.e. the size of the central-difference
/// error on integrator grids.
pub fn admissibility_tol(a: &AlgebroidChart, gamma: &Trajectory) -> Result<f64> {
    let mut scale: f64 = 0.0;
    for s in &gamma.states {
        scale = scale.max(max_abs(&a.structure_at(&s.x)?.anchor(&s.y)));
    }
    Ok((1e-6f64).max(10.0 * gamma.h * gamma.h) * (1.0 + scale))
}

/// Boundary + bulk decomposition of `dW_L(γ)` on the admissible variation
/// generated by `f`, plus the direct route.
pub fn dw_pairing(a: &AlgebroidChart, lag: &Lagrangian, gamma: &Trajectory, f: &[Vec<f64>]) -> Result<DwPairing> {
    check_dims(a, lag)?;
    if f.len() != gamma.len() {
        return Err(Error::GridMismatch(format!("{} variation samples for {} curve samples", f.len(), gamma.len())));
    }
    let tol = admissibility_tol(a, gamma)?;
    let (ok, res) = a.is_admissible(gamma, tol)?;
    if !ok {
        return Err(Error::NotAdmissible(res));
    }
    let dl = delta_l_along(a, lag, gamma)?;
    let variation = a.admissible_variation(gamma, f)?;
    let mut bulk_vals = Vec::with_capacity(gamma.len());
    let mut direct_vals = Vec::with_capacity(gamma.len());
    let mut lam_first = Vec::new();
    let mut lam_last = Vec::new();
    for (k, s) in gamma.states.iter().enumerate() {
        let jet = lag.legendre_jet(&s.x, &s.y, s.t)?;
        bulk_vals.push(dot(&f[k], &dl[k]));
        let v = &variation[k];
        direct_vals.push(dot(&v.xdot, &jet.dldx) + dot(&v.ydot, &jet.lam));
        if k == 0 {
            lam_first = jet.lam.clone();
        }
        if k + 1 == gamma.len() {
            lam_last = jet.lam;
        }
    }
    let boundary = dot(&f[gamma.len() - 1], &lam_last) - dot(&f[0], &lam_first);
    let bulk = quadrature(&bulk_vals, gamma.h)?;
    let direct = quadrature(&direct_vals, gamma.h)?;
    Ok(DwPairing { boundary, bulk, total: boundary + bulk, direct })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests;
