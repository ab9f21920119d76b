//! Ready-made systems: canonical `TM`, the rigid body on `so(3)`, the
//! sphere on `TR² × so(3)` (free and rolling on a rotating table),
//! projections onto linear constraints, and optimal control problems
//! written as vakonomic systems on a product chart.
//!
//! Sign convention: `c^k_{ij} = ε_{ijk}` with `ε_{123} = +1`, so that
//! `[e1, e2] = e3` on `so(3)`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::algebroid::{AlgebroidChart, SectionExpr};
use crate::constraints::{AffineConstraint, GeometricConstraint};
use crate::dynamics::Mode;
use crate::error::{Error, Result};
use crate::expr::{Expr, VarSpace};
use crate::lagrangian::{ForceField, Lagrangian};
use crate::trajectory::SystemState;

/// Parameters of the sphere scenarios.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereParams {
    pub mass: f64,
    pub radius: f64,
    /// Squared radius of gyration.
    pub k2: f64,
    /// Angular velocity of the table.
    pub omega: f64,
}

impl Default for SphereParams {
    fn default() -> Self {
        SphereParams { mass: 1.0, radius: 1.0, k2: 2.0, omega: 3.0 }
    }
}

impl SphereParams {
    fn check(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.radius > 0.0 && self.k2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sphere needs m > 0, r > 0, k2 > 0 (got m = {}, r = {}, k2 = {})",
                self.mass, self.radius, self.k2
            )));
        }
        Ok(())
    }

    /// Rotation rate of the planar velocity on the rotating table,
    /// `k²Ω / (r² + k²)`.
    pub fn alpha(&self) -> f64 {
        self.k2 * self.omega / (self.radius * self.radius + self.k2)
    }
}

fn num(v: f64) -> Expr {
    Expr::constant(v)
}

fn y(i: usize) -> Expr {
    Expr::var(&format!("y{i}"))
}

fn x(i: usize) -> Expr {
    Expr::var(&format!("x{i}"))
}

fn identity_block(n: usize, m: usize, offset: usize) -> Vec<Vec<Expr>> {
    (0..n).map(|a| (0..m).map(|i| num(if i == a + offset { 1.0 } else { 0.0 })).collect()).collect()
}

fn zero_c(m: usize) -> Vec<Vec<Vec<Expr>>> {
    vec![vec![vec![Expr::zero(); m]; m]; m]
}

/// Levi-Civita symbol on indices `0..3`.
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Write `so(3)` structure constants into the fiber block starting at
/// `offset`.
fn so3_block(c: &mut [Vec<Vec<Expr>>], offset: usize) {
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                c[offset + k][offset + i][offset + j] = num(levi_civita(i, j, k));
            }
        }
    }
}

fn half_sum_squares(weights: &[(usize, f64)]) -> Expr {
    let terms: Vec<Expr> = weights.iter().map(|&(i, w)| y(i).mul(&y(i)).scale(0.5 * w)).collect();
    terms.iter().skip(1).fold(terms[0].clone(), |acc, t| acc.add(t))
}

/// The tangent bundle of `R^n`: `ρ = σ = id`, `c = 0`,
/// `L = ½|y|² − V(x)`.
pub fn canonical_tm(potential: &Expr, n: usize) -> Result<(AlgebroidChart, Lagrangian)> {
    let base = VarSpace::coordinates(n, 0, &[]);
    if let Some(bad) = potential.free_vars().iter().find(|v| base.position(v).is_none()) {
        return Err(Error::InvalidInput(format!("potential must depend on x1..x{n} only, found `{bad}`")));
    }
    let chart = AlgebroidChart::new(n, n, identity_block(n, n, 0), identity_block(n, n, 0), zero_c(n))?;
    let kin = half_sum_squares(&(1..=n).map(|i| (i, 1.0)).collect::<Vec<_>>());
    let lag = Lagrangian::new(kin.sub(potential), n, n, BTreeMap::new())?;
    Ok((chart, lag))
}

/// The chart of `so(3)` over a one-point (dummy one-dimensional) base.
pub fn so3_chart() -> AlgebroidChart {
    let mut c = zero_c(3);
    so3_block(&mut c, 0);
    let zero = vec![vec![Expr::zero(); 3]];
    AlgebroidChart::new(1, 3, zero.clone(), zero, c).expect("so(3) chart is well formed")
}

/// Free rigid body: `so(3)` with `L = ½ Σ I_k ω_k²`.
pub fn lie_algebra_so3(inertia: [f64; 3]) -> Result<(AlgebroidChart, Lagrangian)> {
    if inertia.iter().any(|&i| !(i > 0.0)) {
        return Err(Error::InvalidInput(format!("inertia moments must be positive, got {inertia:?}")));
    }
    let lag = Lagrangian::new(
        half_sum_squares(&[(1, inertia[0]), (2, inertia[1]), (3, inertia[2])]),
        1,
        3,
        BTreeMap::new(),
    )?;
    Ok((so3_chart(), lag))
}

/// `TR² × so(3)`: base `(x1, x2)`, fiber `(y1, y2)` planar velocity and
/// `(y3, y4, y5)` angular velocity.
pub fn sphere_chart() -> AlgebroidChart {
    let mut c = zero_c(5);
    so3_block(&mut c, 2);
    AlgebroidChart::new(2, 5, identity_block(2, 5, 0), identity_block(2, 5, 0), c).expect("sphere chart is well formed")
}

fn sphere_lagrangian(p: &SphereParams) -> Result<Lagrangian> {
    let (m, k2) = (p.mass, p.k2);
    Lagrangian::new(half_sum_squares(&[(1, m), (2, m), (3, m * k2), (4, m * k2), (5, m * k2)]), 2, 5, BTreeMap::new())
}

/// Unconstrained sphere, `L = ½m(y1² + y2² + k²|ω|²)`.
pub fn free_sphere(p: &SphereParams) -> Result<(AlgebroidChart, Lagrangian)> {
    p.check()?;
    Ok((sphere_chart(), sphere_lagrangian(p)?))
}

/// Sphere rolling without sliding on a table rotating at `Ω`:
/// `y1 − r y4 + Ω x2 = 0`, `y2 + r y3 − Ω x1 = 0`.
pub fn rolling_ball(p: &SphereParams) -> Result<(AlgebroidChart, Lagrangian, GeometricConstraint)> {
    p.check()?;
    let (r, om) = (p.radius, p.omega);
    let phi1 = y(1).sub(&y(4).scale(r)).add(&x(2).scale(om));
    let phi2 = y(2).add(&y(3).scale(r)).sub(&x(1).scale(om));
    let c = GeometricConstraint::new(vec![phi1, phi2], 2, 5, &BTreeMap::new())?;
    Ok((sphere_chart(), sphere_lagrangian(p)?, c))
}

/// Rolling-ball state at `t = 0` with planar velocity `(a, b)` at the
/// origin, spin `w3`, and the remaining spin fixed by the constraints.
pub fn rolling_ball_initial(p: &SphereParams, a: f64, b: f64, w3: f64) -> SystemState {
    // At x = 0: y1 = r ω2, y2 = −r ω1.
    SystemState::new(0.0, vec![0.0, 0.0], vec![a, b, -b / p.radius, a / p.radius, w3])
}

/// Chart obtained by restricting a chart to a linear subbundle using a
/// fiber metric, together with the frame used.
#[derive(Clone, Debug)]
pub struct Projection {
    pub chart: AlgebroidChart,
    /// m×r matrix whose columns are the metric-orthonormal frame of the
    /// subbundle.
    pub frame: DMatrix<f64>,
    /// Fiber metric (m×m).
    pub metric: DMatrix<f64>,
}

impl Projection {
    /// `Y = F ŷ`.
    pub fn embed(&self, yhat: &[f64]) -> Vec<f64> {
        (&self.frame * nalgebra::DVector::from_column_slice(yhat)).as_slice().to_vec()
    }

    /// `ŷ = Fᵀ g Y` (exact inverse of [`Projection::embed`] on the subbundle).
    pub fn coordinates(&self, y: &[f64]) -> Vec<f64> {
        (self.frame.transpose() * &self.metric * nalgebra::DVector::from_column_slice(y)).as_slice().to_vec()
    }

    /// Pull a Lagrangian back along `Y = F ŷ`.
    pub fn restrict(&self, lag: &Lagrangian) -> Result<Lagrangian> {
        let (m, r) = self.frame.shape();
        let mut map = HashMap::new();
        for i in 0..m {
            let terms: Vec<(f64, Expr)> = (0..r).map(|a| (self.frame[(i, a)], y(a + 1))).collect();
            let refs: Vec<(f64, &Expr)> = terms.iter().map(|(k, e)| (*k, e)).collect();
            map.insert(format!("y{}", i + 1), Expr::scaled_sum(&refs));
        }
        Lagrangian::new(lag.expr().substitute(&map), lag.n(), r, lag.params().clone())
    }
}

fn constant_matrix(what: &str, rows: &[Vec<Expr>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    let mut out = DMatrix::zeros(r, c);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(Error::DimensionMismatch(format!("{what} rows have different lengths")));
        }
        for (j, e) in row.iter().enumerate() {
            out[(i, j)] = e
                .as_literal()
                .ok_or_else(|| Error::InvalidInput(format!("{what} entry `{e}` must be a constant")))?;
        }
    }
    Ok(out)
}

/// Restriction of `a` to the subbundle spanned by `frame`, in a frame that
/// is orthonormal for the fiber metric: `ρ̂_α = ρ F_α`, `σ̂_α = σ F_α`,
/// `ĉ^γ_{αβ} = (F_γᵀ g) c(F_α, F_β)`. Metric and frame must be constant.
pub fn projected_algebroid(a: &AlgebroidChart, metric: &[Vec<Expr>], frame: &[SectionExpr]) -> Result<Projection> {
    let m = a.m();
    let g = constant_matrix("metric", metric)?;
    if g.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!("metric must be {m}x{m}")));
    }
    if (&g - g.transpose()).amax() > 1e-12 * (1.0 + g.amax()) || g.clone().cholesky().is_none() {
        return Err(Error::InvalidInput("metric is not symmetric positive definite".into()));
    }
    if frame.is_empty() || frame.len() > m {
        return Err(Error::InvalidInput(format!("subbundle frame needs between 1 and {m} sections")));
    }
    let rows: Vec<Vec<Expr>> = frame.iter().map(|s| s.components.clone()).collect();
    let raw = constant_matrix("subbundle frame", &rows)?.transpose();
    if raw.nrows() != m {
        return Err(Error::DimensionMismatch(format!("subbundle sections must have {m} components")));
    }
    // Gram–Schmidt under g.
    let r = raw.ncols();
    let mut f = DMatrix::zeros(m, r);
    for col in 0..r {
        let mut v = raw.column(col).into_owned();
        for prev in 0..col {
            let q = f.column(prev).into_owned();
            let proj = (q.transpose() * &g * &v)[0];
            v -= q * proj;
        }
        let nrm = (v.transpose() * &g * &v)[0].sqrt();
        if !(nrm > 1e-10 * (1.0 + raw.column(col).amax())) {
            return Err(Error::FrameDegenerate("subbundle frame is linearly dependent".into()));
        }
        f.set_column(col, &(v / nrm));
    }
    let dual = f.transpose() * &g; // r×m, rows F_γᵀ g
    let comb = |coeffs: &[(f64, &Expr)]| Expr::scaled_sum(coeffs);
    let (rho, sigma, c) = a.to_nested();
    let anchor = |mat: &Vec<Vec<Expr>>| -> Vec<Vec<Expr>> {
        mat.iter()
            .map(|row| (0..r).map(|al| comb(&(0..m).map(|i| (f[(i, al)], &row[i])).collect::<Vec<_>>())).collect())
            .collect()
    };
    let mut chat = vec![vec![vec![Expr::zero(); r]; r]; r];
    for gm in 0..r {
        for al in 0..r {
            for be in 0..r {
                let mut terms = Vec::new();
                for k in 0..m {
                    for i in 0..m {
                        for j in 0..m {
                            let w = dual[(gm, k)] * f[(i, al)] * f[(j, be)];
                            if w != 0.0 && !c[k][i][j].is_zero() {
                                terms.push((w, &c[k][i][j]));
                            }
                        }
                    }
                }
                chat[gm][al][be] = comb(&terms);
            }
        }
    }
    let chart = AlgebroidChart::new(a.n(), r, anchor(&rho), anchor(&sigma), chat)?;
    Ok(Projection { chart, frame: f, metric: g })
}

/// Optimal control as a vakonomic problem on the product of `base` with
/// `TU`, `U = R^p`.
///
/// The product chart has base `(x1..xn, u1..up)` written as
/// `x1..x(n+p)` and fiber `(y1..ym, u̇1..u̇p)` written as `y1..y(m+p)`.
/// `f` (m entries) and `l_base` are expressions in `x1..xn` and
/// `u1..up`. The constraint is `y^i − f^i(x, u) = 0` and the Lagrangian
/// is `l_base`, independent of the fiber.
pub fn pontryagin_control(
    base: &AlgebroidChart,
    p: usize,
    f: &[Expr],
    l_base: &Expr,
) -> Result<(AlgebroidChart, Lagrangian, GeometricConstraint)> {
    let (n, m) = (base.n(), base.m());
    if f.len() != m {
        return Err(Error::DimensionMismatch(format!("control vector field has {} entries, expected {m}", f.len())));
    }
    if p == 0 {
        return Err(Error::DimensionMismatch("need at least one control".into()));
    }
    let mut rename = HashMap::new();
    for a in 0..p {
        rename.insert(format!("u{}", a + 1), x(n + a + 1));
    }
    let allowed: Vec<String> =
        (1..=n).map(|i| format!("x{i}")).chain((1..=p).map(|a| format!("u{a}"))).collect();
    for e in f.iter().chain(std::iter::once(l_base)) {
        if let Some(bad) = e.free_vars().iter().find(|v| !allowed.contains(v)) {
            return Err(Error::InvalidInput(format!("`{e}` mentions `{bad}`; expected x1..x{n} and u1..u{p}")));
        }
    }
    let (rho0, sigma0, c0) = base.to_nested();
    let (nn, mm) = (n + p, m + p);
    let block = |src: &Vec<Vec<Expr>>| -> Vec<Vec<Expr>> {
        (0..nn)
            .map(|aa| {
                (0..mm)
                    .map(|i| match (aa < n, i < m) {
                        (true, true) => src[aa][i].clone(),
                        (false, false) => num(if aa - n == i - m { 1.0 } else { 0.0 }),
                        _ => Expr::zero(),
                    })
                    .collect()
            })
            .collect()
    };
    let mut c = zero_c(mm);
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                c[k][i][j] = c0[k][i][j].clone();
            }
        }
    }
    let chart = AlgebroidChart::new(nn, mm, block(&rho0), block(&sigma0), c)?;
    let lag = Lagrangian::new(l_base.substitute(&rename), nn, mm, BTreeMap::new())?;
    let phis = f.iter().enumerate().map(|(i, fi)| y(i + 1).sub(&fi.substitute(&rename))).collect();
    let cons = GeometricConstraint::new(phis, nn, mm, &BTreeMap::new())?;
    Ok((chart, lag, cons))
}

/// `so(3)` with `[e1, e2] = e3 + δ e1`: skew, but the Jacobi identity
/// fails for `δ ≠ 0`.
pub fn perturbed_so3(delta: f64) -> AlgebroidChart {
    let (_, _, mut c) = so3_chart().to_nested();
    c[0][0][1] = num(delta);
    c[0][1][0] = num(-delta);
    let zero = vec![vec![Expr::zero(); 3]];
    AlgebroidChart::new(1, 3, zero.clone(), zero, c).expect("perturbed chart is well formed")
}

/// `TR²` with the right anchor sheared, `σ = [[1, s], [0, 1]]`, `ρ = id`:
/// a general algebroid that is not quasi-Lie.
pub fn sigma_ne_rho(shear: f64) -> AlgebroidChart {
    let sigma = vec![vec![num(1.0), num(shear)], vec![num(0.0), num(1.0)]];
    AlgebroidChart::new(2, 2, identity_block(2, 2, 0), sigma, zero_c(2)).expect("sheared chart is well formed")
}

/// `TR²` in the non-holonomic frame `e1 = ∂1`, `e2 = x1 ∂1 + ∂2`, so that
/// `[e1, e2] = e1`: a Lie algebroid with base-dependent anchor.
pub fn frame_tm() -> AlgebroidChart {
    let rho = vec![vec![num(1.0), x(1)], vec![num(0.0), num(1.0)]];
    let mut c = zero_c(2);
    c[0][0][1] = num(1.0);
    c[0][1][0] = num(-1.0);
    AlgebroidChart::new(2, 2, rho.clone(), rho, c).expect("frame chart is well formed")
}

/// Constraint attached to a built-in scenario.
#[derive(Clone, Debug)]
pub enum ScenarioConstraint {
    Geometric(GeometricConstraint),
    Affine(AffineConstraint),
}

/// A complete runnable system.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub chart: AlgebroidChart,
    pub lagrangian: Lagrangian,
    pub force: Option<ForceField>,
    pub constraint: Option<ScenarioConstraint>,
    pub mode: Mode,
    pub initial: SystemState,
    pub t1: f64,
    /// Class the chart is expected to have (`lie`, `quasi_lie`, `general`).
    pub expect: &'static str,
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] =
    &["oscillator", "pendulum", "rigid_body", "free_sphere", "rolling_ball", "control", "perturbed_so3", "sheared_tm"];

fn take(params: &BTreeMap<String, f64>, allowed: &[(&str, f64)], name: &str) -> Result<BTreeMap<String, f64>> {
    if let Some(k) = params.keys().find(|k| !allowed.iter().any(|(a, _)| a == k)) {
        let names: Vec<&str> = allowed.iter().map(|(a, _)| *a).collect();
        return Err(Error::InvalidInput(format!("scenario `{name}` has no parameter `{k}` (known: {})", names.join(", "))));
    }
    Ok(allowed.iter().map(|&(k, d)| (k.to_string(), params.get(k).copied().unwrap_or(d))).collect())
}

/// Build a named scenario, overriding default parameters with `params`.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<Scenario> {
    let sc = |chart, lagrangian, constraint, mode, initial, t1, expect| Scenario {
        name: name.to_string(),
        chart,
        lagrangian,
        force: None,
        constraint,
        mode,
        initial,
        t1,
        expect,
    };
    match name {
        "oscillator" | "pendulum" => {
            let p = take(params, &[("x0", 1.0), ("v0", 0.0), ("t1", 2.0 * std::f64::consts::PI)], name)?;
            let v = if name == "oscillator" { Expr::parse("0.5 * x1^2")? } else { Expr::parse("cos(x1)")? };
            let (chart, lag) = canonical_tm(&v, 1)?;
            let s0 = SystemState::new(0.0, vec![p["x0"]], vec![p["v0"]]);
            Ok(sc(chart, lag, None, Mode::Free, s0, p["t1"], "lie"))
        }
        "rigid_body" => {
            let p = take(
                params,
                &[("I1", 1.0), ("I2", 2.0), ("I3", 3.0), ("w1", 1.0), ("w2", 0.5), ("w3", -0.3), ("t1", 10.0)],
                name,
            )?;
            let (chart, lag) = lie_algebra_so3([p["I1"], p["I2"], p["I3"]])?;
            let s0 = SystemState::new(0.0, vec![0.0], vec![p["w1"], p["w2"], p["w3"]]);
            Ok(sc(chart, lag, None, Mode::Free, s0, p["t1"], "lie"))
        }
        "free_sphere" | "rolling_ball" => {
            let p = take(
                params,
                &[("m", 1.0), ("r", 1.0), ("k2", 2.0), ("Omega", 3.0), ("a", 1.0), ("b", 0.0), ("w3", 0.5), ("t1", 5.0)],
                name,
            )?;
            let sp = SphereParams { mass: p["m"], radius: p["r"], k2: p["k2"], omega: p["Omega"] };
            let s0 = rolling_ball_initial(&sp, p["a"], p["b"], p["w3"]);
            if name == "free_sphere" {
                let (chart, lag) = free_sphere(&sp)?;
                Ok(sc(chart, lag, None, Mode::Free, s0, p["t1"], "lie"))
            } else {
                let (chart, lag, c) = rolling_ball(&sp)?;
                Ok(sc(chart, lag, Some(ScenarioConstraint::Geometric(c)), Mode::Nonholonomic, s0, p["t1"], "lie"))
            }
        }
        "control" => {
            let p = take(params, &[("x0", 0.0), ("xi0", 1.0), ("t1", 1.0)], name)?;
            let (tr, _) = canonical_tm(&Expr::zero(), 1)?;
            let (chart, lag, c) = pontryagin_control(&tr, 1, &[Expr::parse("u1")?], &Expr::parse("0.5 * u1^2")?)?;
            let xi0 = p["xi0"];
            // On the critical set: u = ξ = −μ, and y1 = f = u.
            let s0 = SystemState::new(0.0, vec![p["x0"], xi0], vec![xi0, 0.0]).with_mu(vec![-xi0]);
            Ok(sc(chart, lag, Some(ScenarioConstraint::Geometric(c)), Mode::Vakonomic, s0, p["t1"], "lie"))
        }
        "perturbed_so3" => {
            let p = take(params, &[("delta", 0.1), ("t1", 1.0)], name)?;
            let lag = Lagrangian::new(half_sum_squares(&[(1, 1.0), (2, 2.0), (3, 3.0)]), 1, 3, BTreeMap::new())?;
            let s0 = SystemState::new(0.0, vec![0.0], vec![1.0, 0.5, -0.3]);
            Ok(sc(perturbed_so3(p["delta"]), lag, None, Mode::Free, s0, p["t1"], "quasi_lie"))
        }
        "sheared_tm" => {
            let p = take(params, &[("shear", 0.5), ("t1", 1.0)], name)?;
            let lag = Lagrangian::new(half_sum_squares(&[(1, 1.0), (2, 1.0)]), 2, 2, BTreeMap::new())?;
            let s0 = SystemState::new(0.0, vec![0.0, 0.0], vec![1.0, 0.5]);
            Ok(sc(sigma_ne_rho(p["shear"]), lag, None, Mode::Free, s0, p["t1"], "general"))
        }
        other => Err(Error::InvalidInput(format!("unknown scenario `{other}` (known: {})", BUILTIN_NAMES.join(", ")))),
    }
}

#[cfg(test)]
mod tests;
