//! General algebroids in a single coordinate chart.
//!
//! A chart on a vector bundle `E → M` with base coordinates `x1..xn` and
//! fiber coordinates `y1..ym` is described by three families of functions
//! of `x`:
//!
//! * the left anchor `rho[a][i]` (drives admissibility, `ẋ = ρ y`),
//! * the right anchor `sigma[a][j]` (enters variations and forces),
//! * the bracket coefficients `c[k][i][j]`.
//!
//! The coefficients are stored in full; skewness of `c` and `ρ = σ` are
//! properties to be checked ([`AlgebroidChart::check_axioms`]), not
//! assumptions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expr, VarSpace};
use crate::linalg::max_abs;
use crate::trajectory::{differentiate4, Trajectory};

/// Threshold applied to the axiom residuals when deciding the class of a
/// chart.
pub const TOL_AXIOM: f64 = 1e-9;

/// Relative tolerance for "same base tangent vector" preconditions.
pub fn tol_compat(xdot: &[f64]) -> f64 {
    1e-8 * (1.0 + max_abs(xdot))
}

/// A point `(x, y, p, ξ)` of `T*E`.
#[derive(Clone, Debug, PartialEq)]
pub struct CotangentEPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub xi: Vec<f64>,
}

/// A point `(x, ξ, ẋ, ξ̇)` of `TE*`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentEDualPoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub xdot: Vec<f64>,
    pub xidot: Vec<f64>,
}

/// A point `(x, y, ẋ, ẏ)` of `TE`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentEPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub xdot: Vec<f64>,
    pub ydot: Vec<f64>,
}

/// A section `X = X^i(x) e_i`.
#[derive(Clone, Debug)]
pub struct SectionExpr {
    pub components: Vec<Expr>,
}

impl SectionExpr {
    pub fn new(components: Vec<Expr>) -> Self {
        SectionExpr { components }
    }

    pub fn parse(components: &[&str]) -> Result<Self> {
        Ok(SectionExpr { components: components.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()? })
    }

    /// Constant section.
    pub fn constant(values: &[f64]) -> Self {
        SectionExpr { components: values.iter().map(|&v| Expr::constant(v)).collect() }
    }
}

/// Outcome of [`AlgebroidChart::check_axioms`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub is_quasi_lie: bool,
    pub is_lie: bool,
    pub anchor_hom_residual: f64,
    pub jacobiator_residual: f64,
    pub skew_residual: f64,
    pub rho_sigma_residual: f64,
    pub samples_used: usize,
}

impl AxiomReport {
    /// `"lie"`, `"quasi_lie"` or `"general"`.
    pub fn class(&self) -> &'static str {
        if self.is_lie {
            "lie"
        } else if self.is_quasi_lie {
            "quasi_lie"
        } else {
            "general"
        }
    }
}

/// Structure functions evaluated at a base point.
#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    pub n: usize,
    pub m: usize,
    /// n×m
    pub rho: DMatrix<f64>,
    /// n×m
    pub sigma: DMatrix<f64>,
    /// `c[k][i][j]` flattened as `k*m*m + i*m + j`.
    pub c: Vec<f64>,
}

impl Structure {
    #[inline]
    pub fn c(&self, k: usize, i: usize, j: usize) -> f64 {
        self.c[(k * self.m + i) * self.m + j]
    }

    /// `out^k = c^k_{ij} a^i b^j`.
    pub fn bracket(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        contract_bracket(&self.c, self.m, a, b)
    }

    /// `out_j = c^k_{ij} a^i ξ_k`.
    pub fn coadjoint(&self, a: &[f64], xi: &[f64]) -> Vec<f64> {
        contract_coadjoint(&self.c, self.m, a, xi)
    }

    pub fn anchor(&self, y: &[f64]) -> Vec<f64> {
        (&self.rho * DVector::from_column_slice(y)).as_slice().to_vec()
    }

    pub fn right_anchor(&self, y: &[f64]) -> Vec<f64> {
        (&self.sigma * DVector::from_column_slice(y)).as_slice().to_vec()
    }
}

pub(crate) fn contract_bracket(c: &[f64], m: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (k, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..m {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..m {
                s += c[(k * m + i) * m + j] * a[i] * b[j];
            }
        }
        *o = s;
    }
    out
}

pub(crate) fn contract_coadjoint(c: &[f64], m: usize, a: &[f64], xi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (j, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in 0..m {
            for i in 0..m {
                s += c[(k * m + i) * m + j] * a[i] * xi[k];
            }
        }
        *o = s;
    }
    out
}

/// Structure functions and their first `x`-derivatives at a base point.
#[derive(Clone, Debug)]
pub struct StructureDerivs {
    pub value: Structure,
    /// `d_rho[l] = ∂ρ/∂x^l`
    pub d_rho: Vec<DMatrix<f64>>,
    pub d_sigma: Vec<DMatrix<f64>>,
    /// `d_c[l]` flattened like [`Structure::c`].
    pub d_c: Vec<Vec<f64>>,
}

/// An algebroid given by its structure functions in one chart.
#[derive(Clone, Debug)]
pub struct AlgebroidChart {
    n: usize,
    m: usize,
    rho: Vec<Expr>,
    sigma: Vec<Expr>,
    c: Vec<Expr>,
    space: VarSpace,
    b_rho: Vec<BoundExpr>,
    b_sigma: Vec<BoundExpr>,
    b_c: Vec<BoundExpr>,
}

fn check_shape<T>(what: &str, rows: &[Vec<T>], r: usize, c: usize) -> Result<()> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch(format!("{what} must be {r}x{c}")));
    }
    Ok(())
}

impl AlgebroidChart {
    /// Build a chart from `rho` (n×m), `sigma` (n×m) and `c` (m×m×m, index
    /// order `[k][i][j]`). All expressions must be functions of `x1..xn`.
    pub fn new(n: usize, m: usize, rho: Vec<Vec<Expr>>, sigma: Vec<Vec<Expr>>, c: Vec<Vec<Vec<Expr>>>) -> Result<Self> {
        Self::with_params(n, m, rho, sigma, c, &BTreeMap::new())
    }

    /// Like [`AlgebroidChart::new`], substituting named parameters first.
    pub fn with_params(
        n: usize,
        m: usize,
        rho: Vec<Vec<Expr>>,
        sigma: Vec<Vec<Expr>>,
        c: Vec<Vec<Vec<Expr>>>,
        params: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::DimensionMismatch("base dimension and fiber rank must be positive".into()));
        }
        check_shape("rho", &rho, n, m)?;
        check_shape("sigma", &sigma, n, m)?;
        if c.len() != m {
            return Err(Error::DimensionMismatch(format!("c must be {m}x{m}x{m}")));
        }
        for ck in &c {
            check_shape("c", ck, m, m)?;
        }
        let flat = |v: Vec<Vec<Expr>>| v.into_iter().flatten().map(|e| e.substitute_values(params)).collect::<Vec<_>>();
        let rho = flat(rho);
        let sigma = flat(sigma);
        let c: Vec<Expr> = c.into_iter().flatten().flatten().map(|e| e.substitute_values(params)).collect();
        Self::from_flat(n, m, rho, sigma, c)
    }

    fn from_flat(n: usize, m: usize, rho: Vec<Expr>, sigma: Vec<Expr>, c: Vec<Expr>) -> Result<Self> {
        let space = VarSpace::coordinates(n, 0, &[]);
        let none = BTreeMap::new();
        let bind = |es: &[Expr], what: &str| -> Result<Vec<BoundExpr>> {
            es.iter()
                .map(|e| {
                    e.bind(&space, &none).map_err(|err| match err {
                        Error::UnboundVariable(v) => {
                            Error::InvalidInput(format!("{what} entry `{e}` depends on `{v}`, expected only x1..x{n}"))
                        }
                        other => other,
                    })
                })
                .collect()
        };
        let b_rho = bind(&rho, "rho")?;
        let b_sigma = bind(&sigma, "sigma")?;
        let b_c = bind(&c, "c")?;
        Ok(AlgebroidChart { n, m, rho, sigma, c, space, b_rho, b_sigma, b_c })
    }

    /// Parse a chart from expression strings.
    pub fn parse(n: usize, m: usize, rho: &[Vec<&str>], sigma: &[Vec<&str>], c: &[Vec<Vec<&str>>]) -> Result<Self> {
        let p2 = |v: &[Vec<&str>]| -> Result<Vec<Vec<Expr>>> {
            v.iter().map(|row| row.iter().map(|s| Expr::parse(s)).collect()).collect()
        };
        let c = c.iter().map(|ck| p2(ck)).collect::<Result<Vec<_>>>()?;
        Self::new(n, m, p2(rho)?, p2(sigma)?, c)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rho(&self, a: usize, i: usize) -> &Expr {
        &self.rho[a * self.m + i]
    }

    pub fn sigma(&self, a: usize, j: usize) -> &Expr {
        &self.sigma[a * self.m + j]
    }

    pub fn c(&self, k: usize, i: usize, j: usize) -> &Expr {
        &self.c[(k * self.m + i) * self.m + j]
    }

    /// Nested copies of the structure expressions `(rho, sigma, c)`.
    pub fn to_nested(&self) -> (Vec<Vec<Expr>>, Vec<Vec<Expr>>, Vec<Vec<Vec<Expr>>>) {
        let (n, m) = (self.n, self.m);
        let rho = (0..n).map(|a| (0..m).map(|i| self.rho(a, i).clone()).collect()).collect();
        let sigma = (0..n).map(|a| (0..m).map(|i| self.sigma(a, i).clone()).collect()).collect();
        let c = (0..m).map(|k| (0..m).map(|i| (0..m).map(|j| self.c(k, i, j).clone()).collect()).collect()).collect();
        (rho, sigma, c)
    }

    /// Base coordinate space `x1..xn`.
    pub fn base_space(&self) -> &VarSpace {
        &self.space
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch(format!("base point has {} coordinates, expected {}", x.len(), self.n)));
        }
        Ok(())
    }

    fn check_fiber(&self, what: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.m {
            return Err(Error::DimensionMismatch(format!("{what} has {} components, expected {}", v.len(), self.m)));
        }
        Ok(())
    }

    fn check_base_vec(&self, what: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch(format!("{what} has {} components, expected {}", v.len(), self.n)));
        }
        Ok(())
    }

    /// Evaluate `ρ, σ, c` at `x`.
    pub fn structure_at(&self, x: &[f64]) -> Result<Structure> {
        self.check_x(x)?;
        let eval = |bs: &[BoundExpr]| bs.iter().map(|b| b.value(x)).collect::<Result<Vec<f64>>>();
        let rho = DMatrix::from_row_slice(self.n, self.m, &eval(&self.b_rho)?);
        let sigma = DMatrix::from_row_slice(self.n, self.m, &eval(&self.b_sigma)?);
        let c = eval(&self.b_c)?;
        Ok(Structure { n: self.n, m: self.m, rho, sigma, c })
    }

    /// Evaluate `ρ, σ, c` and their first derivatives in `x` at `x`.
    pub fn structure_derivs_at(&self, x: &[f64]) -> Result<StructureDerivs> {
        self.check_x(x)?;
        let n = self.n;
        let seeds: Vec<usize> = (0..n).collect();
        let grads = |bs: &[BoundExpr]| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
            let mut vals = Vec::with_capacity(bs.len());
            let mut d = vec![Vec::with_capacity(bs.len()); n];
            for b in bs {
                let (v, g) = b.gradient(x, &seeds)?;
                vals.push(v);
                for l in 0..n {
                    d[l].push(g[l]);
                }
            }
            Ok((vals, d))
        };
        let (rv, rd) = grads(&self.b_rho)?;
        let (sv, sd) = grads(&self.b_sigma)?;
        let (cv, cd) = grads(&self.b_c)?;
        let mat = |v: &[f64]| DMatrix::from_row_slice(self.n, self.m, v);
        Ok(StructureDerivs {
            value: Structure { n, m: self.m, rho: mat(&rv), sigma: mat(&sv), c: cv },
            d_rho: rd.iter().map(|v| mat(v)).collect(),
            d_sigma: sd.iter().map(|v| mat(v)).collect(),
            d_c: cd,
        })
    }

    /// The ε-map `T*E → TE*`:
    /// `(x, y, p, ξ) ↦ (x, ξ, ρ(x) y, c^k_{ij} y^i ξ_k + σ^a_j p_a)`.
    pub fn epsilon_map(&self, w: &CotangentEPoint) -> Result<TangentEDualPoint> {
        self.check_fiber("y", &w.y)?;
        self.check_fiber("xi", &w.xi)?;
        self.check_base_vec("p", &w.p)?;
        let s = self.structure_at(&w.x)?;
        let xdot = s.anchor(&w.y);
        let mut xidot = s.coadjoint(&w.y, &w.xi);
        for (j, v) in xidot.iter_mut().enumerate() {
            for a in 0..self.n {
                *v += s.sigma[(a, j)] * w.p[a];
            }
        }
        Ok(TangentEDualPoint { x: w.x.clone(), xi: w.xi.clone(), xdot, xidot })
    }

    /// The κ relation in its functional direction: for `v = (x, Y, ẋ, Ẏ)`
    /// and a fiber point `e` with `ρ(x) e = ẋ`, returns
    /// `(x, e, σ(x) Y, Ẏ^j + c^j_{kl} e^k Y^l)`.
    pub fn kappa_apply(&self, v: &TangentEPoint, e_fiber: &[f64]) -> Result<TangentEPoint> {
        self.check_fiber("Y", &v.y)?;
        self.check_fiber("Ydot", &v.ydot)?;
        self.check_fiber("e", e_fiber)?;
        self.check_base_vec("xdot", &v.xdot)?;
        let s = self.structure_at(&v.x)?;
        let re = s.anchor(e_fiber);
        let residual = max_abs(&re.iter().zip(&v.xdot).map(|(a, b)| a - b).collect::<Vec<_>>());
        let tol = tol_compat(&v.xdot);
        if residual > tol {
            return Err(Error::CompatibilityViolation { residual, tol });
        }
        let xdot = s.right_anchor(&v.y);
        let br = s.bracket(e_fiber, &v.y);
        let ydot = v.ydot.iter().zip(&br).map(|(a, b)| a + b).collect();
        Ok(TangentEPoint { x: v.x.clone(), y: e_fiber.to_vec(), xdot, ydot })
    }

    /// `|⟨v, ε(w)⟩_{TE×TE*} − ⟨κ(v)_e, w⟩_{TE×T*E}|`; zero for every valid
    /// input because κ is dual to ε.
    pub fn kappa_duality_residual(&self, v: &TangentEPoint, e_fiber: &[f64], w: &CotangentEPoint) -> Result<f64> {
        let out = self.kappa_apply(v, e_fiber)?;
        let base = max_abs(&w.x.iter().zip(&v.x).map(|(a, b)| a - b).collect::<Vec<_>>())
            .max(max_abs(&w.y.iter().zip(e_fiber).map(|(a, b)| a - b).collect::<Vec<_>>()));
        if base > tol_compat(&v.x) {
            return Err(Error::BaseMismatch(base));
        }
        let ew = self.epsilon_map(w)?;
        let lhs = tangent_pairing(v, &ew)?;
        let rhs = dot(&out.xdot, &w.p) + dot(&out.ydot, &w.xi);
        Ok((lhs - rhs).abs())
    }

    /// `|ẋ − ρ(x) y|∞`; zero exactly on holonomic vectors.
    pub fn holonomic_vector_residual(&self, v: &TangentEPoint) -> Result<f64> {
        self.check_fiber("y", &v.y)?;
        self.check_base_vec("xdot", &v.xdot)?;
        let s = self.structure_at(&v.x)?;
        let ry = s.anchor(&v.y);
        Ok(max_abs(&ry.iter().zip(&v.xdot).map(|(a, b)| a - b).collect::<Vec<_>>()))
    }

    /// Admissibility of a sampled curve: `max_interior |Δx/Δt − ρ(x) y| ≤ tol`
    /// with central differences. Returns the verdict and the residual.
    pub fn is_admissible(&self, gamma: &Trajectory, tol: f64) -> Result<(bool, f64)> {
        if gamma.len() < 3 {
            return Err(Error::TooFewSamples { needed: 3, got: gamma.len() });
        }
        gamma.check_grid()?;
        let h = gamma.h;
        let mut worst: f64 = 0.0;
        for k in 1..gamma.len() - 1 {
            let s = &gamma.states[k];
            let xdot: Vec<f64> =
                gamma.states[k + 1].x.iter().zip(&gamma.states[k - 1].x).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let v = TangentEPoint { x: s.x.clone(), y: s.y.clone(), xdot, ydot: vec![0.0; self.m] };
            worst = worst.max(self.holonomic_vector_residual(&v)?);
        }
        Ok((worst <= tol, worst))
    }

    /// Admissible variation generated by the vertical variation `f(t)`:
    /// `(x, y, σ(x) f, ḟ + c(y, f))` per sample, with `ḟ` from fourth-order
    /// finite differences on the curve's grid.
    pub fn admissible_variation(&self, gamma: &Trajectory, f: &[Vec<f64>]) -> Result<Vec<TangentEPoint>> {
        if f.len() != gamma.len() {
            return Err(Error::GridMismatch(format!("{} variation samples for {} curve samples", f.len(), gamma.len())));
        }
        for fk in f {
            self.check_fiber("f", fk)?;
        }
        let fdot = differentiate4(f, gamma.h)?;
        gamma
            .states
            .iter()
            .zip(f.iter().zip(&fdot))
            .map(|(s, (fk, dk))| {
                let st = self.structure_at(&s.x)?;
                let xdot = st.right_anchor(fk);
                let br = st.bracket(&s.y, fk);
                let ydot = dk.iter().zip(&br).map(|(a, b)| a + b).collect();
                Ok(TangentEPoint { x: s.x.clone(), y: s.y.clone(), xdot, ydot })
            })
            .collect()
    }

    /// Bracket of sections at `x`:
    /// `[X,Y]^k = c^k_{ij} X^i Y^j + ρ^a_i X^i ∂_a Y^k − σ^a_j Y^j ∂_a X^k`.
    pub fn section_bracket(&self, xs: &SectionExpr, ys: &SectionExpr, x: &[f64]) -> Result<Vec<f64>> {
        let (xv, xd) = self.section_jet(xs, x)?;
        let (yv, yd) = self.section_jet(ys, x)?;
        let s = self.structure_at(x)?;
        Ok(bracket_from_jets(&s, &xv, &xd, &yv, &yd))
    }

    /// Values and x-gradients (`d[k][a] = ∂_a X^k`) of a section.
    pub fn section_jet(&self, sec: &SectionExpr, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.check_x(x)?;
        if sec.components.len() != self.m {
            return Err(Error::DimensionMismatch(format!("section has {} components, expected {}", sec.components.len(), self.m)));
        }
        let seeds: Vec<usize> = (0..self.n).collect();
        let mut vals = Vec::with_capacity(self.m);
        let mut grads = Vec::with_capacity(self.m);
        for e in &sec.components {
            let b = e.bind(&self.space, &BTreeMap::new())?;
            let (v, g) = b.gradient(x, &seeds)?;
            vals.push(v);
            grads.push(g);
        }
        Ok((vals, grads))
    }

    /// Numerical classification of the chart.
    ///
    /// Skewness of `c` and `ρ = σ` are checked directly; the Jacobi identity
    /// of the linear bivector on `E*` is checked on coordinate probes plus
    /// `probe_count` random affine probes (seeded deterministically) at
    /// every sample point, with fiber coordinates of `E*` drawn at random.
    pub fn check_axioms(&self, sample_points: &[Vec<f64>], probe_count: usize) -> Result<AxiomReport> {
        self.check_axioms_seeded(sample_points, probe_count, 0)
    }

    pub fn check_axioms_seeded(&self, sample_points: &[Vec<f64>], probe_count: usize, seed: u64) -> Result<AxiomReport> {
        if sample_points.is_empty() {
            return Err(Error::InvalidInput("check_axioms needs at least one sample point".into()));
        }
        let (n, m) = (self.n, self.m);
        let nn = n + m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probes: Vec<Vec<f64>> = (0..nn)
            .map(|i| {
                let mut v = vec![0.0; nn];
                v[i] = 1.0;
                v
            })
            .collect();
        for _ in 0..probe_count {
            probes.push((0..nn).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
        let mut rep = AxiomReport {
            is_quasi_lie: false,
            is_lie: false,
            anchor_hom_residual: 0.0,
            jacobiator_residual: 0.0,
            skew_residual: 0.0,
            rho_sigma_residual: 0.0,
            samples_used: sample_points.len(),
        };
        for x in sample_points {
            let d = self.structure_derivs_at(x).map_err(|e| e.at_point(x))?;
            let s = &d.value;
            for k in 0..m {
                for i in 0..m {
                    for j in 0..m {
                        rep.skew_residual = rep.skew_residual.max((s.c(k, i, j) + s.c(k, j, i)).abs());
                    }
                }
            }
            rep.rho_sigma_residual = rep.rho_sigma_residual.max((&s.rho - &s.sigma).abs().max());
            rep.anchor_hom_residual = rep.anchor_hom_residual.max(anchor_hom_residual(&d));
            let xi: Vec<f64> = (0..m)
                .map(|_| {
                    let mag: f64 = rng.gen_range(0.5..1.5);
                    if rng.gen_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            rep.jacobiator_residual = rep.jacobiator_residual.max(jacobiator(&d, &xi, &probes));
        }
        rep.is_quasi_lie = rep.skew_residual <= TOL_AXIOM && rep.rho_sigma_residual <= TOL_AXIOM;
        rep.is_lie = rep.is_quasi_lie && rep.jacobiator_residual <= TOL_AXIOM && rep.anchor_hom_residual <= TOL_AXIOM;
        Ok(rep)
    }

    /// Adjoint structure: the transposed bivector,
    /// `c^k_{ij} ↦ c^k_{ji}`, `ρ ↦ −σ`, `σ ↦ −ρ`.
    pub fn adjoint(&self) -> AlgebroidChart {
        let m = self.m;
        let c = (0..m * m * m)
            .map(|idx| {
                let (k, i, j) = (idx / (m * m), (idx / m) % m, idx % m);
                self.c(k, j, i).clone()
            })
            .collect();
        let rho = self.sigma.iter().map(Expr::neg).collect();
        let sigma = self.rho.iter().map(Expr::neg).collect();
        Self::from_flat(self.n, m, rho, sigma, c).expect("adjoint of a valid chart is valid")
    }

    /// Opposite structure: every structure function negated.
    pub fn opposite(&self) -> AlgebroidChart {
        let neg = |v: &[Expr]| v.iter().map(Expr::neg).collect();
        Self::from_flat(self.n, self.m, neg(&self.rho), neg(&self.sigma), neg(&self.c)).expect("opposite of a valid chart is valid")
    }

    /// Component-wise textual equality of the structure expressions.
    pub fn same_components(&self, other: &AlgebroidChart) -> bool {
        self.n == other.n && self.m == other.m && self.rho == other.rho && self.sigma == other.sigma && self.c == other.c
    }
}

pub(crate) fn bracket_from_jets(s: &Structure, xv: &[f64], xd: &[Vec<f64>], yv: &[f64], yd: &[Vec<f64>]) -> Vec<f64> {
    let mut out = s.bracket(xv, yv);
    let rx = s.anchor(xv);
    let sy = s.right_anchor(yv);
    for k in 0..s.m {
        for a in 0..s.n {
            out[k] += rx[a] * yd[k][a] - sy[a] * xd[k][a];
        }
    }
    out
}

/// `max |ρ^b_k c^k_{ij} − (ρ^a_i ∂_a ρ^b_j − ρ^a_j ∂_a ρ^b_i)|`.
fn anchor_hom_residual(d: &StructureDerivs) -> f64 {
    let s = &d.value;
    let (n, m) = (s.n, s.m);
    let mut worst: f64 = 0.0;
    for b in 0..n {
        for i in 0..m {
            for j in 0..m {
                let mut lhs = 0.0;
                for k in 0..m {
                    lhs += s.rho[(b, k)] * s.c(k, i, j);
                }
                let mut rhs = 0.0;
                for a in 0..n {
                    rhs += s.rho[(a, i)] * d.d_rho[a][(b, j)] - s.rho[(a, j)] * d.d_rho[a][(b, i)];
                }
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    worst
}

/// The linear bivector on `E*` at `(x, ξ)` as an N×N matrix with
/// coordinates ordered `(x1..xn, ξ1..ξm)`, and its partial derivatives.
pub(crate) fn bivector_with_derivs(d: &StructureDerivs, xi: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let s = &d.value;
    let (n, m) = (s.n, s.m);
    let nn = n + m;
    let fill = |rho: &DMatrix<f64>, sigma: &DMatrix<f64>, c: &[f64], xi: &[f64]| {
        let mut p = DMatrix::zeros(nn, nn);
        for i in 0..m {
            for b in 0..n {
                p[(n + i, b)] = rho[(b, i)];
                p[(b, n + i)] = -sigma[(b, i)];
            }
            for j in 0..m {
                let mut v = 0.0;
                for k in 0..m {
                    v += c[(k * m + i) * m + j] * xi[k];
                }
                p[(n + i, n + j)] = v;
            }
        }
        p
    };
    let p = fill(&s.rho, &s.sigma, &s.c, xi);
    let mut dp = Vec::with_capacity(nn);
    for l in 0..n {
        dp.push(fill(&d.d_rho[l], &d.d_sigma[l], &d.d_c[l], xi));
    }
    for k in 0..m {
        let mut unit = vec![0.0; m];
        unit[k] = 1.0;
        let z = DMatrix::zeros(n, m);
        dp.push(fill(&z, &z, &s.c, &unit));
    }
    (p, dp)
}

/// Max over ordered probe triples of `|{{f,g},h} + {{g,h},f} + {{h,f},g}|`
/// for linear probes `f = α·z`.
fn jacobiator(d: &StructureDerivs, xi: &[f64], probes: &[Vec<f64>]) -> f64 {
    let (p, dp) = bivector_with_derivs(d, xi);
    let nn = p.nrows();
    let q = probes.len();
    let pv: Vec<DVector<f64>> = probes.iter().map(|a| &p * DVector::from_column_slice(a)).collect();
    // row[α][l] = αᵀ ∂_l P
    let rows: Vec<Vec<DVector<f64>>> = probes
        .iter()
        .map(|a| {
            let av = DVector::from_column_slice(a);
            dp.iter().map(|m| m.tr_mul(&av)).collect()
        })
        .collect();
    // g[α][β] = ∇{α, β}
    let g: Vec<Vec<DVector<f64>>> = (0..q)
        .map(|ia| {
            (0..q)
                .map(|ib| {
                    let b = DVector::from_column_slice(&probes[ib]);
                    DVector::from_iterator(nn, (0..nn).map(|l| rows[ia][l].dot(&b)))
                })
                .collect()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for a in 0..q {
        for b in 0..q {
            for c in 0..q {
                let j = g[a][b].dot(&pv[c]) + g[b][c].dot(&pv[a]) + g[c][a].dot(&pv[b]);
                worst = worst.max(j.abs());
            }
        }
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairing of `TE` with `TE*` over the same base tangent vector:
/// `⟨ẏ, ξ⟩ + ⟨y, ξ̇⟩`, the time derivative of the fiber pairing.
pub fn tangent_pairing(v: &TangentEPoint, w: &TangentEDualPoint) -> Result<f64> {
    if v.x.len() != w.x.len() || v.xdot.len() != w.xdot.len() || v.y.len() != w.xi.len() {
        return Err(Error::DimensionMismatch("tangent pairing operands have different shapes".into()));
    }
    let dx = max_abs(&v.x.iter().zip(&w.x).map(|(a, b)| a - b).collect::<Vec<_>>());
    let dxd = max_abs(&v.xdot.iter().zip(&w.xdot).map(|(a, b)| a - b).collect::<Vec<_>>());
    if dx > tol_compat(&v.x) || dxd > tol_compat(&v.xdot) {
        return Err(Error::BaseMismatch(dx.max(dxd)));
    }
    Ok(dot(&v.ydot, &w.xi) + dot(&v.y, &w.xidot))
}
