//! File-driven front end: JSON system specs in, CSV trajectories, JSON
//! reports and gnuplot scripts out.
//!
//! Exit codes: 0 success, 1 expectation or identity check failed, 2 input
//! error, 3 numeric failure (singularity, drift, divergence).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebroid::{AlgebroidChart, AxiomReport};
use crate::constraints::{
    consistency_project, dalembert_residual, is_holonomic, theorem5_lift_residual, vakonomic_stationarity_residual,
    AffineConstraint, GeometricConstraint, HolonomicityReport,
};
use crate::dynamics::{embed_states, integrate, step_count, theorem3_tangency_residual, IntegratorConfig, Mode, System};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::lagrangian::{dw_pairing, ForceField, Lagrangian};
use crate::linalg::max_abs;
use crate::scenarios::{builtin, Scenario, ScenarioConstraint};
use crate::trajectory::{SystemState, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

// ---------------------------------------------------------------------------
// Spec format

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebroidSpec {
    pub n: usize,
    pub m: usize,
    /// n×m
    pub rho: Vec<Vec<String>>,
    /// n×m
    pub sigma: Vec<Vec<String>>,
    /// m×m×m, `c[k][i][j]`
    pub c: Vec<Vec<Vec<String>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianSpec {
    pub expr: String,
    /// Named constants; visible to every expression in the spec.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Nonlinear { phi: Vec<String> },
    Affine { e0: Vec<String>, basis: Vec<Vec<String>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub t0: f64,
    pub x: Vec<f64>,
    /// Full fiber point, or reduced coordinates in affine-reduced mode.
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

fn default_h() -> f64 {
    IntegratorConfig::default().h
}
fn default_cond_max() -> f64 {
    IntegratorConfig::default().cond_max
}
fn default_drift_tol() -> f64 {
    IntegratorConfig::default().drift_tol
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default = "default_h")]
    pub h: f64,
    pub t1: f64,
    #[serde(default = "default_cond_max")]
    pub cond_max: f64,
    #[serde(default = "default_drift_tol")]
    pub drift_tol: f64,
    /// Project onto the constraint set every this many steps (0 = never).
    /// A positive value also requests projection of the initial state.
    #[serde(default)]
    pub project_every: usize,
}

impl IntegratorSpec {
    pub fn config(&self) -> IntegratorConfig {
        IntegratorConfig { h: self.h, cond_max: self.cond_max, drift_tol: self.drift_tol, project_every: self.project_every }
    }
}

fn default_csv() -> String {
    "trajectory.csv".into()
}
fn default_report() -> String {
    "report.json".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_csv")]
    pub trajectory_csv: String,
    #[serde(default = "default_report")]
    pub report_json: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_script: Option<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { trajectory_csv: default_csv(), report_json: default_report(), plot_script: None }
    }
}

/// A complete run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub algebroid: AlgebroidSpec,
    pub lagrangian: LagrangianSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSpec>,
    pub mode: Mode,
    pub initial: InitialSpec,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub output: OutputSpec,
    /// Declared class of the chart: `lie`, `quasi_lie` or `general`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

const CLASSES: &[&str] = &["lie", "quasi_lie", "general"];

/// A spec resolved into library objects.
#[derive(Clone, Debug)]
pub struct BuiltSystem {
    pub chart: AlgebroidChart,
    pub lagrangian: Lagrangian,
    pub force: Option<ForceField>,
    pub constraint: Option<ScenarioConstraint>,
    pub mode: Mode,
    pub initial: SystemState,
    pub t1: f64,
    pub config: IntegratorConfig,
}

impl BuiltSystem {
    pub fn system(&self) -> System<'_> {
        match (&self.mode, &self.constraint) {
            (Mode::Nonholonomic, Some(ScenarioConstraint::Geometric(c))) => System::Nonholonomic(c),
            (Mode::Vakonomic, Some(ScenarioConstraint::Geometric(c))) => System::Vakonomic(c),
            (Mode::AffineReduced, Some(ScenarioConstraint::Affine(a))) => System::AffineReduced(a),
            _ => System::Free,
        }
    }

    pub fn integrate(&self) -> Result<Trajectory> {
        integrate(&self.chart, &self.lagrangian, self.force.as_ref(), self.system(), &self.initial, self.t1, &self.config)
    }
}

fn parse_field(path: &str, src: &str) -> Result<Expr> {
    Expr::parse(src).map_err(|e| Error::InvalidInput(format!("{path}: {e}")))
}

fn parse_matrix(path: &str, rows: &[Vec<String>]) -> Result<Vec<Vec<Expr>>> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, s)| parse_field(&format!("{path}[{i}][{j}]"), s)).collect())
        .collect()
}

fn strings(v: &[Expr]) -> Vec<String> {
    v.iter().map(|e| e.to_string()).collect()
}

impl SystemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    /// Spec equivalent to a built-in scenario, with the given integrator
    /// settings (the scenario's end time replaces `integrator.t1`).
    pub fn from_scenario(sc: &Scenario, integrator: &IntegratorSpec) -> Self {
        let (rho, sigma, c) = sc.chart.to_nested();
        let mat = |m: Vec<Vec<Expr>>| m.iter().map(|r| strings(r)).collect::<Vec<_>>();
        let constraint = sc.constraint.as_ref().map(|c| match c {
            ScenarioConstraint::Geometric(g) => ConstraintSpec::Nonlinear { phi: strings(g.exprs()) },
            ScenarioConstraint::Affine(a) => ConstraintSpec::Affine {
                e0: strings(&a.e0().components),
                basis: a.basis().iter().map(|b| strings(&b.components)).collect(),
            },
        });
        SystemSpec {
            name: Some(sc.name.clone()),
            algebroid: AlgebroidSpec {
                n: sc.chart.n(),
                m: sc.chart.m(),
                rho: mat(rho),
                sigma: mat(sigma),
                c: c.into_iter().map(mat).collect(),
            },
            lagrangian: LagrangianSpec { expr: sc.lagrangian.expr().to_string(), params: sc.lagrangian.params().clone() },
            force: sc.force.as_ref().map(|f| strings(f.exprs())),
            constraint,
            mode: sc.mode,
            initial: InitialSpec {
                t0: sc.initial.t,
                x: sc.initial.x.clone(),
                y: sc.initial.y.clone(),
                mu: if sc.mode == Mode::Vakonomic { Some(sc.initial.mu.clone()) } else { None },
            },
            integrator: IntegratorSpec { t1: sc.t1, ..integrator.clone() },
            output: OutputSpec::default(),
            expect: Some(sc.expect.to_string()),
            seed: None,
        }
    }

    /// Resolve expressions and cross-check every dimension and the
    /// mode/constraint combination.
    pub fn build(&self) -> Result<BuiltSystem> {
        let a = &self.algebroid;
        let (n, m) = (a.n, a.m);
        let params = &self.lagrangian.params;
        let c = a
            .c
            .iter()
            .enumerate()
            .map(|(k, ck)| parse_matrix(&format!("algebroid.c[{k}]"), ck))
            .collect::<Result<Vec<_>>>()?;
        let chart = AlgebroidChart::with_params(
            n,
            m,
            parse_matrix("algebroid.rho", &a.rho)?,
            parse_matrix("algebroid.sigma", &a.sigma)?,
            c,
            params,
        )?;
        let lagrangian = Lagrangian::new(parse_field("lagrangian.expr", &self.lagrangian.expr)?, n, m, params.clone())?;
        let force = match &self.force {
            Some(f) => {
                let exprs =
                    f.iter().enumerate().map(|(i, s)| parse_field(&format!("force[{i}]"), s)).collect::<Result<Vec<_>>>()?;
                Some(ForceField::new(exprs, n, m, params)?)
            }
            None => None,
        };
        let constraint = match &self.constraint {
            Some(ConstraintSpec::Nonlinear { phi }) => {
                let exprs =
                    phi.iter().enumerate().map(|(i, s)| parse_field(&format!("constraint.phi[{i}]"), s)).collect::<Result<_>>()?;
                Some(ScenarioConstraint::Geometric(GeometricConstraint::new(exprs, n, m, params)?))
            }
            Some(ConstraintSpec::Affine { e0, basis }) => {
                let e0 = e0.iter().enumerate().map(|(i, s)| parse_field(&format!("constraint.e0[{i}]"), s)).collect::<Result<_>>()?;
                let basis = basis
                    .iter()
                    .enumerate()
                    .map(|(b, v)| {
                        v.iter().enumerate().map(|(i, s)| parse_field(&format!("constraint.basis[{b}][{i}]"), s)).collect()
                    })
                    .collect::<Result<_>>()?;
                Some(ScenarioConstraint::Affine(AffineConstraint::new(e0, basis, n, m, params)?))
            }
            None => None,
        };
        let ok = matches!(
            (self.mode, &constraint),
            (Mode::Free, None)
                | (Mode::Nonholonomic, Some(ScenarioConstraint::Geometric(_)))
                | (Mode::Vakonomic, Some(ScenarioConstraint::Geometric(_)))
                | (Mode::AffineReduced, Some(ScenarioConstraint::Affine(_)))
        );
        if !ok {
            let has = match &self.constraint {
                None => "no constraint",
                Some(ConstraintSpec::Nonlinear { .. }) => "a nonlinear constraint",
                Some(ConstraintSpec::Affine { .. }) => "an affine constraint",
            };
            return Err(Error::InvalidInput(format!("mode `{}` cannot be used with {has}", mode_name(self.mode))));
        }
        if let Some(e) = &self.expect {
            if !CLASSES.contains(&e.as_str()) {
                return Err(Error::InvalidInput(format!("expect must be one of {CLASSES:?}, got `{e}`")));
            }
        }

        let init = &self.initial;
        if init.x.len() != n {
            return Err(Error::DimensionMismatch(format!("initial.x has {} entries, expected {n}", init.x.len())));
        }
        match (self.mode, &init.mu) {
            (Mode::Vakonomic, None) => return Err(Error::InvalidInput("vakonomic mode needs initial.mu".into())),
            (Mode::Vakonomic, _) | (_, None) => {}
            (_, Some(_)) => return Err(Error::InvalidInput("initial.mu is only meaningful in vakonomic mode".into())),
        }
        let config = self.integrator.config();
        step_count(init.t0, self.integrator.t1, config.h)?;
        let mut y = init.y.clone();
        match &constraint {
            Some(ScenarioConstraint::Affine(aff)) => {
                if y.len() == m && m != aff.r() {
                    let red = aff.reduce(&init.x, &y)?;
                    let back = aff.embed(&init.x, &red)?;
                    let off = max_abs(&back.iter().zip(&y).map(|(p, q)| p - q).collect::<Vec<_>>());
                    if off > 1e-9 * (1.0 + max_abs(&y)) {
                        return Err(Error::InvalidInput(format!("initial.y is off the affine subbundle by {off:e}")));
                    }
                    y = red;
                } else if y.len() != aff.r() {
                    return Err(Error::DimensionMismatch(format!(
                        "initial.y has {} entries, expected {m} (full) or {} (reduced)",
                        y.len(),
                        aff.r()
                    )));
                }
            }
            _ => {
                if y.len() != m {
                    return Err(Error::DimensionMismatch(format!("initial.y has {} entries, expected {m}", y.len())));
                }
            }
        }
        if let Some(ScenarioConstraint::Geometric(g)) = &constraint {
            if let Some(mu) = &init.mu {
                if mu.len() != g.k() {
                    return Err(Error::DimensionMismatch(format!("initial.mu has {} entries, expected {}", mu.len(), g.k())));
                }
            }
            if config.project_every > 0 && g.residual(&init.x, &y)? > 0.0 {
                y = consistency_project(g, &init.x, &y)?;
                info!("initial fiber point projected onto the constraint set");
            }
        }
        let initial = SystemState::new(init.t0, init.x.clone(), y).with_mu(init.mu.clone().unwrap_or_default());
        Ok(BuiltSystem { chart, lagrangian, force, constraint, mode: self.mode, initial, t1: self.integrator.t1, config })
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Free => "free",
        Mode::Nonholonomic => "nonholonomic",
        Mode::Vakonomic => "vakonomic",
        Mode::AffineReduced => "affine_reduced",
    }
}

// ---------------------------------------------------------------------------
// Reports

/// One numerical identity checked by a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub value: f64,
    /// Threshold the value is compared against; absent for informational
    /// entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}

impl IdentityCheck {
    fn gated(name: &str, value: f64, tol: f64) -> Self {
        IdentityCheck { name: name.into(), value, tol: Some(tol), passed: Some(value <= tol) }
    }

    fn info(name: &str, value: f64) -> Self {
        IdentityCheck { name: name.into(), value, tol: None, passed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub steps: usize,
    pub t0: f64,
    pub t1: f64,
    pub h: f64,
    pub max_delta_l_residual: f64,
    pub max_constraint_drift: f64,
    pub max_hessian_cond: f64,
    pub max_solve_residual: f64,
    /// d'Alembert remainder (nonholonomic) or relative vakonomic identity
    /// residual (vakonomic).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_identity: Option<IdentityCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationSummary {
    pub probes: usize,
    pub seed: u64,
    pub checks: Vec<IdentityCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mode: Mode,
    pub axiom: AxiomReport,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_met: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holonomicity: Option<HolonomicityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation: Option<VariationSummary>,
    /// Files written, relative to the output directory.
    #[serde(default)]
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

impl RunReport {
    /// True when every declared expectation and gated identity holds.
    pub fn passed(&self) -> bool {
        let gates = self
            .simulation
            .iter()
            .filter_map(|s| s.mode_identity.as_ref())
            .chain(self.variation.iter().flat_map(|v| v.checks.iter()))
            .all(|c| c.passed != Some(false));
        self.expect_met != Some(false) && gates
    }
}

// ---------------------------------------------------------------------------
// Commands

/// Number of random base points used by the axiom check.
pub const AXIOM_SAMPLES: usize = 100;
/// Random affine probes per sample point in the Jacobi check.
pub const AXIOM_PROBES: usize = 4;
/// Default number of variation probes.
pub const DEFAULT_PROBES: usize = 20;

fn sample_points(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn axiom_section(sys: &BuiltSystem, seed: u64) -> Result<AxiomReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_points(sys.chart.n(), AXIOM_SAMPLES, &mut rng);
    sys.chart.check_axioms_seeded(&pts, AXIOM_PROBES, seed)
}

fn base_report(command: &str, spec: &SystemSpec, sys: &BuiltSystem, seed: u64) -> Result<RunReport> {
    let axiom = axiom_section(sys, seed)?;
    let class = axiom.class().to_string();
    let expect_met = spec.expect.as_ref().map(|e| *e == class);
    Ok(RunReport {
        command: command.into(),
        name: spec.name.clone(),
        mode: spec.mode,
        axiom,
        class,
        expect: spec.expect.clone(),
        expect_met,
        simulation: None,
        holonomicity: None,
        variation: None,
        outputs: Vec::new(),
        wall_time_s: 0.0,
    })
}

/// Axiom classification only.
pub fn cmd_check(spec: &SystemSpec, seed: u64) -> Result<RunReport> {
    let t = Instant::now();
    let sys = spec.build()?;
    let mut rep = base_report("check", spec, &sys, seed)?;
    rep.wall_time_s = t.elapsed().as_secs_f64();
    Ok(rep)
}

fn holonomicity(sys: &BuiltSystem, seed: u64) -> Result<Option<HolonomicityReport>> {
    let Some(ScenarioConstraint::Affine(aff)) = &sys.constraint else {
        return Ok(None);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
    let pts = sample_points(sys.chart.n(), 20, &mut rng);
    match is_holonomic(&sys.chart, aff, &pts) {
        Ok(r) => Ok(Some(r)),
        Err(e @ Error::NotQuasiLie { .. }) => {
            warn!("holonomicity test skipped: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Trajectory with fiber points in full coordinates (embedded in
/// affine-reduced mode).
pub fn full_trajectory(sys: &BuiltSystem, traj: &Trajectory) -> Result<Trajectory> {
    match &sys.constraint {
        Some(ScenarioConstraint::Affine(aff)) if sys.mode == Mode::AffineReduced => embed_states(aff, traj),
        _ => Ok(traj.clone()),
    }
}

fn simulation_summary(sys: &BuiltSystem, traj: &Trajectory) -> Result<SimulationSummary> {
    let d = &traj.diagnostics;
    let fold = |f: fn(&crate::trajectory::SampleDiagnostics) -> f64| d.iter().map(f).fold(0.0, f64::max);
    let h = sys.config.h;
    let mode_identity = match sys.system() {
        System::Nonholonomic(c) => {
            let v = dalembert_residual(&sys.chart, &sys.lagrangian, sys.force.as_ref(), c, traj, sys.config.drift_tol)?;
            Some(IdentityCheck::gated("dalembert_remainder", v, (1e-8f64).max(50.0 * h * h)))
        }
        System::Vakonomic(_) => Some(IdentityCheck::gated("vakonomic_identity_relative", fold(|s| s.solve_residual), 1e-10)),
        _ => None,
    };
    Ok(SimulationSummary {
        steps: traj.len().saturating_sub(1),
        t0: traj.t0(),
        t1: traj.last().map_or(traj.t0(), |s| s.t),
        h,
        max_delta_l_residual: fold(|s| s.delta_l_residual),
        max_constraint_drift: fold(|s| s.constraint_residual),
        max_hessian_cond: fold(|s| s.hessian_cond),
        max_solve_residual: fold(|s| s.solve_residual),
        mode_identity,
    })
}

/// Integrate and summarise; returns the report and the trajectory in full
/// fiber coordinates.
pub fn cmd_simulate(spec: &SystemSpec, seed: u64) -> Result<(RunReport, Trajectory)> {
    let t = Instant::now();
    let sys = spec.build()?;
    let mut rep = base_report("simulate", spec, &sys, seed)?;
    rep.holonomicity = holonomicity(&sys, seed)?;
    let traj = sys.integrate()?;
    rep.simulation = Some(simulation_summary(&sys, &traj)?);
    let full = full_trajectory(&sys, &traj)?;
    rep.wall_time_s = t.elapsed().as_secs_f64();
    Ok((rep, full))
}

/// Endpoint-vanishing probe `f_k(t) = sin(kπ(t − t0)/T) u_k` with a
/// random unit direction `u_k`.
pub fn variation_probes(traj: &Trajectory, m: usize, count: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = traj.t0();
    let span = traj.last().map_or(0.0, |s| s.t) - t0;
    (1..=count)
        .map(|k| {
            let mut u: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nrm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            u.iter_mut().for_each(|v| *v /= nrm);
            traj.states
                .iter()
                .map(|s| {
                    let a = (k as f64 * std::f64::consts::PI * (s.t - t0) / span).sin();
                    u.iter().map(|v| a * v).collect()
                })
                .collect()
        })
        .collect()
}

/// Size of the covector data along a trajectory, used to scale the
/// variational residuals: `1 + max (|λ|∞ + |∂L/∂x|∞)`.
pub fn momentum_scale(lag: &Lagrangian, traj: &Trajectory) -> Result<f64> {
    let mut s: f64 = 0.0;
    for st in &traj.states {
        let j = lag.legendre_jet(&st.x, &st.y, st.t)?;
        s = s.max(max_abs(&j.lam) + max_abs(&j.dldx));
    }
    Ok(1.0 + s)
}

/// Mode-appropriate variational identities along a fresh integration.
pub fn cmd_variation_test(spec: &SystemSpec, probes: usize, seed: u64) -> Result<RunReport> {
    let t = Instant::now();
    let sys = spec.build()?;
    let mut rep = base_report("variation-test", spec, &sys, seed)?;
    rep.holonomicity = holonomicity(&sys, seed)?;
    let traj = sys.integrate()?;
    rep.simulation = Some(simulation_summary(&sys, &traj)?);
    let (a, lag) = (&sys.chart, &sys.lagrangian);
    let mut checks = Vec::new();
    match sys.system() {
        System::Free => {
            let fs = variation_probes(&traj, a.m(), probes, seed);
            let scale = momentum_scale(lag, &traj)?;
            let (mut worst, mut gap, mut tangency) = (0.0f64, 0.0f64, 0.0f64);
            for f in &fs {
                let d = dw_pairing(a, lag, &traj, f)?;
                // With a force the solution satisfies δL = η, so subtract ∫ f·η.
                let forced = match &sys.force {
                    Some(ff) => {
                        let vals = traj
                            .states
                            .iter()
                            .zip(f)
                            .map(|(s, fk)| Ok(ff.eval(&s.x, &s.y, s.t)?.iter().zip(fk).map(|(p, q)| p * q).sum::<f64>()))
                            .collect::<Result<Vec<_>>>()?;
                        crate::trajectory::quadrature(&vals, traj.h)?
                    }
                    None => 0.0,
                };
                worst = worst.max((d.total - forced).abs());
                gap = gap.max((d.total - d.direct).abs());
                tangency = tangency.max(theorem3_tangency_residual(a, &traj, f)?);
            }
            checks.push(IdentityCheck::gated("dw_endpoint_vanishing", worst, 1e-5 * scale));
            checks.push(IdentityCheck::gated("dw_route_gap", gap, 1e-5 * scale));
            checks.push(IdentityCheck::info("tangency_defect", tangency));
        }
        System::Nonholonomic(c) => {
            let h = sys.config.h;
            let v = dalembert_residual(a, lag, sys.force.as_ref(), c, &traj, sys.config.drift_tol)?;
            checks.push(IdentityCheck::gated("dalembert_remainder", v, (1e-8f64).max(50.0 * h * h)));
            let chetaev = traj.diagnostics.iter().map(|d| d.delta_l_residual).fold(0.0, f64::max);
            checks.push(IdentityCheck::info("chetaev_fd_residual", chetaev));
        }
        System::Vakonomic(c) => {
            let rel = traj.diagnostics.iter().map(|d| d.solve_residual).fold(0.0, f64::max);
            checks.push(IdentityCheck::gated("vakonomic_identity_relative", rel, 1e-10));
            let mut stat: f64 = 0.0;
            for s in &traj.states {
                stat = stat.max(vakonomic_stationarity_residual(a, lag, sys.force.as_ref(), c, s)?);
            }
            checks.push(IdentityCheck::gated("stationarity", stat, 1e-8));
            checks.push(IdentityCheck::info("lift_admissibility", theorem5_lift_residual(a, lag, Some(c), &traj)?));
        }
        System::AffineReduced(_) => {
            let v = traj.diagnostics.iter().map(|d| d.delta_l_residual).fold(0.0, f64::max);
            checks.push(IdentityCheck::info("reduced_delta_l_fd_residual", v));
        }
    }
    rep.variation = Some(VariationSummary { probes, seed, checks });
    rep.wall_time_s = t.elapsed().as_secs_f64();
    Ok(rep)
}

/// Gnuplot script plotting base and fiber coordinates against time.
pub fn gnuplot_script(csv_name: &str, n: usize, m: usize, k: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set xlabel 't'");
    let rows = if k > 0 { 3 } else { 2 };
    let _ = writeln!(s, "set multiplot layout {rows},1");
    let _ = writeln!(s, "set ylabel 'x'");
    let _ = writeln!(s, "plot for [i=2:{}] '{csv_name}' using 1:i with lines", 1 + n);
    let _ = writeln!(s, "set ylabel 'y'");
    let _ = writeln!(s, "plot for [i={}:{}] '{csv_name}' using 1:i with lines", 2 + n, 1 + n + m);
    if k > 0 {
        let _ = writeln!(s, "set ylabel 'mu'");
        let _ = writeln!(s, "plot for [i={}:{}] '{csv_name}' using 1:i with lines", 2 + n + m, 1 + n + m + k);
    }
    let _ = writeln!(s, "unset multiplot");
    s
}

// ---------------------------------------------------------------------------
// Argument handling

#[derive(Debug, Parser)]
#[command(name = "algebroid", version, about = "Lagrangian mechanics on general algebroids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify the algebroid chart and compare with the declared class.
    Check(RunArgs),
    /// Integrate the system and write trajectory, report and plot script.
    Simulate(RunArgs),
    /// Integrate, then evaluate the variational identities for the mode.
    VariationTest(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON system spec; optional when --scenario is given.
    pub spec: Option<PathBuf>,
    /// Built-in scenario replacing the system part of the spec.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Scenario parameter override, `name=value` (repeatable).
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Seed for sample points and probes (default: spec seed, else 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: the spec's directory, else the current one).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of variation probes.
    #[arg(long, default_value_t = DEFAULT_PROBES)]
    pub probes: usize,
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("bad value in `{s}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// Combine the spec file and scenario options into one spec.
pub fn resolve_spec(args: &RunArgs) -> Result<SystemSpec> {
    let file = args.spec.as_deref().map(SystemSpec::load).transpose()?;
    let mut spec = match (&args.scenario, file) {
        (None, Some(spec)) => {
            if !args.params.is_empty() {
                return Err(Error::InvalidInput("--param needs --scenario".into()));
            }
            spec
        }
        (None, None) => return Err(Error::InvalidInput("need a spec file or --scenario".into())),
        (Some(name), file) => {
            let params: BTreeMap<String, f64> = args.params.iter().cloned().collect();
            let sc = builtin(name, &params)?;
            let integ = match &file {
                Some(f) => f.integrator.clone(),
                None => {
                    // Largest step ≤ the default that divides the interval.
                    let span = sc.t1 - sc.initial.t;
                    let h = span / (span / default_h()).ceil();
                    IntegratorSpec { h, t1: sc.t1, cond_max: default_cond_max(), drift_tol: default_drift_tol(), project_every: 0 }
                }
            };
            let mut s = SystemSpec::from_scenario(&sc, &integ);
            if let Some(f) = file {
                s.output = f.output;
                s.seed = f.seed;
            }
            s
        }
    };
    if let Some(seed) = args.seed {
        spec.seed = Some(seed);
    }
    Ok(spec)
}

fn out_dir(args: &RunArgs) -> PathBuf {
    match (&args.out, &args.spec) {
        (Some(d), _) => d.clone(),
        (None, Some(p)) => p.parent().map(Path::to_path_buf).unwrap_or_default(),
        (None, None) => PathBuf::from("."),
    }
}

fn write_report(dir: &Path, name: &str, rep: &RunReport) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(rep)? + "\n")?;
    Ok(())
}

fn execute(command: &Command) -> Result<RunReport> {
    let (args, kind) = match command {
        Command::Check(a) => (a, "check"),
        Command::Simulate(a) => (a, "simulate"),
        Command::VariationTest(a) => (a, "variation-test"),
    };
    let spec = resolve_spec(args)?;
    let seed = spec.seed.unwrap_or(0);
    let dir = out_dir(args);
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir)?;
    }
    let mut rep = match kind {
        "check" => cmd_check(&spec, seed)?,
        "simulate" => {
            let (mut rep, traj) = cmd_simulate(&spec, seed)?;
            traj.write_csv_file(&dir.join(&spec.output.trajectory_csv))?;
            rep.outputs.push(spec.output.trajectory_csv.clone());
            if let Some(plot) = &spec.output.plot_script {
                let k = traj.states.first().map_or(0, |s| s.mu.len());
                let script = gnuplot_script(&spec.output.trajectory_csv, spec.algebroid.n, spec.algebroid.m, k);
                std::fs::write(dir.join(plot), script)?;
                rep.outputs.push(plot.clone());
            }
            rep
        }
        _ => cmd_variation_test(&spec, args.probes, seed)?,
    };
    rep.outputs.push(spec.output.report_json.clone());
    write_report(&dir, &spec.output.report_json, &rep)?;
    Ok(rep)
}

/// Run a parsed command line; prints the report to stdout and returns the
/// process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(&cli.command) {
        Ok(rep) => {
            println!("{}", serde_json::to_string_pretty(&rep).expect("report serialization cannot fail"));
            if rep.passed() {
                EXIT_OK
            } else {
                if rep.expect_met == Some(false) {
                    eprintln!("error: chart class is `{}` but the spec expects `{}`", rep.class, rep.expect.as_deref().unwrap_or(""));
                }
                for c in rep.variation.iter().flat_map(|v| v.checks.iter()).chain(rep.simulation.iter().filter_map(|s| s.mode_identity.as_ref())) {
                    if c.passed == Some(false) {
                        eprintln!("error: {} = {:e} exceeds {:e}", c.name, c.value, c.tol.unwrap_or(0.0));
                    }
                }
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
