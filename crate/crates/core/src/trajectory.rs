//! Sampled states on a uniform time grid, plus the finite-difference and
//! quadrature helpers that operate on such grids.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// State of a (possibly constrained) system at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Multipliers; empty when unconstrained.
    pub mu: Vec<f64>,
}

impl SystemState {
    pub fn new(t: f64, x: Vec<f64>, y: Vec<f64>) -> Self {
        SystemState { t, x, y, mu: Vec::new() }
    }

    pub fn with_mu(mut self, mu: Vec<f64>) -> Self {
        self.mu = mu;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().chain(&self.y).chain(&self.mu).all(|v| v.is_finite())
    }
}

/// Per-sample solver diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleDiagnostics {
    /// `max |Φ|` at the sample (0 when unconstrained).
    pub constraint_residual: f64,
    /// Condition estimate of the linear system solved at the sample.
    pub hessian_cond: f64,
    /// Mode-dependent equation-of-motion residual evaluated post hoc with
    /// finite-difference velocities.
    pub delta_l_residual: f64,
    /// Residual of the mode's defining identity evaluated with the solver's
    /// own velocities, relative to the size of its terms.
    pub solve_residual: f64,
}

/// Time-stamped samples on a uniform grid `t0 + k h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub states: Vec<SystemState>,
    pub diagnostics: Vec<SampleDiagnostics>,
}

impl Trajectory {
    /// Build from samples; checks that the grid is uniform.
    pub fn from_states(h: f64, states: Vec<SystemState>) -> Result<Self> {
        let diagnostics = vec![SampleDiagnostics::default(); states.len()];
        let traj = Trajectory { h, states, diagnostics };
        traj.check_grid()?;
        Ok(traj)
    }

    /// Sample a closed-form curve `t ↦ (x, y)` on `[t0, t0 + steps·h]`.
    pub fn sample<F>(t0: f64, h: f64, steps: usize, mut f: F) -> Self
    where
        F: FnMut(f64) -> (Vec<f64>, Vec<f64>),
    {
        let states = (0..=steps)
            .map(|k| {
                let t = t0 + k as f64 * h;
                let (x, y) = f(t);
                SystemState::new(t, x, y)
            })
            .collect::<Vec<_>>();
        let diagnostics = vec![SampleDiagnostics::default(); states.len()];
        Trajectory { h, states, diagnostics }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.states.first().map_or(0.0, |s| s.t)
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> Option<&SystemState> {
        self.states.last()
    }

    /// Verify that samples lie on `t0 + k h` within 1e-12 (relative).
    pub fn check_grid(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::GridMismatch(format!("step must be positive, got {}", self.h)));
        }
        let t0 = self.t0();
        for (k, s) in self.states.iter().enumerate() {
            let expect = t0 + k as f64 * self.h;
            if (s.t - expect).abs() > 1e-12 * (1.0 + expect.abs()) * (1.0 + k as f64).sqrt() {
                return Err(Error::GridMismatch(format!("sample {k} at t = {} but grid gives {expect}", s.t)));
            }
        }
        Ok(())
    }

    pub fn xs(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.x.clone()).collect()
    }

    pub fn ys(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.y.clone()).collect()
    }

    pub fn mus(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.mu.clone()).collect()
    }

    /// CSV with header `t,x1..xn,y1..ym[,mu1..muK]` and 17 significant
    /// digits per value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(first) = self.states.first() else {
            writeln!(w, "t")?;
            return Ok(());
        };
        let mut header = vec!["t".to_string()];
        header.extend((1..=first.x.len()).map(|i| format!("x{i}")));
        header.extend((1..=first.y.len()).map(|i| format!("y{i}")));
        header.extend((1..=first.mu.len()).map(|i| format!("mu{i}")));
        writeln!(w, "{}", header.join(","))?;
        for s in &self.states {
            let row: Vec<String> =
                std::iter::once(&s.t).chain(&s.x).chain(&s.y).chain(&s.mu).map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut buf = std::io::BufWriter::new(f);
        self.write_csv(&mut buf)?;
        buf.flush()?;
        Ok(())
    }
}

/// Time derivative of a sampled vector series: central differences in the
/// interior, second-order one-sided differences at the ends.
pub fn differentiate(series: &[Vec<f64>], h: f64) -> Result<Vec<Vec<f64>>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let dim = series[0].len();
    let mut out = vec![vec![0.0; dim]; n];
    if n == 2 {
        for d in 0..dim {
            let v = (series[1][d] - series[0][d]) / h;
            out[0][d] = v;
            out[1][d] = v;
        }
        return Ok(out);
    }
    for d in 0..dim {
        out[0][d] = (-3.0 * series[0][d] + 4.0 * series[1][d] - series[2][d]) / (2.0 * h);
        out[n - 1][d] = (3.0 * series[n - 1][d] - 4.0 * series[n - 2][d] + series[n - 3][d]) / (2.0 * h);
        for k in 1..n - 1 {
            out[k][d] = (series[k + 1][d] - series[k - 1][d]) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Fourth-order variant of [`differentiate`]: five-point central stencils
/// in the interior and five-point one-sided/offset stencils at the two
/// samples nearest each end. Falls back to [`differentiate`] below five
/// samples.
pub fn differentiate4(series: &[Vec<f64>], h: f64) -> Result<Vec<Vec<f64>>> {
    let n = series.len();
    if n < 5 {
        return differentiate(series, h);
    }
    let dim = series[0].len();
    let mut out = vec![vec![0.0; dim]; n];
    let s = |k: usize, d: usize| series[k][d];
    for d in 0..dim {
        out[0][d] = (-25.0 * s(0, d) + 48.0 * s(1, d) - 36.0 * s(2, d) + 16.0 * s(3, d) - 3.0 * s(4, d)) / (12.0 * h);
        out[1][d] = (-3.0 * s(0, d) - 10.0 * s(1, d) + 18.0 * s(2, d) - 6.0 * s(3, d) + s(4, d)) / (12.0 * h);
        let e = n - 1;
        out[e][d] = (25.0 * s(e, d) - 48.0 * s(e - 1, d) + 36.0 * s(e - 2, d) - 16.0 * s(e - 3, d) + 3.0 * s(e - 4, d)) / (12.0 * h);
        out[e - 1][d] = (3.0 * s(e, d) + 10.0 * s(e - 1, d) - 18.0 * s(e - 2, d) + 6.0 * s(e - 3, d) - s(e - 4, d)) / (12.0 * h);
        for k in 2..n - 2 {
            out[k][d] = (-s(k + 2, d) + 8.0 * s(k + 1, d) - 8.0 * s(k - 1, d) + s(k - 2, d)) / (12.0 * h);
        }
    }
    Ok(out)
}

/// Composite quadrature on a uniform grid: Simpson for an odd number of
/// samples; Simpson plus a closing 3/8 panel for an even number ≥ 4;
/// trapezoid for two samples.
pub fn quadrature(values: &[f64], h: f64) -> Result<f64> {
    let n = values.len();
    match n {
        0 | 1 => Err(Error::TooFewSamples { needed: 2, got: n }),
        2 => Ok(0.5 * h * (values[0] + values[1])),
        _ if n % 2 == 1 => Ok(simpson(values, h)),
        _ => {
            // Simpson over samples 0..=n-4 (odd count), 3/8 rule over the last three intervals.
            let head = if n - 3 >= 3 { simpson(&values[..n - 3], h) } else { 0.0 };
            let t = &values[n - 4..];
            let tail = 3.0 * h / 8.0 * (t[0] + 3.0 * t[1] + 3.0 * t[2] + t[3]);
            Ok(head + tail)
        }
    }
}

fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    debug_assert!(n % 2 == 1 && n >= 3);
    let mut s = values[0] + values[n - 1];
    for (k, v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_exact_on_cubics() {
        for n in [3usize, 4, 5, 6, 7, 10, 11] {
            let h = 1.0 / (n - 1) as f64;
            let v: Vec<f64> = (0..n).map(|k| (k as f64 * h).powi(3)).collect();
            assert!((quadrature(&v, h).unwrap() - 0.25).abs() < 1e-14, "n = {n}");
        }
        assert_eq!(quadrature(&[1.0, 3.0], 2.0).unwrap(), 4.0);
        assert!(quadrature(&[1.0], 1.0).is_err());
    }

    #[test]
    fn quadrature_examples() {
        let ones = vec![1.0; 101];
        assert!((quadrature(&ones, 0.01).unwrap() - 1.0).abs() < 1e-14);
        let n = 2001;
        let h = 2.0 * std::f64::consts::PI / (n - 1) as f64;
        let v: Vec<f64> = (0..n).map(|k| 0.5 * (k as f64 * h).cos().powi(2)).collect();
        assert!((quadrature(&v, h).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn derivative_exact_on_quadratics() {
        let h = 0.1;
        let s: Vec<Vec<f64>> = (0..6).map(|k| vec![(k as f64 * h).powi(2)]).collect();
        let d = differentiate(&s, h).unwrap();
        for (k, dk) in d.iter().enumerate() {
            assert!((dk[0] - 2.0 * k as f64 * h).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let traj = Trajectory::from_states(
            0.5,
            vec![
                SystemState::new(0.0, vec![1.0], vec![2.0]).with_mu(vec![3.0]),
                SystemState::new(0.5, vec![1.5], vec![-2.0]).with_mu(vec![0.0]),
            ],
        )
        .unwrap();
        let mut out = Vec::new();
        traj.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,y1,mu1"));
        assert_eq!(lines.next(), Some("0.0000000000000000e0,1.0000000000000000e0,2.0000000000000000e0,3.0000000000000000e0"));
    }

    #[test]
    fn fourth_order_derivative_exact_on_quartics() {
        let h = 0.05;
        let s: Vec<Vec<f64>> = (0..9).map(|k| vec![(k as f64 * h - 0.1).powi(4)]).collect();
        let d = differentiate4(&s, h).unwrap();
        for (k, dk) in d.iter().enumerate() {
            assert!((dk[0] - 4.0 * (k as f64 * h - 0.1).powi(3)).abs() < 1e-12, "k = {k}");
        }
        let short: Vec<Vec<f64>> = (0..3).map(|k| vec![k as f64]).collect();
        assert_eq!(differentiate4(&short, 1.0).unwrap(), differentiate(&short, 1.0).unwrap());
    }

    #[test]
    fn grid_check_rejects_jitter() {
        let states = vec![SystemState::new(0.0, vec![], vec![]), SystemState::new(0.1, vec![], vec![]), SystemState::new(0.25, vec![], vec![])];
        assert!(Trajectory::from_states(0.1, states).is_err());
    }
}
