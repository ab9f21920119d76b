//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Induced 1-norm (max column sum).
pub(crate) fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// LU solve returning the solution and the 1-norm condition number
/// `‖A‖₁‖A⁻¹‖₁` (computed from the LU factors). `None` if `A` is exactly
/// singular.
pub(crate) fn solve_with_cond(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    if a.nrows() == 0 {
        return Some((DVector::zeros(0), 1.0));
    }
    let lu = a.clone().lu();
    let inv = lu.try_inverse()?;
    let cond = norm1(a) * norm1(&inv);
    if !cond.is_finite() {
        return None;
    }
    let x = &inv * b;
    // One step of iterative refinement keeps saddle solves at round-off level.
    let r = b - a * &x;
    let x = x + &inv * r;
    Some((x, cond))
}

/// Numerical rank from singular values, relative tolerance `rtol`.
pub(crate) fn rank(a: &DMatrix<f64>, rtol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

/// Component of `v` orthogonal to the column span of `b` (least squares).
pub(crate) fn orthogonal_remainder(b: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if b.ncols() == 0 {
        return v.clone();
    }
    let svd = b.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut proj = DVector::zeros(v.len());
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-12 * smax {
            let col = u.column(k);
            proj += col * col.dot(v);
        }
    }
    v - proj
}

/// Minimum-norm solution of the underdetermined system `J d = r`
/// (`J` is K×m with K ≤ m and full row rank).
pub(crate) fn min_norm_solve(j: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let jjt = j * j.transpose();
    let w = jjt.lu().solve(r)?;
    Some(j.transpose() * w)
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
