//! Small dense numerics: finite-difference Jacobians, damped Newton and
//! Gauss-Newton solves, singular values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Default central-difference step for a point: `1e-6 * max(1, |point|)`.
pub fn default_fd_step(point: &Vector) -> f64 {
    1e-6 * point.norm().max(1.0)
}

/// Central-difference Jacobian of an infallible map.
pub fn jacobian_fd<F>(mut f: F, point: &Vector, eps: Option<f64>) -> Result<Matrix>
where
    F: FnMut(&Vector) -> Vector,
{
    try_jacobian_fd(|x| Ok(f(x)), point, eps)
}

/// Central-difference Jacobian of a fallible map. Columns are `(f(x+h e_i) - f(x-h e_i)) / 2h`.
pub fn try_jacobian_fd<F>(mut f: F, point: &Vector, eps: Option<f64>) -> Result<Matrix>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let h = eps.unwrap_or_else(|| default_fd_step(point));
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step {h}")));
    }
    let n = point.len();
    let mut cols: Vec<Vector> = Vec::with_capacity(n);
    let mut probe = point.clone();
    for i in 0..n {
        let xi = point[i];
        probe[i] = xi + h;
        let fp = f(&probe)?;
        probe[i] = xi - h;
        let fm = f(&probe)?;
        probe[i] = xi;
        if fp.len() != fm.len() {
            return Err(Error::Dimension {
                what: "finite-difference output",
                expected: fp.len(),
                got: fm.len(),
            });
        }
        let col = (fp - fm) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Jacobian column {i}")));
        }
        cols.push(col);
    }
    let rows = cols.first().map_or_else(|| f(point).map(|v| v.len()), |c| Ok(c.len()))?;
    let mut jac = Matrix::zeros(rows, n);
    for (i, c) in cols.iter().enumerate() {
        jac.set_column(i, c);
    }
    Ok(jac)
}

/// Fourth-order central difference of `t -> g(x + t d)` at `t = 0`.
pub fn directional_derivative<F>(mut g: F, x: &Vector, direction: &Vector) -> Vector
where
    F: FnMut(&Vector) -> Vector,
{
    let dnorm = direction.norm();
    if dnorm == 0.0 {
        return Vector::zeros(g(x).len());
    }
    let h = 1e-3 * x.norm().max(1.0) / dnorm;
    let at = |t: f64, g: &mut F| g(&(x + direction * t));
    let f2 = at(2.0 * h, &mut g);
    let f1 = at(h, &mut g);
    let m1 = at(-h, &mut g);
    let m2 = at(-2.0 * h, &mut g);
    (m2 - f2 + (f1 - m1) * 8.0) / (12.0 * h)
}

/// Singular values in descending order. Non-finite matrices yield `None`.
pub fn singular_values(m: &Matrix) -> Option<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Some(Vec::new());
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Some(sv)
}

/// Diagnostics of a Newton solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Backtracking factor in (0, 1), used only when a full step increases the residual.
    pub damping: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 50,
            damping: 0.5,
        }
    }
}

const MAX_BACKTRACKS: usize = 40;
const POLISH_STEP: f64 = 1e-8;

/// Damped Newton iteration for a square system `residual(x) = 0`.
///
/// The linear solves use LU with partial pivoting. A failed solve returns
/// [`Error::StepFailure`] carrying the report.
pub fn newton_solve<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: Vector,
    settings: &NewtonSettings,
) -> Result<(Vector, NewtonReport)>
where
    R: FnMut(&Vector) -> Result<Vector>,
    J: FnMut(&Vector) -> Result<Matrix>,
{
    let mut x = x0;
    let mut r = residual(&x)?;
    let mut norm = r.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("Newton initial residual".into()));
    }
    let fail = |iterations, final_residual| Error::StepFailure {
        report: NewtonReport {
            iterations,
            final_residual,
            converged: false,
        },
    };
    let ok = |x: Vector, iterations, final_residual| {
        Ok((
            x,
            NewtonReport {
                iterations,
                final_residual,
                converged: true,
            },
        ))
    };
    // Converged once the residual is below tolerance and the last step was
    // small, so an inexact Jacobian still ends at full accuracy.
    let mut last_move = 0.0;
    for it in 0..settings.max_iters {
        let small = last_move <= POLISH_STEP * x.norm().max(1.0);
        if norm <= settings.tol && small {
            return ok(x, it, norm);
        }
        let Some(step) = jacobian(&x)
            .ok()
            .filter(|j| j.nrows() == r.len() && j.ncols() == x.len())
            .and_then(|j| j.lu().solve(&(-&r)))
            .filter(|s| s.iter().all(|v| v.is_finite()))
        else {
            return if norm <= settings.tol { ok(x, it, norm) } else { Err(fail(it, norm)) };
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &step * lambda;
            if let Ok(rt) = residual(&trial) {
                let nt = rt.norm();
                if nt.is_finite() && nt <= norm {
                    accepted = Some((trial, rt, nt));
                    break;
                }
            }
            lambda *= settings.damping;
        }
        let Some((xn, rn, nn)) = accepted else {
            return if norm <= settings.tol { ok(x, it + 1, norm) } else { Err(fail(it + 1, norm)) };
        };
        last_move = (&xn - &x).norm();
        x = xn;
        r = rn;
        norm = nn;
        if last_move <= f64::EPSILON * x.norm().max(1.0) {
            return if norm <= settings.tol { ok(x, it + 1, norm) } else { Err(fail(it + 1, norm)) };
        }
    }
    if norm <= settings.tol {
        ok(x, settings.max_iters, norm)
    } else {
        Err(fail(settings.max_iters, norm))
    }
}

/// Gauss-Newton for an overdetermined but consistent system, using an SVD
/// least-squares step and a finite-difference Jacobian. Returns the point and
/// the final residual norm.
pub fn gauss_newton<R>(mut residual: R, x0: Vector, tol: f64, max_iters: usize) -> Result<(Vector, f64)>
where
    R: FnMut(&Vector) -> Result<Vector>,
{
    let mut x = x0;
    let mut norm = residual(&x)?.norm();
    for _ in 0..max_iters {
        let r = residual(&x)?;
        norm = r.norm();
        if norm <= tol {
            break;
        }
        let jac = try_jacobian_fd(&mut residual, &x, None)?;
        let svd = jac.svd(true, true);
        let step = svd
            .solve(&(-&r), 1e-12)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        x += &step;
        if step.norm() <= 1e-15 * x.norm().max(1.0) {
            norm = residual(&x)?.norm();
            break;
        }
    }
    Ok((x, norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_jacobian() {
        let p = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        let j = jacobian_fd(|x| x.clone(), &p, None).unwrap();
        assert!((j - Matrix::identity(3, 3)).norm() < 1e-9);
    }

    #[test]
    fn sine_derivative_at_zero() {
        let p = Vector::from_vec(vec![0.0]);
        let j = jacobian_fd(|x| x.map(f64::sin), &p, None).unwrap();
        assert!((j[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let p = Vector::from_vec(vec![0.0]);
        let err = jacobian_fd(|x| x.map(|v| 1.0 / (v - 1e-6)), &p, Some(1e-6));
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn newton_finds_root_and_reports() {
        let f = |x: &Vector| Ok(Vector::from_vec(vec![x[0] * x[0] - 2.0]));
        let j = |x: &Vector| Ok(Matrix::from_element(1, 1, 2.0 * x[0]));
        let (x, rep) = newton_solve(f, j, Vector::from_vec(vec![1.0]), &NewtonSettings::default()).unwrap();
        assert!((x[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!(rep.converged && rep.final_residual <= 1e-12);
    }

    #[test]
    fn newton_reports_singular_jacobian() {
        let f = |x: &Vector| Ok(Vector::from_vec(vec![x[0] * x[0] + 1.0]));
        let j = |x: &Vector| Ok(Matrix::from_element(1, 1, 2.0 * x[0]));
        let err = newton_solve(f, j, Vector::from_vec(vec![0.0]), &NewtonSettings::default()).unwrap_err();
        match err {
            Error::StepFailure { report } => assert!(!report.converged),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn gauss_newton_consistent_overdetermined() {
        // rows: a + b = 3, a - b = 1, 2a = 4
        let r = |x: &Vector| Ok(Vector::from_vec(vec![x[0] + x[1] - 3.0, x[0] - x[1] - 1.0, 2.0 * x[0] - 4.0]));
        let (x, res) = gauss_newton(r, Vector::zeros(2), 1e-13, 10).unwrap();
        assert!(res < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn directional_derivative_of_sine() {
        let x = Vector::from_vec(vec![0.7, -0.2]);
        let d = Vector::from_vec(vec![3.0, 5.0]);
        let g = |v: &Vector| v.map(f64::sin);
        let dd = directional_derivative(g, &x, &d);
        let exact = Vector::from_vec(vec![0.7f64.cos() * 3.0, (-0.2f64).cos() * 5.0]);
        assert!((dd - exact).norm() < 1e-11);
    }
}
