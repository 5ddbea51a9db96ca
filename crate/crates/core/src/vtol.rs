//! Planar VTOL aircraft.
//!
//! State `x = (qx, qz, theta, vx, vz, omega)`, input `u = (F1, F2)`. The flat
//! output is the point `(qx + eps sin theta, qz + eps cos theta)`. In the
//! transformed coordinates
//!
//! ```text
//! xbar = (y1, y2, y1', y2', theta, omega),   ubar = (ubar2, ubar0)
//! ```
//!
//! the model takes the triangular form
//! `y' = v, v1' = ubar2, v2' = ubar2 / tan(theta) - g, theta' = omega, omega' = ubar0`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controller::{extend_to_diffeo, FlatnessController, GainSpec, PsiInverse};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Vector};
use crate::param::{
    BlockSolver, DiscreteTriangularSystem, NewtonBlockSolver, ParamPoint, ParameterizingMap, Scheme, StageProblem,
};
use crate::system::{ContinuousSystem, CoordinateChange};
use crate::triangular::{BlockLayout, TriangularForm};
use crate::window::ShiftWindow;

/// Index of the pitch angle in `xbar`.
pub const PITCH: usize = 4;
/// Index of the pitch rate in `xbar`.
pub const PITCH_RATE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VtolParams {
    /// Mass (kg).
    pub m: f64,
    /// Inertia (kg m^2).
    pub j: f64,
    /// Rotor arm (m).
    pub l: f64,
    /// Rotor height offset (m).
    pub h: f64,
    /// Thrust tilt (rad).
    pub alpha: f64,
    pub g: f64,
}

impl Default for VtolParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            j: 0.1,
            l: 0.2,
            h: 0.05,
            alpha: 0.3,
            g: 9.81,
        }
    }
}

impl VtolParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m, self.j, self.l, self.h, self.alpha, self.g];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite VTOL parameter".into()));
        }
        if !(self.m > 0.0 && self.j > 0.0) {
            return Err(Error::InvalidArgument("VTOL mass and inertia must be > 0".into()));
        }
        if self.arm().abs() < 1e-12 {
            return Err(Error::InvalidArgument("l cos(alpha) + h sin(alpha) must be nonzero".into()));
        }
        Ok(())
    }

    /// Effective torque arm `l cos(alpha) + h sin(alpha)`.
    pub fn arm(&self) -> f64 {
        self.l * self.alpha.cos() + self.h * self.alpha.sin()
    }

    /// Offset of the flat output from the centre of mass.
    pub fn epsilon(&self) -> f64 {
        self.j * self.alpha.sin() / (self.m * self.arm())
    }

    /// Per-rotor thrust at hover.
    pub fn hover_thrust(&self) -> f64 {
        self.m * self.g / (2.0 * self.alpha.cos())
    }

    pub fn hover_input(&self) -> Vector {
        Vector::from_element(2, self.hover_thrust())
    }
}

pub fn vtol_dynamics(p: &VtolParams, x: &Vector, u: &Vector) -> Vector {
    let (s3, c3) = x[2].sin_cos();
    let (sa, ca) = p.alpha.sin_cos();
    let sum = u[0] + u[1];
    let diff = u[0] - u[1];
    Vector::from_vec(vec![
        x[3],
        x[4],
        x[5],
        (sum * ca * s3 + diff * sa * c3) / p.m,
        (sum * ca * c3 - diff * sa * s3) / p.m - p.g,
        -diff * p.arm() / p.j,
    ])
}

pub fn vtol_state_jacobian(p: &VtolParams, x: &Vector, u: &Vector) -> Matrix {
    let (s3, c3) = x[2].sin_cos();
    let (sa, ca) = p.alpha.sin_cos();
    let sum = u[0] + u[1];
    let d = u[1] - u[0];
    let mut jac = Matrix::zeros(6, 6);
    jac[(0, 3)] = 1.0;
    jac[(1, 4)] = 1.0;
    jac[(2, 5)] = 1.0;
    jac[(3, 2)] = (sum * ca * c3 + d * sa * s3) / p.m;
    jac[(4, 2)] = (-sum * ca * s3 + d * sa * c3) / p.m;
    jac
}

pub fn vtol_input_jacobian(p: &VtolParams, x: &Vector) -> Matrix {
    let a = p.alpha;
    let t = x[2];
    let k = p.arm() / p.j;
    let mut jac = Matrix::zeros(6, 2);
    jac[(3, 0)] = (t + a).sin() / p.m;
    jac[(3, 1)] = (t - a).sin() / p.m;
    jac[(4, 0)] = (t + a).cos() / p.m;
    jac[(4, 1)] = (t - a).cos() / p.m;
    jac[(5, 0)] = -k;
    jac[(5, 1)] = k;
    jac
}

/// The model with analytic state Jacobian and the hover equilibrium at the origin.
pub fn vtol_system(p: &VtolParams) -> Result<ContinuousSystem> {
    p.validate()?;
    let (pf, pj) = (*p, *p);
    ContinuousSystem::new(6, 2, move |x, u| vtol_dynamics(&pf, x, u))
        .with_state_jacobian(move |x, u| vtol_state_jacobian(&pj, x, u))
        .with_equilibrium(Vector::zeros(6), p.hover_input())
}

pub fn state_fwd(p: &VtolParams, x: &Vector) -> Vector {
    let e = p.epsilon();
    let (s, c) = x[2].sin_cos();
    Vector::from_vec(vec![
        x[0] + e * s,
        x[1] + e * c,
        x[3] + e * x[5] * c,
        x[4] - e * x[5] * s,
        x[2],
        x[5],
    ])
}

pub fn state_inv(p: &VtolParams, xb: &Vector) -> Vector {
    let e = p.epsilon();
    let (s, c) = xb[PITCH].sin_cos();
    let w = xb[PITCH_RATE];
    Vector::from_vec(vec![
        xb[0] - e * s,
        xb[1] - e * c,
        xb[PITCH],
        xb[2] - e * w * c,
        xb[3] + e * w * s,
        w,
    ])
}

/// Collective term `(F1 + F2) cos(alpha) / m - eps omega^2`.
fn collective(p: &VtolParams, omega: f64, u: &Vector) -> f64 {
    (u[0] + u[1]) * p.alpha.cos() / p.m - p.epsilon() * omega * omega
}

/// `ubar = (sin(theta) T, (F2 - F1) arm / J)` at a transformed state.
pub fn input_fwd(p: &VtolParams, xb: &Vector, u: &Vector) -> Vector {
    let t = collective(p, xb[PITCH_RATE], u);
    Vector::from_vec(vec![xb[PITCH].sin() * t, (u[1] - u[0]) * p.arm() / p.j])
}

/// Determinant of `d ubar / d u`: `2 sin(theta) cos(alpha) arm / (m J)`.
pub fn input_determinant(p: &VtolParams, theta: f64) -> f64 {
    2.0 * theta.sin() * p.alpha.cos() * p.arm() / (p.m * p.j)
}

/// Solves `ubar = input_fwd(xbar, u)` for `u`.
pub fn input_inv(p: &VtolParams, xb: &Vector, ub: &Vector) -> Result<Vector> {
    let theta = xb[PITCH];
    let det = input_determinant(p, theta);
    if !(det.abs() > 1e-10) {
        return Err(Error::SingularInput { determinant: det });
    }
    let w = xb[PITCH_RATE];
    let thrust = ub[0] / theta.sin() + p.epsilon() * w * w;
    let sum = thrust * p.m / p.alpha.cos();
    let diff = ub[1] * p.j / p.arm();
    Ok(Vector::from_vec(vec![(sum - diff) / 2.0, (sum + diff) / 2.0]))
}

pub fn vtol_transforms(p: &VtolParams) -> Result<CoordinateChange> {
    p.validate()?;
    let (a, b, c, d) = (*p, *p, *p, *p);
    Ok(CoordinateChange::new(
        6,
        2,
        Arc::new(move |x| state_fwd(&a, x)),
        Arc::new(move |xb| state_inv(&b, xb)),
        Arc::new(move |x, u| input_fwd(&c, &state_fwd(&c, x), u)),
        Arc::new(move |xb, ub| input_inv(&d, xb, ub)),
    ))
}

/// Transformed dynamics `xbar' = f(xbar, u)` with the original input. Regular
/// everywhere, including hover.
pub fn state_only_dynamics(p: &VtolParams, xb: &Vector, u: &Vector) -> Vector {
    let (s, c) = xb[PITCH].sin_cos();
    let w = xb[PITCH_RATE];
    let t = collective(p, w, u);
    Vector::from_vec(vec![
        xb[2],
        xb[3],
        s * t,
        c * t - p.g,
        w,
        (u[1] - u[0]) * p.arm() / p.j,
    ])
}

fn state_only_jacobian(p: &VtolParams, xb: &Vector, u: &Vector) -> Matrix {
    let (s, c) = xb[PITCH].sin_cos();
    let w = xb[PITCH_RATE];
    let t = collective(p, w, u);
    let dt = -2.0 * p.epsilon() * w;
    let mut jac = Matrix::zeros(6, 6);
    jac[(0, 2)] = 1.0;
    jac[(1, 3)] = 1.0;
    jac[(2, PITCH)] = c * t;
    jac[(2, PITCH_RATE)] = s * dt;
    jac[(3, PITCH)] = -s * t;
    jac[(3, PITCH_RATE)] = c * dt;
    jac[(4, PITCH_RATE)] = 1.0;
    jac
}

pub fn vtol_state_only_system(p: &VtolParams) -> Result<ContinuousSystem> {
    p.validate()?;
    let (a, b) = (*p, *p);
    let xs = state_fwd(p, &Vector::zeros(6));
    ContinuousSystem::new(6, 2, move |xb, u| state_only_dynamics(&a, xb, u))
        .with_state_jacobian(move |xb, u| state_only_jacobian(&b, xb, u))
        .with_equilibrium(xs, p.hover_input())
}

/// Triangular dynamics in `(xbar, ubar)`. Undefined (NaN) at zero pitch.
pub fn triangular_dynamics(p: &VtolParams, xb: &Vector, ub: &Vector) -> Vector {
    Vector::from_vec(vec![
        xb[2],
        xb[3],
        ub[0],
        ub[0] / xb[PITCH].tan() - p.g,
        xb[PITCH_RATE],
        ub[1],
    ])
}

fn triangular_jacobian(xb: &Vector, ub: &Vector) -> Matrix {
    let s = xb[PITCH].sin();
    let mut jac = Matrix::zeros(6, 6);
    jac[(0, 2)] = 1.0;
    jac[(1, 3)] = 1.0;
    jac[(3, PITCH)] = -ub[0] / (s * s);
    jac[(4, PITCH_RATE)] = 1.0;
    jac
}

pub fn vtol_triangular_system(p: &VtolParams) -> Result<ContinuousSystem> {
    p.validate()?;
    let a = *p;
    Ok(ContinuousSystem::new(6, 2, move |xb, ub| triangular_dynamics(&a, xb, ub))
        .with_state_jacobian(triangular_jacobian))
}

/// Blocks `4: y`, `3: (v1, v2 | ubar2)`, `2: theta`, `1: (omega | ubar0)`.
pub fn vtol_triangular_form(p: &VtolParams) -> Result<TriangularForm> {
    TriangularForm::new(
        vtol_triangular_system(p)?,
        vec![
            BlockLayout::new(2, 0, 0),
            BlockLayout::new(0, 2, 1),
            BlockLayout::new(0, 1, 0),
            BlockLayout::new(0, 1, 1),
        ],
    )
}

/// Non-hover reference point: pitch 0.3 with `ubar2 = g tan(0.3)` (steady
/// horizontal acceleration, level altitude).
pub fn vtol_reference_point(p: &VtolParams) -> (Vector, Vector) {
    let theta = 0.3;
    let mut x = Vector::zeros(6);
    x[PITCH] = theta;
    (x, Vector::from_vec(vec![p.g * theta.tan(), 0.0]))
}

/// Shifts `angle` by a multiple of `2 pi` to lie within `pi` of `near`.
pub fn unwrap_toward(angle: f64, near: f64) -> f64 {
    angle + 2.0 * PI * ((near - angle) / (2.0 * PI)).round()
}

/// Pitch from the implicit/explicit block-3 relation
/// `dv = Ts (ubar2, ubar2 / tan(theta) - g)`.
pub fn pitch_from_increment(dv1: f64, dv2: f64, ts: f64, g: f64, near: f64) -> Result<f64> {
    let den = dv2 + ts * g;
    if den.abs() <= 1e-12 {
        return Err(Error::Singular {
            what: "free-fall denominator".into(),
            value: den,
        });
    }
    Ok(unwrap_toward(dv1.atan2(den), near))
}

/// Closed-form stage solver for the VTOL triangular form. Every stage is
/// independent of the evaluation point, so it serves both schemes.
#[derive(Debug, Clone, Copy)]
pub struct VtolBlockSolver {
    pub g: f64,
}

impl BlockSolver for VtolBlockSolver {
    fn solve(&self, _tf: &TriangularForm, pr: &StageProblem<'_>, guess: &Vector) -> Result<Vector> {
        let d = pr.delta;
        match pr.block {
            3 => {
                let theta = pitch_from_increment(d[0], d[1], pr.ts, self.g, guess[0]).map_err(|e| {
                    Error::BlockSolve {
                        block: 3,
                        shift: pr.shift,
                        reason: e.to_string(),
                    }
                })?;
                Ok(Vector::from_vec(vec![theta, d[0] / pr.ts]))
            }
            _ => Ok(d / pr.ts),
        }
    }
}

/// Generic Newton stages with the pitch of block 3 moved to the branch nearest
/// its guess. The triangular form only sees the pitch through `tan`, so Newton
/// may otherwise land a multiple of pi away.
#[derive(Debug, Clone, Copy, Default)]
pub struct PitchBranchNewton {
    pub inner: NewtonBlockSolver,
}

impl BlockSolver for PitchBranchNewton {
    fn solve(&self, tf: &TriangularForm, pr: &StageProblem<'_>, guess: &Vector) -> Result<Vector> {
        let mut w = self.inner.solve(tf, pr, guess)?;
        if pr.block == 3 {
            w[0] -= PI * ((w[0] - guess[0]) / PI).round();
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSolverKind {
    ClosedForm,
    Newton,
}

pub fn vtol_discrete_system(p: &VtolParams, scheme: Scheme, ts: f64) -> Result<DiscreteTriangularSystem> {
    let (x, u) = vtol_reference_point(p);
    DiscreteTriangularSystem::new(vtol_triangular_form(p)?, scheme, ts, x, u)
}

/// Parameterizing map of the discretized VTOL with input recovery through the
/// state-only dynamics.
pub fn vtol_parameterizer(p: &VtolParams, scheme: Scheme, ts: f64, kind: StageSolverKind) -> Result<ParameterizingMap> {
    let dts = vtol_discrete_system(p, scheme, ts)?;
    let map = match kind {
        StageSolverKind::Newton => {
            let s: Arc<dyn BlockSolver> = Arc::new(PitchBranchNewton::default());
            ParameterizingMap::build_with_solvers(dts, vec![s.clone(), s.clone(), s.clone(), s])?
        }
        StageSolverKind::ClosedForm => {
            let s: Arc<dyn BlockSolver> = Arc::new(VtolBlockSolver { g: p.g });
            ParameterizingMap::build_with_solvers(dts, vec![s.clone(), s.clone(), s.clone(), s])?
        }
    };
    Ok(map.with_input_dynamics(vtol_state_only_system(p)?))
}

/// Controller-state selection `(component, shift)` on the redefined window.
///
/// With the implicit scheme the pitch relations constrain shifts 1 and 0, so
/// `z = (y2, y2_[1])`. With the explicit scheme `y_[0..1]` are fixed by `xbar`
/// and the pitch relations constrain shifts 2 and 3, so `z = (y2_[2], y2_[3])`.
pub fn vtol_z_select(scheme: Scheme) -> Vec<(usize, i64)> {
    match scheme {
        Scheme::Implicit => vec![(1, 0), (1, 1)],
        Scheme::Explicit => vec![(1, 2), (1, 3)],
    }
}

/// Controller state that agrees with the measured `xbar`: the selected vertical
/// flat-output samples extrapolated at the current vertical velocity.
pub fn vtol_plant_consistent_z(xb: &Vector, ts: f64, scheme: Scheme) -> Vector {
    // Shift of the window at which xbar is read.
    let at = match scheme {
        Scheme::Implicit => 3,
        Scheme::Explicit => 0,
    };
    Vector::from_iterator(
        2,
        vtol_z_select(scheme)
            .into_iter()
            .map(|(_, s)| xb[1] + (s - at) as f64 * ts * xb[3]),
    )
}

/// How the controller inverts `(xbar, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiKind {
    ClosedForm,
    Numeric,
}

/// Smooth window on shifts `0..depth` away from hover, used to probe the
/// invertibility of the combined map.
pub fn vtol_probe_window(p: &VtolParams, ts: f64, depth: usize) -> Result<ShiftWindow> {
    let a = p.g * 0.3f64.tan();
    ShiftWindow::from_fn(0, depth as i64 - 1, |i| {
        let t = i as f64 * ts;
        Vector::from_vec(vec![0.5 * a * t * t + 0.1 * t.powi(3), 0.05 * t.powi(3)])
    })
}

/// Tracking controller for the discretized VTOL.
pub fn vtol_controller(
    p: &VtolParams,
    scheme: Scheme,
    ts: f64,
    gains: &GainSpec,
    stages: StageSolverKind,
    psi: PsiKind,
) -> Result<FlatnessController> {
    let map = vtol_parameterizer(p, scheme, ts, stages)?;
    let depth = map.depth().into_iter().max().unwrap_or(0);
    let probe = vtol_probe_window(p, ts, depth)?;
    let combined = extend_to_diffeo(&map, &vtol_z_select(scheme), &probe)?;
    let ctrl = FlatnessController::with_poles(combined, gains, vtol_transforms(p)?)?;
    Ok(match psi {
        PsiKind::Numeric => ctrl,
        PsiKind::ClosedForm => {
            let q = *p;
            ctrl.with_psi(PsiInverse::ClosedForm(Arc::new(move |xb, z| vtol_psi_hat(xb, z, ts, &q, scheme))))
        }
    })
}

struct Chain {
    vel: Vec<[f64; 2]>,
    pitch: Vec<f64>,
    rate: Vec<f64>,
}

/// Consecutive velocities, pitches and pitch rates along `ys`.
fn chain(ys: &[[f64; 2]], ts: f64, g: f64) -> Result<Chain> {
    let vel: Vec<[f64; 2]> = ys
        .windows(2)
        .map(|w| [(w[1][0] - w[0][0]) / ts, (w[1][1] - w[0][1]) / ts])
        .collect();
    let mut pitch = Vec::with_capacity(vel.len());
    let mut near = 0.0;
    for w in vel.windows(2) {
        let th = pitch_from_increment(w[1][0] - w[0][0], w[1][1] - w[0][1], ts, g, near)?;
        pitch.push(th);
        near = th;
    }
    let rate = pitch.windows(2).map(|w| (w[1] - w[0]) / ts).collect();
    Ok(Chain { vel, pitch, rate })
}

fn samples(window: &ShiftWindow, lo: i64, hi: i64) -> Result<Vec<[f64; 2]>> {
    if window.dim() != 2 {
        return Err(Error::Dimension {
            what: "VTOL flat-output window",
            expected: 2,
            got: window.dim(),
        });
    }
    (lo..=hi)
        .map(|j| window.get(j).map(|y| [y[0], y[1]]))
        .collect()
}

fn state_from(y: [f64; 2], v: [f64; 2], theta: f64, omega: f64) -> Vector {
    Vector::from_vec(vec![y[0], y[1], v[0], v[1], theta, omega])
}

/// Closed-form `xbar` at shift 0: reads `y_[-3..0]` (implicit) or `y_[0..3]` (explicit).
pub fn vtol_closed_form_state(window: &ShiftWindow, ts: f64, p: &VtolParams, scheme: Scheme) -> Result<Vector> {
    let (lo, hi) = match scheme {
        Scheme::Implicit => (-3, 0),
        Scheme::Explicit => (0, 3),
    };
    let ys = samples(window, lo, hi)?;
    let c = chain(&ys, ts, p.g)?;
    Ok(match scheme {
        Scheme::Implicit => state_from(ys[3], c.vel[2], c.pitch[1], c.rate[0]),
        Scheme::Explicit => state_from(ys[0], c.vel[0], c.pitch[0], c.rate[0]),
    })
}

/// Closed-form `(xbar, ubar)` at shift 0: reads `y_[-3..1]` (implicit) or `y_[0..4]` (explicit).
pub fn vtol_closed_form_param(window: &ShiftWindow, ts: f64, p: &VtolParams, scheme: Scheme) -> Result<ParamPoint> {
    let (lo, hi) = match scheme {
        Scheme::Implicit => (-3, 1),
        Scheme::Explicit => (0, 4),
    };
    let ys = samples(window, lo, hi)?;
    let c = chain(&ys, ts, p.g)?;
    let (state, accel) = match scheme {
        Scheme::Implicit => (
            state_from(ys[3], c.vel[2], c.pitch[1], c.rate[0]),
            (c.vel[3][0] - c.vel[2][0]) / ts,
        ),
        Scheme::Explicit => (
            state_from(ys[0], c.vel[0], c.pitch[0], c.rate[0]),
            (c.vel[1][0] - c.vel[0][0]) / ts,
        ),
    };
    let torque = (c.rate[1] - c.rate[0]) / ts;
    Ok(ParamPoint {
        state,
        input: Vector::from_vec(vec![accel, torque]),
    })
}

/// First component of the velocity on the far side of a pitch relation:
/// `v1_next - v1 = tan(theta) (v2_next - v2 + Ts g)`.
fn lateral_increment(theta: f64, dv2: f64, ts: f64, g: f64) -> f64 {
    theta.tan() * (dv2 + ts * g)
}

/// Closed-form inverse of `window -> (xbar, z)` on the redefined window
/// `y, .., y_[3]`, with `z` as in [`vtol_z_select`].
pub fn vtol_psi_hat(xb: &Vector, z: &Vector, ts: f64, p: &VtolParams, scheme: Scheme) -> Result<ShiftWindow> {
    if xb.len() != 6 || z.len() != 2 {
        return Err(Error::Dimension {
            what: "VTOL (xbar, z)",
            expected: 8,
            got: xb.len() + z.len(),
        });
    }
    let g = p.g;
    let pos = [xb[0], xb[1]];
    let vel = [xb[2], xb[3]];
    let (theta, omega) = (xb[PITCH], xb[PITCH_RATE]);
    let mut y = [[0.0; 2]; 4];
    match scheme {
        Scheme::Implicit => {
            // y_[3] = position, y_[2] = y_[3] - Ts v(3); z = (y2, y2_[1]).
            y[3] = pos;
            y[2] = [pos[0] - ts * vel[0], pos[1] - ts * vel[1]];
            y[1][1] = z[1];
            y[0][1] = z[0];
            let v2 = [0.0, (y[2][1] - y[1][1]) / ts];
            let v2_1 = vel[0] - lateral_increment(theta, vel[1] - v2[1], ts, g);
            y[1][0] = y[2][0] - ts * v2_1;
            let theta2 = theta - ts * omega;
            let v1_2 = (y[1][1] - y[0][1]) / ts;
            let v1_1 = v2_1 - lateral_increment(theta2, v2[1] - v1_2, ts, g);
            y[0][0] = y[1][0] - ts * v1_1;
        }
        Scheme::Explicit => {
            // y = position, y_[1] = y + Ts v; z = (y2_[2], y2_[3]).
            y[0] = pos;
            y[1] = [pos[0] + ts * vel[0], pos[1] + ts * vel[1]];
            y[2][1] = z[0];
            y[3][1] = z[1];
            let v1_2 = (y[2][1] - y[1][1]) / ts;
            let v1_1 = vel[0] + lateral_increment(theta, v1_2 - vel[1], ts, g);
            y[2][0] = y[1][0] + ts * v1_1;
            let theta1 = theta + ts * omega;
            let v2_2 = (y[3][1] - y[2][1]) / ts;
            let v2_1 = v1_1 + lateral_increment(theta1, v2_2 - v1_2, ts, g);
            y[3][0] = y[2][0] + ts * v2_1;
        }
    }
    let window = ShiftWindow::new(0, y.iter().map(|s| Vector::from_vec(s.to_vec())).collect())?;
    let probe = match scheme {
        Scheme::Implicit => window.relabel(-3),
        Scheme::Explicit => window.clone(),
    };
    let back = vtol_closed_form_state(&probe, ts, p, scheme)?;
    let mut diff = &back - xb;
    diff[PITCH] = unwrap_toward(diff[PITCH], 0.0);
    let residual = diff.amax();
    if !(residual <= 1e-10 * xb.amax().max(1.0)) {
        return Err(Error::Singular {
            what: "inconsistent (xbar, z): forward-check residual".into(),
            value: residual,
        });
    }
    Ok(window)
}
