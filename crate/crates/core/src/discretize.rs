//! Fixed-step time discretization.
//!
//! The implicit Euler step `x+ = x + Ts f(x+, u)` is solved by damped Newton,
//! which yields the local explicit map `x+ = ftilde(x, u)` numerically. RK4 at
//! a fine step serves as the plant integrator between controller samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{newton_solve, Matrix, NewtonReport, NewtonSettings, Vector};
use crate::system::ContinuousSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitStepSettings {
    pub ts: f64,
    pub newton_tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl ImplicitStepSettings {
    pub fn new(ts: f64) -> Result<Self> {
        let s = Self {
            ts,
            newton_tol: 1e-12,
            max_iters: 50,
            damping: 0.5,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return Err(Error::InvalidArgument(format!("sampling time {} must be > 0", self.ts)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidArgument("newton_tol must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidArgument("damping must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn newton(&self) -> NewtonSettings {
        NewtonSettings {
            tol: self.newton_tol,
            max_iters: self.max_iters,
            damping: self.damping,
        }
    }
}

/// Residual `xn - x - Ts f(xn, u)` of the implicit Euler step.
pub fn implicit_residual(sys: &ContinuousSystem, x: &Vector, u: &Vector, ts: f64, xn: &Vector) -> Result<Vector> {
    Ok(xn - x - sys.eval(xn, u)? * ts)
}

/// One implicit Euler step. The default guess is the explicit Euler predictor.
pub fn implicit_step(
    sys: &ContinuousSystem,
    x: &Vector,
    u: &Vector,
    settings: &ImplicitStepSettings,
    guess: Option<&Vector>,
) -> Result<(Vector, NewtonReport)> {
    settings.validate()?;
    let ts = settings.ts;
    let x0 = match guess {
        Some(g) => g.clone(),
        None => explicit_step(sys, x, u, ts)?,
    };
    let n = sys.n();
    newton_solve(
        |xn| implicit_residual(sys, x, u, ts, xn),
        |xn| Ok(Matrix::identity(n, n) - sys.state_jacobian(xn, u)? * ts),
        x0,
        &settings.newton(),
    )
}

/// One explicit Euler step `x + Ts f(x, u)`.
pub fn explicit_step(sys: &ContinuousSystem, x: &Vector, u: &Vector, ts: f64) -> Result<Vector> {
    Ok(x + sys.eval(x, u)? * ts)
}

fn rk4_once(sys: &ContinuousSystem, x: &Vector, u: &Vector, h: f64) -> Result<Vector> {
    let k1 = sys.eval(x, u)?;
    let k2 = sys.eval(&(x + &k1 * (0.5 * h)), u)?;
    let k3 = sys.eval(&(x + &k2 * (0.5 * h)), u)?;
    let k4 = sys.eval(&(x + &k3 * h), u)?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

/// Number of `tn` steps in `duration`; errors unless it is an integer multiple.
pub fn step_count(duration: f64, tn: f64) -> Result<usize> {
    if !(tn > 0.0) || !(duration >= 0.0) {
        return Err(Error::InvalidArgument(format!("step {tn} / duration {duration}")));
    }
    let steps = (duration / tn).round();
    if (steps * tn - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} is not a multiple of the step {tn}"
        )));
    }
    Ok(steps as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Classical RK4 with the input held constant, sampled at every `tn`.
pub fn rk4_integrate(sys: &ContinuousSystem, x0: &Vector, u_hold: &Vector, tn: f64, duration: f64) -> Result<Trajectory> {
    let steps = step_count(duration, tn)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.clone());
    let mut x = x0.clone();
    for i in 1..=steps {
        x = rk4_once(sys, &x, u_hold, tn)?;
        let t = i as f64 * tn;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t });
        }
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// RK4 over `steps` steps of size `tn`, returning only the final state.
pub fn rk4_advance(sys: &ContinuousSystem, x0: &Vector, u_hold: &Vector, tn: f64, steps: usize) -> Result<Vector> {
    let mut x = x0.clone();
    for i in 1..=steps {
        x = rk4_once(sys, &x, u_hold, tn)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: i as f64 * tn });
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    ImplicitEuler,
    ExplicitEuler,
    Rk4,
}

/// Integration scenario with constant input.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub x0: Vector,
    pub u: Vector,
    pub horizon: f64,
}

fn integrate_with(stepper: Stepper, sys: &ContinuousSystem, sc: &Scenario, h: f64) -> Result<Vector> {
    let steps = step_count(sc.horizon, h)?;
    let mut x = sc.x0.clone();
    match stepper {
        Stepper::Rk4 => return rk4_advance(sys, &x, &sc.u, h, steps),
        Stepper::ExplicitEuler => {
            for _ in 0..steps {
                x = explicit_step(sys, &x, &sc.u, h)?;
            }
        }
        Stepper::ImplicitEuler => {
            let settings = ImplicitStepSettings::new(h)?;
            for _ in 0..steps {
                x = implicit_step(sys, &x, &sc.u, &settings, None)?.0;
            }
        }
    }
    Ok(x)
}

/// Least-squares slope of `log(error)` against `log(step)`, with the error
/// measured at the horizon against RK4 on a step 64 times finer than the
/// smallest one.
pub fn observed_order(stepper: Stepper, sys: &ContinuousSystem, scenario: &Scenario, steps: &[f64]) -> Result<f64> {
    if steps.len() < 3 {
        return Err(Error::InvalidArgument("observed_order needs at least 3 step sizes".into()));
    }
    let ratio = steps[1] / steps[0];
    for w in steps.windows(2) {
        if ((w[1] / w[0]) / ratio - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("step sizes must form a geometric progression".into()));
        }
    }
    let hmin = steps.iter().copied().fold(f64::INFINITY, f64::min);
    let n_ref = step_count(scenario.horizon, hmin)? * 64;
    let reference = rk4_advance(sys, &scenario.x0, &scenario.u, scenario.horizon / n_ref as f64, n_ref)?;
    let mut pts = Vec::with_capacity(steps.len());
    for &h in steps {
        let xh = integrate_with(stepper, sys, scenario, h)?;
        let err = (xh - &reference).norm();
        if !(err > 0.0) {
            return Err(Error::InvalidArgument(format!("zero error at step {h}; order undefined")));
        }
        pts.push((h.ln(), err.ln()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
