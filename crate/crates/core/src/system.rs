//! Continuous-time systems `xdot = f(x, u)` and state/input coordinate changes.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{directional_derivative, jacobian_fd, singular_values, Matrix, Vector};

pub type DynamicsFn = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync>;
pub type StateMapFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type InputMapFn = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
pub type InputInverseFn = Arc<dyn Fn(&Vector, &Vector) -> Result<Vector> + Send + Sync>;

/// Tolerance on `|f(x_s, u_s)|` for a declared equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: Vector,
    pub input: Vector,
}

/// `xdot = f(x, u)` with `n` states and `m` inputs.
#[derive(Clone)]
pub struct ContinuousSystem {
    n: usize,
    m: usize,
    dynamics: DynamicsFn,
    state_jacobian: Option<JacobianFn>,
    equilibrium: Option<Equilibrium>,
}

impl fmt::Debug for ContinuousSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("analytic_jacobian", &self.state_jacobian.is_some())
            .field("equilibrium", &self.equilibrium)
            .finish()
    }
}

impl ContinuousSystem {
    pub fn new<F>(n: usize, m: usize, dynamics: F) -> Self
    where
        F: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            n,
            m,
            dynamics: Arc::new(dynamics),
            state_jacobian: None,
            equilibrium: None,
        }
    }

    /// Registers an analytic `df/dx`, used instead of finite differences.
    pub fn with_state_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector, &Vector) -> Matrix + Send + Sync + 'static,
    {
        self.state_jacobian = Some(Arc::new(jac));
        self
    }

    /// Declares `(x_s, u_s)` as equilibrium; rejected unless `|f(x_s, u_s)| <= 1e-12`.
    pub fn with_equilibrium(mut self, state: Vector, input: Vector) -> Result<Self> {
        let f = self.eval(&state, &input)?;
        let norm = f.norm();
        if !(norm <= EQUILIBRIUM_TOL) {
            return Err(Error::InvalidArgument(format!(
                "declared equilibrium has |f| = {norm:.3e}"
            )));
        }
        self.equilibrium = Some(Equilibrium { state, input });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn equilibrium(&self) -> Option<&Equilibrium> {
        self.equilibrium.as_ref()
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.state_jacobian.is_some()
    }

    fn check_dims(&self, x: &Vector, u: &Vector) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                what: "state",
                expected: self.n,
                got: x.len(),
            });
        }
        if u.len() != self.m {
            return Err(Error::Dimension {
                what: "input",
                expected: self.m,
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Evaluates `f(x, u)`.
    pub fn eval(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_dims(x, u)?;
        let dx = (self.dynamics)(x, u);
        if dx.len() != self.n {
            return Err(Error::Dimension {
                what: "dynamics output",
                expected: self.n,
                got: dx.len(),
            });
        }
        Ok(dx)
    }

    /// `df/dx` at `(x, u)`, analytic when registered.
    pub fn state_jacobian(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        self.check_dims(x, u)?;
        match &self.state_jacobian {
            Some(j) => Ok(j(x, u)),
            None => jacobian_fd(|xp| (self.dynamics)(xp, u), x, None),
        }
    }

    /// `df/du` at `(x, u)` by central differences.
    pub fn input_jacobian(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        self.check_dims(x, u)?;
        jacobian_fd(|up| (self.dynamics)(x, up), u, None)
    }

    pub(crate) fn raw(&self) -> &DynamicsFn {
        &self.dynamics
    }
}

/// Evaluates the dynamics of `sys` at `(x, u)`.
pub fn eval_dynamics(sys: &ContinuousSystem, x: &Vector, u: &Vector) -> Result<Vector> {
    sys.eval(x, u)
}

/// State transformation `xbar = Phi_x(x)` and input transformation
/// `ubar = Phi_u(x, u)`, together with their inverses.
///
/// `input_inv_shifted(xbar, ubar)` returns the `u` solving `ubar = Phi_u(x, u)`
/// with `x = Phi_x^-1(xbar)`. After an implicit Euler discretization it is
/// evaluated at the successor state, which relates the input trajectories of the
/// two discretizations.
#[derive(Clone)]
pub struct CoordinateChange {
    n: usize,
    m: usize,
    state_fwd: StateMapFn,
    state_inv: StateMapFn,
    input_fwd: InputMapFn,
    input_inv_shifted: InputInverseFn,
}

impl fmt::Debug for CoordinateChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoordinateChange")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl CoordinateChange {
    pub fn new(
        n: usize,
        m: usize,
        state_fwd: StateMapFn,
        state_inv: StateMapFn,
        input_fwd: InputMapFn,
        input_inv_shifted: InputInverseFn,
    ) -> Self {
        Self {
            n,
            m,
            state_fwd,
            state_inv,
            input_fwd,
            input_inv_shifted,
        }
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self::new(
            n,
            m,
            Arc::new(|x| x.clone()),
            Arc::new(|x| x.clone()),
            Arc::new(|_, u| u.clone()),
            Arc::new(|_, u| Ok(u.clone())),
        )
    }

    /// `xbar = T x` with the input left unchanged.
    pub fn linear_state(t: Matrix, m: usize) -> Result<Self> {
        let n = t.nrows();
        let inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular {
                what: "linear state transformation".into(),
                value: 0.0,
            })?;
        Ok(Self::new(
            n,
            m,
            Arc::new(move |x| &t * x),
            Arc::new(move |xb| &inv * xb),
            Arc::new(|_, u| u.clone()),
            Arc::new(|_, u| Ok(u.clone())),
        ))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn check(&self, what: &'static str, v: &Vector, expected: usize) -> Result<()> {
        if v.len() == expected {
            Ok(())
        } else {
            Err(Error::Dimension {
                what,
                expected,
                got: v.len(),
            })
        }
    }

    pub fn state_fwd(&self, x: &Vector) -> Result<Vector> {
        self.check("state", x, self.n)?;
        Ok((self.state_fwd)(x))
    }

    pub fn state_inv(&self, xbar: &Vector) -> Result<Vector> {
        self.check("transformed state", xbar, self.n)?;
        Ok((self.state_inv)(xbar))
    }

    pub fn input_fwd(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check("state", x, self.n)?;
        self.check("input", u, self.m)?;
        Ok((self.input_fwd)(x, u))
    }

    pub fn input_inv_shifted(&self, xbar_next: &Vector, ubar: &Vector) -> Result<Vector> {
        self.check("transformed state", xbar_next, self.n)?;
        self.check("transformed input", ubar, self.m)?;
        (self.input_inv_shifted)(xbar_next, ubar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformMode {
    /// `xbar_dot = fbar(xbar, u)`: original input kept.
    StateOnly,
    /// `xbar_dot = fbar(xbar, ubar)`.
    StateAndInput,
}

/// Pushes `sys` forward through `change`.
///
/// The state Jacobian of the transformation is applied through a fourth-order
/// directional difference, so no analytic derivative of `Phi_x` is needed.
pub fn transform_system(
    sys: &ContinuousSystem,
    change: &CoordinateChange,
    mode: TransformMode,
) -> Result<ContinuousSystem> {
    if change.n() != sys.n() || change.m() != sys.m() {
        return Err(Error::Dimension {
            what: "coordinate change",
            expected: sys.n(),
            got: change.n(),
        });
    }
    let equilibrium = match sys.equilibrium() {
        Some(eq) => {
            let xb = change.state_fwd(&eq.state)?;
            let back = change.state_inv(&xb)?;
            let err = (&back - &eq.state).norm();
            let jac = jacobian_fd(|x| (change.state_fwd)(x), &eq.state, None)?;
            let smin = singular_values(&jac)
                .and_then(|s| s.last().copied())
                .unwrap_or(0.0);
            if err > 1e-9 * eq.state.norm().max(1.0) || smin <= 1e-10 {
                return Err(Error::Singular {
                    what: "state transformation at equilibrium".into(),
                    value: smin,
                });
            }
            let input = match mode {
                TransformMode::StateOnly => eq.input.clone(),
                TransformMode::StateAndInput => change.input_fwd(&eq.state, &eq.input)?,
            };
            Some(Equilibrium { state: xb, input })
        }
        None => None,
    };

    let f = sys.raw().clone();
    let ch = change.clone();
    let n = sys.n();
    let pushforward = move |xb: &Vector, u: &Vector| -> Vector {
        let x = (ch.state_inv)(xb);
        let dx = f(&x, u);
        directional_derivative(|p| (ch.state_fwd)(p), &x, &dx)
    };
    let mut out = match mode {
        TransformMode::StateOnly => ContinuousSystem::new(n, sys.m(), pushforward),
        TransformMode::StateAndInput => {
            let ch = change.clone();
            ContinuousSystem::new(n, sys.m(), move |xb: &Vector, ub: &Vector| {
                match (ch.input_inv_shifted)(xb, ub) {
                    Ok(u) => pushforward(xb, &u),
                    Err(_) => Vector::from_element(n, f64::NAN),
                }
            })
        }
    };
    // The mapped equilibrium may sit on a singular locus of the transformed
    // dynamics (the VTOL triangular form at hover), so it is carried over
    // without re-evaluating f there.
    out.equilibrium = equilibrium;
    Ok(out)
}
