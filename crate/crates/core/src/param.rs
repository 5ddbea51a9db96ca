//! Discrete-time parameterizing maps of Euler-discretized triangular forms.
//!
//! The flat output `y = (y_p, .., y_1)` is treated as an arbitrary sequence and
//! the block equations
//!
//! ```text
//! x_s(j+1) = x_s(j) + Ts f_s(x(j+1), u(j))     (implicit)
//! x_s(j+1) = x_s(j) + Ts f_s(x(j),   u(j))     (explicit)
//! ```
//!
//! are solved from the top block down for `(xhat_{s-1}, u_{s-1})`. For the
//! implicit scheme a stage delivers `xhat_{s-1}` at the successor shift, so the
//! non-shifted value needs one extra backward shift of the window.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretize::{explicit_step, implicit_step, ImplicitStepSettings};
use crate::error::{Error, Result};
use crate::numeric::{gauss_newton, newton_solve, try_jacobian_fd, NewtonSettings, Vector};
use crate::system::{ContinuousSystem, CoordinateChange};
use crate::triangular::{check_rank_conditions, RankScheme, TriangularForm};
use crate::window::ShiftWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Implicit,
    Explicit,
}

impl Scheme {
    pub fn rank_scheme(self) -> RankScheme {
        match self {
            Scheme::Implicit => RankScheme::Implicit,
            Scheme::Explicit => RankScheme::Explicit,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Implicit => "implicit",
            Scheme::Explicit => "explicit",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit" => Ok(Scheme::Implicit),
            "explicit" => Ok(Scheme::Explicit),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Euler discretization of a triangular form, checked at a reference point.
#[derive(Debug, Clone)]
pub struct DiscreteTriangularSystem {
    tf: TriangularForm,
    scheme: Scheme,
    ts: f64,
    reference: (Vector, Vector),
}

impl DiscreteTriangularSystem {
    /// Fails with [`Error::RankDeficient`] if a rank condition does not hold at
    /// `(ref_state, ref_input)`.
    pub fn new(tf: TriangularForm, scheme: Scheme, ts: f64, ref_state: Vector, ref_input: Vector) -> Result<Self> {
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(Error::InvalidArgument(format!("sampling time {ts} must be > 0")));
        }
        let report = check_rank_conditions(&tf, &ref_state, &ref_input, scheme.rank_scheme());
        if let Some(bad) = report.first_failure() {
            return Err(Error::RankDeficient {
                block: bad.block,
                sigma_min: bad.sigma_min,
            });
        }
        Ok(Self {
            tf,
            scheme,
            ts,
            reference: (ref_state, ref_input),
        })
    }

    pub fn triangular(&self) -> &TriangularForm {
        &self.tf
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn reference(&self) -> (&Vector, &Vector) {
        (&self.reference.0, &self.reference.1)
    }

    /// One step of the discretized triangular dynamics.
    pub fn step(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        match self.scheme {
            Scheme::Explicit => explicit_step(self.tf.system(), x, u, self.ts),
            Scheme::Implicit => {
                let s = ImplicitStepSettings::new(self.ts)?;
                Ok(implicit_step(self.tf.system(), x, u, &s, None)?.0)
            }
        }
    }
}

/// One block solve: find `w = (xhat_{s-1}, u_{s-1})` with
/// `delta = Ts f_s(state, input)` once `w` is written into the unknown slots.
#[derive(Debug)]
pub struct StageProblem<'a> {
    pub block: usize,
    pub shift: i64,
    pub ts: f64,
    pub scheme: Scheme,
    /// `x_s(j+1) - x_s(j)`.
    pub delta: &'a Vector,
    /// State at which `f_s` is evaluated; the `xhat_{s-1}` slot is a placeholder.
    pub state: &'a Vector,
    /// Input at which `f_s` is evaluated; the `u_{s-1}` slot is a placeholder.
    pub input: &'a Vector,
}

impl StageProblem<'_> {
    /// Writes `w` into the unknown slots and returns the full `(state, input)`.
    pub fn fill(&self, tf: &TriangularForm, w: &Vector) -> (Vector, Vector) {
        let mut x = self.state.clone();
        let mut u = self.input.clone();
        let hidden = if self.block >= 2 { tf.hidden_range(self.block - 1) } else { 0..0 };
        let nh = hidden.len();
        for (i, c) in hidden.enumerate() {
            x[c] = w[i];
        }
        for (i, c) in tf.input_range(self.block - 1).enumerate() {
            u[c] = w[nh + i];
        }
        (x, u)
    }

    /// `delta - Ts f_s(fill(w))`.
    pub fn residual(&self, tf: &TriangularForm, w: &Vector) -> Result<Vector> {
        let (x, u) = self.fill(tf, w);
        Ok(self.delta - tf.block_dynamics(self.block, &x, &u)? * self.ts)
    }

    pub fn unknowns(&self, tf: &TriangularForm) -> usize {
        let h = if self.block >= 2 { tf.layout(self.block - 1).hidden } else { 0 };
        h + tf.layout(self.block).input
    }
}

/// Solver for one stage of the top-to-bottom recursion.
pub trait BlockSolver: Send + Sync + fmt::Debug {
    fn solve(&self, tf: &TriangularForm, problem: &StageProblem<'_>, guess: &Vector) -> Result<Vector>;
}

/// Generic stage solver: damped Newton with a central-difference Jacobian.
#[derive(Debug, Clone, Copy, Default)]
pub struct NewtonBlockSolver {
    pub settings: NewtonSettings,
}

impl BlockSolver for NewtonBlockSolver {
    fn solve(&self, tf: &TriangularForm, problem: &StageProblem<'_>, guess: &Vector) -> Result<Vector> {
        // Scaled by 1/Ts so the tolerance applies in the units of f_s.
        let scaled = |w: &Vector| problem.residual(tf, w).map(|r| r / problem.ts);
        let jac = |w: &Vector| try_jacobian_fd(scaled, w, None);
        newton_solve(scaled, jac, guess.clone(), &self.settings)
            .map(|(w, _)| w)
            .map_err(|e| Error::BlockSolve {
                block: problem.block,
                shift: problem.shift,
                reason: e.to_string(),
            })
    }
}

/// State and (transformed) input produced by a parameterizing map.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    pub state: Vector,
    pub input: Vector,
}

/// Shift dependencies per block, as closed intervals relative to the evaluation shift.
type Deps = Vec<Option<(i64, i64)>>;

fn union(a: &mut Deps, b: &Deps) {
    for (x, y) in a.iter_mut().zip(b) {
        *x = match (*x, *y) {
            (None, o) | (o, None) => o,
            (Some((a0, a1)), Some((b0, b1))) => Some((a0.min(b0), a1.max(b1))),
        };
    }
}

fn shifted(a: &Deps, d: i64) -> Deps {
    a.iter().map(|o| o.map(|(l, h)| (l + d, h + d))).collect()
}

struct ShiftAnalysis<'a> {
    tf: &'a TriangularForm,
    scheme: Scheme,
}

impl ShiftAnalysis<'_> {
    fn empty(&self) -> Deps {
        vec![None; self.tf.p() + 1]
    }

    fn flat(&self, k: usize, at: i64) -> Deps {
        let mut d = self.empty();
        if self.tf.layout(k).flat > 0 {
            d[k] = Some((at, at));
        }
        d
    }

    fn state(&self, k: usize) -> Deps {
        let mut d = self.flat(k, 0);
        if k < self.tf.p() && self.tf.layout(k).hidden > 0 {
            let back = match self.scheme {
                Scheme::Implicit => -1,
                Scheme::Explicit => 0,
            };
            union(&mut d, &shifted(&self.stage(k + 1), back));
        }
        d
    }

    fn stage(&self, s: usize) -> Deps {
        let p = self.tf.p();
        let (eval, other) = match self.scheme {
            Scheme::Implicit => (1, 0),
            Scheme::Explicit => (0, 1),
        };
        let mut d = self.empty();
        for b in s..=p {
            union(&mut d, &shifted(&self.state(b), eval));
        }
        union(&mut d, &shifted(&self.state(s), other));
        if s >= 2 {
            union(&mut d, &self.flat(s - 1, eval));
        }
        for b in s..p {
            if self.tf.layout(b + 1).input > 0 {
                union(&mut d, &self.stage(b + 1));
            }
        }
        d
    }

    fn state_total(&self) -> Deps {
        let mut d = self.empty();
        for k in 1..=self.tf.p() {
            union(&mut d, &self.state(k));
        }
        d
    }

    fn total(&self) -> Deps {
        let mut d = self.state_total();
        for i in 0..self.tf.p() {
            if self.tf.layout(i + 1).input > 0 {
                union(&mut d, &self.stage(i + 1));
            }
        }
        if self.scheme == Scheme::Implicit {
            union(&mut d, &shifted(&self.state_total(), 1));
        }
        d
    }

    /// Per-component `(backward, forward)` depth.
    fn per_component(&self, d: &Deps) -> Vec<(i64, i64)> {
        (0..self.tf.output_dim())
            .map(|c| d[self.tf.output_block(c)].unwrap_or((0, 0)))
            .collect()
    }
}

/// Evaluator for the discrete parameterizing map of a [`DiscreteTriangularSystem`].
///
/// Window labels may be offset per component (see [`Self::redefine_shift_origin`]):
/// the sample of component `c` at internal shift `j` is read from window shift
/// `j + origin[c]`.
#[derive(Clone)]
pub struct ParameterizingMap {
    dts: DiscreteTriangularSystem,
    solvers: Vec<Arc<dyn BlockSolver>>,
    /// Internal `(lo, hi)` per component for the full map.
    span: Vec<(i64, i64)>,
    /// Internal `(lo, hi)` per component for the state part at shift 0.
    state_span: Vec<(i64, i64)>,
    origin: Vec<i64>,
    guesses: Vec<Vector>,
    input_dynamics: Option<ContinuousSystem>,
}

impl fmt::Debug for ParameterizingMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterizingMap")
            .field("scheme", &self.dts.scheme)
            .field("ts", &self.dts.ts)
            .field("backward", &self.backward())
            .field("forward", &self.forward())
            .field("solvers", &self.solvers)
            .finish()
    }
}

/// Builds the parameterizing map with generic Newton stage solvers.
pub fn build_parameterizer(dts: &DiscreteTriangularSystem) -> Result<ParameterizingMap> {
    ParameterizingMap::build(dts.clone())
}

impl ParameterizingMap {
    pub fn build(dts: DiscreteTriangularSystem) -> Result<Self> {
        let p = dts.tf.p();
        let solvers: Vec<Arc<dyn BlockSolver>> = (0..p)
            .map(|_| Arc::new(NewtonBlockSolver::default()) as Arc<dyn BlockSolver>)
            .collect();
        Self::build_with_solvers(dts, solvers)
    }

    /// `solvers[i]` handles equation block `p - i`.
    pub fn build_with_solvers(dts: DiscreteTriangularSystem, solvers: Vec<Arc<dyn BlockSolver>>) -> Result<Self> {
        let tf = &dts.tf;
        let p = tf.p();
        if solvers.len() != p {
            return Err(Error::Dimension {
                what: "block solvers",
                expected: p,
                got: solvers.len(),
            });
        }
        let analysis = ShiftAnalysis { tf, scheme: dts.scheme };
        let span = analysis.per_component(&analysis.total());
        let state_span = analysis.per_component(&analysis.state_total());
        let (xr, ur) = (&dts.reference.0, &dts.reference.1);
        let guesses = (1..=p)
            .rev()
            .map(|s| {
                let hidden = if s >= 2 { tf.hidden_range(s - 1) } else { 0..0 };
                let input = tf.input_range(s - 1);
                let mut g = Vector::zeros(hidden.len() + input.len());
                let nh = hidden.len();
                for (i, c) in hidden.enumerate() {
                    g[i] = xr[c];
                }
                for (i, c) in input.enumerate() {
                    g[nh + i] = ur[c];
                }
                g
            })
            .collect();
        let m = tf.output_dim();
        Ok(Self {
            dts,
            solvers,
            span,
            state_span,
            origin: vec![0; m],
            guesses,
            input_dynamics: None,
        })
    }

    /// Registers the original-input dynamics in transformed coordinates,
    /// `xbar_dot = f(xbar, u)`. Input recovery then solves the discretized
    /// relation `xbar+ = xbar + Ts f(., u)` for `u` directly, which stays
    /// regular where the input transformation degenerates.
    pub fn with_input_dynamics(mut self, sys: ContinuousSystem) -> Self {
        self.input_dynamics = Some(sys);
        self
    }

    pub fn system(&self) -> &DiscreteTriangularSystem {
        &self.dts
    }

    pub fn scheme(&self) -> Scheme {
        self.dts.scheme
    }

    pub fn ts(&self) -> f64 {
        self.dts.ts
    }

    pub fn triangular(&self) -> &TriangularForm {
        &self.dts.tf
    }

    pub fn output_dim(&self) -> usize {
        self.origin.len()
    }

    /// Backward shift depth `R1` per flat-output component.
    pub fn backward(&self) -> Vec<usize> {
        self.span
            .iter()
            .zip(&self.origin)
            .map(|(&(lo, _), &o)| (-(lo + o)).max(0) as usize)
            .collect()
    }

    /// Forward shift depth `R2` per flat-output component.
    pub fn forward(&self) -> Vec<usize> {
        self.span
            .iter()
            .zip(&self.origin)
            .map(|(&(_, hi), &o)| (hi + o).max(0) as usize)
            .collect()
    }

    /// Total depth `R = R1 + R2` per component.
    pub fn depth(&self) -> Vec<usize> {
        self.backward().iter().zip(self.forward()).map(|(a, b)| a + b).collect()
    }

    /// Window shifts needed by [`Self::evaluate`]: `[-max R1, max R2]`.
    pub fn window_range(&self) -> (i64, i64) {
        let lo = -(self.backward().into_iter().max().unwrap_or(0) as i64);
        let hi = self.forward().into_iter().max().unwrap_or(0) as i64;
        (lo, hi)
    }

    /// Window shifts needed by the state part at shift 0.
    pub fn state_window_range(&self) -> (i64, i64) {
        let lo = self.state_span.iter().zip(&self.origin).map(|(s, o)| s.0 + o).min().unwrap_or(0);
        let hi = self.state_span.iter().zip(&self.origin).map(|(s, o)| s.1 + o).max().unwrap_or(0);
        (lo, hi)
    }

    /// Relabels the window so the deepest backward shift becomes shift 0:
    /// `y_[-R1] -> y`, giving `R1 = 0` and `R2 = R1 + R2`.
    pub fn redefine_shift_origin(&self) -> Self {
        let mut out = self.clone();
        for (o, &b) in out.origin.iter_mut().zip(&self.backward()) {
            *o += b as i64;
        }
        out
    }

    fn check_window(&self, window: &ShiftWindow, lo: i64, hi: i64) -> Result<()> {
        if window.dim() != self.output_dim() {
            return Err(Error::Dimension {
                what: "flat-output window",
                expected: self.output_dim(),
                got: window.dim(),
            });
        }
        if !window.covers(lo, hi) {
            let shift = if lo < window.first() { lo } else { hi };
            return Err(Error::MissingShift {
                shift,
                lo: window.first(),
                hi: window.last(),
            });
        }
        Ok(())
    }

    /// `(xbar, ubar)` at shift 0.
    pub fn evaluate(&self, window: &ShiftWindow) -> Result<ParamPoint> {
        let (lo, hi) = self.window_range();
        self.check_window(window, lo, hi)?;
        let mut ev = Evaluation::new(self, window);
        Ok(ParamPoint {
            state: ev.state(0)?,
            input: ev.input(0)?,
        })
    }

    /// `xbar` at the given shift.
    pub fn evaluate_state(&self, window: &ShiftWindow, shift: i64) -> Result<Vector> {
        let (lo, hi) = self.state_window_range();
        self.check_window(window, lo + shift, hi + shift)?;
        Evaluation::new(self, window).state(shift)
    }

    /// `ubar` at the given shift.
    pub fn evaluate_input(&self, window: &ShiftWindow, shift: i64) -> Result<Vector> {
        let (lo, hi) = self.window_range();
        self.check_window(window, lo + shift, hi + shift)?;
        Evaluation::new(self, window).input(shift)
    }

    /// Original input `u` at shift 0 via `u = Phi_u^-1(xbar+, ubar)` (implicit)
    /// or `u = Phi_u^-1(xbar, ubar)` (explicit).
    ///
    /// When input dynamics are registered, the discretized relation is solved
    /// for `u` by Gauss-Newton instead, seeded with the transform route.
    pub fn recover_original_input(&self, window: &ShiftWindow, change: &CoordinateChange) -> Result<Vector> {
        let (lo, hi) = self.window_range();
        self.check_window(window, lo, hi)?;
        let mut ev = Evaluation::new(self, window);
        let x0 = ev.state(0)?;
        let x1 = ev.state(1)?;
        let ubar = ev.input(0)?;
        let anchor = match self.scheme() {
            Scheme::Implicit => &x1,
            Scheme::Explicit => &x0,
        };
        let Some(sys) = &self.input_dynamics else {
            return change.input_inv_shifted(anchor, &ubar);
        };
        let seed = change
            .input_inv_shifted(anchor, &ubar)
            .ok()
            .filter(|u| u.iter().all(|v| v.is_finite()))
            .or_else(|| sys.equilibrium().map(|e| e.input.clone()))
            .unwrap_or_else(|| Vector::zeros(sys.m()));
        let ts = self.ts();
        let delta = &x1 - &x0;
        let scale = delta.norm().max(ts);
        let (u, res) = gauss_newton(|u| Ok(&delta - sys.eval(anchor, u)? * ts), seed, 1e-14 * scale, 20)?;
        if !(res <= 1e-9 * scale) {
            return Err(Error::Singular {
                what: "input recovery residual".into(),
                value: res,
            });
        }
        Ok(u)
    }

    /// Parameterizes `(x(k), u(k))` along a flat-output sequence, steps the
    /// discretized triangular system and returns `max |x(k+1) - step(x(k), u(k))|`.
    pub fn roundtrip_validate(&self, dts: &DiscreteTriangularSystem, sequence: &ShiftWindow) -> Result<f64> {
        let (lo, hi) = self.window_range();
        let first = sequence.first() - lo;
        let last = sequence.last() - hi - 1;
        if last < first {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} samples too short for window {lo}..={hi} plus one step",
                sequence.len()
            )));
        }
        let mut worst = 0.0f64;
        let mut next: Option<Vector> = None;
        for k in first..=last {
            let here = sequence.slice(k + lo, k + hi)?.relabel(-k);
            let pt = self.evaluate(&here)?;
            if let Some(prev) = next.take() {
                worst = worst.max((prev - &pt.state).norm());
            }
            next = Some(dts.step(&pt.state, &pt.input)?);
        }
        let tail = sequence.slice(last + 1 + lo, last + 1 + hi)?.relabel(-(last + 1));
        let x_last = self.evaluate_state(&tail, 0)?;
        if let Some(prev) = next {
            worst = worst.max((prev - x_last).norm());
        }
        Ok(worst)
    }
}

/// Free-function form of [`ParameterizingMap::evaluate`].
pub fn evaluate(map: &ParameterizingMap, window: &ShiftWindow) -> Result<ParamPoint> {
    map.evaluate(window)
}

/// Free-function form of [`ParameterizingMap::recover_original_input`].
pub fn recover_original_input(map: &ParameterizingMap, window: &ShiftWindow, change: &CoordinateChange) -> Result<Vector> {
    map.recover_original_input(window, change)
}

/// Free-function form of [`ParameterizingMap::roundtrip_validate`].
pub fn roundtrip_validate(map: &ParameterizingMap, dts: &DiscreteTriangularSystem, sequence: &ShiftWindow) -> Result<f64> {
    map.roundtrip_validate(dts, sequence)
}

/// Free-function form of [`ParameterizingMap::redefine_shift_origin`].
pub fn redefine_shift_origin(map: &ParameterizingMap) -> ParameterizingMap {
    map.redefine_shift_origin()
}

/// Memoized top-to-bottom evaluation over one window.
struct Evaluation<'a> {
    map: &'a ParameterizingMap,
    window: &'a ShiftWindow,
    states: HashMap<(usize, i64), Vector>,
    stages: HashMap<(usize, i64), Vector>,
    last: HashMap<usize, Vector>,
}

impl<'a> Evaluation<'a> {
    fn new(map: &'a ParameterizingMap, window: &'a ShiftWindow) -> Self {
        Self {
            map,
            window,
            states: HashMap::new(),
            stages: HashMap::new(),
            last: HashMap::new(),
        }
    }

    fn tf(&self) -> &'a TriangularForm {
        &self.map.dts.tf
    }

    fn flat(&self, k: usize, j: i64) -> Result<Vector> {
        let tf = self.tf();
        let r = tf.output_range(k);
        let mut y = Vector::zeros(r.len());
        for (i, c) in r.enumerate() {
            y[i] = self.window.component(j + self.map.origin[c], c)?;
        }
        Ok(y)
    }

    fn block_state(&mut self, k: usize, j: i64) -> Result<Vector> {
        if let Some(v) = self.states.get(&(k, j)) {
            return Ok(v.clone());
        }
        let tf = self.tf();
        let lay = tf.layout(k);
        let mut x = Vector::zeros(lay.state_dim());
        x.rows_mut(0, lay.flat).copy_from(&self.flat(k, j)?);
        if k < tf.p() && lay.hidden > 0 {
            let at = match self.map.scheme() {
                Scheme::Implicit => j - 1,
                Scheme::Explicit => j,
            };
            let w = self.stage(k + 1, at)?;
            x.rows_mut(lay.flat, lay.hidden).copy_from(&w.rows(0, lay.hidden));
        }
        self.states.insert((k, j), x.clone());
        Ok(x)
    }

    /// `u_i(j)`, delivered by the stage of block `i + 1`.
    fn block_input(&mut self, i: usize, j: i64) -> Result<Vector> {
        let tf = self.tf();
        let n_in = tf.layout(i + 1).input;
        if n_in == 0 {
            return Ok(Vector::zeros(0));
        }
        let w = self.stage(i + 1, j)?;
        let nh = w.len() - n_in;
        Ok(w.rows(nh, n_in).into_owned())
    }

    fn stage(&mut self, s: usize, j: i64) -> Result<Vector> {
        if let Some(w) = self.stages.get(&(s, j)) {
            return Ok(w.clone());
        }
        let tf = self.tf();
        let p = tf.p();
        let scheme = self.map.scheme();
        let eval_shift = match scheme {
            Scheme::Implicit => j + 1,
            Scheme::Explicit => j,
        };
        let mut state = Vector::zeros(tf.n());
        for b in s..=p {
            let xb = self.block_state(b, eval_shift)?;
            state.rows_mut(tf.state_range(b).start, xb.len()).copy_from(&xb);
        }
        if s >= 2 {
            let y = self.flat(s - 1, eval_shift)?;
            state.rows_mut(tf.flat_range(s - 1).start, y.len()).copy_from(&y);
        }
        let mut input = Vector::zeros(tf.m());
        for b in s..p {
            let ub = self.block_input(b, j)?;
            if !ub.is_empty() {
                input.rows_mut(tf.input_range(b).start, ub.len()).copy_from(&ub);
            }
        }
        let delta = self.block_state(s, j + 1)? - self.block_state(s, j)?;
        let guess = self
            .last
            .get(&s)
            .cloned()
            .unwrap_or_else(|| self.map.guesses[p - s].clone());
        let problem = StageProblem {
            block: s,
            shift: j,
            ts: self.map.ts(),
            scheme,
            delta: &delta,
            state: &state,
            input: &input,
        };
        let w = self.map.solvers[p - s].solve(tf, &problem, &guess)?;
        if w.len() != problem.unknowns(tf) {
            return Err(Error::Dimension {
                what: "block solution",
                expected: problem.unknowns(tf),
                got: w.len(),
            });
        }
        self.last.insert(s, w.clone());
        self.stages.insert((s, j), w.clone());
        Ok(w)
    }

    fn state(&mut self, j: i64) -> Result<Vector> {
        let tf = self.tf();
        let mut x = Vector::zeros(tf.n());
        for k in 1..=tf.p() {
            let xk = self.block_state(k, j)?;
            x.rows_mut(tf.state_range(k).start, xk.len()).copy_from(&xk);
        }
        Ok(x)
    }

    fn input(&mut self, j: i64) -> Result<Vector> {
        let tf = self.tf();
        let mut u = Vector::zeros(tf.m());
        for i in 0..tf.p() {
            let ui = self.block_input(i, j)?;
            if !ui.is_empty() {
                u.rows_mut(tf.input_range(i).start, ui.len()).copy_from(&ui);
            }
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triangular::BlockLayout;

    /// x = (x2, x1): x2' = x1, x1' = u.
    fn double_integrator(scheme: Scheme, ts: f64) -> DiscreteTriangularSystem {
        let sys = ContinuousSystem::new(2, 1, |x, u| Vector::from_vec(vec![x[1], u[0]]));
        let tf = TriangularForm::new(sys, vec![BlockLayout::new(1, 0, 0), BlockLayout::new(0, 1, 1)]).unwrap();
        DiscreteTriangularSystem::new(tf, scheme, ts, Vector::zeros(2), Vector::zeros(1)).unwrap()
    }

    fn seq(first: i64, last: i64, f: impl Fn(i64) -> f64) -> ShiftWindow {
        ShiftWindow::from_fn(first, last, |j| Vector::from_vec(vec![f(j)])).unwrap()
    }

    #[test]
    fn double_integrator_implicit_shape_and_values() {
        let ts = 0.1;
        let map = ParameterizingMap::build(double_integrator(Scheme::Implicit, ts)).unwrap();
        assert_eq!(map.backward(), vec![1]);
        assert_eq!(map.forward(), vec![1]);
        let w = seq(-1, 1, |j| [0.3, 1.0, 2.5][(j + 1) as usize]);
        let pt = map.evaluate(&w).unwrap();
        assert!((pt.state[0] - 1.0).abs() < 1e-12);
        assert!((pt.state[1] - (1.0 - 0.3) / ts).abs() < 1e-9);
        assert!((pt.input[0] - (2.5 - 2.0 + 0.3) / (ts * ts)).abs() < 1e-7);
    }

    #[test]
    fn double_integrator_explicit_is_forward_only() {
        let map = ParameterizingMap::build(double_integrator(Scheme::Explicit, 0.1)).unwrap();
        assert_eq!(map.backward(), vec![0]);
        assert_eq!(map.forward(), vec![2]);
    }

    #[test]
    fn ramp_gives_unit_velocity_and_zero_input() {
        let ts = 0.05;
        let map = ParameterizingMap::build(double_integrator(Scheme::Implicit, ts)).unwrap();
        let pt = map.evaluate(&seq(-1, 1, |k| k as f64 * ts)).unwrap();
        assert!((pt.state[1] - 1.0).abs() < 1e-10);
        assert!(pt.input[0].abs() < 1e-8);
    }

    #[test]
    fn redefinition_moves_origin() {
        let map = ParameterizingMap::build(double_integrator(Scheme::Implicit, 0.1)).unwrap();
        let r = map.redefine_shift_origin();
        assert_eq!(r.backward(), vec![0]);
        assert_eq!(r.forward(), vec![2]);
        assert_eq!(r.window_range(), (0, 2));
        assert_eq!(r.state_window_range(), (0, 1));
        let w_old = seq(-1, 1, |j| (j as f64).powi(2) + 0.5);
        let w_new = w_old.relabel(1);
        let a = map.evaluate(&w_old).unwrap();
        let b = r.evaluate(&w_new).unwrap();
        assert!((a.state - b.state).norm() < 1e-12);
        // redefining twice is a no-op
        assert_eq!(r.redefine_shift_origin().window_range(), (0, 2));
    }

    #[test]
    fn missing_shift_is_reported() {
        let map = ParameterizingMap::build(double_integrator(Scheme::Implicit, 0.1)).unwrap();
        let err = map.evaluate(&seq(0, 1, |_| 0.0)).unwrap_err();
        assert!(matches!(err, Error::MissingShift { shift: -1, .. }));
    }

    #[test]
    fn roundtrip_exact_for_linear_chain() {
        for scheme in [Scheme::Implicit, Scheme::Explicit] {
            let dts = double_integrator(scheme, 0.1);
            let map = ParameterizingMap::build(dts.clone()).unwrap();
            let s = seq(0, 30, |k| (0.3 * k as f64).sin() + 0.01 * (k * k) as f64);
            let r = map.roundtrip_validate(&dts, &s).unwrap();
            assert!(r <= 1e-12, "{scheme}: {r}");
        }
    }

    #[test]
    fn rank_failure_names_block() {
        // x2' = x1^3 is rank deficient in x1 at 0.
        let sys = ContinuousSystem::new(2, 1, |x, u| Vector::from_vec(vec![x[1].powi(3), u[0]]));
        let tf = TriangularForm::new(sys, vec![BlockLayout::new(1, 0, 0), BlockLayout::new(0, 1, 1)]).unwrap();
        let err = DiscreteTriangularSystem::new(tf, Scheme::Implicit, 0.1, Vector::zeros(2), Vector::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { block: 2, .. }));
    }
}
