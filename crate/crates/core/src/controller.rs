//! Discrete-time flatness-based tracking control by dynamic feedback.
//!
//! The parameterizing map is used with its origin moved to the deepest
//! backward shift, so `(xbar, u) = F(y, .., y_[R])` with `xbar` independent of
//! `y_[R]`. A controller state `z = F_z(y, .., y_[R-1])` completes `xbar` to an
//! invertible map `Psi`; feeding `y_[R] = v` through `F_u` and `F_z` gives the
//! chain of shifts `y_[R] = v`, which the outer loop stabilizes by pole
//! placement.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FaultStage, Result};
use crate::numeric::{newton_solve, singular_values, try_jacobian_fd, NewtonSettings, Vector};
use crate::param::ParameterizingMap;
use crate::system::CoordinateChange;
use crate::window::ShiftWindow;

/// Smallest singular value (relative to `max(1, sigma_max)`) accepted for the combined map.
pub const INVERTIBILITY_THRESHOLD: f64 = 1e-8;

/// A discrete-time pole, written in config files as a real number or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pole {
    Real(f64),
    Complex([f64; 2]),
}

impl Pole {
    pub fn value(self) -> Complex64 {
        match self {
            Pole::Real(r) => Complex64::new(r, 0.0),
            Pole::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// Desired closed-loop poles per flat-output component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSpec {
    pub poles: Vec<Vec<Pole>>,
}

impl GainSpec {
    /// The same real pole repeated `orders[j]` times for each output.
    pub fn repeated(pole: f64, orders: &[usize]) -> Self {
        Self {
            poles: orders.iter().map(|&r| vec![Pole::Real(pole); r]).collect(),
        }
    }

    pub fn orders(&self) -> Vec<usize> {
        self.poles.iter().map(Vec::len).collect()
    }
}

/// Coefficients `a_0, .., a_{r-1}` of `prod (z - lambda) = z^r + a_{r-1} z^{r-1} + .. + a_0`
/// for each output.
pub fn pole_gains(spec: &GainSpec) -> Result<Vec<Vec<f64>>> {
    spec.poles.iter().map(|poles| channel_gains(poles)).collect()
}

fn channel_gains(poles: &[Pole]) -> Result<Vec<f64>> {
    let roots: Vec<Complex64> = poles.iter().map(|p| p.value()).collect();
    for r in &roots {
        if !(r.norm() < 1.0) {
            return Err(Error::UnstablePole { re: r.re, im: r.im });
        }
    }
    let mut unmatched: Vec<Complex64> = roots.iter().copied().filter(|r| r.im != 0.0).collect();
    while let Some(r) = unmatched.pop() {
        let pos = unmatched
            .iter()
            .position(|s| (s - r.conj()).norm() <= 1e-12 * r.norm().max(1.0))
            .ok_or_else(|| Error::InvalidArgument(format!("pole {r} has no conjugate partner")))?;
        unmatched.swap_remove(pos);
    }
    // Ascending coefficients, leading one last.
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in &roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (k, &ck) in c.iter().enumerate() {
            next[k + 1] += ck;
            next[k] -= r * ck;
        }
        c = next;
    }
    c.pop();
    Ok(c.into_iter().map(|v| v.re).collect())
}

/// The map `window (y, .., y_[R-1]) -> (xbar, z)`.
#[derive(Debug, Clone)]
pub struct CombinedMap {
    param: ParameterizingMap,
    z_select: Vec<(usize, i64)>,
    orders: Vec<usize>,
    depth: usize,
    sigma_min: f64,
}

/// Builds the combined map and checks its Jacobian at the probe window.
pub fn extend_to_diffeo(param: &ParameterizingMap, z_select: &[(usize, i64)], probe: &ShiftWindow) -> Result<CombinedMap> {
    let param = param.redefine_shift_origin();
    let orders = param.forward();
    let depth = orders.iter().copied().max().unwrap_or(0);
    let m = orders.len();
    for &(c, s) in z_select {
        if c >= m || s < 0 || s >= orders[c] as i64 {
            return Err(Error::InvalidArgument(format!(
                "z selection ({c}, {s}) outside component range / shifts 0..{}",
                orders.get(c).map_or(0, |r| r.saturating_sub(1))
            )));
        }
    }
    let n = param.triangular().n();
    let entries: usize = orders.iter().sum();
    if n + z_select.len() != entries {
        return Err(Error::Dimension {
            what: "dim(xbar) + dim(z) against window entries",
            expected: entries,
            got: n + z_select.len(),
        });
    }
    if param.state_window_range().1 >= depth as i64 {
        return Err(Error::InvalidArgument("state map depends on the topmost shift".into()));
    }
    let mut map = CombinedMap {
        param,
        z_select: z_select.to_vec(),
        orders,
        depth,
        sigma_min: f64::NAN,
    };
    let w0 = map.unknowns_from_window(probe)?;
    let jac = try_jacobian_fd(|w| map.eval_unknowns(w), &w0, None)?;
    let sv = singular_values(&jac).ok_or_else(|| Error::NonFinite("combined map Jacobian".into()))?;
    let (smin, smax) = match (sv.last(), sv.first()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (f64::INFINITY, 0.0),
    };
    if !(smin > INVERTIBILITY_THRESHOLD * smax.max(1.0)) {
        return Err(Error::NotInvertible { sigma_min: smin });
    }
    map.sigma_min = smin;
    Ok(map)
}

impl CombinedMap {
    pub fn param(&self) -> &ParameterizingMap {
        &self.param
    }

    pub fn z_select(&self) -> &[(usize, i64)] {
        &self.z_select
    }

    /// Shift depth `r_j` per output.
    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    /// `R = max r_j`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Smallest singular value of the Jacobian at the probe window.
    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn z_dim(&self) -> usize {
        self.z_select.len()
    }

    /// Unknown entries `(component, shift)` in stacking order.
    fn entries(&self) -> impl Iterator<Item = (usize, i64)> + '_ {
        self.orders
            .iter()
            .enumerate()
            .flat_map(|(c, &r)| (0..r as i64).map(move |s| (c, s)))
    }

    fn unknowns_from_window(&self, w: &ShiftWindow) -> Result<Vector> {
        let vals: Result<Vec<f64>> = self.entries().map(|(c, s)| w.component(s, c)).collect();
        Ok(Vector::from_vec(vals?))
    }

    fn window_from_unknowns(&self, v: &Vector) -> Result<ShiftWindow> {
        let m = self.orders.len();
        let mut samples = vec![Vector::zeros(m); self.depth];
        for (k, (c, s)) in self.entries().enumerate() {
            samples[s as usize][c] = v[k];
        }
        // Shifts a component does not use repeat its last entry.
        for (c, &r) in self.orders.iter().enumerate() {
            for s in r.max(1)..self.depth {
                samples[s][c] = samples[s - 1][c];
            }
        }
        ShiftWindow::new(0, samples)
    }

    /// `F_z` on a window starting at shift 0.
    pub fn eval_z(&self, w: &ShiftWindow) -> Result<Vector> {
        let vals: Result<Vec<f64>> = self.z_select.iter().map(|&(c, s)| w.component(s, c)).collect();
        Ok(Vector::from_vec(vals?))
    }

    /// `(F_xbar, F_z)` stacked.
    pub fn eval(&self, w: &ShiftWindow) -> Result<Vector> {
        let x = self.param.evaluate_state(w, 0)?;
        let z = self.eval_z(w)?;
        Ok(Vector::from_iterator(x.len() + z.len(), x.iter().chain(z.iter()).copied()))
    }

    fn eval_unknowns(&self, v: &Vector) -> Result<Vector> {
        self.eval(&self.window_from_unknowns(v)?)
    }

    /// Newton inverse of [`Self::eval`] seeded with `guess`.
    pub fn invert(&self, xb: &Vector, z: &Vector, guess: &ShiftWindow, settings: &NewtonSettings) -> Result<ShiftWindow> {
        let target = Vector::from_iterator(xb.len() + z.len(), xb.iter().chain(z.iter()).copied());
        let res = |v: &Vector| self.eval_unknowns(v).map(|f| f - &target);
        let jac = |v: &Vector| try_jacobian_fd(res, v, None);
        let w0 = self.unknowns_from_window(guess)?;
        let (w, report) = newton_solve(res, jac, w0, settings)?;
        if !(report.final_residual <= PSI_TOL) {
            return Err(Error::StepFailure { report });
        }
        self.window_from_unknowns(&w)
    }
}

/// Forward-check tolerance of the inverse.
pub const PSI_TOL: f64 = 1e-10;

pub type PsiClosedForm = Arc<dyn Fn(&Vector, &Vector) -> Result<ShiftWindow> + Send + Sync>;

/// How `Psi-hat` is computed.
#[derive(Clone)]
pub enum PsiInverse {
    Numeric(NewtonSettings),
    ClosedForm(PsiClosedForm),
}

impl fmt::Debug for PsiInverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsiInverse::Numeric(s) => f.debug_tuple("Numeric").field(s).finish(),
            PsiInverse::ClosedForm(_) => f.write_str("ClosedForm"),
        }
    }
}

impl Default for PsiInverse {
    fn default() -> Self {
        PsiInverse::Numeric(NewtonSettings {
            tol: 1e-11,
            ..NewtonSettings::default()
        })
    }
}

/// Result of one dynamic feedback evaluation.
#[derive(Debug, Clone)]
pub struct FeedbackOutput {
    pub input: Vector,
    pub z_next: Vector,
    /// Estimated window `y, .., y_[R-1]`.
    pub estimate: ShiftWindow,
}

#[derive(Debug, Clone)]
pub struct FlatnessController {
    map: CombinedMap,
    gains: Vec<Vec<f64>>,
    change: CoordinateChange,
    psi: PsiInverse,
    z: Vector,
    warm: Option<ShiftWindow>,
    last: Option<FeedbackOutput>,
}

impl FlatnessController {
    pub fn new(map: CombinedMap, gains: Vec<Vec<f64>>, change: CoordinateChange) -> Result<Self> {
        if gains.len() != map.orders.len() {
            return Err(Error::Dimension {
                what: "gain vectors",
                expected: map.orders.len(),
                got: gains.len(),
            });
        }
        for (a, &r) in gains.iter().zip(&map.orders) {
            if a.len() != r {
                return Err(Error::Dimension {
                    what: "gains per output",
                    expected: r,
                    got: a.len(),
                });
            }
        }
        let z = Vector::zeros(map.z_dim());
        Ok(Self {
            map,
            gains,
            change,
            psi: PsiInverse::default(),
            z,
            warm: None,
            last: None,
        })
    }

    /// Builds gains from `spec`, which must list `r_j` poles per output.
    pub fn with_poles(map: CombinedMap, spec: &GainSpec, change: CoordinateChange) -> Result<Self> {
        if spec.orders() != map.orders {
            return Err(Error::InvalidArgument(format!(
                "pole counts {:?} do not match shift depths {:?}",
                spec.orders(),
                map.orders
            )));
        }
        Self::new(map, pole_gains(spec)?, change)
    }

    pub fn with_psi(mut self, psi: PsiInverse) -> Self {
        self.psi = psi;
        self
    }

    pub fn map(&self) -> &CombinedMap {
        &self.map
    }

    pub fn gains(&self) -> &[Vec<f64>] {
        &self.gains
    }

    pub fn change(&self) -> &CoordinateChange {
        &self.change
    }

    pub fn z(&self) -> &Vector {
        &self.z
    }

    pub fn set_z(&mut self, z: Vector) -> Result<()> {
        if z.len() != self.map.z_dim() {
            return Err(Error::Dimension {
                what: "controller state",
                expected: self.map.z_dim(),
                got: z.len(),
            });
        }
        self.z = z;
        Ok(())
    }

    /// Output of the last successful update.
    pub fn last(&self) -> Option<&FeedbackOutput> {
        self.last.as_ref()
    }

    /// `z_0 = F_z(reference window)`; the reference also seeds the inverse.
    pub fn init_state(&mut self, reference: &ShiftWindow) -> Result<Vector> {
        self.z = self.map.eval_z(reference)?;
        self.warm = Some(reference.slice(0, self.map.depth as i64 - 1)?);
        self.last = None;
        Ok(self.z.clone())
    }

    /// `Psi-hat(xbar, z)`.
    pub fn invert_psi(&self, xb: &Vector, z: &Vector, guess: &ShiftWindow) -> Result<ShiftWindow> {
        match &self.psi {
            PsiInverse::Numeric(s) => self.map.invert(xb, z, guess, s),
            PsiInverse::ClosedForm(f) => f(xb, z),
        }
    }

    /// `v_j = yd_j[r_j] - sum_i a_i (y_j[i] - yd_j[i])`.
    pub fn stabilizing_v(&self, estimate: &ShiftWindow, reference: &ShiftWindow) -> Result<Vector> {
        let mut v = Vector::zeros(self.gains.len());
        for (c, a) in self.gains.iter().enumerate() {
            let r = a.len() as i64;
            let mut vc = reference.component(r, c)?;
            for (i, ai) in a.iter().enumerate() {
                let i = i as i64;
                vc -= ai * (estimate.component(i, c)? - reference.component(i, c)?);
            }
            v[c] = vc;
        }
        Ok(v)
    }

    /// `u = F_u(w, v)` and `z+ = F_z(shifted w, v)` for a known window `w = Psi-hat(xbar, z)`.
    pub fn feedback_from_window(&self, estimate: &ShiftWindow, v: &Vector) -> Result<(Vector, Vector)> {
        let mut full = estimate.slice(0, self.map.depth as i64 - 1)?;
        let mut top = full.get(self.map.depth as i64 - 1)?.clone();
        for (c, &r) in self.map.orders.iter().enumerate() {
            if r == self.map.depth {
                top[c] = v[c];
            }
        }
        full.push(top)?;
        // Outputs with r_j < R take v at shift r_j.
        for (c, &r) in self.map.orders.iter().enumerate() {
            if r < self.map.depth {
                for s in r as i64..=self.map.depth as i64 {
                    let mut sample = full.get(s)?.clone();
                    sample[c] = v[c];
                    full.set(s, sample)?;
                }
            }
        }
        let u = self.map.param.recover_original_input(&full, &self.change)?;
        let shifted = full.slice(1, self.map.depth as i64)?.relabel(-1);
        let z_next = self.map.eval_z(&shifted)?;
        Ok((u, z_next))
    }

    /// One application of the linearizing feedback with external `v`; updates `z`.
    pub fn dynamic_feedback_step(&mut self, xb: &Vector, v: &Vector) -> Result<Vector> {
        let guess = self.guess(xb)?;
        let estimate = self.invert_psi(xb, &self.z, &guess).map_err(|e| Error::fault(FaultStage::PsiInverse, e))?;
        self.finish(estimate, v)
    }

    fn finish(&mut self, estimate: ShiftWindow, v: &Vector) -> Result<Vector> {
        let (u, z_next) = self
            .feedback_from_window(&estimate, v)
            .map_err(|e| Error::fault(FaultStage::Feedback, e))?;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::fault(FaultStage::Feedback, Error::NonFinite("input".into())));
        }
        let depth = self.map.depth as i64;
        let mut next = estimate.slice(1, depth - 1).map(|w| w.relabel(-1));
        if let Ok(w) = next.as_mut() {
            let mut top = estimate.get(depth - 1)?.clone();
            for c in 0..top.len() {
                top[c] = v[c];
            }
            w.push(top)?;
        }
        self.warm = next.ok().or_else(|| Some(estimate.clone()));
        self.z = z_next.clone();
        self.last = Some(FeedbackOutput {
            input: u.clone(),
            z_next,
            estimate,
        });
        Ok(u)
    }

    fn guess(&self, xb: &Vector) -> Result<ShiftWindow> {
        match &self.warm {
            Some(w) => Ok(w.clone()),
            None => {
                let y = self.map.param.triangular().flat_output(xb);
                ShiftWindow::constant(0, self.map.depth as i64 - 1, &y)
            }
        }
    }

    /// Full control law in transformed coordinates.
    pub fn control_step_transformed(&mut self, xb: &Vector, reference: &ShiftWindow) -> Result<Vector> {
        let guess = self.guess(xb)?;
        let estimate = self.invert_psi(xb, &self.z, &guess).map_err(|e| Error::fault(FaultStage::PsiInverse, e))?;
        let v = self
            .stabilizing_v(&estimate, reference)
            .map_err(|e| Error::fault(FaultStage::Stabilization, e))?;
        self.finish(estimate, &v)
    }

    /// Full control law from a measured original-coordinate state; mutates `z`.
    pub fn control_step(&mut self, x: &Vector, reference: &ShiftWindow) -> Result<Vector> {
        let xb = self
            .change
            .state_fwd(x)
            .map_err(|e| Error::fault(FaultStage::StateTransform, e))?;
        if xb.iter().any(|v| !v.is_finite()) {
            return Err(Error::fault(FaultStage::StateTransform, Error::NonFinite("transformed state".into())));
        }
        self.control_step_transformed(&xb, reference)
    }
}
