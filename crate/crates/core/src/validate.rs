//! Identity suites behind the `validate` command.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::controller::GainSpec;
use crate::discretize::{explicit_step, implicit_residual, implicit_step, ImplicitStepSettings};
use crate::error::Result;
use crate::numeric::Vector;
use crate::param::Scheme;
use crate::sim::SimConfig;
use crate::triangular::{check_rank_conditions, RankScheme};
use crate::vtol::{
    input_inv, state_fwd, vtol_closed_form_param, vtol_controller, vtol_discrete_system, vtol_parameterizer,
    vtol_state_only_system, vtol_system, vtol_triangular_form, vtol_triangular_system, PsiKind, StageSolverKind,
    VtolParams,
};
use crate::window::ShiftWindow;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, r: Result<(bool, String)>) -> CheckOutcome {
    match r {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Random flat-output polynomial with pitch kept away from zero and from free fall.
pub fn random_smooth_sequence(rng: &mut StdRng, first: i64, last: i64, ts: f64) -> Result<ShiftWindow> {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let a = sign * rng.random_range(1.0..3.0);
    let c: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.015..0.015)];
    let d: [f64; 4] = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-0.1..0.1),
    ];
    ShiftWindow::from_fn(first, last, |j| {
        let t = j as f64 * ts;
        Vector::from_vec(vec![
            c[0] + c[1] * t + 0.5 * a * t * t + c[2] * t.powi(3),
            d[0] + d[1] * t + d[2] * t * t + d[3] * t.powi(3),
        ])
    })
}

fn implicit_contract(p: &VtolParams, rng: &mut StdRng, n: usize) -> Result<(bool, String)> {
    let sys = vtol_system(p)?;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let x = Vector::from_fn(6, |i, _| match i {
            2 => rng.random_range(-1.0..1.0),
            _ => rng.random_range(-2.0..2.0),
        });
        let u = Vector::from_fn(2, |_, _| rng.random_range(0.0..10.0));
        let ts = rng.random_range(1e-3..0.1);
        let (xn, _) = implicit_step(&sys, &x, &u, &ImplicitStepSettings::new(ts)?, None)?;
        worst = worst.max(implicit_residual(&sys, &x, &u, ts, &xn)?.norm());
    }
    Ok((worst <= 1e-10, format!("{n} points, max residual {worst:.2e}")))
}

fn shift_structure(p: &VtolParams, ts: f64) -> Result<(bool, String)> {
    let i = vtol_parameterizer(p, Scheme::Implicit, ts, StageSolverKind::Newton)?;
    let e = vtol_parameterizer(p, Scheme::Explicit, ts, StageSolverKind::Newton)?;
    let ok = i.backward() == [3, 3] && i.forward() == [1, 1] && e.backward() == [0, 0];
    Ok((
        ok,
        format!(
            "implicit R1={:?} R2={:?}; explicit R1={:?} R2={:?}",
            i.backward(),
            i.forward(),
            e.backward(),
            e.forward()
        ),
    ))
}

fn roundtrip(p: &VtolParams, ts: f64, rng: &mut StdRng, n: usize) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let dts = vtol_discrete_system(p, scheme, ts)?;
        let map = vtol_parameterizer(p, scheme, ts, StageSolverKind::ClosedForm)?;
        for _ in 0..n {
            let seq = random_smooth_sequence(rng, -3, 55, ts)?;
            worst = worst.max(map.roundtrip_validate(&dts, &seq)?);
        }
    }
    Ok((worst <= 1e-8, format!("{n} sequences per scheme, max residual {worst:.2e}")))
}

fn input_relation(p: &VtolParams, ts: f64, rng: &mut StdRng) -> Result<(bool, String)> {
    let tri = vtol_triangular_system(p)?;
    let plain = vtol_state_only_system(p)?;
    let s = ImplicitStepSettings::new(ts)?;
    let mut xa = Vector::from_vec(vec![0.0, 0.0, 0.5, 0.0, 0.4, 0.0]);
    let mut xb = xa.clone();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let ub = Vector::from_vec(vec![
            p.g * 0.4f64.tan() + rng.random_range(-1.0..1.0),
            -4.0 * (xa[4] - 0.4) - 2.0 * xa[5] + rng.random_range(-0.5..0.5),
        ]);
        xa = implicit_step(&tri, &xa, &ub, &s, None)?.0;
        let u = input_inv(p, &xa, &ub)?;
        xb = implicit_step(&plain, &xb, &u, &s, None)?.0;
        worst = worst.max((&xa - &xb).amax());
    }
    Ok((worst <= 1e-9, format!("100 steps, max state gap {worst:.2e}")))
}

fn exact_linearization(p: &VtolParams, ts: f64, rng: &mut StdRng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let spec = GainSpec::repeated(0.6, &[4, 4]);
        let mut ctrl = vtol_controller(p, scheme, ts, &spec, StageSolverKind::ClosedForm, PsiKind::ClosedForm)?;
        let plant = vtol_state_only_system(p)?;
        let s = ImplicitStepSettings::new(ts)?;
        let seq = random_smooth_sequence(rng, 0, 54, ts)?;
        // Consistent start: xbar and z from the same window.
        let head = seq.slice(0, 3)?;
        let mut xb = ctrl.map().param().evaluate_state(&head, 0)?;
        ctrl.init_state(&head)?;
        let lag = match scheme {
            Scheme::Implicit => 1,
            Scheme::Explicit => 4,
        };
        let mut history = Vec::new();
        let mut outputs = Vec::new();
        for k in 0..50 {
            let v = seq.get(k + 4)? + Vector::from_fn(2, |_, _| rng.random_range(-1e-3..1e-3));
            let u = ctrl.dynamic_feedback_step(&xb, &v)?;
            history.push(v);
            xb = match scheme {
                Scheme::Implicit => implicit_step(&plant, &xb, &u, &s, None)?.0,
                Scheme::Explicit => explicit_step(&plant, &xb, &u, ts)?,
            };
            outputs.push(Vector::from_vec(vec![xb[0], xb[1]]));
        }
        // y(k + R) = v(k): the plant output `lag` samples after step k equals v(k).
        for (k, v) in history.iter().enumerate() {
            if let Some(y) = outputs.get(k + lag - 1) {
                worst = worst.max((y - v).amax());
            }
        }
    }
    Ok((worst <= 1e-8, format!("50 steps per scheme, max |y_[R] - v| {worst:.2e}")))
}

fn dual_path(p: &VtolParams, ts: f64, rng: &mut StdRng, n: usize) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let newton = vtol_parameterizer(p, scheme, ts, StageSolverKind::Newton)?;
        for _ in 0..n {
            let w = random_smooth_sequence(rng, -3, 4, ts)?;
            let a = newton.evaluate(&w)?;
            let b = vtol_closed_form_param(&w, ts, p, scheme)?;
            worst = worst.max((a.state - b.state).amax()).max((a.input - b.input).amax());
        }
    }
    Ok((worst <= 1e-8, format!("{n} windows per scheme, max gap {worst:.2e}")))
}

fn rank_detection(p: &VtolParams) -> Result<(bool, String)> {
    let tf = vtol_triangular_form(p)?;
    let hover = state_fwd(p, &Vector::zeros(6));
    let at_hover = check_rank_conditions(&tf, &hover, &Vector::zeros(2), RankScheme::Implicit);
    let mut x = Vector::zeros(6);
    x[4] = 0.3;
    let u = Vector::from_vec(vec![p.g * 0.3f64.tan(), 0.0]);
    let off = check_rank_conditions(&tf, &x, &u, RankScheme::Implicit);
    let fails = at_hover.block(3).is_some_and(|b| !b.passed);
    let passes = off.all_passed();
    Ok((fails && passes, format!("block 3 at hover passed={}, all blocks at pitch 0.3 passed={passes}", !fails)))
}

/// Runs all suites with the model parameters, sampling time and seed of `cfg`.
pub fn run_validation(cfg: &SimConfig) -> Vec<CheckOutcome> {
    let p = &cfg.params;
    let ts = cfg.ts;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    vec![
        outcome("implicit step contract", implicit_contract(p, &mut rng, 1000)),
        outcome("shift structure", shift_structure(p, ts)),
        outcome("round-trip identity", roundtrip(p, ts, &mut rng, 20)),
        outcome("input-transformation equivalence", input_relation(p, ts, &mut rng)),
        outcome("exact linearization", exact_linearization(p, ts, &mut rng)),
        outcome("closed form vs Newton engine", dual_path(p, ts, &mut rng, 100)),
        outcome("rank degeneracy at hover", rank_detection(p)),
    ]
}
