//! Acceptance suite. Runs without the libtest harness so every criterion prints
//! a pass/fail line; exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use flatsample::controller::GainSpec;
use flatsample::discretize::{
    explicit_step, implicit_step, observed_order, ImplicitStepSettings, Scenario, Stepper,
};
use flatsample::numeric::NewtonSettings;
use flatsample::param::Scheme;
use flatsample::sim::{compare_schemes, run_closed_loop, PlantKind, SimConfig, SimRecord};
use flatsample::trajgen::{rest_to_rest, sample_reference, ReferenceTrajectory};
use flatsample::triangular::{check_rank_conditions, RankScheme};
use flatsample::vtol::{
    input_inv, state_fwd, vtol_closed_form_param, vtol_controller, vtol_discrete_system, vtol_parameterizer,
    vtol_psi_hat, vtol_state_only_system, vtol_system, vtol_triangular_form, vtol_triangular_system, PsiKind,
    StageSolverKind, VtolParams,
};
use flatsample::window::ShiftWindow;
use flatsample::Vector;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- independent model oracles, written out from the equations of motion ----

fn arm(p: &VtolParams) -> f64 {
    p.l * p.alpha.cos() + p.h * p.alpha.sin()
}

fn model(p: &VtolParams, x: &[f64], u: &[f64]) -> [f64; 6] {
    let (sa, ca) = p.alpha.sin_cos();
    let (st, ct) = x[2].sin_cos();
    let sum = u[0] + u[1];
    let diff = u[0] - u[1];
    [
        x[3],
        x[4],
        x[5],
        sum / p.m * ca * st + diff / p.m * sa * ct,
        sum / p.m * ca * ct - diff / p.m * sa * st - p.g,
        -diff / p.j * arm(p),
    ]
}

fn triangular(p: &VtolParams, xb: &[f64], ub: &[f64]) -> [f64; 6] {
    [xb[2], xb[3], ub[0], ub[0] / xb[4].tan() - p.g, xb[5], ub[1]]
}

/// Coefficients `a_0..a_3` of `(z - pole)^4`.
fn quartic(pole: f64) -> [f64; 4] {
    let binom = [1.0, 4.0, 6.0, 4.0];
    let mut a = [0.0; 4];
    for (i, ai) in a.iter_mut().enumerate() {
        *ai = binom[i] * (-pole).powi(4 - i as i32);
    }
    a
}

fn smooth_sequence(rng: &mut StdRng, first: i64, last: i64, ts: f64) -> ShiftWindow {
    let a = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(1.0..3.0);
    let b: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let jerk = rng.random_range(-0.015..0.015);
    ShiftWindow::from_fn(first, last, |j| {
        let t = j as f64 * ts;
        Vector::from_vec(vec![
            b[0] + b[1] * t + 0.5 * a * t * t + jerk * t.powi(3),
            b[2] + b[3] * t + 2.0 * b[4] * t * t + 0.1 * b[5] * t.powi(3),
        ])
    })
    .unwrap()
}

fn lag(scheme: Scheme) -> usize {
    match scheme {
        Scheme::Implicit => 1,
        Scheme::Explicit => 4,
    }
}

fn backward(scheme: Scheme) -> i64 {
    match scheme {
        Scheme::Implicit => 3,
        Scheme::Explicit => 0,
    }
}

fn plant_step(plant: &flatsample::system::ContinuousSystem, scheme: Scheme, xb: &Vector, u: &Vector, ts: f64) -> Vector {
    match scheme {
        Scheme::Implicit => implicit_step(plant, xb, u, &ImplicitStepSettings::new(ts).unwrap(), None).unwrap().0,
        Scheme::Explicit => explicit_step(plant, xb, u, ts).unwrap(),
    }
}

// ---- criteria ----

fn implicit_step_contract() -> Outcome {
    let p = VtolParams::default();
    let sys = vtol_system(&p).unwrap();
    let mut rng = StdRng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..6)
            .map(|i| if i == 2 { rng.random_range(-1.5..1.5) } else { rng.random_range(-3.0..3.0) })
            .collect();
        let u: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..15.0)).collect();
        let ts = rng.random_range(1e-3..0.1);
        let settings = ImplicitStepSettings::new(ts).unwrap();
        let (xn, report) = implicit_step(&sys, &Vector::from_vec(x.clone()), &Vector::from_vec(u.clone()), &settings, None)
            .map_err(|e| format!("step failed: {e}"))?;
        if !report.converged {
            return Err(format!("Newton did not converge at x={x:?}"));
        }
        let f = model(&p, xn.as_slice(), &u);
        let r: f64 = (0..6).map(|i| (xn[i] - x[i] - ts * f[i]).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(r);
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-10 && elapsed < Duration::from_secs(5),
        format!("max residual {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn shift_structure() -> Outcome {
    let p = VtolParams::default();
    let i = vtol_parameterizer(&p, Scheme::Implicit, 0.1, StageSolverKind::Newton).unwrap();
    let e = vtol_parameterizer(&p, Scheme::Explicit, 0.1, StageSolverKind::Newton).unwrap();
    check(
        i.backward() == vec![3, 3] && i.forward() == vec![1, 1] && e.backward() == vec![0, 0],
        format!(
            "implicit R1={:?} R2={:?}, explicit R1={:?}",
            i.backward(),
            i.forward(),
            e.backward()
        ),
    )
}

fn roundtrip_identity() -> Outcome {
    let p = VtolParams::default();
    let ts = 0.1;
    let mut rng = StdRng::seed_from_u64(3);
    let (mut lib, mut oracle) = (0.0f64, 0.0f64);
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let dts = vtol_discrete_system(&p, scheme, ts).unwrap();
        let map = vtol_parameterizer(&p, scheme, ts, StageSolverKind::Newton).unwrap();
        let (r1, r2) = (backward(scheme), 4 - backward(scheme));
        for _ in 0..20 {
            let seq = smooth_sequence(&mut rng, -r1, 50 + r2, ts);
            lib = lib.max(map.roundtrip_validate(&dts, &seq).map_err(|e| e.to_string())?);
            let mut prev: Option<(Vector, Vector)> = None;
            for k in 0..=50 {
                let x = map.evaluate_state(&seq, k).map_err(|e| e.to_string())?;
                let u = map.evaluate_input(&seq, k).map_err(|e| e.to_string())?;
                let y = seq.get(k).unwrap();
                oracle = oracle.max((x[0] - y[0]).abs()).max((x[1] - y[1]).abs());
                if let Some((xp, up)) = &prev {
                    let at = match scheme {
                        Scheme::Implicit => &x,
                        Scheme::Explicit => xp,
                    };
                    let f = triangular(&p, at.as_slice(), up.as_slice());
                    for i in 0..6 {
                        oracle = oracle.max((x[i] - xp[i] - ts * f[i]).abs());
                    }
                }
                prev = Some((x, u));
            }
        }
    }
    check(
        lib <= 1e-8 && oracle <= 1e-8,
        format!("roundtrip {lib:.2e}, Euler-residual oracle {oracle:.2e}"),
    )
}

fn input_transformation_equivalence() -> Outcome {
    let p = VtolParams::default();
    let ts = 0.05;
    let tri = vtol_triangular_system(&p).unwrap();
    let plain = vtol_state_only_system(&p).unwrap();
    let s = ImplicitStepSettings::new(ts).unwrap();
    let mut rng = StdRng::seed_from_u64(4);
    let mut xa = Vector::from_vec(vec![0.3, -0.2, 0.5, 0.1, 0.4, 0.0]);
    let mut xb = xa.clone();
    let (mut gap, mut tri_res) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let ub = Vector::from_vec(vec![
            p.g * 0.4f64.tan() + rng.random_range(-1.0..1.0),
            -4.0 * (xa[4] - 0.4) - 2.0 * xa[5] + rng.random_range(-0.5..0.5),
        ]);
        let next = implicit_step(&tri, &xa, &ub, &s, None).map_err(|e| e.to_string())?.0;
        let f = triangular(&p, next.as_slice(), ub.as_slice());
        for i in 0..6 {
            tri_res = tri_res.max((next[i] - xa[i] - ts * f[i]).abs());
        }
        xa = next;
        let u = input_inv(&p, &xa, &ub).map_err(|e| e.to_string())?;
        xb = implicit_step(&plain, &xb, &u, &s, None).map_err(|e| e.to_string())?.0;
        gap = gap.max((&xa - &xb).amax());
    }
    check(
        gap <= 1e-9 && tri_res <= 1e-10,
        format!("100 steps, max state gap {gap:.2e} (triangular residual {tri_res:.2e})"),
    )
}

fn exact_linearization() -> Outcome {
    let p = VtolParams::default();
    let ts = 0.1;
    let mut rng = StdRng::seed_from_u64(5);
    let plant = vtol_state_only_system(&p).unwrap();
    let mut worst = 0.0f64;
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let mut ctrl =
            vtol_controller(&p, scheme, ts, &GainSpec::repeated(0.6, &[4, 4]), StageSolverKind::ClosedForm, PsiKind::ClosedForm)
                .unwrap();
        let base = smooth_sequence(&mut rng, 0, 54, ts);
        let head = base.slice(0, 3).unwrap();
        let mut xb = ctrl.map().param().evaluate_state(&head, 0).unwrap();
        ctrl.init_state(&head).unwrap();
        let mut vs = Vec::new();
        let mut ys = Vec::new();
        for k in 0..50 {
            let v = base.get(k + 4).unwrap() + Vector::from_fn(2, |_, _| rng.random_range(-0.02..0.02));
            let u = ctrl.dynamic_feedback_step(&xb, &v).map_err(|e| e.to_string())?;
            xb = plant_step(&plant, scheme, &xb, &u, ts);
            vs.push(v);
            ys.push([xb[0], xb[1]]);
        }
        for (k, v) in vs.iter().enumerate() {
            if let Some(y) = ys.get(k + lag(scheme) - 1) {
                worst = worst.max((y[0] - v[0]).abs()).max((y[1] - v[1]).abs());
            }
        }
    }
    check(worst <= 1e-8, format!("max |y_[4] - v| {worst:.2e} over 50 steps per scheme"))
}

/// Plant flat-output errors on the discrete model under the full control law.
fn discrete_errors(
    scheme: Scheme,
    spec: &GainSpec,
    traj: &ReferenceTrajectory,
    offset: [f64; 6],
    steps: usize,
) -> Result<Vec<[f64; 2]>, String> {
    let p = VtolParams::default();
    let ts = 0.1;
    let mut ctrl = vtol_controller(&p, scheme, ts, spec, StageSolverKind::ClosedForm, PsiKind::ClosedForm).unwrap();
    let plant = vtol_state_only_system(&p).unwrap();
    let r1 = backward(scheme);
    ctrl.init_state(&sample_reference(traj, -r1, ts, 4).unwrap()).unwrap();
    let start = traj.eval(0.0);
    let rest = flatsample::vtol::state_inv(&p, &Vector::from_vec(vec![start[0], start[1], 0.0, 0.0, 0.0, 0.0]));
    let mut xb = state_fwd(&p, &(rest + Vector::from_row_slice(&offset)));
    let mut errs = Vec::new();
    for k in 0..steps as i64 {
        let yd = traj.eval(k as f64 * ts);
        errs.push([xb[0] - yd[0], xb[1] - yd[1]]);
        let reference = sample_reference(traj, k - r1, ts, 4).unwrap();
        let u = ctrl.control_step_transformed(&xb, &reference).map_err(|e| format!("sample {k}: {e}"))?;
        xb = plant_step(&plant, scheme, &xb, &u, ts);
    }
    Ok(errs)
}

fn decoupled_error_dynamics() -> Outcome {
    let a = quartic(0.6);
    let spec = GainSpec::repeated(0.6, &[4, 4]);
    let traj = rest_to_rest(&[0.0, 0.0], &[3.0, 1.0], 4.0, 5).unwrap();
    let bumped = rest_to_rest(&[0.0, 0.0], &[3.0, 1.0], 4.0, 5)
        .unwrap()
        .then(&[3.05, 1.0], 1.0, 5)
        .unwrap();
    let (mut recursion, mut leak) = (0.0f64, 0.0f64);
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let e = discrete_errors(scheme, &spec, &traj, [0.2, 0.0, 0.1, 0.0, 0.0, 0.0], 60)?;
        for j in 0..e.len() - 4 {
            for (c, last) in e[j + 4].iter().enumerate() {
                let r = last + (0..4).map(|i| a[i] * e[j + i][c]).sum::<f64>();
                recursion = recursion.max(r.abs());
            }
        }
        // Perturb only channel 1 (reference and initial position).
        let f = discrete_errors(scheme, &spec, &bumped, [0.25, 0.0, 0.1, 0.0, 0.0, 0.0], 60)?;
        for (x, y) in e.iter().zip(&f) {
            leak = leak.max((x[1] - y[1]).abs());
        }
    }
    check(
        recursion <= 1e-7 && leak <= 1e-8,
        format!("recursion residual {recursion:.2e}, cross-channel leakage {leak:.2e}"),
    )
}

fn discrete_record(scheme: Scheme, poles: f64) -> SimRecord {
    let cfg = SimConfig {
        scheme,
        plant: PlantKind::Discrete,
        duration: 3.0,
        poles: Some(vec![vec![flatsample::controller::Pole::Real(poles); 4]; 2]),
        ..SimConfig::default()
    };
    run_closed_loop(&cfg).unwrap()
}

fn deadbeat() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let rec = discrete_record(scheme, 0.0);
        let norm = |k: usize| {
            let e = &rec.samples[k].flat_error;
            e[0].hypot(e[1])
        };
        let after = (4..rec.samples.len()).map(norm).fold(0.0, f64::max);
        let before = norm(3);
        ok &= after <= 1e-7 && before > 1e-7 && rec.fault_count() == 0;
        details.push(format!("{scheme}: |e| at k=3 {before:.2e}, max for k>=4 {after:.2e}"));
    }
    check(ok, details.join("; "))
}

fn convergence_order() -> Outcome {
    let p = VtolParams::default();
    let sys = vtol_system(&p).unwrap();
    let scenario = Scenario {
        x0: Vector::from_vec(vec![0.0, 0.0, 0.2, 0.5, -0.3, 0.4]),
        u: Vector::from_vec(vec![p.hover_thrust() * 1.05, p.hover_thrust() * 0.97]),
        horizon: 0.5,
    };
    let start = Instant::now();
    let low = [0.01, 0.005, 0.0025];
    let rk = [0.05, 0.025, 0.0125];
    let oi = observed_order(Stepper::ImplicitEuler, &sys, &scenario, &low).map_err(|e| e.to_string())?;
    let oe = observed_order(Stepper::ExplicitEuler, &sys, &scenario, &low).map_err(|e| e.to_string())?;
    let o4 = observed_order(Stepper::Rk4, &sys, &scenario, &rk).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let first = |o: f64| (0.8..=1.2).contains(&o);
    check(
        first(oi) && first(oe) && (3.5..=4.5).contains(&o4) && elapsed < Duration::from_secs(10),
        format!(
            "implicit {oi:.3}, explicit {oe:.3}, RK4 {o4:.3}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn rank_degeneracy() -> Outcome {
    let p = VtolParams::default();
    let tf = vtol_triangular_form(&p).unwrap();
    let hover = state_fwd(&p, &Vector::zeros(6));
    let at_hover = check_rank_conditions(&tf, &hover, &Vector::zeros(2), RankScheme::Implicit);
    let mut x = Vector::zeros(6);
    x[4] = 0.3;
    let thrust = p.g * 0.3f64.tan();
    let tilted = check_rank_conditions(&tf, &x, &Vector::from_vec(vec![thrust, 0.0]), RankScheme::Implicit);
    let hover_fails = at_hover.block(3).is_some_and(|b| !b.passed);
    let tilted_passes = tilted.all_passed();
    // Block-3 Jacobian in (pitch, thrust input) is [[0, 1], [-u/sin^2, 1/tan]],
    // so sigma_min * sigma_max = |u| / sin^2(pitch).
    let mut law = 0.0f64;
    for (th, u) in [(0.3, thrust), (0.3, -thrust), (0.8, 2.0), (-0.5, 1.5), (0.3, 0.0)] {
        let mut x = Vector::zeros(6);
        x[4] = th;
        let r = check_rank_conditions(&tf, &x, &Vector::from_vec(vec![u, 0.0]), RankScheme::Implicit);
        let b = r.block(3).unwrap();
        let det = u / th.sin().powi(2);
        law = law.max((b.sigma_min * b.sigma_max - det.abs()).abs() / det.abs().max(1.0));
        if b.passed != (det != 0.0) {
            return Err(format!("pass flag at pitch {th}, input {u} is {}", b.passed));
        }
    }
    check(
        hover_fails && tilted_passes && law <= 1e-5,
        format!(
            "block 3 at hover passed={}, all blocks at pitch 0.3 passed={tilted_passes}, determinant-law gap {law:.1e}",
            !hover_fails
        ),
    )
}

fn settling(rec: &SimRecord, band: f64) -> Option<usize> {
    let errs: Vec<f64> = rec.samples.iter().map(|s| s.flat_error[0].hypot(s.flat_error[1])).collect();
    let last_bad = errs.iter().rposition(|e| e.is_nan() || *e > band);
    match last_bad {
        None => Some(0),
        Some(i) if i + 1 < errs.len() => Some(i + 1),
        _ => None,
    }
}

fn sampled_data_demo() -> Outcome {
    let cfg = SimConfig::default();
    let start = Instant::now();
    let cmp = compare_schemes(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let band = 0.02 * 5.0;
    let mut ok = elapsed < Duration::from_secs(60);
    let mut details = Vec::new();
    for rec in [&cmp.implicit, &cmp.explicit] {
        let bounded = rec.meta.blow_up.is_none()
            && rec.samples.len() == 101
            && rec.samples.iter().all(|s| s.x.iter().all(|v| v.is_finite() && v.abs() < 1e3));
        let settle = settling(rec, band);
        ok &= bounded && settle.is_some();
        details.push(format!("{}: bounded={bounded} settles at k={settle:?}", rec.meta.config.scheme));
    }
    details.push(format!("{:.2} s", elapsed.as_secs_f64()));
    check(ok, details.join(", "))
}

fn dual_path() -> Outcome {
    let p = VtolParams::default();
    let ts = 0.1;
    let mut rng = StdRng::seed_from_u64(11);
    let (mut param_gap, mut psi_gap) = (0.0f64, 0.0f64);
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let newton = vtol_parameterizer(&p, scheme, ts, StageSolverKind::Newton).unwrap();
        let ctrl =
            vtol_controller(&p, scheme, ts, &GainSpec::repeated(0.6, &[4, 4]), StageSolverKind::Newton, PsiKind::Numeric)
                .unwrap();
        let combined = ctrl.map();
        for _ in 0..100 {
            let w = smooth_sequence(&mut rng, -3, 4, ts);
            let a = newton.evaluate(&w).map_err(|e| e.to_string())?;
            let b = vtol_closed_form_param(&w, ts, &p, scheme).map_err(|e| e.to_string())?;
            param_gap = param_gap.max((&a.state - &b.state).amax()).max((&a.input - &b.input).amax());

            let win = w.slice(0, 3).unwrap();
            let xb = combined.param().evaluate_state(&win, 0).map_err(|e| e.to_string())?;
            let z = combined.eval_z(&win).map_err(|e| e.to_string())?;
            let closed = vtol_psi_hat(&xb, &z, ts, &p, scheme).map_err(|e| e.to_string())?;
            let guess = ShiftWindow::from_fn(0, 3, |j| {
                win.get(j).unwrap() + Vector::from_fn(2, |_, _| rng.random_range(-1e-3..1e-3))
            })
            .unwrap();
            let numeric = combined
                .invert(&xb, &z, &guess, &NewtonSettings::default())
                .map_err(|e| e.to_string())?;
            for j in 0..=3 {
                psi_gap = psi_gap
                    .max((closed.get(j).unwrap() - numeric.get(j).unwrap()).amax())
                    .max((closed.get(j).unwrap() - win.get(j).unwrap()).amax());
            }
        }
    }
    check(
        param_gap <= 1e-8 && psi_gap <= 1e-8,
        format!("parameterization gap {param_gap:.2e}, inverse gap {psi_gap:.2e} (200 points)"),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("implicit-step contract", implicit_step_contract),
        ("shift structure", shift_structure),
        ("round-trip identity", roundtrip_identity),
        ("input-transformation equivalence", input_transformation_equivalence),
        ("exact linearization", exact_linearization),
        ("decoupled linear error dynamics", decoupled_error_dynamics),
        ("deadbeat in four samples", deadbeat),
        ("convergence order", convergence_order),
        ("rank-degeneracy detection", rank_degeneracy),
        ("sampled-data demo", sampled_data_demo),
        ("closed form vs Newton engine", dual_path),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
