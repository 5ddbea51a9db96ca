use flatsample::controller::GainSpec;
use flatsample::discretize::{explicit_step, implicit_step, ImplicitStepSettings};
use flatsample::param::Scheme;
use flatsample::trajgen::{rest_to_rest, sample_reference};
use flatsample::vtol::{state_fwd, vtol_controller, vtol_state_only_system, PsiKind, StageSolverKind, VtolParams};
use flatsample::Vector;

fn run(scheme: Scheme, psi: PsiKind) -> Vec<f64> {
    let p = VtolParams::default();
    let ts = 0.1;
    let spec = GainSpec::repeated(0.0, &[4, 4]);
    let mut ctrl = vtol_controller(&p, scheme, ts, &spec, StageSolverKind::ClosedForm, psi).unwrap();
    let r1 = match scheme {
        Scheme::Implicit => 3,
        Scheme::Explicit => 0,
    };
    let traj = rest_to_rest(&[0.0, 0.0], &[1.0, 0.5], 2.0, 5).unwrap();
    let plant = vtol_state_only_system(&p).unwrap();
    let settings = ImplicitStepSettings::new(ts).unwrap();
    let x0 = Vector::from_vec(vec![0.2, -p.epsilon(), 0.1, 0.0, 0.0, 0.0]);
    let mut xb = state_fwd(&p, &x0);
    ctrl.init_state(&sample_reference(&traj, -r1, ts, 4).unwrap()).unwrap();
    let mut errs = vec![];
    for k in 0..30i64 {
        let reference = sample_reference(&traj, k - r1, ts, 4).unwrap();
        let yd = traj.eval(k as f64 * ts);
        errs.push(((xb[0] - yd[0]).powi(2) + (xb[1] - yd[1]).powi(2)).sqrt());
        let u = ctrl.control_step_transformed(&xb, &reference).unwrap();
        xb = match scheme {
            Scheme::Implicit => implicit_step(&plant, &xb, &u, &settings, None).unwrap().0,
            Scheme::Explicit => explicit_step(&plant, &xb, &u, ts).unwrap(),
        };
    }
    errs
}

#[test]
fn deadbeat_on_discrete_model() {
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        for psi in [PsiKind::ClosedForm, PsiKind::Numeric] {
            let e = run(scheme, psi);
            let settle = if scheme == Scheme::Implicit { 1 } else { 4 };
            println!("{scheme:?} {psi:?}: {:?}", &e[..8]);
            assert!(e[settle..].iter().all(|v| *v < 1e-7), "{scheme:?} {psi:?} {e:?}");
        }
    }
}
