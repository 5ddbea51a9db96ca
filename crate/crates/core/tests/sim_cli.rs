use std::path::Path;
use std::process::Command;

use flatsample::controller::Pole;
use flatsample::param::Scheme;
use flatsample::sim::*;
use flatsample::vtol::{vtol_dynamics, VtolParams};
use flatsample::Vector;

fn short(scheme: Scheme) -> SimConfig {
    SimConfig {
        scheme,
        duration: 3.0,
        tn: 1e-3,
        ..SimConfig::default()
    }
}

fn discrete(scheme: Scheme, offset: [f64; 6], pole: f64) -> SimConfig {
    SimConfig {
        plant: PlantKind::Discrete,
        initial_offset: offset.to_vec(),
        poles: Some(vec![vec![Pole::Real(pole); 4]; 2]),
        ..short(scheme)
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

fn flat(s: &Sample) -> Vec<f64> {
    [&s.x, &s.xbar, &s.z, &s.u, &s.yd, &s.y_estimate, &s.flat_error, &s.position_error]
        .into_iter()
        .flatten()
        .copied()
        .collect()
}

#[test]
fn csv_matches_record_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let cfg = short(Scheme::Implicit);
    let rec = run_closed_loop(&cfg).unwrap();
    export_csv(&rec, &path).unwrap();
    let (header, rows) = read_csv(&path);

    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/columns.csv")).unwrap();
    assert_eq!(header.join(","), golden.trim());
    assert_eq!(header, COLUMNS);

    assert_eq!(rows.len(), (cfg.duration / cfg.ts).round() as usize + 1);
    for (s, row) in rec.samples.iter().zip(&rows) {
        assert_eq!(row[0].parse::<usize>().unwrap(), s.k);
        assert!((row[1].parse::<f64>().unwrap() - s.time).abs() <= 1e-10);
        for (a, b) in flat(s).iter().zip(&row[2..row.len() - 2]) {
            let b: f64 = b.parse().unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0) || (a.is_nan() && b.is_nan()));
        }
    }

    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
    let echoed: SimConfig = serde_json::from_value(meta["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short(Scheme::Explicit);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    export_csv(&run_closed_loop(&cfg).unwrap(), &a).unwrap();
    export_csv(&run_closed_loop(&cfg).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn time_is_monotone_and_values_finite_or_flagged() {
    let rec = run_closed_loop(&short(Scheme::Implicit)).unwrap();
    assert!(rec.samples.windows(2).all(|w| w[1].time > w[0].time));
    for s in &rec.samples {
        assert!(s.fault_latched || flat(s).iter().all(|v| v.is_finite()));
    }
}

#[test]
fn hover_hold_pins_input() {
    let p = VtolParams::default();
    let cfg = SimConfig {
        initial_offset: vec![0.0; 6],
        maneuver: ManeuverConfig {
            start: vec![1.0, 2.0],
            end: vec![1.0, 2.0],
            ..ManeuverConfig::default()
        },
        ..short(Scheme::Implicit)
    };
    let rec = run_closed_loop(&cfg).unwrap();
    let hover = p.m * p.g / (2.0 * p.alpha.cos());
    let x0 = &rec.samples[0].x;
    for s in &rec.samples {
        assert!(s.u.iter().all(|u| (u - hover).abs() <= 1e-9), "k={}: {:?}", s.k, s.u);
        assert!(s.x.iter().zip(x0).all(|(a, b)| (a - b).abs() <= 1e-9));
    }
}

/// Classical RK4 with the input held, written independently of the library.
fn rk4(p: &VtolParams, x: &Vector, u: &Vector, h: f64, steps: usize) -> Vector {
    let f = |x: &Vector| vtol_dynamics(p, x, u);
    let mut x = x.clone();
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

#[test]
fn logged_input_is_held_over_each_interval() {
    let cfg = short(Scheme::Implicit);
    let rec = run_closed_loop(&cfg).unwrap();
    let steps = (cfg.ts / cfg.tn).round() as usize;
    for w in rec.samples.windows(2) {
        let x = Vector::from_vec(w[0].x.clone());
        let u = Vector::from_vec(w[0].u.clone());
        let next = rk4(&cfg.params, &x, &u, cfg.tn, steps);
        assert!((next - Vector::from_vec(w[1].x.clone())).amax() <= 1e-9, "k={}", w[0].k);
    }
}

#[test]
fn faults_leave_earlier_samples_untouched() {
    // The explicit design loses the pitch branch at this sampling rate.
    let cfg = SimConfig {
        ts: 0.01,
        duration: 0.5,
        ..short(Scheme::Explicit)
    };
    let rec = run_closed_loop(&cfg).unwrap();
    let first = rec.samples.iter().position(|s| s.fault.is_some()).expect("expected a fault");
    assert!(first > 0);
    for s in &rec.samples[..first] {
        assert!(!s.fault_latched && s.fault.is_none());
        assert!(flat(s).iter().all(|v| v.is_finite()));
    }
    assert!(rec.samples[first..].iter().all(|s| s.fault_latched));
    assert_eq!(rec.meta.faults[0].0, first);

    // A run stopped before the fault reproduces the prefix exactly.
    let prefix = run_closed_loop(&SimConfig {
        duration: (first - 1) as f64 * cfg.ts,
        ..cfg.clone()
    })
    .unwrap();
    for (a, b) in prefix.samples.iter().zip(&rec.samples) {
        assert_eq!(flat(a), flat(b));
    }
}

#[test]
fn consistent_start_tracks_exactly_on_discrete_plant() {
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let rec = run_closed_loop(&discrete(scheme, [0.0; 6], 0.0)).unwrap();
        assert_eq!(rec.fault_count(), 0);
        // The explicit window looks ahead into the maneuver, so rest is only
        // consistent up to the first few samples of the blend.
        let from = if scheme == Scheme::Implicit { 0 } else { 4 };
        for s in &rec.samples[from..] {
            assert!(s.flat_error.iter().all(|e| e.abs() <= 1e-8), "{scheme} k={}: {:?}", s.k, s.flat_error);
        }
    }
}

#[test]
fn deadbeat_settles_in_four_samples_on_discrete_plant() {
    let offset = [0.2, 0.0, 0.1, 0.0, 0.0, 0.0];
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let rec = run_closed_loop(&discrete(scheme, offset, 0.0)).unwrap();
        assert!(rec.samples[0].flat_error.iter().any(|e| e.abs() > 1e-3));
        for s in &rec.samples[4..] {
            assert!(s.flat_error.iter().all(|e| e.abs() <= 1e-7), "{scheme} k={}", s.k);
        }
    }
}

#[test]
fn error_decay_fits_placed_pole() {
    let rec = run_closed_loop(&discrete(Scheme::Implicit, [0.2, 0.0, 0.0, 0.0, 0.0, 0.0], 0.6)).unwrap();
    // Least-squares fit of e[k+4] = -(a0 e[k] + ... + a3 e[k+3]) over both channels.
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for c in 0..2 {
        let e: Vec<f64> = rec.samples.iter().map(|s| s.flat_error[c]).collect();
        for k in 0..16 {
            rows.extend_from_slice(&e[k..k + 4]);
            rhs.push(-e[k + 4]);
        }
    }
    let a = nalgebra::DMatrix::from_row_slice(rhs.len(), 4, &rows);
    let b = nalgebra::DVector::from_vec(rhs);
    let coeffs = a.svd(true, true).solve(&b, 1e-14).unwrap();
    // The roots of z^4 + a3 z^3 + ... sum to -a3.
    let pole = -coeffs[3] / 4.0;
    assert!((pole - 0.6).abs() <= 0.05, "fitted pole {pole}, coefficients {coeffs}");
}

#[test]
fn comparison_shares_reference_and_settles() {
    let cfg = SimConfig {
        tn: 1e-3,
        ..SimConfig::default()
    };
    let cmp = compare_schemes(&cfg).unwrap();
    for (a, b) in cmp.implicit.samples.iter().zip(&cmp.explicit.samples) {
        assert_eq!(a.yd, b.yd);
    }
    for m in [&cmp.implicit_metrics, &cmp.explicit_metrics] {
        assert!(m.bounded && m.fault_count == 0, "{m:?}");
        assert!(m.flat_settling_index.is_some_and(|k| k < cfg.samples().unwrap()));
    }
}

#[test]
fn sweep_error_shrinks_with_sampling_time() {
    // From a consistent start; with the default offset the fine grids leave the
    // region where the continuous plant stays stabilized.
    let cfg = SimConfig {
        initial_offset: vec![0.0; 6],
        tn: 1e-3,
        sweep_ts: vec![0.01, 0.05, 0.1],
        ..SimConfig::default()
    };
    let rows = sweep(&cfg).unwrap();
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let mut rms: Vec<(f64, f64)> = rows
            .iter()
            .filter(|m| m.scheme == scheme)
            .map(|m| (m.ts, m.rms_flat_error))
            .collect();
        rms.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(rms.len(), 3);
        assert!(rms.windows(2).all(|w| w[0].1 < w[1].1), "{scheme}: {rms:?}");
    }
}

#[test]
fn config_rejects_invalid_values() {
    let bad = [
        SimConfig { tn: 0.2, ..SimConfig::default() },
        SimConfig { ts: 0.03, ..SimConfig::default() },
        SimConfig { poles: Some(vec![vec![Pole::Real(1.0); 4]; 2]), ..SimConfig::default() },
        SimConfig { model: "quadrotor".into(), ..SimConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err());
    }
    let text = SimConfig::default().to_toml_string().unwrap();
    assert_eq!(SimConfig::from_toml_str(&text).unwrap(), SimConfig::default());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flatsample"))
}

#[test]
fn cli_validate_passes() {
    let out = cli().arg("validate").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().count() >= 7 && !text.contains("[FAIL]"));
}

#[test]
fn cli_missing_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["simulate", "--config"])
        .arg(dir.path().join("absent.toml"))
        .arg("--out")
        .arg(dir.path().join("run.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn cli_unknown_key_lists_valid_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, "ts = 0.1\nsample_time = 0.1\n").unwrap();
    let out = cli().arg("simulate").arg("--config").arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sample_time"), "{err}");
    for key in ["ts", "tn", "scheme", "maneuver", "initial_offset"] {
        assert!(err.contains(&format!("`{key}`")), "{err}");
    }
}

#[test]
fn cli_simulate_writes_record_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, "duration = 2.0\ntn = 1e-3\n[maneuver]\nend = [1.0, 0.5]\n").unwrap();
    let csv_path = dir.path().join("run.csv");
    let out = cli()
        .args(["simulate", "--scheme", "explicit", "--ts", "0.05", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&csv_path);
    assert_eq!(rows.len(), 41);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&csv_path)).unwrap()).unwrap();
    assert_eq!(meta["config"]["scheme"], "explicit");
    assert_eq!(meta["config"]["ts"], 0.05);
}

#[test]
fn simulate_at_default_sampling_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimConfig {
        duration: 1.0,
        ..SimConfig::default()
    };
    assert_eq!((cfg.ts, cfg.tn), (0.1, 1e-4));
    let path = dir.path().join("default.csv");
    export_csv(&run_closed_loop(&cfg).unwrap(), &path).unwrap();
    assert_eq!(read_csv(&path).1.len(), 11);
    assert!(sidecar_path(&path).exists());
}
