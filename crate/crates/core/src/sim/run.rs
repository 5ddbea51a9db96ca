use serde::{Deserialize, Serialize};

use crate::controller::FlatnessController;
use crate::discretize::{explicit_step, implicit_step, rk4_advance, ImplicitStepSettings};
use crate::error::{Error, FaultStage, Result};
use crate::numeric::Vector;
use crate::param::Scheme;
use crate::sim::config::{PlantKind, SimConfig, ZInit};
use crate::trajgen::{rest_to_rest, sample_reference, ReferenceTrajectory};
use crate::vtol::{state_fwd, vtol_plant_consistent_z, state_inv, vtol_controller, vtol_parameterizer, vtol_state_only_system, vtol_system};

/// Norm above which a plant state counts as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// One controller sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub k: usize,
    pub time: f64,
    pub x: Vec<f64>,
    pub xbar: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    /// Reference position `y_d(k Ts)`.
    pub yd: Vec<f64>,
    /// Estimated flat output at shift 0 of the controller window.
    pub y_estimate: Vec<f64>,
    /// `y_estimate` minus the reference at shift 0.
    pub flat_error: Vec<f64>,
    /// Flat-output point of the plant minus `y_d(k Ts)`.
    pub position_error: Vec<f64>,
    pub fault: Option<FaultStage>,
    pub fault_latched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: SimConfig,
    pub version: String,
    /// Backward shift by which the controller's flat output lags the plant.
    pub output_delay: usize,
    pub depth: usize,
    pub blow_up: Option<f64>,
    pub faults: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub meta: RunMeta,
    pub samples: Vec<Sample>,
}

impl SimRecord {
    pub fn fault_count(&self) -> usize {
        self.meta.faults.len()
    }
}

/// The reference trajectory of a config, valid over the horizon plus lookahead.
pub fn reference_trajectory(cfg: &SimConfig, depth: usize) -> Result<ReferenceTrajectory> {
    let m = &cfg.maneuver;
    Ok(rest_to_rest(&m.start, &m.end, m.duration, m.smoothness)?.with_horizon(cfg.duration + (depth as f64 + 1.0) * cfg.ts))
}

/// Initial plant state in original coordinates.
pub fn initial_state(cfg: &SimConfig) -> Vector {
    if let Some(x) = &cfg.initial_state {
        return Vector::from_vec(x.clone());
    }
    let start = &cfg.maneuver.start;
    let rest = state_inv(&cfg.params, &Vector::from_vec(vec![start[0], start[1], 0.0, 0.0, 0.0, 0.0]));
    rest + Vector::from_vec(cfg.initial_offset.clone())
}

struct Loop {
    ctrl: FlatnessController,
    delay: usize,
    depth: usize,
}

fn build(cfg: &SimConfig) -> Result<Loop> {
    cfg.validate()?;
    let p = &cfg.params;
    let map = vtol_parameterizer(p, cfg.scheme, cfg.ts, cfg.stage_solver)?;
    let delay = map.backward().into_iter().max().unwrap_or(0);
    let orders = map.depth();
    let depth = orders.iter().copied().max().unwrap_or(0);
    let spec = cfg.gain_spec(&orders);
    let ctrl = vtol_controller(p, cfg.scheme, cfg.ts, &spec, cfg.stage_solver, cfg.psi)?;
    Ok(Loop { ctrl, delay, depth })
}

enum Plant {
    Continuous { sys: crate::system::ContinuousSystem, substeps: usize },
    Discrete { sys: crate::system::ContinuousSystem, scheme: Scheme, settings: ImplicitStepSettings },
}

impl Plant {
    fn new(cfg: &SimConfig) -> Result<Self> {
        Ok(match cfg.plant {
            PlantKind::Continuous => Plant::Continuous {
                sys: vtol_system(&cfg.params)?,
                substeps: cfg.substeps()?,
            },
            PlantKind::Discrete => Plant::Discrete {
                sys: vtol_state_only_system(&cfg.params)?,
                scheme: cfg.scheme,
                settings: ImplicitStepSettings::new(cfg.ts)?,
            },
        })
    }

    fn advance(&self, cfg: &SimConfig, x: &Vector, u: &Vector, t: f64) -> Result<Vector> {
        let next = match self {
            Plant::Continuous { sys, substeps } => {
                rk4_advance(sys, x, u, cfg.tn, *substeps).map_err(|e| match e {
                    Error::BlowUp { time } => Error::BlowUp { time: t + time },
                    other => other,
                })?
            }
            Plant::Discrete { sys, scheme, settings } => {
                let xb = state_fwd(&cfg.params, x);
                let xb_next = match scheme {
                    Scheme::Implicit => implicit_step(sys, &xb, u, settings, None)?.0,
                    Scheme::Explicit => explicit_step(sys, &xb, u, cfg.ts)?,
                };
                state_inv(&cfg.params, &xb_next)
            }
        };
        if !next.iter().all(|v| v.is_finite()) || next.amax() > DIVERGENCE_BOUND {
            return Err(Error::BlowUp { time: t + cfg.ts });
        }
        Ok(next)
    }
}

fn nan(n: usize) -> Vec<f64> {
    vec![f64::NAN; n]
}

/// Runs the sampled-data loop. Construction errors are returned; faults and
/// blow-up inside the loop are recorded.
pub fn run_closed_loop(cfg: &SimConfig) -> Result<SimRecord> {
    let Loop { mut ctrl, delay, depth } = build(cfg)?;
    let plant = Plant::new(cfg)?;
    let traj = reference_trajectory(cfg, depth)?;
    let n = cfg.samples()?;
    let p = cfg.params;
    let window = |k: i64| sample_reference(&traj, k - delay as i64, cfg.ts, depth);
    ctrl.init_state(&window(0)?)?;
    let mut x = initial_state(cfg);
    if cfg.z_init == ZInit::Plant {
        ctrl.set_z(vtol_plant_consistent_z(&state_fwd(&p, &x), cfg.ts, cfg.scheme))?;
    }
    let mut u_prev = p.hover_input();
    let mut meta = RunMeta {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        output_delay: delay,
        depth,
        blow_up: None,
        faults: Vec::new(),
    };
    let mut samples = Vec::with_capacity(n + 1);
    let mut latched = false;
    for k in 0..=n {
        let t = k as f64 * cfg.ts;
        let xb = state_fwd(&p, &x);
        let reference = window(k as i64)?;
        let z_before = ctrl.z().clone();
        let (u, fault) = match ctrl.control_step(&x, &reference) {
            Ok(u) => (u, None),
            Err(e) => {
                let stage = match &e {
                    Error::ControllerFault { stage, .. } => *stage,
                    _ => FaultStage::Feedback,
                };
                meta.faults.push((k, e.to_string()));
                (u_prev.clone(), Some(stage))
            }
        };
        latched |= fault.is_some();
        let head = reference.get(0)?;
        let (y_estimate, flat_error) = match (fault, ctrl.last()) {
            (None, Some(out)) => {
                let y = out.estimate.get(0)?.clone();
                let e = &y - head;
                (y.as_slice().to_vec(), e.as_slice().to_vec())
            }
            _ => (nan(2), nan(2)),
        };
        let yd = traj.eval(t);
        samples.push(Sample {
            k,
            time: t,
            x: x.as_slice().to_vec(),
            xbar: xb.as_slice().to_vec(),
            z: z_before.as_slice().to_vec(),
            u: u.as_slice().to_vec(),
            yd: yd.as_slice().to_vec(),
            y_estimate,
            flat_error,
            position_error: vec![xb[0] - yd[0], xb[1] - yd[1]],
            fault,
            fault_latched: latched,
        });
        if k == n {
            break;
        }
        match plant.advance(cfg, &x, &u, t) {
            Ok(next) => x = next,
            Err(Error::BlowUp { time }) => {
                meta.blow_up = Some(time);
                break;
            }
            Err(e) => {
                meta.blow_up = Some(t + cfg.ts);
                meta.faults.push((k, format!("plant step failed: {e}")));
                break;
            }
        }
        u_prev = u;
    }
    Ok(SimRecord { meta, samples })
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scheme: Scheme,
    pub ts: f64,
    /// Settling band (2% of the maneuver amplitude).
    pub band: f64,
    pub rms_flat_error: f64,
    pub max_flat_error: f64,
    pub flat_settling_index: Option<usize>,
    pub rms_position_error: f64,
    pub max_position_error: f64,
    pub position_settling_index: Option<usize>,
    pub fault_count: usize,
    pub bounded: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// First index after which every value is finite and within `band`.
pub fn settling_index(values: &[f64], band: f64) -> Option<usize> {
    let last_out = values.iter().rposition(|v| !(v.abs() <= band));
    match last_out {
        None => Some(0),
        Some(i) if i + 1 < values.len() => Some(i + 1),
        Some(_) => None,
    }
}

fn rms_max(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let rms = (finite.iter().map(|v| v * v).sum::<f64>() / finite.len() as f64).sqrt();
    (rms, finite.iter().copied().fold(0.0, f64::max))
}

pub fn compute_metrics(record: &SimRecord) -> Metrics {
    let cfg = &record.meta.config;
    let band = 0.02 * cfg.maneuver.amplitude();
    let flat: Vec<f64> = record.samples.iter().map(|s| norm(&s.flat_error)).collect();
    let pos: Vec<f64> = record.samples.iter().map(|s| norm(&s.position_error)).collect();
    let (rms_flat_error, max_flat_error) = rms_max(&flat);
    let (rms_position_error, max_position_error) = rms_max(&pos);
    let complete = record.samples.len() == cfg.samples().map_or(0, |n| n + 1);
    let bounded = record.meta.blow_up.is_none()
        && complete
        && record
            .samples
            .iter()
            .all(|s| s.x.iter().all(|v| v.is_finite() && v.abs() < 1e3));
    Metrics {
        scheme: cfg.scheme,
        ts: cfg.ts,
        band,
        rms_flat_error,
        max_flat_error,
        flat_settling_index: if complete { settling_index(&flat, band) } else { None },
        rms_position_error,
        max_position_error,
        position_settling_index: if complete { settling_index(&pos, band) } else { None },
        fault_count: record.fault_count(),
        bounded,
    }
}

/// Paired implicit/explicit runs on identical plant, initial state and reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub implicit: SimRecord,
    pub explicit: SimRecord,
    pub implicit_metrics: Metrics,
    pub explicit_metrics: Metrics,
}

fn with_scheme(cfg: &SimConfig, scheme: Scheme) -> SimConfig {
    SimConfig { scheme, ..cfg.clone() }
}

pub fn compare_schemes(cfg: &SimConfig) -> Result<Comparison> {
    let ci = with_scheme(cfg, Scheme::Implicit);
    let ce = with_scheme(cfg, Scheme::Explicit);
    let (ri, re) = std::thread::scope(|s| {
        let hi = s.spawn(|| run_closed_loop(&ci));
        let he = s.spawn(|| run_closed_loop(&ce));
        (join(hi), join(he))
    });
    let (implicit, explicit) = (ri?, re?);
    Ok(Comparison {
        implicit_metrics: compute_metrics(&implicit),
        explicit_metrics: compute_metrics(&explicit),
        implicit,
        explicit,
    })
}

fn join<T>(h: std::thread::ScopedJoinHandle<'_, Result<T>>) -> Result<T> {
    h.join()
        .unwrap_or_else(|_| Err(Error::InvalidArgument("simulation thread panicked".into())))
}

/// Metrics for both schemes at each sampling time in `cfg.sweep_ts`.
pub fn sweep(cfg: &SimConfig) -> Result<Vec<Metrics>> {
    let configs: Vec<SimConfig> = cfg
        .sweep_ts
        .iter()
        .flat_map(|&ts| {
            [Scheme::Implicit, Scheme::Explicit].map(|scheme| SimConfig {
                ts,
                scheme,
                ..cfg.clone()
            })
        })
        .collect();
    let results: Vec<Result<SimRecord>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run_closed_loop(c))).collect();
        handles.into_iter().map(join).collect()
    });
    results.into_iter().map(|r| r.map(|rec| compute_metrics(&rec))).collect()
}

fn fmt_index(i: Option<usize>) -> String {
    i.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Aligned plain-text metrics table.
pub fn metrics_table(rows: &[Metrics]) -> String {
    let mut out = format!(
        "{:<9} {:>7} {:>12} {:>12} {:>8} {:>12} {:>12} {:>8} {:>7} {:>8}\n",
        "scheme", "ts", "rms_flat", "max_flat", "settle", "rms_pos", "max_pos", "settle", "faults", "bounded"
    );
    for m in rows {
        out.push_str(&format!(
            "{:<9} {:>7} {:>12.4e} {:>12.4e} {:>8} {:>12.4e} {:>12.4e} {:>8} {:>7} {:>8}\n",
            m.scheme.to_string(),
            m.ts,
            m.rms_flat_error,
            m.max_flat_error,
            fmt_index(m.flat_settling_index),
            m.rms_position_error,
            m.max_position_error,
            fmt_index(m.position_settling_index),
            m.fault_count,
            m.bounded
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settling_index_cases() {
        assert_eq!(settling_index(&[3.0, 2.0, 0.5, 0.1], 1.0), Some(2));
        assert_eq!(settling_index(&[0.1, 0.1], 1.0), Some(0));
        assert_eq!(settling_index(&[0.1, 2.0], 1.0), None);
        assert_eq!(settling_index(&[f64::NAN, 0.1], 1.0), Some(1));
    }

    #[test]
    fn initial_state_default_offset() {
        let cfg = SimConfig::default();
        let x = initial_state(&cfg);
        let eps = cfg.params.epsilon();
        assert!((x[0] - 0.2).abs() < 1e-15 && (x[1] + eps).abs() < 1e-15 && (x[2] - 0.1).abs() < 1e-15);
    }
}
