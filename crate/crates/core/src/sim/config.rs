use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{GainSpec, Pole};
use crate::discretize::step_count;
use crate::error::{Error, Result};
use crate::param::Scheme;
use crate::vtol::{PsiKind, StageSolverKind, VtolParams};

/// What the controller output drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    /// The original model integrated by RK4 at `tn` with the input held.
    Continuous,
    /// The Euler-discretized transformed model the controller was designed for.
    Discrete,
}

/// Where the controller state starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZInit {
    /// Taken from the first reference window.
    Reference,
    /// Extrapolated from the measured initial state.
    Plant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManeuverConfig {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub duration: f64,
    pub smoothness: usize,
}

impl Default for ManeuverConfig {
    fn default() -> Self {
        Self {
            start: vec![0.0, 0.0],
            end: vec![5.0, 2.0],
            duration: 5.0,
            smoothness: 5,
        }
    }
}

impl ManeuverConfig {
    /// Largest per-component excursion, or 1 for a hold.
    pub fn amplitude(&self) -> f64 {
        let a = self
            .start
            .iter()
            .zip(&self.end)
            .map(|(a, b)| (b - a).abs())
            .fold(0.0, f64::max);
        if a > 0.0 {
            a
        } else {
            1.0
        }
    }
}

/// Closed-loop simulation settings. Keys in config files match the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub model: String,
    pub params: VtolParams,
    pub scheme: Scheme,
    /// Controller sampling time (s).
    pub ts: f64,
    /// Plant integration step (s).
    pub tn: f64,
    pub duration: f64,
    pub plant: PlantKind,
    /// Closed-loop poles per output; defaults to 0.6 repeated.
    pub poles: Option<Vec<Vec<Pole>>>,
    /// Absolute initial state in original coordinates.
    pub initial_state: Option<Vec<f64>>,
    /// Offset from the state at rest on the reference start, used when
    /// `initial_state` is absent.
    pub initial_offset: Vec<f64>,
    pub maneuver: ManeuverConfig,
    pub stage_solver: StageSolverKind,
    pub psi: PsiKind,
    pub z_init: ZInit,
    pub output: Option<PathBuf>,
    pub seed: u64,
    /// Sampling times for the `sweep` command.
    pub sweep_ts: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            model: "vtol".into(),
            params: VtolParams::default(),
            scheme: Scheme::Implicit,
            ts: 0.1,
            tn: 1e-4,
            duration: 10.0,
            plant: PlantKind::Continuous,
            poles: None,
            initial_state: None,
            initial_offset: vec![0.2, 0.0, 0.1, 0.0, 0.0, 0.0],
            maneuver: ManeuverConfig::default(),
            stage_solver: StageSolverKind::ClosedForm,
            psi: PsiKind::ClosedForm,
            z_init: ZInit::Plant,
            output: None,
            seed: 0,
            sweep_ts: vec![0.01, 0.05, 0.1],
        }
    }
}

pub const MODELS: &[&str] = &["vtol"];

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Number of controller samples after the initial one.
    pub fn samples(&self) -> Result<usize> {
        step_count(self.duration, self.ts)
    }

    /// Plant steps per controller sample.
    pub fn substeps(&self) -> Result<usize> {
        step_count(self.ts, self.tn)
    }

    pub fn gain_spec(&self, orders: &[usize]) -> GainSpec {
        match &self.poles {
            Some(p) => GainSpec { poles: p.clone() },
            None => GainSpec::repeated(0.6, orders),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !MODELS.contains(&self.model.as_str()) {
            return Err(Error::Config(format!(
                "unknown model `{}` (available: {})",
                self.model,
                MODELS.join(", ")
            )));
        }
        self.params.validate()?;
        if !(self.ts > 0.0 && self.tn > 0.0 && self.duration > 0.0) {
            return Err(Error::Config("ts, tn and duration must be > 0".into()));
        }
        if self.tn > self.ts {
            return Err(Error::Config(format!("tn = {} exceeds ts = {}", self.tn, self.ts)));
        }
        self.samples()
            .map_err(|_| Error::Config(format!("ts = {} does not divide duration = {}", self.ts, self.duration)))?;
        self.substeps()
            .map_err(|_| Error::Config(format!("tn = {} does not divide ts = {}", self.tn, self.ts)))?;
        if let Some(poles) = &self.poles {
            for p in poles.iter().flatten() {
                let v = p.value();
                if !(v.norm() < 1.0) {
                    return Err(Error::UnstablePole { re: v.re, im: v.im });
                }
            }
        }
        if let Some(x) = &self.initial_state {
            if x.len() != 6 {
                return Err(Error::Config(format!("initial_state needs 6 entries, got {}", x.len())));
            }
        } else if self.initial_offset.len() != 6 {
            return Err(Error::Config(format!(
                "initial_offset needs 6 entries, got {}",
                self.initial_offset.len()
            )));
        }
        let m = &self.maneuver;
        if m.start.len() != 2 || m.end.len() != 2 {
            return Err(Error::Config("maneuver start/end need 2 entries".into()));
        }
        if !(m.duration > 0.0) || m.smoothness == 0 {
            return Err(Error::Config("maneuver needs duration > 0 and smoothness >= 1".into()));
        }
        if self.sweep_ts.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("sweep_ts entries must be > 0".into()));
        }
        Ok(())
    }
}
