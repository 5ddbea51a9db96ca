//! Flat-output reference trajectories and their sampling into shift windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Vector;
use crate::window::ShiftWindow;

/// Monomial coefficients (ascending) of the rest-to-rest blend
/// `P(tau) = tau^(s+1) sum_{k=0..s} C(s+k, k) (1 - tau)^k`, which rises from 0 to 1
/// with derivatives `1..=s` vanishing at both ends.
pub fn blend_coefficients(s: usize) -> Vec<f64> {
    let mut c = vec![0.0; 2 * s + 2];
    for k in 0..=s {
        let weight = binomial(s + k, k);
        // (1 - tau)^k = sum_i C(k, i) (-tau)^i
        for i in 0..=k {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            c[s + 1 + i] += weight * binomial(k, i) * sign;
        }
    }
    c
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `d^order/dtau^order` of the polynomial with ascending coefficients `c`.
fn poly_derivative(c: &[f64], tau: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for (i, &ci) in c.iter().enumerate().skip(order).rev() {
        let falling = (i - order + 1..=i).fold(1.0, |f, j| f * j as f64);
        acc = acc * tau + ci * falling;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Segment {
    t0: f64,
    duration: f64,
    start: Vec<f64>,
    end: Vec<f64>,
    smoothness: usize,
    coeffs: Vec<f64>,
}

impl Segment {
    fn eval(&self, t: f64, order: usize) -> Vector {
        let tau = ((t - self.t0) / self.duration).clamp(0.0, 1.0);
        let inside = t > self.t0 && t < self.t0 + self.duration;
        let shape = if order == 0 {
            poly_derivative(&self.coeffs, tau, 0)
        } else if inside {
            poly_derivative(&self.coeffs, tau, order) / self.duration.powi(order as i32)
        } else {
            0.0
        };
        Vector::from_iterator(
            self.start.len(),
            self.start.iter().zip(&self.end).map(|(a, b)| {
                if order == 0 {
                    a + (b - a) * shape
                } else {
                    (b - a) * shape
                }
            }),
        )
    }
}

/// Piecewise rest-to-rest trajectory, held constant before its first and after
/// its last segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    segments: Vec<Segment>,
    horizon: Option<f64>,
}

/// Rest-to-rest transition from `start` to `end` over `duration` with `smoothness`
/// vanishing derivatives at both ends.
pub fn rest_to_rest(start: &[f64], end: &[f64], duration: f64, smoothness: usize) -> Result<ReferenceTrajectory> {
    ReferenceTrajectory::hold(start)?.then(end, duration, smoothness)
}

impl ReferenceTrajectory {
    /// A constant trajectory.
    pub fn hold(value: &[f64]) -> Result<Self> {
        if value.is_empty() {
            return Err(Error::InvalidArgument("trajectory needs at least one component".into()));
        }
        Ok(Self {
            segments: vec![Segment {
                t0: 0.0,
                duration: 1.0,
                start: value.to_vec(),
                end: value.to_vec(),
                smoothness: 1,
                coeffs: blend_coefficients(1),
            }],
            horizon: None,
        })
    }

    /// Appends a rest-to-rest segment starting where the trajectory ends.
    pub fn then(mut self, end: &[f64], duration: f64, smoothness: usize) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::InvalidArgument(format!("segment duration {duration} must be > 0")));
        }
        if smoothness == 0 {
            return Err(Error::InvalidArgument("smoothness must be >= 1".into()));
        }
        if end.len() != self.dim() {
            return Err(Error::Dimension {
                what: "segment end point",
                expected: self.dim(),
                got: end.len(),
            });
        }
        let last = self.segments.last().expect("at least one segment");
        let constant = last.start == last.end;
        let seg = Segment {
            t0: if constant && self.segments.len() == 1 { 0.0 } else { last.t0 + last.duration },
            duration,
            start: last.end.clone(),
            end: end.to_vec(),
            smoothness,
            coeffs: blend_coefficients(smoothness),
        };
        if constant && self.segments.len() == 1 {
            self.segments.clear();
        }
        self.segments.push(seg);
        Ok(self)
    }

    /// Restricts sampling to `t <= horizon`.
    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn dim(&self) -> usize {
        self.segments[0].start.len()
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    /// Start time of the first and end time of the last segment.
    pub fn span(&self) -> (f64, f64) {
        let first = &self.segments[0];
        let last = self.segments.last().expect("at least one segment");
        (first.t0, last.t0 + last.duration)
    }

    /// Segment boundaries.
    pub fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.segments.iter().map(|s| s.t0).collect();
        k.push(self.span().1);
        k
    }

    /// Largest smoothness order guaranteed at every join.
    pub fn smoothness(&self) -> usize {
        self.segments.iter().map(|s| s.smoothness).min().unwrap_or(0)
    }

    fn segment_at(&self, t: f64) -> &Segment {
        self.segments
            .iter()
            .rev()
            .find(|s| t >= s.t0)
            .unwrap_or(&self.segments[0])
    }

    pub fn eval(&self, t: f64) -> Vector {
        self.segment_at(t).eval(t, 0)
    }

    /// Time derivative of the given order.
    pub fn derivative(&self, t: f64, order: usize) -> Vector {
        self.segment_at(t).eval(t, order)
    }

    /// `y(t)` if `t` lies within the horizon.
    pub fn value(&self, t: f64) -> Result<Vector> {
        if let Some(h) = self.horizon {
            if t > h * (1.0 + 1e-12) + 1e-12 {
                return Err(Error::InvalidArgument(format!("time {t} beyond trajectory horizon {h}")));
            }
        }
        Ok(self.eval(t))
    }
}

/// Reference window `y_d((k + i) Ts)` for `i = 0..=depth`.
pub fn sample_reference(traj: &ReferenceTrajectory, k: i64, ts: f64, depth: usize) -> Result<ShiftWindow> {
    if !(ts > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling time {ts} must be > 0")));
    }
    let samples: Result<Vec<Vector>> = (0..=depth as i64).map(|i| traj.value((k + i) as f64 * ts)).collect();
    ShiftWindow::new(0, samples?)
}

/// The samples `y_d(j Ts)` for `j` in `first..=last`, labelled by `j`.
pub fn sample_sequence(traj: &ReferenceTrajectory, first: i64, last: i64, ts: f64) -> Result<ShiftWindow> {
    let samples: Result<Vec<Vector>> = (first..=last).map(|j| traj.value(j as f64 * ts)).collect();
    ShiftWindow::new(first, samples?)
}
