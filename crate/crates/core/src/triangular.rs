//! Structurally flat triangular forms and their rank conditions.
//!
//! Blocks are numbered `p..=1` from the top. Block `k` carries the state
//! `x_k = (y_k, xhat_k)` and the input `u_{k-1}`; its dynamics may depend on
//! `x_p, .., x_{k-1}` and `u_{p-1}, .., u_{k-1}` only. The state vector is
//! stored as `(x_p, .., x_1)` and the input as `(u_{p-1}, .., u_0)`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{jacobian_fd, singular_values, Vector};
use crate::system::ContinuousSystem;

/// Dimensions of one block: flat part `y_k`, remaining part `xhat_k`, input `u_{k-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub flat: usize,
    pub hidden: usize,
    pub input: usize,
}

impl BlockLayout {
    pub fn new(flat: usize, hidden: usize, input: usize) -> Self {
        Self { flat, hidden, input }
    }

    pub fn state_dim(&self) -> usize {
        self.flat + self.hidden
    }
}

#[derive(Debug, Clone)]
pub struct TriangularForm {
    system: ContinuousSystem,
    /// Ordered from block `p` down to block 1.
    blocks: Vec<BlockLayout>,
}

impl TriangularForm {
    /// `blocks` is ordered `p, p-1, .., 1`.
    pub fn new(system: ContinuousSystem, blocks: Vec<BlockLayout>) -> Result<Self> {
        let p = blocks.len();
        if p == 0 {
            return Err(Error::InvalidArgument("triangular form needs at least one block".into()));
        }
        let n: usize = blocks.iter().map(BlockLayout::state_dim).sum();
        let m: usize = blocks.iter().map(|b| b.input).sum();
        if n != system.n() {
            return Err(Error::Dimension {
                what: "sum of block state dimensions",
                expected: system.n(),
                got: n,
            });
        }
        if m != system.m() {
            return Err(Error::Dimension {
                what: "sum of block input dimensions",
                expected: system.m(),
                got: m,
            });
        }
        if blocks.iter().any(|b| b.state_dim() == 0) {
            return Err(Error::InvalidArgument("every block needs dim(x_k) >= 1".into()));
        }
        if blocks[0].hidden != 0 {
            return Err(Error::InvalidArgument("top block must consist of flat outputs only".into()));
        }
        let tf = Self { system, blocks };
        // dim(f_1) = dim(u_0); dim(f_{k+1}) = dim(xhat_k) + dim(u_k).
        if tf.layout(1).state_dim() != tf.layout(1).input {
            return Err(Error::InvalidArgument(format!(
                "block 1 not square: dim(f_1) = {} but dim(u_0) = {}",
                tf.layout(1).state_dim(),
                tf.layout(1).input
            )));
        }
        for k in 1..p {
            let lhs = tf.layout(k + 1).state_dim();
            let rhs = tf.layout(k).hidden + tf.layout(k + 1).input;
            if lhs != rhs {
                return Err(Error::InvalidArgument(format!(
                    "block {} not square: dim(f) = {lhs} but dim(xhat_{k}, u_{k}) = {rhs}",
                    k + 1
                )));
            }
        }
        Ok(tf)
    }

    pub fn system(&self) -> &ContinuousSystem {
        &self.system
    }

    pub fn p(&self) -> usize {
        self.blocks.len()
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn m(&self) -> usize {
        self.system.m()
    }

    /// Layout of block `k` (`1 <= k <= p`).
    pub fn layout(&self, k: usize) -> BlockLayout {
        self.blocks[self.p() - k]
    }

    /// Range of `x_k` inside the state vector.
    pub fn state_range(&self, k: usize) -> Range<usize> {
        let start: usize = (k + 1..=self.p()).map(|b| self.layout(b).state_dim()).sum();
        start..start + self.layout(k).state_dim()
    }

    pub fn flat_range(&self, k: usize) -> Range<usize> {
        let r = self.state_range(k);
        r.start..r.start + self.layout(k).flat
    }

    pub fn hidden_range(&self, k: usize) -> Range<usize> {
        let r = self.state_range(k);
        r.start + self.layout(k).flat..r.end
    }

    /// Range of `u_j` (the input attached to block `j + 1`) inside the input vector.
    pub fn input_range(&self, j: usize) -> Range<usize> {
        let start: usize = (j + 2..=self.p()).map(|b| self.layout(b).input).sum();
        start..start + self.layout(j + 1).input
    }

    /// Range of the block-`k` flat output inside `y = (y_p, .., y_1)`.
    pub fn output_range(&self, k: usize) -> Range<usize> {
        let start: usize = (k + 1..=self.p()).map(|b| self.layout(b).flat).sum();
        start..start + self.layout(k).flat
    }

    /// Number of flat-output components (equals `m`).
    pub fn output_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.flat).sum()
    }

    /// Block owning flat-output component `c`.
    pub fn output_block(&self, c: usize) -> usize {
        (1..=self.p())
            .find(|&k| self.output_range(k).contains(&c))
            .expect("component index within output dimension")
    }

    /// Flat output `y = (y_p, .., y_1)` read from a state.
    pub fn flat_output(&self, x: &Vector) -> Vector {
        let mut y = Vector::zeros(self.output_dim());
        for k in 1..=self.p() {
            let src = self.flat_range(k);
            let dst = self.output_range(k);
            y.rows_mut(dst.start, dst.len())
                .copy_from(&x.rows(src.start, src.len()));
        }
        y
    }

    /// `f_k(x, u)`.
    pub fn block_dynamics(&self, k: usize, x: &Vector, u: &Vector) -> Result<Vector> {
        let f = self.system.eval(x, u)?;
        let r = self.state_range(k);
        Ok(f.rows(r.start, r.len()).into_owned())
    }

    /// Probes the declared triangular dependency pattern at the given points by
    /// central differences. Returns the largest partial derivative found with
    /// respect to any excluded variable, per block (index `p - k`).
    pub fn dependency_leaks(&self, points: &[(Vector, Vector)]) -> Result<Vec<f64>> {
        let p = self.p();
        let n = self.n();
        let mut leaks = vec![0.0f64; p];
        for (x, u) in points {
            let mut z = Vector::zeros(n + self.m());
            z.rows_mut(0, n).copy_from(x);
            z.rows_mut(n, self.m()).copy_from(u);
            let f = |z: &Vector| {
                let (xs, us) = (z.rows(0, n).into_owned(), z.rows(n, self.m()).into_owned());
                (self.system.raw())(&xs, &us)
            };
            let jac = jacobian_fd(f, &z, None)?;
            for k in 1..=p {
                let rows = self.state_range(k);
                // Excluded: x_{k-2}, .., x_1 and u_{k-2}, .., u_0.
                let mut excluded: Vec<usize> = Vec::new();
                for b in 1..k.saturating_sub(1) {
                    excluded.extend(self.state_range(b));
                }
                for j in 0..k.saturating_sub(1) {
                    excluded.extend(self.input_range(j).map(|c| c + n));
                }
                for r in rows {
                    for &c in &excluded {
                        leaks[p - k] = leaks[p - k].max(jac[(r, c)].abs());
                    }
                }
            }
        }
        Ok(leaks)
    }

    /// True when every excluded partial is at most `tol` at all points.
    pub fn verify_dependencies(&self, points: &[(Vector, Vector)], tol: f64) -> Result<bool> {
        Ok(self.dependency_leaks(points)?.iter().all(|&l| l <= tol))
    }
}

/// Which variant of the rank conditions to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankScheme {
    Continuous,
    Implicit,
    Explicit,
}

/// Default threshold on the smallest singular value, relative to `max(1, sigma_max)`.
pub const RANK_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRank {
    /// Equation block `k`; the condition concerns `d f_k / d(xhat_{k-1}, u_{k-1})`.
    pub block: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub scheme: RankScheme,
    pub threshold: f64,
    pub blocks: Vec<BlockRank>,
}

impl RankReport {
    pub fn all_passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn block(&self, k: usize) -> Option<&BlockRank> {
        self.blocks.iter().find(|b| b.block == k)
    }

    pub fn first_failure(&self) -> Option<&BlockRank> {
        self.blocks.iter().find(|b| !b.passed)
    }
}

/// Checks the rank conditions at a point with the default threshold.
pub fn check_rank_conditions(tf: &TriangularForm, x: &Vector, u: &Vector, scheme: RankScheme) -> RankReport {
    check_rank_conditions_with(tf, x, u, scheme, RANK_THRESHOLD)
}

/// Checks `rank(d f_1 / d u_0) = dim f_1` and `rank(d f_{k+1} / d(xhat_k, u_k)) = dim f_{k+1}`.
///
/// For the implicit scheme `x` is the successor state at which the residual
/// `x+ - x - Ts f(x+, u)` is differentiated with respect to `xhat+`; the
/// `-Ts` factor drops out. A block passes when
/// `sigma_min > threshold * max(1, sigma_max)`; non-finite Jacobians fail.
pub fn check_rank_conditions_with(
    tf: &TriangularForm,
    x: &Vector,
    u: &Vector,
    scheme: RankScheme,
    threshold: f64,
) -> RankReport {
    let mut blocks = Vec::with_capacity(tf.p());
    for k in (1..=tf.p()).rev() {
        let hidden = if k >= 2 { tf.hidden_range(k - 1) } else { 0..0 };
        let input = tf.input_range(k - 1);
        let unknowns = hidden.len() + input.len();
        let mut w = Vector::zeros(unknowns);
        for (i, c) in hidden.clone().enumerate() {
            w[i] = x[c];
        }
        for (i, c) in input.clone().enumerate() {
            w[hidden.len() + i] = u[c];
        }
        let f = |w: &Vector| {
            let mut xs = x.clone();
            let mut us = u.clone();
            for (i, c) in hidden.clone().enumerate() {
                xs[c] = w[i];
            }
            for (i, c) in input.clone().enumerate() {
                us[c] = w[hidden.len() + i];
            }
            let r = tf.state_range(k);
            let full = (tf.system().raw())(&xs, &us);
            full.rows(r.start, r.len()).into_owned()
        };
        let (sigma_min, sigma_max) = match jacobian_fd(f, &w, None).ok().and_then(|j| singular_values(&j)) {
            Some(sv) if !sv.is_empty() => (*sv.last().unwrap(), sv[0]),
            _ => (f64::NAN, f64::NAN),
        };
        let passed = sigma_min.is_finite() && sigma_min > threshold * sigma_max.max(1.0);
        blocks.push(BlockRank {
            block: k,
            sigma_min,
            sigma_max,
            passed,
        });
    }
    RankReport {
        scheme,
        threshold,
        blocks,
    }
}
