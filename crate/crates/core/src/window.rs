//! Finite windows of flat-output samples indexed by integer shift.

use crate::error::{Error, Result};
use crate::numeric::Vector;

/// Samples `y_[j]` for every `j` in `first..=last`, each of dimension `dim`.
///
/// Storage is dense over the shift range even when a component needs fewer
/// shifts than the others.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftWindow {
    first: i64,
    dim: usize,
    samples: Vec<Vector>,
}

impl ShiftWindow {
    pub fn new(first: i64, samples: Vec<Vector>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.len())
            .ok_or_else(|| Error::InvalidArgument("empty shift window".into()))?;
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::Dimension {
                what: "window sample",
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self { first, dim, samples })
    }

    /// Builds a window over `first..=last` from a sampling function.
    pub fn from_fn<F>(first: i64, last: i64, mut f: F) -> Result<Self>
    where
        F: FnMut(i64) -> Vector,
    {
        if last < first {
            return Err(Error::InvalidArgument(format!("empty shift range {first}..={last}")));
        }
        Self::new(first, (first..=last).map(&mut f).collect())
    }

    /// A window with the same value at every shift.
    pub fn constant(first: i64, last: i64, value: &Vector) -> Result<Self> {
        Self::from_fn(first, last, |_| value.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn first(&self) -> i64 {
        self.first
    }

    pub fn last(&self) -> i64 {
        self.first + self.samples.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn covers(&self, lo: i64, hi: i64) -> bool {
        lo >= self.first && hi <= self.last()
    }

    pub fn get(&self, shift: i64) -> Result<&Vector> {
        if shift < self.first || shift > self.last() {
            return Err(Error::MissingShift {
                shift,
                lo: self.first,
                hi: self.last(),
            });
        }
        Ok(&self.samples[(shift - self.first) as usize])
    }

    pub fn component(&self, shift: i64, component: usize) -> Result<f64> {
        let s = self.get(shift)?;
        s.get(component).copied().ok_or(Error::Dimension {
            what: "flat-output component",
            expected: self.dim,
            got: component,
        })
    }

    pub fn set(&mut self, shift: i64, value: Vector) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::Dimension {
                what: "window sample",
                expected: self.dim,
                got: value.len(),
            });
        }
        let lo = self.first;
        let hi = self.last();
        let slot = self
            .samples
            .get_mut((shift - lo) as usize)
            .filter(|_| shift >= lo)
            .ok_or(Error::MissingShift { shift, lo, hi })?;
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &Vector)> {
        self.samples
            .iter()
            .enumerate()
            .map(move |(i, s)| (self.first + i as i64, s))
    }

    /// The sub-window `lo..=hi`.
    pub fn slice(&self, lo: i64, hi: i64) -> Result<Self> {
        if !self.covers(lo, hi) || hi < lo {
            return Err(Error::MissingShift {
                shift: if lo < self.first { lo } else { hi },
                lo: self.first,
                hi: self.last(),
            });
        }
        let a = (lo - self.first) as usize;
        let b = (hi - self.first) as usize;
        Ok(Self {
            first: lo,
            dim: self.dim,
            samples: self.samples[a..=b].to_vec(),
        })
    }

    /// The same samples relabelled so that old shift `j` becomes `j + offset`.
    pub fn relabel(&self, offset: i64) -> Self {
        Self {
            first: self.first + offset,
            dim: self.dim,
            samples: self.samples.clone(),
        }
    }

    /// Appends a sample at shift `last + 1`.
    pub fn push(&mut self, value: Vector) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::Dimension {
                what: "window sample",
                expected: self.dim,
                got: value.len(),
            });
        }
        self.samples.push(value);
        Ok(())
    }
}
