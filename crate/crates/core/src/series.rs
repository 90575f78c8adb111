use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed non-negative counts `Y_1..Y_n`.
///
/// Time indices exposed by this crate are 1-based to match the usual
/// notation `T_{k,k'} = {k, ..., k'}`; storage is a plain 0-based vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSeries {
    counts: Vec<u64>,
}

impl CountSeries {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptySeries);
        }
        Ok(Self { counts })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Standalone copy of `Y_lo..Y_hi` (1-based, inclusive).
    pub fn slice(&self, lo: usize, hi: usize) -> Result<Self> {
        Segment::new(lo, hi)?.check(self.len())?;
        Self::new(self.counts[lo - 1..hi].to_vec())
    }

    pub fn reversed(&self) -> Self {
        let mut counts = self.counts.clone();
        counts.reverse();
        Self { counts }
    }

    pub fn full(&self) -> Segment {
        Segment {
            lo: 1,
            hi: self.len(),
        }
    }
}

impl From<CountSeries> for Vec<u64> {
    fn from(s: CountSeries) -> Self {
        s.counts
    }
}

/// Inclusive, 1-based index range `T_{lo,hi}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub lo: usize,
    pub hi: usize,
}

impl Segment {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad segment [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.lo == 0 || self.lo > self.hi || self.hi > n {
            return Err(Error::SegmentOutOfRange {
                lo: self.lo,
                hi: self.hi,
                n,
            });
        }
        Ok(())
    }

    /// 0-based half-open range.
    pub(crate) fn range(&self) -> std::ops::Range<usize> {
        self.lo - 1..self.hi
    }
}
